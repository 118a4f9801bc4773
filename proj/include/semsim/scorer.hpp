#pragma once

#include <span>
#include <vector>

#include "semsim/model.hpp"
#include "semsim/tensor.hpp"

namespace semsim {

// How per-token states collapse into one sequence embedding.
enum class Pooling { Mean, First };

struct ScorerConfig {
    int layers = 2;
    int d_model = 32;
    int heads = 4;
    int ffn_dim = 64;
    int max_positions = 256;
    int vocab_size = 0;
    int pad_id = Vocab::kPad;
    Pooling pooling = Pooling::Mean;
    Precision precision = Precision::F32;

    void validate() const;
};

// Frozen sequence encoder. Parameters keep requires_grad so the backward pass
// runs through them; the optimizer skips them via the frozen flag.
struct ScorerLM {
    ScorerConfig cfg;
    Tensor tok_emb;  // [V x d]
    Tensor pos;      // [max_positions x d]
    std::vector<EncoderLayerParams> layers;

    static ScorerLM init(const ScorerConfig& cfg, Rng& rng);
    std::vector<NamedTensor> parameters() const;
};

// Linear head producing the similarity score from [e_ref ; e_gen].
struct SemSimHead {
    Tensor w;  // [1 x 2d], frozen
    Tensor b;  // [1], frozen

    static SemSimHead init(int d, Rng& rng, Precision prec);
    std::vector<NamedTensor> parameters() const;
};

// Per-position distributions over the scorer vocabulary; a differentiable
// stand-in for a generated token sequence.
struct SoftSequence {
    Tensor rows;  // [L x V]

    void validate(int vocab_size) const;
    static SoftSequence one_hot(std::span<const int> ids, int vocab_size);
};

Tensor embed_sequence(Graph& g, const ScorerLM& lm, std::span<const int> ids);
Tensor embed_soft_sequence(Graph& g, const ScorerLM& lm, const SoftSequence& soft);

Tensor semsim_score(Graph& g, const SemSimHead& head, const Tensor& e_ref, const Tensor& e_gen);

struct SemsimResult {
    Tensor loss;   // -score
    Tensor score;
};

SemsimResult semsim_loss(Graph& g, const ScorerLM& lm, const SemSimHead& head,
                         std::span<const int> ref_ids, const SoftSequence& soft_gen);

// Warm start: clone the generator's encoder (embeddings included) into a
// frozen scoring LM.
ScorerLM scorer_from_encoder(const SeqModel& model);

}  // namespace semsim
