#pragma once

#include <span>
#include <string>
#include <vector>

#include "semsim/tensor.hpp"
#include "semsim/tokenizer.hpp"

namespace semsim {

struct ModelConfig {
    int encoder_layers = 2;
    int decoder_layers = 2;
    int d_model = 64;
    int heads = 4;
    int ffn_dim = 128;
    double dropout = 0.1;
    int max_positions = 256;
    int vocab_size = 0;
    bool tied_embeddings = true;
    int pad_id = Vocab::kPad;
    int bos_id = Vocab::kBos;
    int eos_id = Vocab::kEos;
    Precision precision = Precision::F32;

    int head_dim() const { return d_model / heads; }
    void validate() const;
};

// Per-head projection matrices; concatenating the heads reproduces the usual
// packed [d x d] projections.
struct AttentionParams {
    std::vector<Tensor> wq, bq, wk, bk, wv, bv;
    Tensor wo, bo;
};

struct LayerNormParams {
    Tensor gain, bias;
};

struct FeedForwardParams {
    Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
    AttentionParams self_attn;
    LayerNormParams ln_attn;
    FeedForwardParams ff;
    LayerNormParams ln_ff;
};

struct DecoderLayerParams {
    AttentionParams self_attn;
    LayerNormParams ln_self;
    AttentionParams cross_attn;
    LayerNormParams ln_cross;
    FeedForwardParams ff;
    LayerNormParams ln_ff;
};

struct EncoderState {
    Tensor states;               // [T x d]
    std::vector<char> pad_mask;  // per position, true where pad

    int length() const { return static_cast<int>(pad_mask.size()); }
};

struct ForwardOptions {
    bool training = false;
    double dropout = 0.0;
    Rng* rng = nullptr;
};

struct SeqModel {
    ModelConfig cfg;
    Tensor tok_emb;      // [V x d]; decoder table too when tied
    Tensor dec_tok_emb;  // only set when untied
    Tensor enc_pos, dec_pos;
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;
    Tensor out_proj;  // [d x V]
    Tensor out_bias;  // [V]

    static SeqModel init(const ModelConfig& cfg, Rng& rng);

    const Tensor& decoder_embedding() const { return cfg.tied_embeddings ? tok_emb : dec_tok_emb; }

    // Stable order and names; checkpoints and the optimizer key off this.
    std::vector<NamedTensor> parameters() const;
};

EncoderState encode(Graph& g, const SeqModel& model, const TokenSequence& doc,
                    const ForwardOptions& opt = {});

// Row t is p(next token | prefix[0..t], document). Prefix must begin with bos.
Tensor decode_distributions(Graph& g, const SeqModel& model, std::span<const int> prefix,
                            const EncoderState& enc, const ForwardOptions& opt = {});

struct MlForward {
    Tensor loss;
    Tensor distributions;       // [T x V] teacher-forced output rows
    std::vector<int> targets;   // content tokens plus eos
};

// Teacher-forced forward pass: decoder input is the reference shifted right.
MlForward ml_forward(Graph& g, const SeqModel& model, const TokenSequence& doc,
                     const TokenSequence& ref, const ForwardOptions& opt = {});

Tensor ml_loss(Graph& g, const SeqModel& model, const TokenSequence& doc,
               const TokenSequence& ref, const ForwardOptions& opt = {});

// Shared by the generator encoder and the scoring LM.
Tensor run_encoder_stack(Graph& g, const std::vector<EncoderLayerParams>& layers, Tensor x,
                         const std::vector<char>& pad_mask, const ForwardOptions& opt);

// Collects attention/ffn/layer-norm parameters under a name prefix.
void collect_encoder_layer_params(const std::string& prefix, const EncoderLayerParams& layer,
                                  std::vector<NamedTensor>& out);

EncoderLayerParams init_encoder_layer(const ModelConfig& cfg, Rng& rng);

}  // namespace semsim
