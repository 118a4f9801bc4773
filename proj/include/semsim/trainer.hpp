#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "semsim/checkpoint.hpp"
#include "semsim/model.hpp"
#include "semsim/scorer.hpp"
#include "semsim/tensor.hpp"

namespace semsim {

enum class Objective { MlOnly, Composite, SemsimOnly };

Objective objective_from_string(const std::string& s);
std::string objective_to_string(Objective o);

struct TrainConfig {
    double lr = 3e-5;
    double dropout = 0.1;
    int max_tokens = 1792;   // per micro-batch
    int update_freq = 32;    // micro-batches per optimizer step
    int epochs = 6;
    int max_source_len = 256;
    int max_target_len = 256;
    std::uint64_t seed = 1;
    Objective objective = Objective::MlOnly;
    double lambda_semsim = 1.0;
    double clip_norm = 1.0;  // <= 0 disables clipping
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    Precision precision = Precision::F32;
    int save_every = 0;  // optimizer steps between checkpoints; 0 = final only

    void validate() const;
};

struct SamplePair {
    TokenSequence doc;
    TokenSequence ref;

    int token_cost() const { return doc.length() + ref.length(); }
};

struct FilterReport {
    int kept = 0;
    int dropped = 0;
};

// Keeps samples with source <= max_source_len and target <= max_target_len.
std::vector<SamplePair> filter_long_samples(const std::vector<SamplePair>& samples,
                                            const TrainConfig& cfg,
                                            FilterReport* report = nullptr);

// Greedy packing of length-sorted samples under the token cap. Returns
// micro-batches of sample indices.
std::vector<std::vector<int>> pack_micro_batches(const std::vector<SamplePair>& samples,
                                                 int max_tokens);

// Bias-corrected Adam over named parameters; frozen parameters are skipped.
class AdamState {
  public:
    AdamState(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void update(const std::vector<NamedTensor>& params, double lr, Precision prec);
    std::int64_t step_count() const { return step_; }

    void export_tensors(const std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& out) const;
    void import_tensors(const CheckpointData& data, const std::vector<NamedTensor>& params);
    void set_step_count(std::int64_t s) { step_ = s; }

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::unordered_map<std::string, Moments> moments_;
    std::int64_t step_ = 0;
    double beta1_, beta2_, eps_;
};

// Scales gradients of trainable parameters to the given global norm when they
// exceed it. Returns the pre-clip norm.
double clip_gradients(const std::vector<NamedTensor>& params, double max_norm, bool* clipped);

struct CompositeLoss {
    Tensor total;
    Tensor ml;
    Tensor semsim;  // undefined in ml-only mode
    double ml_value = 0.0;
    double semsim_value = 0.0;
};

// Loss = L_ml + lambda * L_semsim, with both addends retrievable.
CompositeLoss composite_loss(Graph& g, const SeqModel& model, const ScorerLM* lm,
                             const SemSimHead* head, const SamplePair& sample, Objective objective,
                             double lambda, const ForwardOptions& opt);

struct StepInfo {
    std::int64_t step = 0;
    double loss = 0.0;      // per-sample mean over the accumulation window
    double l_ml = 0.0;
    double l_semsim = 0.0;
    int samples = 0;
    double grad_norm = 0.0;
    bool clipped = false;
};

class Trainer {
  public:
    Trainer(SeqModel model, std::optional<ScorerPack> scorer, TrainConfig cfg);

    using StepCallback = std::function<void(const StepInfo&)>;

    // Runs up to cfg.epochs, stopping early after max_updates optimizer steps
    // (0 = no cap). Callable again to continue.
    void run(const std::vector<SamplePair>& data, std::int64_t max_updates = 0,
             const StepCallback& on_update = nullptr);

    void save(const std::string& path) const;
    static Trainer resume(const std::string& path);

    SeqModel& model() { return model_; }
    const SeqModel& model() const { return model_; }
    const std::optional<ScorerPack>& scorer() const { return scorer_; }
    const TrainConfig& config() const { return cfg_; }
    std::int64_t updates_done() const { return updates_done_; }
    Rng& dropout_rng() { return dropout_rng_; }

    // Mean losses over the dataset in evaluation mode (no dropout).
    StepInfo evaluate(const std::vector<SamplePair>& data);

  private:
    SeqModel model_;
    std::optional<ScorerPack> scorer_;
    TrainConfig cfg_;
    AdamState adam_;
    Rng dropout_rng_;
    std::uint64_t shuffle_base_;
    std::int64_t updates_done_ = 0;
    int epoch_ = 0;
    int cursor_ = 0;  // micro-batch index within the current epoch

    std::vector<NamedTensor> trainable_params_;  // generator (+ frozen scorer for the frozen contract)

    std::vector<int> epoch_order(int n_batches, int epoch) const;
    void apply_update(StepInfo& pending, const StepCallback& on_update);
};

}  // namespace semsim
