#include "semsim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace semsim {

Objective objective_from_string(const std::string& s) {
    if (s == "ml_only") return Objective::MlOnly;
    if (s == "composite") return Objective::Composite;
    if (s == "semsim_only") return Objective::SemsimOnly;
    throw ConfigError("unknown objective '" + s + "' (expected ml_only, composite or semsim_only)");
}

std::string objective_to_string(Objective o) {
    switch (o) {
        case Objective::MlOnly: return "ml_only";
        case Objective::Composite: return "composite";
        case Objective::SemsimOnly: return "semsim_only";
    }
    return "ml_only";
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (update_freq < 1) throw ConfigError("update frequency must be at least 1");
    if (lambda_semsim < 0.0) throw ConfigError("lambda_semsim must be non-negative");
    if (max_tokens < 1) throw ConfigError("max_tokens must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

std::vector<SamplePair> filter_long_samples(const std::vector<SamplePair>& samples,
                                            const TrainConfig& cfg, FilterReport* report) {
    std::vector<SamplePair> kept;
    kept.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.doc.length() <= cfg.max_source_len && s.ref.length() <= cfg.max_target_len) {
            kept.push_back(s);
        }
    }
    if (report) {
        report->kept = static_cast<int>(kept.size());
        report->dropped = static_cast<int>(samples.size() - kept.size());
    }
    if (kept.empty() && !samples.empty()) {
        std::cerr << "warning: every sample exceeded the length limits ("
                  << cfg.max_source_len << "/" << cfg.max_target_len << ")\n";
    }
    return kept;
}

std::vector<std::vector<int>> pack_micro_batches(const std::vector<SamplePair>& samples,
                                                 int max_tokens) {
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return samples[static_cast<std::size_t>(a)].token_cost() <
               samples[static_cast<std::size_t>(b)].token_cost();
    });
    std::vector<std::vector<int>> batches;
    std::vector<int> cur;
    int cur_tokens = 0;
    for (int idx : order) {
        const int cost = samples[static_cast<std::size_t>(idx)].token_cost();
        if (!cur.empty() && cur_tokens + cost > max_tokens) {
            batches.push_back(std::move(cur));
            cur.clear();
            cur_tokens = 0;
        }
        cur.push_back(idx);
        cur_tokens += cost;
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    return batches;
}

void AdamState::update(const std::vector<NamedTensor>& params, double lr, Precision prec) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (const auto& p : params) {
        if (p.tensor.frozen() || !p.tensor.requires_grad()) continue;
        auto& values = const_cast<Tensor&>(p.tensor).values();
        const auto& grad = p.tensor.grad();
        auto& mom = moments_[p.name];
        if (mom.m.empty()) {
            mom.m.assign(values.size(), 0.0);
            mom.v.assign(values.size(), 0.0);
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double gi = grad[i];
            if (std::isnan(gi)) {
                throw NumericError("NaN gradient in parameter '" + p.name + "'");
            }
            mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * gi;
            mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            values[i] = quantize(values[i] - lr * mhat / (std::sqrt(vhat) + eps_), prec);
        }
    }
}

void AdamState::export_tensors(const std::vector<NamedTensor>& params,
                               std::vector<NamedTensor>& out) const {
    for (const auto& p : params) {
        const auto it = moments_.find(p.name);
        if (it == moments_.end()) continue;
        out.push_back({"adam.m." + p.name, Tensor::from(p.tensor.shape(), it->second.m, false)});
        out.push_back({"adam.v." + p.name, Tensor::from(p.tensor.shape(), it->second.v, false)});
    }
}

void AdamState::import_tensors(const CheckpointData& data,
                               const std::vector<NamedTensor>& params) {
    moments_.clear();
    for (const auto& p : params) {
        const Tensor* m = data.find("adam.m." + p.name);
        const Tensor* v = data.find("adam.v." + p.name);
        if (!m || !v) continue;
        moments_[p.name] = Moments{m->values(), v->values()};
    }
}

double clip_gradients(const std::vector<NamedTensor>& params, double max_norm, bool* clipped) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (p.tensor.frozen() || !p.tensor.requires_grad()) continue;
        for (double gv : p.tensor.grad()) sq += gv * gv;
    }
    const double norm = std::sqrt(sq);
    bool did = false;
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (const auto& p : params) {
            if (p.tensor.frozen() || !p.tensor.requires_grad()) continue;
            for (double& gv : const_cast<Tensor&>(p.tensor).grad()) gv *= factor;
        }
        did = true;
    }
    if (clipped) *clipped = did;
    return norm;
}

CompositeLoss composite_loss(Graph& g, const SeqModel& model, const ScorerLM* lm,
                             const SemSimHead* head, const SamplePair& sample, Objective objective,
                             double lambda, const ForwardOptions& opt) {
    CompositeLoss out;
    MlForward mf = ml_forward(g, model, sample.doc, sample.ref, opt);
    out.ml = mf.loss;
    out.ml_value = mf.loss.item();
    if (objective == Objective::MlOnly) {
        out.total = mf.loss;
        return out;
    }
    if (!lm || !head) throw ConfigError("composite objective requires a scorer");
    SoftSequence soft{mf.distributions};
    SemsimResult sem = semsim_loss(g, *lm, *head, mf.targets, soft);
    out.semsim = sem.loss;
    out.semsim_value = sem.loss.item();
    if (objective == Objective::SemsimOnly) {
        out.total = scale(g, sem.loss, lambda);
    } else {
        out.total = add(g, mf.loss, scale(g, sem.loss, lambda));
    }
    if (std::isnan(out.total.item())) throw NumericError("training loss became NaN");
    return out;
}

Trainer::Trainer(SeqModel model, std::optional<ScorerPack> scorer, TrainConfig cfg)
    : model_(std::move(model)),
      scorer_(std::move(scorer)),
      cfg_(cfg),
      adam_(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      dropout_rng_(Rng(cfg.seed).derive(0x64726f70)),
      shuffle_base_(Rng(cfg.seed).derive(0x73687566).state()) {
    cfg_.validate();
    if (cfg_.objective != Objective::MlOnly && !scorer_) {
        throw ConfigError("objective '" + objective_to_string(cfg_.objective) +
                          "' requires a scorer checkpoint");
    }
    trainable_params_ = model_.parameters();
    if (scorer_) {
        for (const auto& p : scorer_->lm.parameters()) trainable_params_.push_back(p);
        for (const auto& p : scorer_->head.parameters()) trainable_params_.push_back(p);
    }
}

std::vector<int> Trainer::epoch_order(int n_batches, int epoch) const {
    std::vector<int> order(static_cast<std::size_t>(n_batches));
    std::iota(order.begin(), order.end(), 0);
    Rng r = Rng(shuffle_base_).derive(static_cast<std::uint64_t>(epoch));
    shuffle(order, r);
    return order;
}

void Trainer::apply_update(StepInfo& pending, const StepCallback& on_update) {
    bool clipped = false;
    const double norm = clip_gradients(trainable_params_, cfg_.clip_norm, &clipped);
    adam_.update(trainable_params_, cfg_.lr, cfg_.precision);
    zero_grads(trainable_params_);
    ++updates_done_;
    if (on_update) {
        pending.step = updates_done_;
        if (pending.samples > 0) {
            pending.loss /= pending.samples;
            pending.l_ml /= pending.samples;
            pending.l_semsim /= pending.samples;
        }
        pending.grad_norm = norm;
        pending.clipped = clipped;
        on_update(pending);
    }
    pending = StepInfo{};
}

void Trainer::run(const std::vector<SamplePair>& data, std::int64_t max_updates,
                  const StepCallback& on_update) {
    if (data.empty()) throw ConfigError("training dataset is empty");
    const auto batches = pack_micro_batches(data, cfg_.max_tokens);
    const ScorerLM* lm = scorer_ ? &scorer_->lm : nullptr;
    const SemSimHead* head = scorer_ ? &scorer_->head : nullptr;

    StepInfo pending;
    int accumulated = 0;
    for (; epoch_ < cfg_.epochs; ++epoch_, cursor_ = 0) {
        const auto order = epoch_order(static_cast<int>(batches.size()), epoch_);
        for (; cursor_ < static_cast<int>(order.size()); ++cursor_) {
            const auto& batch = batches[static_cast<std::size_t>(order[static_cast<std::size_t>(cursor_)])];
            for (int sample_idx : batch) {
                Graph g(cfg_.precision);
                ForwardOptions opt;
                opt.training = true;
                opt.dropout = cfg_.dropout;
                opt.rng = &dropout_rng_;
                CompositeLoss loss =
                    composite_loss(g, model_, lm, head, data[static_cast<std::size_t>(sample_idx)],
                                   cfg_.objective, cfg_.lambda_semsim, opt);
                g.backward(loss.total);
                pending.loss += loss.total.item();
                pending.l_ml += loss.ml_value;
                pending.l_semsim += loss.semsim_value;
                ++pending.samples;
            }
            if (++accumulated == cfg_.update_freq) {
                accumulated = 0;
                apply_update(pending, on_update);
                if (max_updates > 0 && updates_done_ >= max_updates) {
                    ++cursor_;
                    return;
                }
            }
        }
        if (accumulated > 0) {
            accumulated = 0;
            apply_update(pending, on_update);
            if (max_updates > 0 && updates_done_ >= max_updates) {
                ++epoch_;
                cursor_ = 0;
                return;
            }
        }
    }
}

StepInfo Trainer::evaluate(const std::vector<SamplePair>& data) {
    if (data.empty()) throw ConfigError("evaluation dataset is empty");
    const ScorerLM* lm = scorer_ ? &scorer_->lm : nullptr;
    const SemSimHead* head = scorer_ ? &scorer_->head : nullptr;
    StepInfo info;
    for (const auto& sample : data) {
        Graph g(cfg_.precision, /*recording=*/false);
        CompositeLoss loss =
            composite_loss(g, model_, lm, head, sample, cfg_.objective, cfg_.lambda_semsim, {});
        info.loss += loss.total.item();
        info.l_ml += loss.ml_value;
        info.l_semsim += loss.semsim_value;
        ++info.samples;
    }
    info.loss /= info.samples;
    info.l_ml /= info.samples;
    info.l_semsim /= info.samples;
    info.step = updates_done_;
    return info;
}

void Trainer::save(const std::string& path) const {
    CheckpointData data;
    data.kind = "model";
    data.precision = cfg_.precision;
    write_model_config(model_.cfg, data);
    data.put_num("train.lr", cfg_.lr);
    data.put_num("train.dropout", cfg_.dropout);
    data.put_int("train.max_tokens", cfg_.max_tokens);
    data.put_int("train.update_freq", cfg_.update_freq);
    data.put_int("train.epochs", cfg_.epochs);
    data.put_int("train.max_source_len", cfg_.max_source_len);
    data.put_int("train.max_target_len", cfg_.max_target_len);
    data.put_int("train.seed", static_cast<long long>(cfg_.seed));
    data.put("train.objective", objective_to_string(cfg_.objective));
    data.put_num("train.lambda_semsim", cfg_.lambda_semsim);
    data.put_num("train.clip_norm", cfg_.clip_norm);
    data.put_num("train.adam_beta1", cfg_.adam_beta1);
    data.put_num("train.adam_beta2", cfg_.adam_beta2);
    data.put_num("train.adam_eps", cfg_.adam_eps);
    data.put_int("train.save_every", cfg_.save_every);
    data.put_int("state.updates", updates_done_);
    data.put_int("state.epoch", epoch_);
    data.put_int("state.cursor", cursor_);
    data.put_int("state.adam_step", adam_.step_count());
    data.put_int("state.rng_dropout", static_cast<long long>(dropout_rng_.state()));
    data.put_int("state.has_scorer", scorer_ ? 1 : 0);

    data.tensors = model_.parameters();
    adam_.export_tensors(model_.parameters(), data.tensors);
    if (scorer_) {
        write_scorer_config(scorer_->lm.cfg, data);
        for (const auto& p : scorer_->lm.parameters()) data.tensors.push_back(p);
        for (const auto& p : scorer_->head.parameters()) data.tensors.push_back(p);
    }
    save_checkpoint(path, data);
}

Trainer Trainer::resume(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    if (data.kind != "model") throw DataError(path + " is not a model checkpoint");
    SeqModel model = model_from_checkpoint(data);

    TrainConfig cfg;
    cfg.lr = data.get_num("train.lr");
    cfg.dropout = data.get_num("train.dropout");
    cfg.max_tokens = static_cast<int>(data.get_int("train.max_tokens"));
    cfg.update_freq = static_cast<int>(data.get_int("train.update_freq"));
    cfg.epochs = static_cast<int>(data.get_int("train.epochs"));
    cfg.max_source_len = static_cast<int>(data.get_int("train.max_source_len"));
    cfg.max_target_len = static_cast<int>(data.get_int("train.max_target_len"));
    cfg.seed = static_cast<std::uint64_t>(data.get_int("train.seed"));
    cfg.objective = objective_from_string(data.get("train.objective"));
    cfg.lambda_semsim = data.get_num("train.lambda_semsim");
    cfg.clip_norm = data.get_num("train.clip_norm");
    cfg.adam_beta1 = data.get_num("train.adam_beta1");
    cfg.adam_beta2 = data.get_num("train.adam_beta2");
    cfg.adam_eps = data.get_num("train.adam_eps");
    cfg.save_every = static_cast<int>(data.get_int("train.save_every"));
    cfg.precision = data.precision;

    std::optional<ScorerPack> scorer;
    if (data.get_int("state.has_scorer") != 0) {
        ScorerConfig scfg = read_scorer_config(data);
        Rng scratch(0);
        ScorerPack pack{ScorerLM::init(scfg, scratch),
                        SemSimHead::init(scfg.d_model, scratch, scfg.precision)};
        fill_parameters(pack.lm.parameters(), data);
        fill_parameters(pack.head.parameters(), data);
        scorer = std::move(pack);
    }

    Trainer t(std::move(model), std::move(scorer), cfg);
    t.adam_.import_tensors(data, t.model_.parameters());
    t.adam_.set_step_count(data.get_int("state.adam_step"));
    t.updates_done_ = data.get_int("state.updates");
    t.epoch_ = static_cast<int>(data.get_int("state.epoch"));
    t.cursor_ = static_cast<int>(data.get_int("state.cursor"));
    t.dropout_rng_.set_state(static_cast<std::uint64_t>(data.get_int("state.rng_dropout")));
    return t;
}

}  // namespace semsim
