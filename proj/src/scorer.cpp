#include "semsim/scorer.hpp"

#include <cmath>

namespace semsim {

namespace {

Tensor frozen_copy(const Tensor& src) {
    Tensor t = Tensor::from(src.shape(), src.values(), true);
    t.set_frozen(true);
    return t;
}

void freeze_attention(AttentionParams& p) {
    for (auto* group : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv}) {
        for (auto& t : *group) t.set_frozen(true);
    }
    p.wo.set_frozen(true);
    p.bo.set_frozen(true);
}

void freeze_layer(EncoderLayerParams& layer) {
    freeze_attention(layer.self_attn);
    layer.ln_attn.gain.set_frozen(true);
    layer.ln_attn.bias.set_frozen(true);
    layer.ff.w1.set_frozen(true);
    layer.ff.b1.set_frozen(true);
    layer.ff.w2.set_frozen(true);
    layer.ff.b2.set_frozen(true);
    layer.ln_ff.gain.set_frozen(true);
    layer.ln_ff.bias.set_frozen(true);
}

ModelConfig as_model_config(const ScorerConfig& cfg) {
    ModelConfig mc;
    mc.encoder_layers = cfg.layers;
    mc.decoder_layers = 1;  // unused; keeps validate() happy
    mc.d_model = cfg.d_model;
    mc.heads = cfg.heads;
    mc.ffn_dim = cfg.ffn_dim;
    mc.dropout = 0.0;  // the scorer never uses dropout
    mc.max_positions = cfg.max_positions;
    mc.vocab_size = cfg.vocab_size;
    mc.pad_id = cfg.pad_id;
    mc.precision = cfg.precision;
    return mc;
}

Tensor pool(Graph& g, const Tensor& states, Pooling pooling) {
    if (pooling == Pooling::First) {
        const int first[] = {0};
        return mean(g, embedding(g, states, first), 0);
    }
    return mean(g, states, 0);
}

Tensor run_scorer_stack(Graph& g, const ScorerLM& lm, Tensor x, const std::vector<char>& pad_mask) {
    const ForwardOptions opt{};  // deterministic: no dropout ever
    Tensor states = run_encoder_stack(g, lm.layers, x, pad_mask, opt);
    return pool(g, states, lm.cfg.pooling);
}

Tensor positions_for(Graph& g, const ScorerLM& lm, int len) {
    std::vector<int> positions(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;
    return embedding(g, lm.pos, positions);
}

}  // namespace

void ScorerConfig::validate() const { as_model_config(*this).validate(); }

ScorerLM ScorerLM::init(const ScorerConfig& cfg, Rng& rng) {
    cfg.validate();
    const ModelConfig mc = as_model_config(cfg);
    ScorerLM lm;
    lm.cfg = cfg;
    lm.tok_emb = Tensor::uniform({cfg.vocab_size, cfg.d_model}, -0.08, 0.08, rng, cfg.precision, true);
    lm.pos = Tensor::uniform({cfg.max_positions, cfg.d_model}, -0.08, 0.08, rng, cfg.precision, true);
    for (int i = 0; i < cfg.layers; ++i) lm.layers.push_back(init_encoder_layer(mc, rng));
    lm.tok_emb.set_frozen(true);
    lm.pos.set_frozen(true);
    for (auto& layer : lm.layers) freeze_layer(layer);
    return lm;
}

std::vector<NamedTensor> ScorerLM::parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"scorer.emb.tok", tok_emb});
    out.push_back({"scorer.emb.pos", pos});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        collect_encoder_layer_params("scorer.enc." + std::to_string(i), layers[i], out);
    }
    return out;
}

SemSimHead SemSimHead::init(int d, Rng& rng, Precision prec) {
    if (d <= 0) throw ConfigError("head dimension must be positive");
    SemSimHead head;
    head.w = Tensor::normal({1, 2 * d}, 0.0, 1.0 / std::sqrt(2.0 * d), rng, prec, true);
    head.b = Tensor::zeros({1}, true);
    head.w.set_frozen(true);
    head.b.set_frozen(true);
    return head;
}

std::vector<NamedTensor> SemSimHead::parameters() const {
    return {{"head.w", w}, {"head.b", b}};
}

void SoftSequence::validate(int vocab_size) const {
    if (!rows.defined() || rows.rank() != 2 || rows.dim(1) != vocab_size) {
        throw ValidationError("soft sequence must be [L x V] with V = " +
                              std::to_string(vocab_size));
    }
    const int len = rows.dim(0);
    const int v = rows.dim(1);
    for (int r = 0; r < len; ++r) {
        double total = 0.0;
        for (int j = 0; j < v; ++j) {
            const double p = rows.values()[static_cast<std::size_t>(r) * v + j];
            if (p < 0.0) throw ValidationError("soft sequence row " + std::to_string(r) +
                                               " has a negative probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-4) {
            throw ValidationError("soft sequence row " + std::to_string(r) + " sums to " +
                                  std::to_string(total) + ", expected 1");
        }
    }
}

SoftSequence SoftSequence::one_hot(std::span<const int> ids, int vocab_size) {
    std::vector<double> rows(ids.size() * static_cast<std::size_t>(vocab_size), 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab_size) {
            throw IndexError("one-hot id " + std::to_string(ids[i]) + " outside vocabulary");
        }
        rows[i * static_cast<std::size_t>(vocab_size) + static_cast<std::size_t>(ids[i])] = 1.0;
    }
    return {Tensor::from({static_cast<int>(ids.size()), vocab_size}, std::move(rows), false)};
}

Tensor embed_sequence(Graph& g, const ScorerLM& lm, std::span<const int> ids) {
    if (ids.empty()) throw DataError("cannot embed an empty sequence");
    if (static_cast<int>(ids.size()) > lm.cfg.max_positions) {
        throw LengthError("sequence of " + std::to_string(ids.size()) +
                          " tokens exceeds scorer max positions " +
                          std::to_string(lm.cfg.max_positions));
    }
    std::vector<char> pad_mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) pad_mask[i] = ids[i] == lm.cfg.pad_id;
    Tensor x = add(g, embedding(g, lm.tok_emb, ids),
                   positions_for(g, lm, static_cast<int>(ids.size())));
    return run_scorer_stack(g, lm, x, pad_mask);
}

Tensor embed_soft_sequence(Graph& g, const ScorerLM& lm, const SoftSequence& soft) {
    soft.validate(lm.cfg.vocab_size);
    const int len = soft.rows.dim(0);
    if (len > lm.cfg.max_positions) {
        throw LengthError("soft sequence of " + std::to_string(len) +
                          " rows exceeds scorer max positions " +
                          std::to_string(lm.cfg.max_positions));
    }
    // Expected embedding per position: row . tok_emb.
    Tensor x = add(g, matmul(g, soft.rows, lm.tok_emb), positions_for(g, lm, len));
    const std::vector<char> pad_mask(static_cast<std::size_t>(len), 0);
    return run_scorer_stack(g, lm, x, pad_mask);
}

Tensor semsim_score(Graph& g, const SemSimHead& head, const Tensor& e_ref, const Tensor& e_gen) {
    if (e_ref.rank() != 1 || e_gen.rank() != 1 || e_ref.dim(0) != e_gen.dim(0)) {
        throw DimensionError("embedding extent mismatch: " + shape_str(e_ref.shape()) + " vs " +
                             shape_str(e_gen.shape()));
    }
    if (head.w.dim(1) != 2 * e_ref.dim(0)) {
        throw DimensionError("head expects 2d = " + std::to_string(head.w.dim(1)) +
                             ", embeddings give " + std::to_string(2 * e_ref.dim(0)));
    }
    Tensor e = concat(g, e_ref, e_gen, 0);  // reference first
    return add(g, matmul(g, head.w, e), head.b);
}

SemsimResult semsim_loss(Graph& g, const ScorerLM& lm, const SemSimHead& head,
                         std::span<const int> ref_ids, const SoftSequence& soft_gen) {
    Tensor e_ref = embed_sequence(g, lm, ref_ids);
    Tensor e_gen = embed_soft_sequence(g, lm, soft_gen);
    Tensor score = semsim_score(g, head, e_ref, e_gen);
    return {scale(g, score, -1.0), score};
}

ScorerLM scorer_from_encoder(const SeqModel& model) {
    ScorerLM lm;
    lm.cfg.layers = static_cast<int>(model.encoder.size());
    lm.cfg.d_model = model.cfg.d_model;
    lm.cfg.heads = model.cfg.heads;
    lm.cfg.ffn_dim = model.cfg.ffn_dim;
    lm.cfg.max_positions = model.cfg.max_positions;
    lm.cfg.vocab_size = model.cfg.vocab_size;
    lm.cfg.pad_id = model.cfg.pad_id;
    lm.cfg.precision = model.cfg.precision;
    lm.tok_emb = frozen_copy(model.tok_emb);
    lm.pos = frozen_copy(model.enc_pos);
    for (const auto& src : model.encoder) {
        EncoderLayerParams layer;
        auto copy_attn = [](const AttentionParams& a) {
            AttentionParams out;
            for (const auto& t : a.wq) out.wq.push_back(frozen_copy(t));
            for (const auto& t : a.bq) out.bq.push_back(frozen_copy(t));
            for (const auto& t : a.wk) out.wk.push_back(frozen_copy(t));
            for (const auto& t : a.bk) out.bk.push_back(frozen_copy(t));
            for (const auto& t : a.wv) out.wv.push_back(frozen_copy(t));
            for (const auto& t : a.bv) out.bv.push_back(frozen_copy(t));
            out.wo = frozen_copy(a.wo);
            out.bo = frozen_copy(a.bo);
            return out;
        };
        layer.self_attn = copy_attn(src.self_attn);
        layer.ln_attn = {frozen_copy(src.ln_attn.gain), frozen_copy(src.ln_attn.bias)};
        layer.ff = {frozen_copy(src.ff.w1), frozen_copy(src.ff.b1), frozen_copy(src.ff.w2),
                    frozen_copy(src.ff.b2)};
        layer.ln_ff = {frozen_copy(src.ln_ff.gain), frozen_copy(src.ln_ff.bias)};
        lm.layers.push_back(std::move(layer));
    }
    return lm;
}

}  // namespace semsim
