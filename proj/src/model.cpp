#include "semsim/model.hpp"

#include <cmath>

namespace semsim {

namespace {

constexpr double kMaskValue = -1e30;
constexpr double kInitRange = 0.08;

Tensor init_matrix(std::vector<int> shape, Rng& rng, Precision prec) {
    return Tensor::uniform(std::move(shape), -kInitRange, kInitRange, rng, prec, true);
}

Tensor init_zeros(std::vector<int> shape) { return Tensor::zeros(std::move(shape), true); }

AttentionParams init_attention(const ModelConfig& cfg, Rng& rng) {
    AttentionParams p;
    const int d = cfg.d_model;
    const int dk = cfg.head_dim();
    for (int h = 0; h < cfg.heads; ++h) {
        p.wq.push_back(init_matrix({d, dk}, rng, cfg.precision));
        p.bq.push_back(init_zeros({dk}));
        p.wk.push_back(init_matrix({d, dk}, rng, cfg.precision));
        p.bk.push_back(init_zeros({dk}));
        p.wv.push_back(init_matrix({d, dk}, rng, cfg.precision));
        p.bv.push_back(init_zeros({dk}));
    }
    p.wo = init_matrix({d, d}, rng, cfg.precision);
    p.bo = init_zeros({d});
    return p;
}

LayerNormParams init_layer_norm(int d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

FeedForwardParams init_ffn(const ModelConfig& cfg, Rng& rng) {
    FeedForwardParams p;
    p.w1 = init_matrix({cfg.d_model, cfg.ffn_dim}, rng, cfg.precision);
    p.b1 = init_zeros({cfg.ffn_dim});
    p.w2 = init_matrix({cfg.ffn_dim, cfg.d_model}, rng, cfg.precision);
    p.b2 = init_zeros({cfg.d_model});
    return p;
}

DecoderLayerParams init_decoder_layer(const ModelConfig& cfg, Rng& rng) {
    DecoderLayerParams layer;
    layer.self_attn = init_attention(cfg, rng);
    layer.ln_self = init_layer_norm(cfg.d_model);
    layer.cross_attn = init_attention(cfg, rng);
    layer.ln_cross = init_layer_norm(cfg.d_model);
    layer.ff = init_ffn(cfg, rng);
    layer.ln_ff = init_layer_norm(cfg.d_model);
    return layer;
}

// Additive attention mask over key positions; rows are queries.
Tensor key_pad_mask(int query_len, const std::vector<char>& pad) {
    const int key_len = static_cast<int>(pad.size());
    std::vector<double> m(static_cast<std::size_t>(query_len) * key_len, 0.0);
    bool any = false;
    for (int kpos = 0; kpos < key_len; ++kpos) {
        if (!pad[static_cast<std::size_t>(kpos)]) continue;
        any = true;
        for (int q = 0; q < query_len; ++q) m[static_cast<std::size_t>(q) * key_len + kpos] = kMaskValue;
    }
    if (!any) return Tensor();
    return Tensor::from({query_len, key_len}, std::move(m), false);
}

Tensor causal_mask(int len) {
    std::vector<double> m(static_cast<std::size_t>(len) * len, 0.0);
    for (int q = 0; q < len; ++q) {
        for (int kpos = q + 1; kpos < len; ++kpos) {
            m[static_cast<std::size_t>(q) * len + kpos] = kMaskValue;
        }
    }
    return Tensor::from({len, len}, std::move(m), false);
}

Tensor attention(Graph& g, const AttentionParams& p, const Tensor& query_in, const Tensor& key_in,
                 const Tensor& mask) {
    const int heads = static_cast<int>(p.wq.size());
    const int dk = p.wq[0].dim(1);
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    Tensor merged;
    for (int h = 0; h < heads; ++h) {
        Tensor q = add_bias(g, matmul(g, query_in, p.wq[static_cast<std::size_t>(h)]),
                            p.bq[static_cast<std::size_t>(h)]);
        Tensor k = add_bias(g, matmul(g, key_in, p.wk[static_cast<std::size_t>(h)]),
                            p.bk[static_cast<std::size_t>(h)]);
        Tensor v = add_bias(g, matmul(g, key_in, p.wv[static_cast<std::size_t>(h)]),
                            p.bv[static_cast<std::size_t>(h)]);
        Tensor scores = scale(g, matmul(g, q, k, /*transpose_b=*/true), inv_sqrt_dk);
        if (mask.defined()) scores = add(g, scores, mask);
        Tensor ctx = matmul(g, softmax(g, scores, -1), v);
        merged = h == 0 ? ctx : concat(g, merged, ctx, 1);
    }
    return add_bias(g, matmul(g, merged, p.wo), p.bo);
}

Tensor ffn_block(Graph& g, const FeedForwardParams& p, const Tensor& x) {
    Tensor inner = gelu(g, add_bias(g, matmul(g, x, p.w1), p.b1));
    return add_bias(g, matmul(g, inner, p.w2), p.b2);
}

Tensor maybe_dropout(Graph& g, const Tensor& x, const ForwardOptions& opt) {
    if (!opt.training || opt.dropout <= 0.0 || opt.rng == nullptr) return x;
    return dropout(g, x, opt.dropout, *opt.rng, true);
}

Tensor embed_tokens(Graph& g, const Tensor& tok_table, const Tensor& pos_table,
                    std::span<const int> ids, const ForwardOptions& opt) {
    std::vector<int> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    Tensor x = add(g, embedding(g, tok_table, ids), embedding(g, pos_table, positions));
    return maybe_dropout(g, x, opt);
}

void collect_attention(const std::string& prefix, const AttentionParams& p,
                       std::vector<NamedTensor>& out) {
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        const std::string hp = prefix + "." + std::to_string(h);
        out.push_back({hp + ".wq", p.wq[h]});
        out.push_back({hp + ".bq", p.bq[h]});
        out.push_back({hp + ".wk", p.wk[h]});
        out.push_back({hp + ".bk", p.bk[h]});
        out.push_back({hp + ".wv", p.wv[h]});
        out.push_back({hp + ".bv", p.bv[h]});
    }
    out.push_back({prefix + ".wo", p.wo});
    out.push_back({prefix + ".bo", p.bo});
}

void collect_ln(const std::string& prefix, const LayerNormParams& p, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".gain", p.gain});
    out.push_back({prefix + ".bias", p.bias});
}

void collect_ffn(const std::string& prefix, const FeedForwardParams& p,
                 std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w1", p.w1});
    out.push_back({prefix + ".b1", p.b1});
    out.push_back({prefix + ".w2", p.w2});
    out.push_back({prefix + ".b2", p.b2});
}

}  // namespace

void ModelConfig::validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " must be divisible by heads " +
                          std::to_string(heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (vocab_size <= 0) throw ConfigError("vocab_size must be set before building a model");
    if (max_positions <= 0) throw ConfigError("max_positions must be positive");
    if (encoder_layers <= 0 || decoder_layers <= 0) throw ConfigError("layer counts must be positive");
}

EncoderLayerParams init_encoder_layer(const ModelConfig& cfg, Rng& rng) {
    EncoderLayerParams layer;
    layer.self_attn = init_attention(cfg, rng);
    layer.ln_attn = init_layer_norm(cfg.d_model);
    layer.ff = init_ffn(cfg, rng);
    layer.ln_ff = init_layer_norm(cfg.d_model);
    return layer;
}

SeqModel SeqModel::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    SeqModel m;
    m.cfg = cfg;
    m.tok_emb = init_matrix({cfg.vocab_size, cfg.d_model}, rng, cfg.precision);
    if (!cfg.tied_embeddings) {
        m.dec_tok_emb = init_matrix({cfg.vocab_size, cfg.d_model}, rng, cfg.precision);
    }
    m.enc_pos = init_matrix({cfg.max_positions, cfg.d_model}, rng, cfg.precision);
    m.dec_pos = init_matrix({cfg.max_positions, cfg.d_model}, rng, cfg.precision);
    for (int i = 0; i < cfg.encoder_layers; ++i) m.encoder.push_back(init_encoder_layer(cfg, rng));
    for (int i = 0; i < cfg.decoder_layers; ++i) m.decoder.push_back(init_decoder_layer(cfg, rng));
    m.out_proj = init_matrix({cfg.d_model, cfg.vocab_size}, rng, cfg.precision);
    m.out_bias = init_zeros({cfg.vocab_size});
    return m;
}

std::vector<NamedTensor> SeqModel::parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"emb.tok", tok_emb});
    if (!cfg.tied_embeddings) out.push_back({"emb.tok_dec", dec_tok_emb});
    out.push_back({"emb.pos_enc", enc_pos});
    out.push_back({"emb.pos_dec", dec_pos});
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        collect_encoder_layer_params("enc." + std::to_string(i), encoder[i], out);
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        const std::string p = "dec." + std::to_string(i);
        collect_attention(p + ".self", decoder[i].self_attn, out);
        collect_ln(p + ".ln_self", decoder[i].ln_self, out);
        collect_attention(p + ".cross", decoder[i].cross_attn, out);
        collect_ln(p + ".ln_cross", decoder[i].ln_cross, out);
        collect_ffn(p + ".ff", decoder[i].ff, out);
        collect_ln(p + ".ln_ff", decoder[i].ln_ff, out);
    }
    out.push_back({"out.proj", out_proj});
    out.push_back({"out.bias", out_bias});
    return out;
}

void collect_encoder_layer_params(const std::string& prefix, const EncoderLayerParams& layer,
                                  std::vector<NamedTensor>& out) {
    collect_attention(prefix + ".self", layer.self_attn, out);
    collect_ln(prefix + ".ln_attn", layer.ln_attn, out);
    collect_ffn(prefix + ".ff", layer.ff, out);
    collect_ln(prefix + ".ln_ff", layer.ln_ff, out);
}

Tensor run_encoder_stack(Graph& g, const std::vector<EncoderLayerParams>& layers, Tensor x,
                         const std::vector<char>& pad_mask, const ForwardOptions& opt) {
    const Tensor mask = key_pad_mask(x.dim(0), pad_mask);
    for (const auto& layer : layers) {
        Tensor a = maybe_dropout(g, attention(g, layer.self_attn, x, x, mask), opt);
        x = layer_norm(g, add(g, x, a), layer.ln_attn.gain, layer.ln_attn.bias);
        Tensor f = maybe_dropout(g, ffn_block(g, layer.ff, x), opt);
        x = layer_norm(g, add(g, x, f), layer.ln_ff.gain, layer.ln_ff.bias);
    }
    return x;
}

EncoderState encode(Graph& g, const SeqModel& model, const TokenSequence& doc,
                    const ForwardOptions& opt) {
    if (doc.length() > model.cfg.max_positions) {
        throw LengthError("document of " + std::to_string(doc.length()) +
                          " tokens exceeds max positions " +
                          std::to_string(model.cfg.max_positions));
    }
    if (doc.ids.empty()) throw DataError("cannot encode an empty document");
    EncoderState state;
    state.pad_mask.resize(doc.ids.size());
    for (std::size_t i = 0; i < doc.ids.size(); ++i) {
        state.pad_mask[i] = doc.ids[i] == model.cfg.pad_id;
    }
    Tensor x = embed_tokens(g, model.tok_emb, model.enc_pos, doc.ids, opt);
    state.states = run_encoder_stack(g, model.encoder, x, state.pad_mask, opt);
    return state;
}

Tensor decode_distributions(Graph& g, const SeqModel& model, std::span<const int> prefix,
                            const EncoderState& enc, const ForwardOptions& opt) {
    if (prefix.empty() || prefix.front() != model.cfg.bos_id) {
        throw DataError("decoder prefix must begin with bos");
    }
    if (static_cast<int>(prefix.size()) > model.cfg.max_positions) {
        throw LengthError("decoder prefix of " + std::to_string(prefix.size()) +
                          " tokens exceeds max positions " +
                          std::to_string(model.cfg.max_positions));
    }
    const int steps = static_cast<int>(prefix.size());
    Tensor x = embed_tokens(g, model.decoder_embedding(), model.dec_pos, prefix, opt);
    const Tensor self_mask = causal_mask(steps);
    const Tensor cross_mask = key_pad_mask(steps, enc.pad_mask);
    for (const auto& layer : model.decoder) {
        Tensor a = maybe_dropout(g, attention(g, layer.self_attn, x, x, self_mask), opt);
        x = layer_norm(g, add(g, x, a), layer.ln_self.gain, layer.ln_self.bias);
        Tensor c = maybe_dropout(g, attention(g, layer.cross_attn, x, enc.states, cross_mask), opt);
        x = layer_norm(g, add(g, x, c), layer.ln_cross.gain, layer.ln_cross.bias);
        Tensor f = maybe_dropout(g, ffn_block(g, layer.ff, x), opt);
        x = layer_norm(g, add(g, x, f), layer.ln_ff.gain, layer.ln_ff.bias);
    }
    Tensor logits = add_bias(g, matmul(g, x, model.out_proj), model.out_bias);
    return softmax(g, logits, -1);
}

MlForward ml_forward(Graph& g, const SeqModel& model, const TokenSequence& doc,
                     const TokenSequence& ref, const ForwardOptions& opt) {
    if (ref.ids.empty()) throw DataError("reference sequence is empty");
    // Targets are the content tokens plus eos; bos only feeds the decoder.
    std::vector<int> targets(ref.ids.begin(), ref.ids.end());
    if (targets.front() == model.cfg.bos_id) targets.erase(targets.begin());
    if (targets.empty() || targets.back() != model.cfg.eos_id) {
        throw DataError("reference sequence must end with eos");
    }
    std::vector<int> input;
    input.reserve(targets.size());
    input.push_back(model.cfg.bos_id);
    input.insert(input.end(), targets.begin(), targets.end() - 1);

    EncoderState enc = encode(g, model, doc, opt);
    MlForward out;
    out.distributions = decode_distributions(g, model, input, enc, opt);
    out.loss = nll_loss(g, out.distributions, targets);
    out.targets = std::move(targets);
    return out;
}

Tensor ml_loss(Graph& g, const SeqModel& model, const TokenSequence& doc, const TokenSequence& ref,
               const ForwardOptions& opt) {
    return ml_forward(g, model, doc, ref, opt).loss;
}

}  // namespace semsim
