#include "semsim/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semsim {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Candidate {
    int hyp;     // index into the live set
    int token;
    double token_lp;
    double score;  // cumulative log-probability after appending
};

// Score first; ties go to the shorter prefix, then the smaller token id.
bool candidate_less(const Candidate& a, const Candidate& b, const std::vector<Hypothesis>& live) {
    if (a.score != b.score) return a.score > b.score;
    const int la = live[static_cast<std::size_t>(a.hyp)].length();
    const int lb = live[static_cast<std::size_t>(b.hyp)].length();
    if (la != lb) return la < lb;
    if (a.token != b.token) return a.token < b.token;
    return a.hyp < b.hyp;
}

}  // namespace

void SearchConfig::validate() const {
    if (beam < 1) throw ConfigError("beam size must be at least 1");
    if (min_len < 0 || max_len < min_len) {
        throw ConfigError("length bounds must satisfy 0 <= min <= max, got " +
                          std::to_string(min_len) + "/" + std::to_string(max_len));
    }
    if (length_penalty < 0.0) throw ConfigError("length penalty exponent must be non-negative");
}

void Hypothesis::append(int token, double token_log_prob) {
    if (tokens.size() >= 2) {
        trigrams.insert({tokens[tokens.size() - 2], tokens[tokens.size() - 1], token});
    }
    tokens.push_back(token);
    log_prob += token_log_prob;
}

std::vector<double> apply_trigram_block(const Hypothesis& hyp, std::vector<double> log_probs) {
    if (hyp.length() < 2) return log_probs;
    const int a = hyp.tokens[hyp.tokens.size() - 2];
    const int b = hyp.tokens[hyp.tokens.size() - 1];
    for (int v = 0; v < static_cast<int>(log_probs.size()); ++v) {
        if (hyp.trigrams.count({a, b, v})) log_probs[static_cast<std::size_t>(v)] = kNegInf;
    }
    return log_probs;
}

double length_penalized_score(const Hypothesis& hyp, double alpha) {
    if (hyp.tokens.empty()) throw DataError("cannot score an empty hypothesis");
    return hyp.log_prob / std::pow(static_cast<double>(hyp.length()), alpha);
}

TokenSequence beam_search(const SeqModel& model, const TokenSequence& doc, const SearchConfig& cfg,
                          std::vector<BeamStepTrace>* trace) {
    cfg.validate();
    const int vocab = model.cfg.vocab_size;
    const int eos = model.cfg.eos_id;

    Graph g(model.cfg.precision, /*recording=*/false);
    const EncoderState enc = encode(g, model, doc);

    std::vector<Hypothesis> live(1);
    std::vector<Hypothesis> finished;

    while (!live.empty()) {
        std::vector<Candidate> candidates;
        for (std::size_t h = 0; h < live.size(); ++h) {
            const Hypothesis& hyp = live[h];
            std::vector<int> prefix;
            prefix.reserve(hyp.tokens.size() + 1);
            prefix.push_back(model.cfg.bos_id);
            prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());

            const Tensor dists = decode_distributions(g, model, prefix, enc);
            const int last = dists.dim(0) - 1;
            std::vector<double> logp(static_cast<std::size_t>(vocab));
            for (int v = 0; v < vocab; ++v) {
                logp[static_cast<std::size_t>(v)] =
                    std::log(std::max(dists.at(last, v), 1e-300));
            }
            if (cfg.trigram_blocking) logp = apply_trigram_block(hyp, std::move(logp));

            // The generator never re-emits bos or pad as content.
            logp[static_cast<std::size_t>(model.cfg.bos_id)] = kNegInf;
            logp[static_cast<std::size_t>(model.cfg.pad_id)] = kNegInf;

            const int len_if_finished = hyp.length() + 1;
            if (len_if_finished < cfg.min_len) logp[static_cast<std::size_t>(eos)] = kNegInf;
            if (len_if_finished >= cfg.max_len) {
                // Force-finish: only eos may extend this hypothesis.
                const double eos_lp = std::log(std::max(dists.at(last, eos), 1e-300));
                for (double& lp : logp) lp = kNegInf;
                logp[static_cast<std::size_t>(eos)] = eos_lp;
            }
            for (int v = 0; v < vocab; ++v) {
                const double lp = logp[static_cast<std::size_t>(v)];
                if (lp > kNegInf) {
                    candidates.push_back({static_cast<int>(h), v, lp, hyp.log_prob + lp});
                }
            }
        }
        if (candidates.empty()) break;
        std::sort(candidates.begin(), candidates.end(),
                  [&live](const Candidate& a, const Candidate& b) {
                      return candidate_less(a, b, live);
                  });
        const std::size_t keep = std::min(static_cast<std::size_t>(cfg.beam), candidates.size());
        if (trace) {
            BeamStepTrace step;
            for (const auto& c : candidates) step.candidate_scores.push_back(c.score);
            for (std::size_t i = 0; i < keep; ++i) step.kept_scores.push_back(candidates[i].score);
            trace->push_back(std::move(step));
        }
        std::vector<Hypothesis> next;
        for (std::size_t i = 0; i < keep; ++i) {
            const Candidate& c = candidates[i];
            Hypothesis hyp = live[static_cast<std::size_t>(c.hyp)];
            hyp.append(c.token, c.token_lp);
            if (c.token == eos) {
                hyp.finished = true;
                finished.push_back(std::move(hyp));
            } else {
                next.push_back(std::move(hyp));
            }
        }
        live = std::move(next);
    }

    if (finished.empty()) throw DataError("beam search produced no finished hypothesis");
    const Hypothesis* best = nullptr;
    double best_score = kNegInf;
    for (const auto& hyp : finished) {
        const double s = length_penalized_score(hyp, cfg.length_penalty);
        const bool better =
            !best || s > best_score ||
            (s == best_score && (hyp.length() < best->length() ||
                                 (hyp.length() == best->length() && hyp.tokens < best->tokens)));
        if (better) {
            best = &hyp;
            best_score = s;
        }
    }

    TokenSequence out;
    out.role = Role::Generated;
    out.ids.push_back(model.cfg.bos_id);
    out.ids.insert(out.ids.end(), best->tokens.begin(), best->tokens.end());
    return out;
}

}  // namespace semsim
