#pragma once

#include <array>
#include <set>
#include <vector>

#include "semsim/model.hpp"
#include "semsim/tokenizer.hpp"

namespace semsim {

struct SearchConfig {
    int beam = 5;
    int min_len = 55;   // generated tokens, eos included
    int max_len = 140;  // generated tokens, eos included
    double length_penalty = 1.0;
    bool trigram_blocking = true;

    void validate() const;
};

// Partial decode. `tokens` excludes bos; a finished hypothesis ends with eos.
struct Hypothesis {
    std::vector<int> tokens;
    double log_prob = 0.0;
    std::set<std::array<int, 3>> trigrams;
    bool finished = false;

    int length() const { return static_cast<int>(tokens.size()); }
    void append(int token, double token_log_prob);
};

// -inf on any token that would repeat a trigram of the prefix; identity for
// prefixes shorter than 2.
std::vector<double> apply_trigram_block(const Hypothesis& hyp, std::vector<double> log_probs);

// log_prob / length^alpha over the finished hypothesis.
double length_penalized_score(const Hypothesis& hyp, double alpha);

struct BeamStepTrace {
    std::vector<double> candidate_scores;  // every expansion considered this step
    std::vector<double> kept_scores;       // the ones that survived pruning
};

TokenSequence beam_search(const SeqModel& model, const TokenSequence& doc, const SearchConfig& cfg,
                          std::vector<BeamStepTrace>* trace = nullptr);

}  // namespace semsim
