#pragma once

#include <functional>
#include <string>
#include <vector>

#include "semsim/error.hpp"

namespace semsim {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Clipped n-gram overlap F1.
RougeScore rouge_n(const std::vector<std::string>& ref, const std::vector<std::string>& gen, int n);

// Whole-sequence LCS F1.
RougeScore rouge_l(const std::vector<std::string>& ref, const std::vector<std::string>& gen);

// Lowercase, split on any non-alphanumeric run.
std::vector<std::string> rouge_tokenize(const std::string& text);

using RougeTokenizer = std::function<std::vector<std::string>(const std::string&)>;

struct RougeReport {
    struct Row {
        RougeScore r1, r2, rl;
    };
    std::vector<Row> per_sample;
    Row mean;
    int count = 0;
};

// pairs are (reference, generated) texts.
RougeReport evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& pairs,
                            const RougeTokenizer& tokenizer = rouge_tokenize);

}  // namespace semsim
