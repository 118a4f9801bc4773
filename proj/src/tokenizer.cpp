#include "semsim/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace semsim {

const std::string Vocab::kWordMarker = "▁";  // lower one-eighth block

namespace {

const char* kSpecialSurface[] = {"<pad>", "<unk>", "<s>", "</s>"};
constexpr int kNumSpecials = 4;

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

std::vector<std::string> word_symbols(const std::string& word) {
    std::vector<std::string> symbols;
    symbols.push_back(Vocab::kWordMarker);
    auto cps = split_codepoints(word);
    symbols.insert(symbols.end(), cps.begin(), cps.end());
    return symbols;
}

}  // namespace

std::vector<std::string> split_codepoints(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (lead >= 0xF0) {
            len = 4;
        } else if (lead >= 0xE0) {
            len = 3;
        } else if (lead >= 0xC0) {
            len = 2;
        }
        len = std::min(len, text.size() - i);
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::string> apply_merges(
    std::vector<std::string> symbols,
    const std::vector<std::pair<std::string, std::string>>& merges) {
    for (const auto& [left, right] : merges) {
        if (symbols.size() < 2) break;
        std::vector<std::string> next;
        next.reserve(symbols.size());
        std::size_t i = 0;
        while (i < symbols.size()) {
            if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                next.push_back(left + right);
                i += 2;
            } else {
                next.push_back(symbols[i]);
                ++i;
            }
        }
        symbols = std::move(next);
    }
    return symbols;
}

void Vocab::rebuild_index() {
    index_.clear();
    for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i) {
        index_.emplace(id_to_token_[static_cast<std::size_t>(i)], i);
    }
}

Vocab Vocab::train_bpe(const std::vector<std::string>& corpus, int target_vocab) {
    // Word frequencies; std::map keeps iteration deterministic.
    std::map<std::string, long long> word_freq;
    for (const auto& line : corpus) {
        for (const auto& w : split_words(line)) ++word_freq[w];
    }
    if (word_freq.empty()) throw DataError("cannot train BPE on an empty corpus");

    std::map<std::string, int> base_symbols;
    std::vector<std::pair<std::vector<std::string>, long long>> words;
    words.reserve(word_freq.size());
    for (const auto& [word, freq] : word_freq) {
        auto symbols = word_symbols(word);
        for (const auto& s : symbols) base_symbols.emplace(s, 0);
        words.emplace_back(std::move(symbols), freq);
    }

    const int floor_size = kNumSpecials + static_cast<int>(base_symbols.size());
    if (target_vocab <= floor_size) {
        throw ConfigError("target vocabulary " + std::to_string(target_vocab) +
                          " does not exceed base symbols plus specials (" +
                          std::to_string(floor_size) + ")");
    }

    Vocab v;
    for (const char* s : kSpecialSurface) v.id_to_token_.emplace_back(s);
    for (const auto& [sym, _] : base_symbols) v.id_to_token_.push_back(sym);

    while (static_cast<int>(v.id_to_token_.size()) < target_vocab) {
        std::map<std::pair<std::string, std::string>, long long> pair_freq;
        for (const auto& [symbols, freq] : words) {
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
                pair_freq[{symbols[i], symbols[i + 1]}] += freq;
            }
        }
        // Highest frequency wins; map order breaks ties lexicographically.
        const std::pair<std::string, std::string>* best = nullptr;
        long long best_freq = 1;
        for (const auto& [pr, freq] : pair_freq) {
            if (freq > best_freq) {
                best = &pr;
                best_freq = freq;
            }
        }
        if (!best) break;
        v.merges_.push_back(*best);
        v.id_to_token_.push_back(best->first + best->second);
        const auto [left, right] = *best;
        for (auto& [symbols, freq] : words) {
            std::vector<std::string> next;
            next.reserve(symbols.size());
            std::size_t i = 0;
            while (i < symbols.size()) {
                if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                    next.push_back(left + right);
                    i += 2;
                } else {
                    next.push_back(symbols[i]);
                    ++i;
                }
            }
            symbols = std::move(next);
        }
    }
    v.rebuild_index();
    return v;
}

TokenSequence Vocab::encode(const std::string& text, Role role) const {
    TokenSequence seq;
    seq.role = role;
    if (role != Role::Document) seq.ids.push_back(kBos);
    for (const auto& word : split_words(text)) {
        for (const auto& sym : apply_merges(word_symbols(word), merges_)) {
            const auto it = index_.find(sym);
            seq.ids.push_back(it == index_.end() ? kUnk : it->second);
        }
    }
    if (role != Role::Document) seq.ids.push_back(kEos);
    return seq;
}

std::string Vocab::decode(const TokenSequence& seq) const {
    std::string glued;
    for (int id : seq.ids) {
        if (id < 0 || id >= size()) {
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(size()));
        }
        if (id < kNumSpecials) continue;
        glued += id_to_token_[static_cast<std::size_t>(id)];
    }
    // Word markers back to spaces.
    std::string out;
    std::size_t i = 0;
    while (i < glued.size()) {
        if (glued.compare(i, kWordMarker.size(), kWordMarker) == 0) {
            if (!out.empty()) out.push_back(' ');
            i += kWordMarker.size();
        } else {
            out.push_back(glued[i]);
            ++i;
        }
    }
    return out;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(size()));
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

int Vocab::id_of(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (const auto& tok : id_to_token_) out << tok << "\n";
    out << "#merges\n";
    for (const auto& [l, r] : merges_) out << l << " " << r << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file " + path);
    Vocab v;
    std::string line;
    bool in_merges = false;
    while (std::getline(in, line)) {
        if (line == "#merges") {
            in_merges = true;
            continue;
        }
        if (!in_merges) {
            v.id_to_token_.push_back(line);
        } else if (!line.empty()) {
            const auto sp = line.find(' ');
            if (sp == std::string::npos) throw DataError("malformed merge line in " + path);
            v.merges_.emplace_back(line.substr(0, sp), line.substr(sp + 1));
        }
    }
    if (static_cast<int>(v.id_to_token_.size()) < kNumSpecials) {
        throw DataError("vocabulary file " + path + " is missing special tokens");
    }
    v.rebuild_index();
    return v;
}

}  // namespace semsim
