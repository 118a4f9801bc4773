#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semsim/error.hpp"

namespace semsim {

enum class Role { Document, Reference, Generated };

// Integer token ids plus the role they play in a training pair. Reference and
// generated sequences end with eos; documents carry raw content ids.
struct TokenSequence {
    std::vector<int> ids;
    Role role = Role::Document;

    int length() const { return static_cast<int>(ids.size()); }
};

// Character-level BPE vocabulary. Ids are dense: specials first, then base
// symbols, then merge outputs in the order they were learned.
class Vocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    // Marker glued to the front of every word so decoding can restore spaces.
    static const std::string kWordMarker;

    // Greedy highest-frequency pair merging until `target_vocab` entries exist
    // or no pair occurs at least twice. Ties break lexicographically.
    static Vocab train_bpe(const std::vector<std::string>& corpus, int target_vocab);

    TokenSequence encode(const std::string& text, Role role) const;
    std::string decode(const TokenSequence& seq) const;

    int size() const { return static_cast<int>(id_to_token_.size()); }
    const std::string& token(int id) const;
    int id_of(const std::string& token) const;  // -1 when absent

    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

  private:
    std::vector<std::string> id_to_token_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::string, int> index_;

    void rebuild_index();
};

// Splits text into UTF-8 codepoint strings.
std::vector<std::string> split_codepoints(const std::string& text);

// Replays `merges` in learned order over a symbol sequence.
std::vector<std::string> apply_merges(
    std::vector<std::string> symbols,
    const std::vector<std::pair<std::string, std::string>>& merges);

}  // namespace semsim
