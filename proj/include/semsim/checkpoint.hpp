#pragma once

#include <map>
#include <string>
#include <vector>

#include "semsim/model.hpp"
#include "semsim/scorer.hpp"
#include "semsim/tensor.hpp"

namespace semsim {

// Versioned container: a plain-text header (key = value lines plus one
// `tensor = name shape frozen offset bytes` line per payload) terminated by
// `end-header`, followed by raw little-endian payloads at the declared
// offsets. Payload width follows `precision` (32-bit floats by default).
struct CheckpointData {
    int version = 1;
    std::string kind;  // "model" or "scorer"
    Precision precision = Precision::F32;
    std::map<std::string, std::string> meta;
    std::vector<NamedTensor> tensors;

    bool has(const std::string& key) const { return meta.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    double get_num(const std::string& key) const;
    long long get_int(const std::string& key) const;
    void put(const std::string& key, const std::string& v) { meta[key] = v; }
    void put_num(const std::string& key, double v);
    void put_int(const std::string& key, long long v);

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Config <-> meta serialization.
void write_model_config(const ModelConfig& cfg, CheckpointData& out);
ModelConfig read_model_config(const CheckpointData& data);
void write_scorer_config(const ScorerConfig& cfg, CheckpointData& out);
ScorerConfig read_scorer_config(const CheckpointData& data);

// Fills `params` values (and frozen flags) from same-named payloads.
void fill_parameters(const std::vector<NamedTensor>& params, const CheckpointData& data);

SeqModel model_from_checkpoint(const CheckpointData& data);

struct ScorerPack {
    ScorerLM lm;
    SemSimHead head;
};

void save_scorer(const std::string& path, const ScorerLM& lm, const SemSimHead& head);
ScorerPack load_scorer(const std::string& path);

}  // namespace semsim
