#include "semsim/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace semsim {

namespace {

constexpr const char* kMagic = "semsim-checkpoint v1";

std::string shape_token(const std::vector<int>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}

std::vector<int> parse_shape(const std::string& tok) {
    std::vector<int> shape;
    std::size_t start = 0;
    while (start <= tok.size()) {
        const std::size_t x = tok.find('x', start);
        const std::string part = tok.substr(start, x == std::string::npos ? x : x - start);
        if (part.empty()) throw DataError("malformed shape '" + tok + "' in checkpoint");
        shape.push_back(std::stoi(part));
        if (x == std::string::npos) break;
        start = x + 1;
    }
    return shape;
}

std::string format_num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

const std::string& CheckpointData::get(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) throw DataError("checkpoint is missing header key '" + key + "'");
    return it->second;
}

double CheckpointData::get_num(const std::string& key) const { return std::stod(get(key)); }

long long CheckpointData::get_int(const std::string& key) const { return std::stoll(get(key)); }

void CheckpointData::put_num(const std::string& key, double v) { meta[key] = format_num(v); }

void CheckpointData::put_int(const std::string& key, long long v) { meta[key] = std::to_string(v); }

const Tensor* CheckpointData::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t.tensor;
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint file " + path);
    const std::size_t width = data.precision == Precision::F32 ? 4 : 8;

    std::ostringstream header;
    header << kMagic << "\n";
    header << "kind = " << data.kind << "\n";
    header << "precision = " << (data.precision == Precision::F32 ? 32 : 64) << "\n";
    for (const auto& [k, v] : data.meta) header << k << " = " << v << "\n";
    std::size_t offset = 0;
    for (const auto& t : data.tensors) {
        const std::size_t bytes = t.tensor.values().size() * width;
        header << "tensor = " << t.name << " " << shape_token(t.tensor.shape()) << " frozen="
               << (t.tensor.frozen() ? 1 : 0) << " offset=" << offset << " bytes=" << bytes
               << "\n";
        offset += bytes;
    }
    header << "end-header\n";
    const std::string head = header.str();
    out.write(head.data(), static_cast<std::streamsize>(head.size()));

    for (const auto& t : data.tensors) {
        if (data.precision == Precision::F32) {
            std::vector<float> buf(t.tensor.values().size());
            for (std::size_t i = 0; i < buf.size(); ++i) {
                buf[i] = static_cast<float>(t.tensor.values()[i]);
            }
            out.write(reinterpret_cast<const char*>(buf.data()),
                      static_cast<std::streamsize>(buf.size() * sizeof(float)));
        } else {
            out.write(reinterpret_cast<const char*>(t.tensor.values().data()),
                      static_cast<std::streamsize>(t.tensor.values().size() * sizeof(double)));
        }
    }
    if (!out) throw DataError("failed while writing checkpoint " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint file " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw DataError(path + " is not a checkpoint file (bad magic)");
    }
    CheckpointData data;
    struct PendingTensor {
        std::string name;
        std::vector<int> shape;
        bool frozen;
        std::size_t offset, bytes;
    };
    std::vector<PendingTensor> pending;
    while (std::getline(in, line)) {
        if (line == "end-header") break;
        const std::size_t eq = line.find(" = ");
        if (eq == std::string::npos) throw DataError("malformed checkpoint header line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (key == "kind") {
            data.kind = value;
        } else if (key == "precision") {
            data.precision = value == "64" ? Precision::F64 : Precision::F32;
        } else if (key == "tensor") {
            std::istringstream ts(value);
            PendingTensor p;
            std::string shape_tok, frozen_tok, offset_tok, bytes_tok;
            ts >> p.name >> shape_tok >> frozen_tok >> offset_tok >> bytes_tok;
            if (!ts) throw DataError("malformed tensor line: " + line);
            p.shape = parse_shape(shape_tok);
            p.frozen = frozen_tok == "frozen=1";
            p.offset = std::stoull(offset_tok.substr(offset_tok.find('=') + 1));
            p.bytes = std::stoull(bytes_tok.substr(bytes_tok.find('=') + 1));
            pending.push_back(std::move(p));
        } else {
            data.meta[key] = value;
        }
    }
    const std::streampos payload_start = in.tellg();
    const std::size_t width = data.precision == Precision::F32 ? 4 : 8;
    for (const auto& p : pending) {
        in.seekg(payload_start + static_cast<std::streamoff>(p.offset));
        std::vector<double> values(p.bytes / width);
        if (data.precision == Precision::F32) {
            std::vector<float> buf(values.size());
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(p.bytes));
            for (std::size_t i = 0; i < buf.size(); ++i) values[i] = static_cast<double>(buf[i]);
        } else {
            in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(p.bytes));
        }
        if (!in) throw DataError("truncated payload for tensor '" + p.name + "' in " + path);
        Tensor t = Tensor::from(p.shape, std::move(values), false);
        t.set_frozen(p.frozen);
        data.tensors.push_back({p.name, t});
    }
    return data;
}

void write_model_config(const ModelConfig& cfg, CheckpointData& out) {
    out.put_int("model.encoder_layers", cfg.encoder_layers);
    out.put_int("model.decoder_layers", cfg.decoder_layers);
    out.put_int("model.d_model", cfg.d_model);
    out.put_int("model.heads", cfg.heads);
    out.put_int("model.ffn_dim", cfg.ffn_dim);
    out.put_num("model.dropout", cfg.dropout);
    out.put_int("model.max_positions", cfg.max_positions);
    out.put_int("model.vocab_size", cfg.vocab_size);
    out.put_int("model.tied_embeddings", cfg.tied_embeddings ? 1 : 0);
    out.put_int("model.pad_id", cfg.pad_id);
    out.put_int("model.bos_id", cfg.bos_id);
    out.put_int("model.eos_id", cfg.eos_id);
}

ModelConfig read_model_config(const CheckpointData& data) {
    ModelConfig cfg;
    cfg.encoder_layers = static_cast<int>(data.get_int("model.encoder_layers"));
    cfg.decoder_layers = static_cast<int>(data.get_int("model.decoder_layers"));
    cfg.d_model = static_cast<int>(data.get_int("model.d_model"));
    cfg.heads = static_cast<int>(data.get_int("model.heads"));
    cfg.ffn_dim = static_cast<int>(data.get_int("model.ffn_dim"));
    cfg.dropout = data.get_num("model.dropout");
    cfg.max_positions = static_cast<int>(data.get_int("model.max_positions"));
    cfg.vocab_size = static_cast<int>(data.get_int("model.vocab_size"));
    cfg.tied_embeddings = data.get_int("model.tied_embeddings") != 0;
    cfg.pad_id = static_cast<int>(data.get_int("model.pad_id"));
    cfg.bos_id = static_cast<int>(data.get_int("model.bos_id"));
    cfg.eos_id = static_cast<int>(data.get_int("model.eos_id"));
    cfg.precision = data.precision;
    return cfg;
}

void write_scorer_config(const ScorerConfig& cfg, CheckpointData& out) {
    out.put_int("scorer.layers", cfg.layers);
    out.put_int("scorer.d_model", cfg.d_model);
    out.put_int("scorer.heads", cfg.heads);
    out.put_int("scorer.ffn_dim", cfg.ffn_dim);
    out.put_int("scorer.max_positions", cfg.max_positions);
    out.put_int("scorer.vocab_size", cfg.vocab_size);
    out.put_int("scorer.pad_id", cfg.pad_id);
    out.put("scorer.pooling", cfg.pooling == Pooling::Mean ? "mean" : "first");
}

ScorerConfig read_scorer_config(const CheckpointData& data) {
    ScorerConfig cfg;
    cfg.layers = static_cast<int>(data.get_int("scorer.layers"));
    cfg.d_model = static_cast<int>(data.get_int("scorer.d_model"));
    cfg.heads = static_cast<int>(data.get_int("scorer.heads"));
    cfg.ffn_dim = static_cast<int>(data.get_int("scorer.ffn_dim"));
    cfg.max_positions = static_cast<int>(data.get_int("scorer.max_positions"));
    cfg.vocab_size = static_cast<int>(data.get_int("scorer.vocab_size"));
    cfg.pad_id = static_cast<int>(data.get_int("scorer.pad_id"));
    cfg.pooling = data.get("scorer.pooling") == "first" ? Pooling::First : Pooling::Mean;
    cfg.precision = data.precision;
    return cfg;
}

void fill_parameters(const std::vector<NamedTensor>& params, const CheckpointData& data) {
    for (const auto& p : params) {
        const Tensor* src = data.find(p.name);
        if (!src) throw DataError("checkpoint is missing tensor '" + p.name + "'");
        if (src->shape() != p.tensor.shape()) {
            throw DimensionError("checkpoint tensor '" + p.name + "' has shape " +
                                 shape_str(src->shape()) + ", expected " +
                                 shape_str(p.tensor.shape()));
        }
        const_cast<Tensor&>(p.tensor).values() = src->values();
        const_cast<Tensor&>(p.tensor).set_frozen(src->frozen());
    }
}

SeqModel model_from_checkpoint(const CheckpointData& data) {
    ModelConfig cfg = read_model_config(data);
    Rng scratch(0);
    SeqModel model = SeqModel::init(cfg, scratch);
    fill_parameters(model.parameters(), data);
    return model;
}

void save_scorer(const std::string& path, const ScorerLM& lm, const SemSimHead& head) {
    CheckpointData data;
    data.kind = "scorer";
    data.precision = lm.cfg.precision;
    write_scorer_config(lm.cfg, data);
    data.tensors = lm.parameters();
    for (const auto& p : head.parameters()) data.tensors.push_back(p);
    save_checkpoint(path, data);
}

ScorerPack load_scorer(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    if (data.kind != "scorer") throw DataError(path + " is not a scorer checkpoint");
    ScorerConfig cfg = read_scorer_config(data);
    Rng scratch(0);
    ScorerPack pack{ScorerLM::init(cfg, scratch), SemSimHead::init(cfg.d_model, scratch, cfg.precision)};
    fill_parameters(pack.lm.parameters(), data);
    fill_parameters(pack.head.parameters(), data);
    return pack;
}

}  // namespace semsim
