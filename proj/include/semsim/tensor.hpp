#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semsim/error.hpp"
#include "semsim/rng.hpp"

namespace semsim {

// Storage precision. Values are held in doubles either way; in F32 mode every
// operation result is rounded through float, which is what the checkpoint
// format stores.
enum class Precision { F32, F64 };

inline double quantize(double v, Precision p) {
    return p == Precision::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

std::string shape_str(const std::vector<int>& shape);

// Dense n-d array with an attached gradient buffer. Copying a Tensor copies
// the handle; the payload is shared.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                          Precision prec = Precision::F64, bool requires_grad = true);
    static Tensor normal(std::vector<int> shape, double mean, double stddev, Rng& rng,
                         Precision prec = Precision::F64, bool requires_grad = true);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(d_->values.size()); }

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    bool has_grad() const { return !d_->grad.empty(); }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg);
    bool frozen() const { return d_->frozen; }
    void set_frozen(bool f) { d_->frozen = f; }

    const std::string& name() const { return d_->name; }
    Tensor& set_name(std::string n) {
        d_->name = std::move(n);
        return *this;
    }

    double item() const;
    double at(int r, int c) const { return d_->values[static_cast<std::size_t>(r) * dim(1) + c]; }

    void zero_grad();
    void accumulate_grad(const std::vector<double>& g);

    // Identity of the underlying payload, for reuse checks.
    const void* id() const { return d_.get(); }

  private:
    struct Data {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
        bool frozen = false;
        std::string name;
    };
    std::shared_ptr<Data> d_;

    explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}
    static Tensor make(std::vector<int> shape, std::vector<double> values, bool requires_grad);
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Ordered record of executed operations: a linear tape. Execution order is a
// topological order, and backward replays it in reverse exactly once.
class Graph {
  public:
    explicit Graph(Precision precision = Precision::F64, bool recording = true)
        : precision_(precision), recording_(recording) {}

    Precision precision() const { return precision_; }
    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }

    void record(std::function<void()> backward_fn) { tape_.push_back(std::move(backward_fn)); }
    std::size_t size() const { return tape_.size(); }

    // Accumulates gradients into every requires_grad tensor reachable from
    // loss, frozen ones included. A second call without clear() throws.
    void backward(const Tensor& loss);

    void clear() {
        tape_.clear();
        backward_run_ = false;
    }

  private:
    Precision precision_;
    bool recording_;
    bool backward_run_ = false;
    std::vector<std::function<void()>> tape_;
};

// ---- operations -----------------------------------------------------------

// C = A·B, or A·Bᵀ when transpose_b. B of rank 1 is treated as a column.
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
// x[T×d] + bias[d], broadcast over rows.
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double c);
Tensor gelu(Graph& g, const Tensor& x);
// Normalized along `axis` (negative counts from the back); max-subtraction for stability.
Tensor softmax(Graph& g, const Tensor& x, int axis = -1);
// Per-row normalization over the last axis with learned gain and bias.
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor embedding(Graph& g, const Tensor& table, std::span<const int> ids);
Tensor concat(Graph& g, const Tensor& a, const Tensor& b, int axis = 0);
Tensor mean(Graph& g, const Tensor& x, int axis = 0);
Tensor sum(Graph& g, const Tensor& x);
// Inverted dropout; identity when !training or p == 0.
Tensor dropout(Graph& g, const Tensor& x, double p, Rng& rng, bool training);
// probs[T×V] holds per-step distributions; returns -sum_t log probs[t, targets[t]].
Tensor nll_loss(Graph& g, const Tensor& probs, std::span<const int> targets);

void zero_grads(const std::vector<NamedTensor>& params);

// FNV-1a over the value bit patterns; order follows the list.
std::uint64_t value_digest(const std::vector<NamedTensor>& params, bool frozen_only = false);

}  // namespace semsim
