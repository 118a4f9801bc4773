#include "semsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace semsim {

namespace {

std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

constexpr double kProbFloor = 1e-30;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kInvSqrt2 = 0.7071067811865476;

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::make(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extent must be positive, got " + shape_str(shape));
    }
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto d = std::make_shared<Data>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    if (requires_grad) d->grad.assign(d->values.size(), 0.0);
    return Tensor(std::move(d));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)), 0.0);
    return make(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)), value);
    return make(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    return make(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return make({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng, Precision prec,
                       bool requires_grad) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (double& x : v) x = quantize(rng.uniform(lo, hi), prec);
    return make(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::normal(std::vector<int> shape, double mean, double stddev, Rng& rng, Precision prec,
                      bool requires_grad) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (double& x : v) x = quantize(rng.normal(mean, stddev), prec);
    return make(std::move(shape), std::move(v), requires_grad);
}

std::vector<double>& Tensor::grad() {
    if (!d_->requires_grad) throw ConfigError("tensor '" + d_->name + "' does not track gradients");
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!d_->requires_grad) throw ConfigError("tensor '" + d_->name + "' does not track gradients");
    return d_->grad;
}

void Tensor::set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    if (rg && d_->grad.empty()) {
        d_->grad.assign(d_->values.size(), 0.0);
    } else if (!rg) {
        d_->grad.clear();
    }
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->values[0];
}

void Tensor::zero_grad() {
    if (d_->requires_grad) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (!d_->requires_grad) return;
    if (g.size() != d_->values.size()) {
        throw DimensionError("gradient size mismatch for tensor '" + d_->name + "'");
    }
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) d_->grad[i] += g[i];
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw DimensionError("backward requires a scalar loss");
    }
    if (backward_run_) {
        throw ConfigError("backward already run on this graph; call clear() before reusing it");
    }
    if (!loss.requires_grad()) {
        throw ConfigError("loss is not connected to the recorded graph");
    }
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    backward_run_ = true;
}

namespace {

bool track(Graph& g, const Tensor& a) { return g.recording() && a.requires_grad(); }

Tensor op_output(std::vector<int> shape, std::vector<double> values, bool rg) {
    return Tensor::from(std::move(shape), std::move(values), rg);
}

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.rank() != 2) {
        throw DimensionError("matmul expects a rank-2 left operand, got " + shape_str(a.shape()));
    }
    const int m = a.dim(0);
    const int k = a.dim(1);
    const bool vec = b.rank() == 1;
    int n;
    if (vec) {
        if (transpose_b) throw DimensionError("matmul: transpose of a rank-1 operand");
        if (b.dim(0) != k) {
            throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        }
        n = 1;
    } else {
        const int bk = transpose_b ? b.dim(1) : b.dim(0);
        n = transpose_b ? b.dim(0) : b.dim(1);
        if (b.rank() != 2 || bk != k) {
            throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
        }
    }

    const Precision prec = g.precision();
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const double ail = av[static_cast<std::size_t>(i) * k + l];
            if (transpose_b) {
                for (int j = 0; j < n; ++j) {
                    out[static_cast<std::size_t>(i) * n + j] += ail * bv[static_cast<std::size_t>(j) * k + l];
                }
            } else {
                for (int j = 0; j < n; ++j) {
                    out[static_cast<std::size_t>(i) * n + j] += ail * bv[static_cast<std::size_t>(l) * n + j];
                }
            }
        }
    }
    for (double& x : out) x = quantize(x, prec);

    const bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
    Tensor c = op_output(vec ? std::vector<int>{m} : std::vector<int>{m, n}, std::move(out), rg);
    if (rg) {
        g.record([a, b, c, m, k, n, transpose_b]() {
            const auto& dc = c.grad();
            if (a.requires_grad()) {
                auto& da = const_cast<Tensor&>(a).grad();
                const auto& bval = b.values();
                for (int i = 0; i < m; ++i) {
                    for (int l = 0; l < k; ++l) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) {
                            const double blj = transpose_b
                                                   ? bval[static_cast<std::size_t>(j) * k + l]
                                                   : bval[static_cast<std::size_t>(l) * n + j];
                            acc += dc[static_cast<std::size_t>(i) * n + j] * blj;
                        }
                        da[static_cast<std::size_t>(i) * k + l] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                auto& db = const_cast<Tensor&>(b).grad();
                const auto& aval = a.values();
                for (int l = 0; l < k; ++l) {
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) {
                            acc += aval[static_cast<std::size_t>(i) * k + l] *
                                   dc[static_cast<std::size_t>(i) * n + j];
                        }
                        if (transpose_b) {
                            db[static_cast<std::size_t>(j) * k + l] += acc;
                        } else {
                            db[static_cast<std::size_t>(l) * n + j] += acc;
                        }
                    }
                }
            }
        });
    }
    return c;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const Precision prec = g.precision();
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = quantize(a.values()[i] + b.values()[i], prec);
    }
    const bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
    Tensor c = op_output(a.shape(), std::move(out), rg);
    if (rg) {
        g.record([a, b, c]() {
            const auto& dc = c.grad();
            if (a.requires_grad()) const_cast<Tensor&>(a).accumulate_grad(dc);
            if (b.requires_grad()) const_cast<Tensor&>(b).accumulate_grad(dc);
        });
    }
    return c;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_bias shape mismatch: " + shape_str(x.shape()) + " vs " +
                             shape_str(bias.shape()));
    }
    const int rows = x.dim(0);
    const int cols = x.dim(1);
    const Precision prec = g.precision();
    std::vector<double> out(x.values().size());
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < cols; ++j) {
            out[static_cast<std::size_t>(r) * cols + j] =
                quantize(x.values()[static_cast<std::size_t>(r) * cols + j] + bias.values()[j], prec);
        }
    }
    const bool rg = g.recording() && (x.requires_grad() || bias.requires_grad());
    Tensor c = op_output(x.shape(), std::move(out), rg);
    if (rg) {
        g.record([x, bias, c, rows, cols]() {
            const auto& dc = c.grad();
            if (x.requires_grad()) const_cast<Tensor&>(x).accumulate_grad(dc);
            if (bias.requires_grad()) {
                auto& db = const_cast<Tensor&>(bias).grad();
                for (int r = 0; r < rows; ++r) {
                    for (int j = 0; j < cols; ++j) {
                        db[j] += dc[static_cast<std::size_t>(r) * cols + j];
                    }
                }
            }
        });
    }
    return c;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const Precision prec = g.precision();
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = quantize(a.values()[i] * b.values()[i], prec);
    }
    const bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
    Tensor c = op_output(a.shape(), std::move(out), rg);
    if (rg) {
        g.record([a, b, c]() {
            const auto& dc = c.grad();
            if (a.requires_grad()) {
                auto& da = const_cast<Tensor&>(a).grad();
                for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * b.values()[i];
            }
            if (b.requires_grad()) {
                auto& db = const_cast<Tensor&>(b).grad();
                for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * a.values()[i];
            }
        });
    }
    return c;
}

Tensor scale(Graph& g, const Tensor& x, double c) {
    const Precision prec = g.precision();
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize(x.values()[i] * c, prec);
    const bool rg = track(g, x);
    Tensor y = op_output(x.shape(), std::move(out), rg);
    if (rg) {
        g.record([x, y, c]() {
            auto& dx = const_cast<Tensor&>(x).grad();
            const auto& dy = y.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * c;
        });
    }
    return y;
}

Tensor gelu(Graph& g, const Tensor& x) {
    const Precision prec = g.precision();
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = quantize(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)), prec);
    }
    const bool rg = track(g, x);
    Tensor y = op_output(x.shape(), std::move(out), rg);
    if (rg) {
        g.record([x, y]() {
            auto& dx = const_cast<Tensor&>(x).grad();
            const auto& dy = y.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) {
                const double v = x.values()[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] += dy[i] * (cdf + v * pdf);
            }
        });
    }
    return y;
}

namespace {

// Slice layout for reductions over one axis of a rank-1/2 tensor.
struct AxisView {
    int n_slices;
    int slice_len;
    std::size_t slice_stride;  // distance between slices
    std::size_t elem_stride;   // distance between elements within a slice
};

AxisView axis_view(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    }
    if (r == 1) return {1, x.dim(0), 0, 1};
    const int rows = x.dim(0);
    const int cols = x.dim(1);
    if (axis == 1) return {rows, cols, static_cast<std::size_t>(cols), 1};
    return {cols, rows, 1, static_cast<std::size_t>(cols)};
}

}  // namespace

Tensor softmax(Graph& g, const Tensor& x, int axis) {
    if (x.rank() > 2) throw DimensionError("softmax supports rank 1 or 2, got " + shape_str(x.shape()));
    const AxisView view = axis_view(x, axis);
    const Precision prec = g.precision();
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int s = 0; s < view.n_slices; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * view.slice_stride;
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < view.slice_len; ++i) {
            const double v = xv[base + static_cast<std::size_t>(i) * view.elem_stride];
            if (std::isnan(v)) throw NumericError("softmax input contains NaN");
            mx = std::max(mx, v);
        }
        double total = 0.0;
        for (int i = 0; i < view.slice_len; ++i) {
            const std::size_t idx = base + static_cast<std::size_t>(i) * view.elem_stride;
            out[idx] = std::exp(xv[idx] - mx);
            total += out[idx];
        }
        for (int i = 0; i < view.slice_len; ++i) {
            const std::size_t idx = base + static_cast<std::size_t>(i) * view.elem_stride;
            out[idx] = quantize(out[idx] / total, prec);
        }
    }
    const bool rg = track(g, x);
    Tensor y = op_output(x.shape(), std::move(out), rg);
    if (rg) {
        g.record([x, y, view]() {
            auto& dx = const_cast<Tensor&>(x).grad();
            const auto& dy = y.grad();
            const auto& yv = y.values();
            for (int s = 0; s < view.n_slices; ++s) {
                const std::size_t base = static_cast<std::size_t>(s) * view.slice_stride;
                double dot = 0.0;
                for (int i = 0; i < view.slice_len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * view.elem_stride;
                    dot += dy[idx] * yv[idx];
                }
                for (int i = 0; i < view.slice_len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * view.elem_stride;
                    dx[idx] += yv[idx] * (dy[idx] - dot);
                }
            }
        });
    }
    return y;
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
    const int rows = x.rank() == 2 ? x.dim(0) : 1;
    if (x.rank() > 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != cols ||
        bias.dim(0) != cols) {
        throw DimensionError("layer_norm shape mismatch: x " + shape_str(x.shape()) + ", gain " +
                             shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
    }
    const Precision prec = g.precision();
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    // normalized values and reciprocal stddev per row, kept for backward
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_sd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * cols;
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += xv[base + j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = xv[base + j] - mu;
            var += d * d;
        }
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sd)[static_cast<std::size_t>(r)] = inv;
        for (int j = 0; j < cols; ++j) {
            const double xh = (xv[base + j] - mu) * inv;
            (*xhat)[base + j] = xh;
            out[base + j] = quantize(xh * gain.values()[j] + bias.values()[j], prec);
        }
    }
    const bool rg = g.recording() &&
                    (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    Tensor y = op_output(x.shape(), std::move(out), rg);
    if (rg) {
        g.record([x, gain, bias, y, xhat, inv_sd, rows, cols]() {
            const auto& dy = y.grad();
            for (int r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * cols;
                if (x.requires_grad()) {
                    double mean_dxhat = 0.0;
                    double mean_dxhat_xhat = 0.0;
                    for (int j = 0; j < cols; ++j) {
                        const double dxh = dy[base + j] * gain.values()[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * (*xhat)[base + j];
                    }
                    mean_dxhat /= cols;
                    mean_dxhat_xhat /= cols;
                    auto& dx = const_cast<Tensor&>(x).grad();
                    const double inv = (*inv_sd)[static_cast<std::size_t>(r)];
                    for (int j = 0; j < cols; ++j) {
                        const double dxh = dy[base + j] * gain.values()[j];
                        dx[base + j] +=
                            (dxh - mean_dxhat - (*xhat)[base + j] * mean_dxhat_xhat) * inv;
                    }
                }
                if (gain.requires_grad()) {
                    auto& dg = const_cast<Tensor&>(gain).grad();
                    for (int j = 0; j < cols; ++j) dg[j] += dy[base + j] * (*xhat)[base + j];
                }
                if (bias.requires_grad()) {
                    auto& db = const_cast<Tensor&>(bias).grad();
                    for (int j = 0; j < cols; ++j) db[j] += dy[base + j];
                }
            }
        });
    }
    return y;
}

Tensor embedding(Graph& g, const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) {
        throw DimensionError("embedding table must be rank 2, got " + shape_str(table.shape()));
    }
    if (ids.empty()) throw DataError("embedding lookup on an empty id sequence");
    const int vocab = table.dim(0);
    const int width = table.dim(1);
    std::vector<double> out(ids.size() * static_cast<std::size_t>(width));
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const int id = ids[t];
        if (id < 0 || id >= vocab) {
            throw IndexError("embedding id " + std::to_string(id) + " outside table of " +
                             std::to_string(vocab) + " rows");
        }
        std::copy_n(table.values().begin() + static_cast<std::size_t>(id) * width, width,
                    out.begin() + t * static_cast<std::size_t>(width));
    }
    const bool rg = track(g, table);
    Tensor y = op_output({static_cast<int>(ids.size()), width}, std::move(out), rg);
    if (rg) {
        std::vector<int> own(ids.begin(), ids.end());
        g.record([table, y, own = std::move(own), width]() {
            auto& dt = const_cast<Tensor&>(table).grad();
            const auto& dy = y.grad();
            for (std::size_t t = 0; t < own.size(); ++t) {
                const std::size_t row = static_cast<std::size_t>(own[t]) * width;
                for (int j = 0; j < width; ++j) {
                    dt[row + j] += dy[t * static_cast<std::size_t>(width) + j];
                }
            }
        });
    }
    return y;
}

Tensor concat(Graph& g, const Tensor& a, const Tensor& b, int axis) {
    const bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
    std::vector<double> out;
    std::vector<int> shape;
    if (a.rank() == 1 && b.rank() == 1 && axis == 0) {
        out.reserve(a.values().size() + b.values().size());
        out.insert(out.end(), a.values().begin(), a.values().end());
        out.insert(out.end(), b.values().begin(), b.values().end());
        shape = {a.dim(0) + b.dim(0)};
        Tensor y = op_output(std::move(shape), std::move(out), rg);
        if (rg) {
            g.record([a, b, y]() {
                const auto& dy = y.grad();
                const std::size_t na = a.values().size();
                if (a.requires_grad()) {
                    auto& da = const_cast<Tensor&>(a).grad();
                    for (std::size_t i = 0; i < na; ++i) da[i] += dy[i];
                }
                if (b.requires_grad()) {
                    auto& db = const_cast<Tensor&>(b).grad();
                    for (std::size_t i = 0; i < b.values().size(); ++i) db[i] += dy[na + i];
                }
            });
        }
        return y;
    }
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("concat supports rank-1 axis 0 or rank-2 tensors");
    }
    if (axis == 0) {
        if (a.dim(1) != b.dim(1)) {
            throw DimensionError("concat axis 0 column mismatch: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        }
        out.reserve(a.values().size() + b.values().size());
        out.insert(out.end(), a.values().begin(), a.values().end());
        out.insert(out.end(), b.values().begin(), b.values().end());
        Tensor y = op_output({a.dim(0) + b.dim(0), a.dim(1)}, std::move(out), rg);
        if (rg) {
            g.record([a, b, y]() {
                const auto& dy = y.grad();
                const std::size_t na = a.values().size();
                if (a.requires_grad()) {
                    auto& da = const_cast<Tensor&>(a).grad();
                    for (std::size_t i = 0; i < na; ++i) da[i] += dy[i];
                }
                if (b.requires_grad()) {
                    auto& db = const_cast<Tensor&>(b).grad();
                    for (std::size_t i = 0; i < b.values().size(); ++i) db[i] += dy[na + i];
                }
            });
        }
        return y;
    }
    if (axis != 1 || a.dim(0) != b.dim(0)) {
        throw DimensionError("concat axis 1 row mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const int rows = a.dim(0);
    const int ca = a.dim(1);
    const int cb = b.dim(1);
    out.resize(static_cast<std::size_t>(rows) * (ca + cb));
    for (int r = 0; r < rows; ++r) {
        std::copy_n(a.values().begin() + static_cast<std::size_t>(r) * ca, ca,
                    out.begin() + static_cast<std::size_t>(r) * (ca + cb));
        std::copy_n(b.values().begin() + static_cast<std::size_t>(r) * cb, cb,
                    out.begin() + static_cast<std::size_t>(r) * (ca + cb) + ca);
    }
    Tensor y = op_output({rows, ca + cb}, std::move(out), rg);
    if (rg) {
        g.record([a, b, y, rows, ca, cb]() {
            const auto& dy = y.grad();
            for (int r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * (ca + cb);
                if (a.requires_grad()) {
                    auto& da = const_cast<Tensor&>(a).grad();
                    for (int j = 0; j < ca; ++j) da[static_cast<std::size_t>(r) * ca + j] += dy[base + j];
                }
                if (b.requires_grad()) {
                    auto& db = const_cast<Tensor&>(b).grad();
                    for (int j = 0; j < cb; ++j) {
                        db[static_cast<std::size_t>(r) * cb + j] += dy[base + ca + j];
                    }
                }
            }
        });
    }
    return y;
}

Tensor mean(Graph& g, const Tensor& x, int axis) {
    if (x.rank() > 2) throw DimensionError("mean supports rank 1 or 2, got " + shape_str(x.shape()));
    const int norm_axis = axis < 0 ? axis + x.rank() : axis;
    if (norm_axis < 0 || norm_axis >= x.rank()) {
        throw DimensionError("mean axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    }
    const Precision prec = g.precision();
    // Reducing over `axis` leaves one value per position orthogonal to it.
    const int out_len = x.rank() == 1 ? 1 : (norm_axis == 0 ? x.dim(1) : x.dim(0));
    std::vector<double> out(static_cast<std::size_t>(out_len), 0.0);
    const auto& xv = x.values();
    if (x.rank() == 1) {
        double s = 0.0;
        for (double v : xv) s += v;
        out[0] = quantize(s / static_cast<double>(xv.size()), prec);
    } else {
        const int rows = x.dim(0);
        const int cols = x.dim(1);
        if (norm_axis == 0) {
            for (int r = 0; r < rows; ++r) {
                for (int j = 0; j < cols; ++j) out[j] += xv[static_cast<std::size_t>(r) * cols + j];
            }
            for (double& v : out) v = quantize(v / rows, prec);
        } else {
            for (int r = 0; r < rows; ++r) {
                double s = 0.0;
                for (int j = 0; j < cols; ++j) s += xv[static_cast<std::size_t>(r) * cols + j];
                out[r] = quantize(s / cols, prec);
            }
        }
    }
    const bool rg = track(g, x);
    Tensor y = op_output({out_len}, std::move(out), rg);
    if (rg) {
        g.record([x, y, norm_axis]() {
            auto& dx = const_cast<Tensor&>(x).grad();
            const auto& dy = y.grad();
            if (x.rank() == 1) {
                const double w = 1.0 / static_cast<double>(x.numel());
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[0] * w;
                return;
            }
            const int rows = x.dim(0);
            const int cols = x.dim(1);
            if (norm_axis == 0) {
                const double w = 1.0 / rows;
                for (int r = 0; r < rows; ++r) {
                    for (int j = 0; j < cols; ++j) dx[static_cast<std::size_t>(r) * cols + j] += dy[j] * w;
                }
            } else {
                const double w = 1.0 / cols;
                for (int r = 0; r < rows; ++r) {
                    for (int j = 0; j < cols; ++j) dx[static_cast<std::size_t>(r) * cols + j] += dy[r] * w;
                }
            }
        });
    }
    return y;
}

Tensor sum(Graph& g, const Tensor& x) {
    const Precision prec = g.precision();
    double s = 0.0;
    for (double v : x.values()) s += v;
    const bool rg = track(g, x);
    Tensor y = op_output({1}, {quantize(s, prec)}, rg);
    if (rg) {
        g.record([x, y]() {
            auto& dx = const_cast<Tensor&>(x).grad();
            const double dy = y.grad()[0];
            for (double& v : dx) v += dy;
        });
    }
    return y;
}

Tensor dropout(Graph& g, const Tensor& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) return x;
    const Precision prec = g.precision();
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.values().size());
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = rng.uniform() < p ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out[i] = quantize(x.values()[i] * m, prec);
    }
    const bool rg = track(g, x);
    Tensor y = op_output(x.shape(), std::move(out), rg);
    if (rg) {
        g.record([x, y, mask]() {
            auto& dx = const_cast<Tensor&>(x).grad();
            const auto& dy = y.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
        });
    }
    return y;
}

Tensor nll_loss(Graph& g, const Tensor& probs, std::span<const int> targets) {
    if (probs.rank() != 2) {
        throw DimensionError("nll_loss expects [T x V] probabilities, got " + shape_str(probs.shape()));
    }
    const int steps = probs.dim(0);
    const int vocab = probs.dim(1);
    if (steps != static_cast<int>(targets.size())) {
        throw DimensionError("nll_loss target length " + std::to_string(targets.size()) +
                             " does not match " + std::to_string(steps) + " steps");
    }
    const Precision prec = g.precision();
    double loss = 0.0;
    for (int t = 0; t < steps; ++t) {
        const int id = targets[t];
        if (id < 0 || id >= vocab) {
            throw IndexError("nll_loss target id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
        const double pv = std::max(probs.values()[static_cast<std::size_t>(t) * vocab + id], kProbFloor);
        loss -= std::log(pv);
    }
    const bool rg = track(g, probs);
    Tensor y = op_output({1}, {quantize(loss, prec)}, rg);
    if (rg) {
        std::vector<int> own(targets.begin(), targets.end());
        g.record([probs, y, own = std::move(own), vocab]() {
            auto& dp = const_cast<Tensor&>(probs).grad();
            const double dy = y.grad()[0];
            for (std::size_t t = 0; t < own.size(); ++t) {
                const std::size_t idx = t * static_cast<std::size_t>(vocab) + own[t];
                const double pv = std::max(probs.values()[idx], kProbFloor);
                dp[idx] += dy * (-1.0 / pv);
            }
        });
    }
    return y;
}

void zero_grads(const std::vector<NamedTensor>& params) {
    for (const auto& p : params) const_cast<Tensor&>(p.tensor).zero_grad();
}

std::uint64_t value_digest(const std::vector<NamedTensor>& params, bool frozen_only) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& p : params) {
        if (frozen_only && !p.tensor.frozen()) continue;
        mix(p.name.data(), p.name.size());
        for (double v : p.tensor.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            mix(&bits, sizeof(bits));
        }
    }
    return h;
}

}  // namespace semsim
