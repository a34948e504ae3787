#pragma once

// Dense float64 tensors with a recorded operation graph for reverse-mode
// differentiation. Tensors are immutable once built; every op returns a new
// tensor whose node keeps its inputs alive until the graph is dropped.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cgr/errors.hpp"

namespace cgr {

using Shape = std::vector<std::size_t>;
using Index = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// grad_inputs[i] is null when input i does not need a gradient; otherwise it
// points at a buffer the function must accumulate (+=) into.
using BackwardFn =
    std::function<void(const Node& self, std::span<const double> grad_out, std::span<std::vector<double>*> grad_inputs)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<NodePtr> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const char* op = "constant";
};

}  // namespace detail

class Tensor {
   public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> data) { return make_leaf(std::move(shape), std::move(data), false); }

    // A leaf that gradients are taken with respect to.
    static Tensor parameter(Shape shape, std::vector<double> data) { return make_leaf(std::move(shape), std::move(data), true); }

    static Tensor scalar(double v) { return constant({}, {v}); }
    static Tensor zeros(Shape shape) {
        auto n = shape_numel(shape);
        return constant(std::move(shape), std::vector<double>(n, 0.0));
    }
    static Tensor vector(std::vector<double> data) {
        Shape s{data.size()};
        return constant(std::move(s), std::move(data));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) { return constant({rows, cols}, std::move(data)); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::span<const double> data() const { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }
    bool has_provenance() const { return !node_->inputs.empty(); }
    const char* op_name() const { return node_->op; }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.at(1) + c]; }

    // Copy of the value with no provenance and no gradient requirement.
    Tensor detach() const { return constant(node_->shape, node_->value); }

    const detail::Node* node() const { return node_.get(); }
    const detail::NodePtr& node_ptr() const { return node_; }

    static Tensor from_node(detail::NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

   private:
    static Tensor make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
        }
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->op = requires_grad ? "parameter" : "constant";
        return from_node(std::move(n));
    }

    detail::NodePtr node_;
};

using ParameterMap = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

// Build the result of a differentiable op. Provenance is only recorded when
// some input needs a gradient; otherwise the result is a plain constant.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs, detail::BackwardFn backward) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& t : inputs) n->inputs.push_back(t.node_ptr());
        n->backward = std::move(backward);
    }
    return Tensor::from_node(std::move(n));
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " + shape_str(a.shape()));
    }
}

// Rows of a rank-1 or rank-2 tensor; rank-1 tensors are treated as [n, 1].
inline std::pair<std::size_t, std::size_t> row_view(const char* op, const Tensor& a) {
    if (a.rank() == 1) return {a.dim(0), 1};
    if (a.rank() == 2) return {a.dim(0), a.dim(1)};
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " + shape_str(a.shape()));
}

inline Shape with_rows(const Tensor& like, std::size_t rows) {
    Shape s = like.shape();
    s[0] = rows;
    return s;
}

template <typename F>
Tensor unary(const char* op, const Tensor& a, F f, std::function<double(double x, double y)> dydx) {
    std::vector<double> out(a.numel());
    const auto& x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return make_op(op, a.shape(), std::move(out), {a}, [dydx](const Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
        const auto& x = self.inputs[0]->value;
        auto& dx = *gi[0];
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * dydx(x[i], self.value[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops (identical shapes, no broadcasting)

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_op("add", a.shape(), std::move(out), {a, b}, [](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        for (auto* d : gi)
            if (d)
                for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_op("sub", a.shape(), std::move(out), {a, b}, [](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        if (gi[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
        if (gi[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
        const auto& x = self.inputs[0]->value;
        const auto& y = self.inputs[1]->value;
        if (gi[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * y[i];
        if (gi[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * x[i];
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a[i];
    return make_op("scale", a.shape(), std::move(out), {a}, [s](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
    });
}

namespace detail {
inline thread_local double* relu_margin_sink = nullptr;
}  // namespace detail

// While alive, records the smallest |x| fed to relu on this thread: the
// distance of the current evaluation from the nearest kink.
class ReluMarginProbe {
   public:
    ReluMarginProbe() : prev_(detail::relu_margin_sink) { detail::relu_margin_sink = &margin_; }
    ~ReluMarginProbe() { detail::relu_margin_sink = prev_; }
    ReluMarginProbe(const ReluMarginProbe&) = delete;
    ReluMarginProbe& operator=(const ReluMarginProbe&) = delete;

    double margin() const { return margin_; }

   private:
    double margin_ = std::numeric_limits<double>::infinity();
    double* prev_;
};

inline Tensor relu(const Tensor& a) {
    if (auto* sink = detail::relu_margin_sink) {
        for (double v : a.values()) *sink = std::min(*sink, std::abs(v));
    }
    return detail::unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    for (double v : a.values())
        if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
    return detail::unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op("sum", {}, {s}, {a}, [](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        for (auto& d : *gi[0]) d += g[0];
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ContractError("mean of empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.numel());
    return make_op("mean", {}, {s * inv}, {a}, [inv](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        for (auto& d : *gi[0]) d += g[0] * inv;
    });
}

inline Tensor l2_norm_squared(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return make_op("l2_norm_squared", {}, {s}, {a}, [](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
        const auto& x = self.inputs[0]->value;
        auto& d = *gi[0];
        for (std::size_t i = 0; i < x.size(); ++i) d[i] += 2.0 * x[i] * g[0];
    });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    return make_op("reshape", std::move(shape), a.values(), {a}, [](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank("transpose", a, 2);
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return make_op("transpose", {c, r}, std::move(out), {a}, [r, c](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        auto& d = *gi[0];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j * r + i];
    });
}

inline Tensor concat_last_dim(const Tensor& a, const Tensor& b) {
    detail::require_rank("concat_last_dim", a, 2);
    detail::require_rank("concat_last_dim", b, 2);
    if (a.dim(0) != b.dim(0)) throw ShapeError("concat_last_dim: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.data().begin() + i * ca, ca, out.begin() + i * c);
        std::copy_n(b.data().begin() + i * cb, cb, out.begin() + i * c + ca);
    }
    return make_op("concat_last_dim", {n, c}, std::move(out), {a, b},
                   [n, ca, cb, c](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       for (std::size_t i = 0; i < n; ++i) {
                           if (gi[0])
                               for (std::size_t j = 0; j < ca; ++j) (*gi[0])[i * ca + j] += g[i * c + j];
                           if (gi[1])
                               for (std::size_t j = 0; j < cb; ++j) (*gi[1])[i * cb + j] += g[i * c + ca + j];
                       }
                   });
}

// Column j of a rank-2 tensor, as a rank-1 tensor.
inline Tensor column(const Tensor& a, std::size_t j) {
    detail::require_rank("column", a, 2);
    const std::size_t n = a.dim(0), c = a.dim(1);
    if (j >= c) throw IndexError("column: index " + std::to_string(j) + " out of range for " + shape_str(a.shape()));
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i * c + j];
    return make_op("column", {n}, std::move(out), {a}, [j, c](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i * c + j] += g[i];
    });
}

// out[i] = a[index[i]] row-wise.
inline Tensor gather_rows(const Tensor& a, const Index& index) {
    auto [rows, width] = detail::row_view("gather_rows", a);
    for (auto r : index)
        if (r >= rows) throw IndexError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(rows));
    std::vector<double> out(index.size() * width);
    for (std::size_t i = 0; i < index.size(); ++i) std::copy_n(a.data().begin() + index[i] * width, width, out.begin() + i * width);
    return make_op("gather_rows", detail::with_rows(a, index.size()), std::move(out), {a},
                   [index, width](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       auto& d = *gi[0];
                       for (std::size_t i = 0; i < index.size(); ++i)
                           for (std::size_t j = 0; j < width; ++j) d[index[i] * width + j] += g[i * width + j];
                   });
}

namespace detail {
inline void check_segments(const char* op, const Tensor& a, const Index& segments, std::size_t num_segments) {
    if (segments.size() != a.dim(0)) {
        throw ShapeError(std::string(op) + ": " + std::to_string(segments.size()) + " segment ids for " + std::to_string(a.dim(0)) + " rows");
    }
    for (auto s : segments)
        if (s >= num_segments) throw IndexError(std::string(op) + ": segment " + std::to_string(s) + " >= " + std::to_string(num_segments));
}
}  // namespace detail

// out[s] = sum of rows i with segments[i] == s.
inline Tensor segment_sum(const Tensor& a, const Index& segments, std::size_t num_segments) {
    auto [rows, width] = detail::row_view("segment_sum", a);
    detail::check_segments("segment_sum", a, segments, num_segments);
    std::vector<double> out(num_segments * width, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < width; ++j) out[segments[i] * width + j] += a[i * width + j];
    return make_op("segment_sum", detail::with_rows(a, num_segments), std::move(out), {a},
                   [segments, width](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       auto& d = *gi[0];
                       for (std::size_t i = 0; i < segments.size(); ++i)
                           for (std::size_t j = 0; j < width; ++j) d[i * width + j] += g[segments[i] * width + j];
                   });
}

// Empty segments yield zero rows.
inline Tensor segment_mean(const Tensor& a, const Index& segments, std::size_t num_segments) {
    auto [rows, width] = detail::row_view("segment_mean", a);
    detail::check_segments("segment_mean", a, segments, num_segments);
    std::vector<double> counts(num_segments, 0.0);
    for (auto s : segments) counts[s] += 1.0;
    std::vector<double> out(num_segments * width, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < width; ++j) out[segments[i] * width + j] += a[i * width + j];
    for (std::size_t s = 0; s < num_segments; ++s)
        if (counts[s] > 0)
            for (std::size_t j = 0; j < width; ++j) out[s * width + j] /= counts[s];
    return make_op("segment_mean", detail::with_rows(a, num_segments), std::move(out), {a},
                   [segments, counts, width](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       auto& d = *gi[0];
                       for (std::size_t i = 0; i < segments.size(); ++i)
                           for (std::size_t j = 0; j < width; ++j) d[i * width + j] += g[segments[i] * width + j] / counts[segments[i]];
                   });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank("matmul", a, 2);
    detail::require_rank("matmul", b, 2);
    if (a.dim(1) != b.dim(0)) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const auto n = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto m = static_cast<Eigen::Index>(b.dim(1));
    std::vector<double> out(static_cast<std::size_t>(n * m));
    detail::MutMap(out.data(), n, m).noalias() = detail::ConstMap(a.data().data(), n, k) * detail::ConstMap(b.data().data(), k, m);
    return make_op("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b},
                   [n, k, m](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       detail::ConstMap G(g.data(), n, m);
                       if (gi[0]) {
                           detail::MutMap(gi[0]->data(), n, k).noalias() += G * detail::ConstMap(self.inputs[1]->value.data(), k, m).transpose();
                       }
                       if (gi[1]) {
                           detail::MutMap(gi[1]->data(), k, m).noalias() += detail::ConstMap(self.inputs[0]->value.data(), n, k).transpose() * G;
                       }
                   });
}

// a[n, d] + bias[d] on every row.
inline Tensor add_row_vector(const Tensor& a, const Tensor& bias) {
    detail::require_rank("add_row_vector", a, 2);
    detail::require_rank("add_row_vector", bias, 1);
    const std::size_t n = a.dim(0), c = a.dim(1);
    if (bias.dim(0) != c) throw ShapeError("add_row_vector: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
    return make_op("add_row_vector", a.shape(), std::move(out), {a, bias},
                   [n, c](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       if (gi[0])
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                       if (gi[1])
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < c; ++j) (*gi[1])[j] += g[i * c + j];
                   });
}

// Row i of a[n, d] multiplied by w[i].
inline Tensor scale_rows(const Tensor& a, const Tensor& w) {
    detail::require_rank("scale_rows", a, 2);
    detail::require_rank("scale_rows", w, 1);
    const std::size_t n = a.dim(0), c = a.dim(1);
    if (w.dim(0) != n) throw ShapeError("scale_rows: " + shape_str(a.shape()) + " by " + shape_str(w.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] * w[i];
    return make_op("scale_rows", a.shape(), std::move(out), {a, w},
                   [n, c](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       const auto& x = self.inputs[0]->value;
                       const auto& wv = self.inputs[1]->value;
                       for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < c; ++j) {
                               if (gi[0]) (*gi[0])[i * c + j] += g[i * c + j] * wv[i];
                               if (gi[1]) (*gi[1])[i] += g[i * c + j] * x[i * c + j];
                           }
                   });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations and similarities

inline Tensor softmax_last_dim(const Tensor& a) {
    auto [rows, width] = detail::row_view("softmax_last_dim", a);
    if (a.rank() == 1) {
        rows = 1;
        width = a.dim(0);
    }
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.data().data() + i * width;
        double* y = out.data() + i * width;
        double mx = *std::max_element(x, x + width);
        double z = 0.0;
        for (std::size_t j = 0; j < width; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < width; ++j) y[j] /= z;
    }
    return make_op("softmax_last_dim", a.shape(), std::move(out), {a},
                   [rows, width](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       auto& d = *gi[0];
                       for (std::size_t i = 0; i < rows; ++i) {
                           const double* y = self.value.data() + i * width;
                           const double* gr = g.data() + i * width;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < width; ++j) dot += gr[j] * y[j];
                           for (std::size_t j = 0; j < width; ++j) d[i * width + j] += y[j] * (gr[j] - dot);
                       }
                   });
}

// Max-subtracted log-sum-exp over the last dim: [n, d] -> [n], [d] -> scalar.
inline Tensor logsumexp_last_dim(const Tensor& a) {
    std::size_t rows = 1, width = 0;
    Shape out_shape;
    if (a.rank() == 1) {
        width = a.dim(0);
    } else if (a.rank() == 2) {
        rows = a.dim(0);
        width = a.dim(1);
        out_shape = {rows};
    } else {
        throw ShapeError("logsumexp_last_dim: expected rank 1 or 2, got " + shape_str(a.shape()));
    }
    if (width == 0) throw ShapeError("logsumexp_last_dim: empty last dimension");
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.data().data() + i * width;
        double mx = *std::max_element(x, x + width);
        double z = 0.0;
        for (std::size_t j = 0; j < width; ++j) z += std::exp(x[j] - mx);
        out[i] = mx + std::log(z);
    }
    return make_op("logsumexp_last_dim", std::move(out_shape), std::move(out), {a},
                   [rows, width](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       const auto& x = self.inputs[0]->value;
                       auto& d = *gi[0];
                       for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t j = 0; j < width; ++j) d[i * width + j] += g[i] * std::exp(x[i * width + j] - self.value[i]);
                   });
}

// [n, n] -> [n, n-1]: row i with its diagonal entry removed.
inline Tensor off_diagonal(const Tensor& a) {
    detail::require_rank("off_diagonal", a, 2);
    const std::size_t n = a.dim(0);
    if (a.dim(1) != n) throw ShapeError("off_diagonal: not square " + shape_str(a.shape()));
    if (n < 2) throw ShapeError("off_diagonal: needs at least 2 rows");
    std::vector<double> out;
    out.reserve(n * (n - 1));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) out.push_back(a[i * n + k]);
    return make_op("off_diagonal", {n, n - 1}, std::move(out), {a}, [n](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gi) {
        auto& d = *gi[0];
        std::size_t p = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                if (k != i) d[i * n + k] += g[p++];
    });
}

namespace detail {
inline std::vector<double> row_norms(const char* op, const Tensor& a) {
    const std::size_t n = a.dim(0), c = a.dim(1);
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += a[i * c + j] * a[i * c + j];
        norms[i] = std::sqrt(s);
        if (!(norms[i] > 0.0)) throw NumericError(std::string(op) + ": zero-norm row " + std::to_string(i));
    }
    return norms;
}
}  // namespace detail

// Row-wise cosine similarity of a[n, d] and b[n, d] -> [n].
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    detail::require_rank("cosine_similarity", a, 2);
    detail::require_same_shape("cosine_similarity", a, b);
    const std::size_t n = a.dim(0), c = a.dim(1);
    auto na = detail::row_norms("cosine_similarity", a);
    auto nb = detail::row_norms("cosine_similarity", b);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += a[i * c + j] * b[i * c + j];
        out[i] = dot / (na[i] * nb[i]);
    }
    return make_op("cosine_similarity", {n}, std::move(out), {a, b},
                   [n, c, na, nb](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       const auto& x = self.inputs[0]->value;
                       const auto& y = self.inputs[1]->value;
                       for (std::size_t i = 0; i < n; ++i) {
                           const double cs = self.value[i];
                           for (std::size_t j = 0; j < c; ++j) {
                               const double xi = x[i * c + j], yi = y[i * c + j];
                               if (gi[0]) (*gi[0])[i * c + j] += g[i] * (yi / (na[i] * nb[i]) - cs * xi / (na[i] * na[i]));
                               if (gi[1]) (*gi[1])[i * c + j] += g[i] * (xi / (na[i] * nb[i]) - cs * yi / (nb[i] * nb[i]));
                           }
                       }
                   });
}

// Rows scaled to unit L2 norm.
inline Tensor normalize_rows(const Tensor& a) {
    detail::require_rank("normalize_rows", a, 2);
    const std::size_t n = a.dim(0), c = a.dim(1);
    auto norms = detail::row_norms("normalize_rows", a);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] / norms[i];
    return make_op("normalize_rows", a.shape(), std::move(out), {a},
                   [n, c, norms](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gi) {
                       auto& d = *gi[0];
                       for (std::size_t i = 0; i < n; ++i) {
                           const double* u = self.value.data() + i * c;
                           const double* gr = g.data() + i * c;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < c; ++j) dot += gr[j] * u[j];
                           for (std::size_t j = 0; j < c; ++j) d[i * c + j] += (gr[j] - dot * u[j]) / norms[i];
                       }
                   });
}

// All-pairs cosine similarity: a[n, d], b[m, d] -> [n, m].
inline Tensor pairwise_cosine(const Tensor& a, const Tensor& b) {
    return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

// ---------------------------------------------------------------------------
// Reverse pass

namespace detail {

// Post-order over nodes that need gradients; inputs precede their consumers.
inline std::vector<const Node*> topo_order(const Node* root) {
    std::vector<const Node*> order;
    std::unordered_map<const Node*, bool> seen;
    std::vector<std::pair<const Node*, std::size_t>> stack{{root, 0}};
    seen[root] = true;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const Node* child = node->inputs[next++].get();
            if (child->requires_grad && !seen[child]) {
                seen[child] = true;
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

// d(loss)/d(wrt[i]) for each requested tensor; unreached tensors get zeros.
inline std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt) {
    if (!loss.defined() || loss.rank() != 0) {
        throw ContractError("backward: loss must be a scalar, got shape " + (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    std::unordered_map<const detail::Node*, std::vector<double>> grads;
    std::unordered_set<const detail::Node*> requested;
    for (const auto& p : wrt) requested.insert(p.node());
    if (loss.requires_grad()) {
        auto order = detail::topo_order(loss.node());
        grads[loss.node()] = {1.0};
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const detail::Node* node = *it;
            if (!node->backward) continue;
            auto found = grads.find(node);
            if (found == grads.end()) continue;
            // Each node is visited once; its buffer is only kept if requested.
            std::vector<double> g;
            if (requested.count(node)) {
                g = found->second;
            } else {
                g = std::move(found->second);
                grads.erase(found);
            }
            std::vector<std::vector<double>*> sinks(node->inputs.size(), nullptr);
            for (std::size_t i = 0; i < node->inputs.size(); ++i) {
                const detail::Node* in = node->inputs[i].get();
                if (!in->requires_grad) continue;
                auto& buf = grads[in];
                if (buf.empty()) buf.assign(in->value.size(), 0.0);
                sinks[i] = &buf;
            }
            node->backward(*node, g, sinks);
        }
    }
    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const auto& p : wrt) {
        auto found = grads.find(p.node());
        if (found == grads.end() || found->second.empty()) {
            out.push_back(Tensor::zeros(p.shape()));
        } else {
            out.push_back(Tensor::constant(p.shape(), found->second));
        }
    }
    return out;
}

inline Gradients backward(const Tensor& loss, const ParameterMap& params) {
    std::vector<Tensor> wrt;
    wrt.reserve(params.size());
    for (const auto& [name, t] : params) wrt.push_back(t);
    auto g = grad(loss, wrt);
    Gradients out;
    std::size_t i = 0;
    for (const auto& [name, t] : params) out.emplace(name, std::move(g[i++]));
    return out;
}

}  // namespace cgr
