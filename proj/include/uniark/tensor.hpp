#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "uniark/rng.hpp"

namespace uniark {

// Dense 64-bit tensor participating in a reverse-mode differentiation graph.
//
// Every operation records its parents and a backward closure on the result
// node. Nodes carry a strictly increasing creation index, so backward() can
// replay the exact reverse of construction order; evaluation order is fixed
// and single-threaded per graph, which makes repeated runs bit-identical.
// Tensors are immutable once created, except for grad accumulation during
// backward and in-place parameter updates applied by optimizers between
// steps.

namespace detail {

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor: zero dimension");
        n *= d;
    }
    return n;
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data.assign(detail::shape_product(node->shape), 0.0);
        node->requires_grad = requires_grad;
        node->id = detail::next_node_id();
        return Tensor(std::move(node));
    }

    static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                              bool requires_grad = false) {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        if (detail::shape_product(node->shape) != values.size()) {
            throw std::invalid_argument("tensor: shape does not match value count");
        }
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        node->id = detail::next_node_id();
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_values({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->size(); }
    std::size_t ndim() const { return node_->shape.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return node_->data; }
    // In-place access for optimizer updates; never call on graph interior.
    std::span<double> mutable_data() { return node_->data; }

    void set_requires_grad(bool value) { node_->requires_grad = value; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const {
        if (node_->grad.empty()) {
            throw std::runtime_error("tensor: grad not populated (run backward first)");
        }
        return node_->grad;
    }
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    double value() const {
        if (size() != 1) throw std::runtime_error("tensor: value() requires a scalar");
        return node_->data[0];
    }

    double at(std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const {
        return node_->data[r * node_->shape[1] + c];
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(std::vector<std::size_t> shape, const char* op,
                                 std::vector<Tensor> inputs,
                                 std::function<void(detail::Node&)> backward_fn);
};

inline Tensor make_op_result(std::vector<std::size_t> shape, const char* op,
                             std::vector<Tensor> inputs,
                             std::function<void(detail::Node&)> backward_fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data.assign(detail::shape_product(node->shape), 0.0);
    node->op = op;
    bool grad = false;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) {
        grad = grad || t.requires_grad();
        node->parents.push_back(t.node());
    }
    node->requires_grad = grad;
    node->backward_fn = std::move(backward_fn);
    node->id = detail::next_node_id();
    return Tensor(std::move(node));
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

inline void check_matrix(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix");
}

// Rows/cols view of a tensor treated as (rows x cols) along the last axis.
inline std::pair<std::size_t, std::size_t> as_rows_cols(const Tensor& t, const char* op) {
    if (t.ndim() == 1) return {1, t.shape()[0]};
    if (t.ndim() == 2) return {t.shape()[0], t.shape()[1]};
    throw std::invalid_argument(std::string(op) + ": expected rank 1 or 2");
}

constexpr double kInvLn2 = 1.4426950408889634074;  // 1/ln(2)

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    auto an = a.node();
    auto bn = b.node();
    Tensor out = make_op_result(a.shape(), "add", {a, b}, [an, bn](detail::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
        }
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = an->data[i] + bn->data[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    auto an = a.node();
    auto bn = b.node();
    Tensor out = make_op_result(a.shape(), "sub", {a, b}, [an, bn](detail::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = an->data[i] - bn->data[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    auto an = a.node();
    auto bn = b.node();
    Tensor out = make_op_result(a.shape(), "mul", {a, b}, [an, bn](detail::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
        }
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = an->data[i] * bn->data[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    auto an = a.node();
    Tensor out = make_op_result(a.shape(), "scale", {a}, [an, c](detail::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
        }
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = an->data[i] * c;
    return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// m: (rows x cols), row: (cols); broadcasts row over every row of m.
inline Tensor add_row(const Tensor& m, const Tensor& row) {
    detail::check_matrix(m, "add_row");
    if (row.ndim() != 1 || row.shape()[0] != m.shape()[1]) {
        throw std::invalid_argument("add_row: row width must match matrix columns");
    }
    auto mn = m.node();
    auto rn = row.node();
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    Tensor out = make_op_result(m.shape(), "add_row", {m, row},
                                [mn, rn, rows, cols](detail::Node& o) {
        if (mn->requires_grad) {
            mn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) mn->grad[i] += o.grad[i];
        }
        if (rn->requires_grad) {
            rn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) rn->grad[c] += o.grad[r * cols + c];
        }
    });
    auto& od = out.node()->data;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) od[r * cols + c] = mn->data[r * cols + c] + rn->data[c];
    return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul");
    detail::check_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) throw std::invalid_argument("matmul: inner dimensions differ");
    auto an = a.node();
    auto bn = b.node();
    Tensor out = make_op_result({m, n}, "matmul", {a, b}, [an, bn, m, k, n](detail::Node& o) {
        // dA += dC * B^T ; dB += A^T * dC
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = o.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t t = 0; t < k; ++t) an->grad[i * k + t] += g * bn->data[t * n + j];
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    const double av = an->data[i * k + t];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) bn->grad[t * n + j] += av * o.grad[i * n + j];
                }
        }
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const double av = an->data[i * k + t];
            if (av == 0.0) continue;
            const double* brow = bn->data.data() + t * n;
            double* orow = od.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

// C = A * B^T with A: (m x k), B: (n x k) -> (m x n). Used by attention scores.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul_nt");
    detail::check_matrix(b, "matmul_nt");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    if (b.shape()[1] != k) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    auto an = a.node();
    auto bn = b.node();
    Tensor out = make_op_result({m, n}, "matmul_nt", {a, b}, [an, bn, m, k, n](detail::Node& o) {
        // dA += dC * B ; dB += dC^T * A
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = o.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t t = 0; t < k; ++t) an->grad[i * k + t] += g * bn->data[j * k + t];
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = o.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t t = 0; t < k; ++t) bn->grad[j * k + t] += g * an->data[i * k + t];
                }
        }
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* arow = an->data.data() + i * k;
            const double* brow = bn->data.data() + j * k;
            for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
            od[i * n + j] = acc;
        }
    return out;
}

inline Tensor slice_cols(const Tensor& m, std::size_t start, std::size_t count) {
    detail::check_matrix(m, "slice_cols");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    if (start + count > cols) throw std::invalid_argument("slice_cols: range out of bounds");
    auto mn = m.node();
    Tensor out = make_op_result({rows, count}, "slice_cols", {m},
                                [mn, start, count, cols, rows](detail::Node& o) {
        if (!mn->requires_grad) return;
        mn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < count; ++c)
                mn->grad[r * cols + start + c] += o.grad[r * count + c];
    });
    auto& od = out.node()->data;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) od[r * count + c] = mn->data[r * cols + start + c];
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const std::size_t rows = parts[0].shape()[0];
    std::size_t cols = 0;
    for (const auto& p : parts) {
        detail::check_matrix(p, "concat_cols");
        if (p.shape()[0] != rows) throw std::invalid_argument("concat_cols: row count mismatch");
        cols += p.shape()[1];
    }
    std::vector<std::shared_ptr<detail::Node>> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.shape()[1]);
    }
    Tensor out = make_op_result({rows, cols}, "concat_cols", parts,
                                [nodes, widths, rows, cols](detail::Node& o) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
            auto& pn = *nodes[p];
            if (pn.requires_grad) {
                pn.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < widths[p]; ++c)
                        pn.grad[r * widths[p] + c] += o.grad[r * cols + offset + c];
            }
            offset += widths[p];
        }
    });
    auto& od = out.node()->data;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[p]; ++c)
                od[r * cols + offset + c] = nodes[p]->data[r * widths[p] + c];
        offset += widths[p];
    }
    return out;
}

inline Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
    detail::check_matrix(m, "gather_rows");
    const std::size_t cols = m.shape()[1];
    for (std::size_t r : rows)
        if (r >= m.shape()[0]) throw std::out_of_range("gather_rows: row index out of range");
    auto mn = m.node();
    auto idx = rows;
    Tensor out = make_op_result({rows.size(), cols}, "gather_rows", {m},
                                [mn, idx, cols](detail::Node& o) {
        if (!mn->requires_grad) return;
        mn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < cols; ++c)
                mn->grad[idx[i] * cols + c] += o.grad[i * cols + c];
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) od[i * cols + c] = mn->data[idx[i] * cols + c];
    return out;
}

inline Tensor gather(const Tensor& v, const std::vector<std::size_t>& indices) {
    if (v.ndim() != 1) throw std::invalid_argument("gather: expected a vector");
    for (std::size_t i : indices)
        if (i >= v.size()) throw std::out_of_range("gather: index out of range");
    auto vn = v.node();
    auto idx = indices;
    Tensor out = make_op_result({indices.size()}, "gather", {v}, [vn, idx](detail::Node& o) {
        if (!vn->requires_grad) return;
        vn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) vn->grad[idx[i]] += o.grad[i];
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < idx.size(); ++i) od[i] = vn->data[idx[i]];
    return out;
}

inline Tensor reshape(const Tensor& t, std::vector<std::size_t> shape) {
    if (detail::shape_product(shape) != t.size()) {
        throw std::invalid_argument("reshape: element count mismatch");
    }
    auto tn = t.node();
    Tensor out = make_op_result(std::move(shape), "reshape", {t}, [tn](detail::Node& o) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) tn->grad[i] += o.grad[i];
    });
    out.node()->data = tn->data;
    return out;
}

inline Tensor sum(const Tensor& v) {
    auto vn = v.node();
    Tensor out = make_op_result({1}, "sum", {v}, [vn](detail::Node& o) {
        if (!vn->requires_grad) return;
        vn->ensure_grad();
        for (auto& g : vn->grad) g += o.grad[0];
    });
    double acc = 0.0;
    for (double x : vn->data) acc += x;
    out.node()->data[0] = acc;
    return out;
}

inline Tensor pick(const Tensor& v, std::size_t index) {
    if (v.ndim() != 1) throw std::invalid_argument("pick: expected a vector");
    if (index >= v.size()) throw std::out_of_range("pick: index out of range");
    auto vn = v.node();
    Tensor out = make_op_result({1}, "pick", {v}, [vn, index](detail::Node& o) {
        if (!vn->requires_grad) return;
        vn->ensure_grad();
        vn->grad[index] += o.grad[0];
    });
    out.node()->data[0] = vn->data[index];
    return out;
}

// out = x / s with s a scalar tensor.
inline Tensor divide_by_scalar(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw std::invalid_argument("divide_by_scalar: divisor must be scalar");
    auto xn = x.node();
    auto sn = s.node();
    Tensor out = make_op_result(x.shape(), "divide_by_scalar", {x, s}, [xn, sn](detail::Node& o) {
        const double sv = sn->data[0];
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] / sv;
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * xn->data[i];
            sn->grad[0] -= acc / (sv * sv);
        }
    });
    auto& od = out.node()->data;
    const double sv = sn->data[0];
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xn->data[i] / sv;
    return out;
}

// out = ln(max(x, floor)) elementwise; derivative is 0 below the floor.
inline Tensor log_floor(const Tensor& x, double floor_value) {
    auto xn = x.node();
    Tensor out = make_op_result(x.shape(), "log_floor", {x}, [xn, floor_value](detail::Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (xn->data[i] > floor_value) xn->grad[i] += o.grad[i] / xn->data[i];
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::log(std::max(xn->data[i], floor_value));
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalizations
// ---------------------------------------------------------------------------

// Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf-based).
inline double gelu_value(double x) {
    return x * 0.5 * std::erfc(-x * M_SQRT1_2);
}

inline double gelu_derivative(double x) {
    const double phi = 0.5 * std::erfc(-x * M_SQRT1_2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return phi + x * pdf;
}

inline Tensor gelu(const Tensor& x) {
    auto xn = x.node();
    Tensor out = make_op_result(x.shape(), "gelu", {x}, [xn](detail::Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            xn->grad[i] += o.grad[i] * gelu_derivative(xn->data[i]);
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = gelu_value(xn->data[i]);
    return out;
}

// Softmax along the last axis (vector, or row-wise on a matrix), stabilized
// by max subtraction.
inline Tensor softmax(const Tensor& x) {
    const auto [rows, cols] = detail::as_rows_cols(x, "softmax");
    auto xn = x.node();
    for (double v : xn->data)
        if (std::isnan(v)) throw std::invalid_argument("softmax: NaN input");
    Tensor out = make_op_result(x.shape(), "softmax", {x}, [xn, rows, cols](detail::Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        // dx = y * (dy - sum(dy * y)) per row
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * cols;
            const double* dy = o.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c)
                xn->grad[r * cols + c] += y[c] * (dy[c] - dot);
        }
    });
    auto& od = out.node()->data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xn->data.data() + r * cols;
        double* y = od.data() + r * cols;
        double mx = in[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(in[c] - mx);
            total += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
    }
    return out;
}

inline Tensor log_softmax(const Tensor& x) {
    const auto [rows, cols] = detail::as_rows_cols(x, "log_softmax");
    auto xn = x.node();
    for (double v : xn->data)
        if (std::isnan(v)) throw std::invalid_argument("log_softmax: NaN input");
    Tensor out = make_op_result(x.shape(), "log_softmax", {x}, [xn, rows, cols](detail::Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        // dx = dy - softmax(x) * sum(dy) per row
        for (std::size_t r = 0; r < rows; ++r) {
            const double* ls = o.data.data() + r * cols;
            const double* dy = o.grad.data() + r * cols;
            double total = 0.0;
            for (std::size_t c = 0; c < cols; ++c) total += dy[c];
            for (std::size_t c = 0; c < cols; ++c)
                xn->grad[r * cols + c] += dy[c] - std::exp(ls[c]) * total;
        }
    });
    auto& od = out.node()->data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xn->data.data() + r * cols;
        double* y = od.data() + r * cols;
        double mx = in[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t c = 0; c < cols; ++c) y[c] = in[c] - lse;
    }
    return out;
}

// Layer normalization along the last axis with learned gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    const auto [rows, cols] = detail::as_rows_cols(x, "layer_norm");
    if (gamma.ndim() != 1 || gamma.shape()[0] != cols || beta.ndim() != 1 ||
        beta.shape()[0] != cols) {
        throw std::invalid_argument("layer_norm: gamma/beta width must match last axis");
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    Tensor out = make_op_result(x.shape(), "layer_norm", {x, gamma, beta},
                                [xn, gn, bn, rows, cols, eps](detail::Node& o) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* in = xn->data.data() + r * cols;
            const double* dy = o.grad.data() + r * cols;
            double mean = 0.0;
            for (std::size_t c = 0; c < cols; ++c) mean += in[c];
            mean /= static_cast<double>(cols);
            double var = 0.0;
            for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
            var /= static_cast<double>(cols);
            const double inv = 1.0 / std::sqrt(var + eps);

            if (gn->requires_grad || bn->requires_grad) {
                if (gn->requires_grad) gn->ensure_grad();
                if (bn->requires_grad) bn->ensure_grad();
                for (std::size_t c = 0; c < cols; ++c) {
                    const double xhat = (in[c] - mean) * inv;
                    if (gn->requires_grad) gn->grad[c] += dy[c] * xhat;
                    if (bn->requires_grad) bn->grad[c] += dy[c];
                }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    const double xhat = (in[c] - mean) * inv;
                    const double dxhat = dy[c] * gn->data[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                const double n = static_cast<double>(cols);
                for (std::size_t c = 0; c < cols; ++c) {
                    const double xhat = (in[c] - mean) * inv;
                    const double dxhat = dy[c] * gn->data[c];
                    xn->grad[r * cols + c] +=
                        inv / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                }
            }
        }
    });
    auto& od = out.node()->data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xn->data.data() + r * cols;
        double* y = od.data() + r * cols;
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += in[c];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c)
            y[c] = (in[c] - mean) * inv * gn->data[c] + bn->data[c];
    }
    return out;
}

// table: (vocab x width); ids select rows.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
    detail::check_matrix(table, "embedding_lookup");
    const std::size_t width = table.shape()[1];
    for (std::size_t id : ids)
        if (id >= table.shape()[0]) throw std::out_of_range("embedding_lookup: id out of range");
    auto tn = table.node();
    auto idx = ids;
    Tensor out = make_op_result({ids.size(), width}, "embedding_lookup", {table},
                                [tn, idx, width](detail::Node& o) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < width; ++c)
                tn->grad[idx[i] * width + c] += o.grad[i * width + c];
    });
    auto& od = out.node()->data;
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) od[i * width + c] = tn->data[idx[i] * width + c];
    return out;
}

// -log_probs[target] for a vector of log-probabilities.
inline Tensor negative_log_likelihood(const Tensor& log_probs, std::size_t target) {
    if (log_probs.ndim() != 1) {
        throw std::invalid_argument("negative_log_likelihood: expected a vector");
    }
    if (target >= log_probs.size()) {
        throw std::out_of_range("negative_log_likelihood: target out of range");
    }
    auto ln = log_probs.node();
    Tensor out = make_op_result({1}, "nll", {log_probs}, [ln, target](detail::Node& o) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        ln->grad[target] -= o.grad[0];
    });
    out.node()->data[0] = -ln->data[target];
    return out;
}

// Shannon entropy in bits over the given index set: -sum p_i log2 p_i, with
// the 0 log 0 := 0 convention. p need not sum to 1 over the set.
inline Tensor entropy_bits(const Tensor& p, const std::vector<std::size_t>& index_set) {
    if (p.ndim() != 1) throw std::invalid_argument("entropy_bits: expected a vector");
    auto pn = p.node();
    for (std::size_t i : index_set) {
        if (i >= p.size()) throw std::out_of_range("entropy_bits: index out of range");
        if (pn->data[i] < 0.0) throw std::invalid_argument("entropy_bits: negative probability");
    }
    auto idx = index_set;
    Tensor out = make_op_result({1}, "entropy_bits", {p}, [pn, idx](detail::Node& o) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        for (std::size_t i : idx) {
            const double v = pn->data[i];
            if (v > 0.0) pn->grad[i] -= o.grad[0] * (std::log2(v) + detail::kInvLn2);
        }
    });
    double h = 0.0;
    for (std::size_t i : idx) {
        const double v = pn->data[i];
        if (v > 0.0) h -= v * std::log2(v);
    }
    out.node()->data[0] = h;
    return out;
}

// Entropy over all indices.
inline Tensor entropy_bits(const Tensor& p) {
    std::vector<std::size_t> all(p.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return entropy_bits(p, all);
}

// ---------------------------------------------------------------------------
// Backward pass and graph inspection
// ---------------------------------------------------------------------------

// Populates grads of every requires_grad tensor reachable from loss.
// Gradients accumulate additively; call zero_grad between optimizer steps.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Collect reachable nodes, then replay in exact reverse construction order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (detail::Node* n : order) {
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

struct GraphOp {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
};

// Ordered record of the operations reachable from t, in construction order.
inline std::vector<GraphOp> trace_graph(const Tensor& t) {
    std::vector<detail::Node*> nodes;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{t.node().get()};
    seen.insert(t.node().get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id < b->id; });
    std::vector<GraphOp> ops;
    for (detail::Node* n : nodes) {
        if (n->parents.empty()) continue;
        GraphOp rec;
        rec.op = n->op;
        rec.output = n->id;
        for (const auto& p : n->parents) rec.inputs.push_back(p->id);
        ops.push_back(std::move(rec));
    }
    return ops;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct FiniteDifferenceReport {
    std::size_t coordinates_checked = 0;
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Compares the analytic gradient of f() against central finite differences on
// a random subset of at least min_coords coordinates of params. f must be a
// deterministic scalar-valued function of the current param values.
inline FiniteDifferenceReport finite_difference_check(const std::function<Tensor()>& f,
                                                      std::vector<Tensor> params, double eps,
                                                      double tol,
                                                      std::size_t min_coords = 64,
                                                      std::uint64_t seed = 0x5eed) {
    for (auto& p : params) p.zero_grad();
    Tensor loss = f();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.size(), 0.0);
        }
    }

    std::size_t total = 0;
    for (const auto& p : params) total += p.size();
    const std::size_t n_check = std::min(min_coords, total);

    // Sample distinct flat coordinates.
    Rng rng(seed);
    std::vector<std::size_t> coords(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
    rng.shuffle(coords);
    coords.resize(n_check);
    std::sort(coords.begin(), coords.end());

    FiniteDifferenceReport report;
    report.tolerance = tol;
    for (std::size_t flat : coords) {
        std::size_t pi = 0, offset = flat;
        while (offset >= params[pi].size()) {
            offset -= params[pi].size();
            ++pi;
        }
        auto data = params[pi].mutable_data();
        const double saved = data[offset];
        data[offset] = saved + eps;
        const double up = f().value();
        data[offset] = saved - eps;
        const double down = f().value();
        data[offset] = saved;

        const double fd = (up - down) / (2.0 * eps);
        const double an = analytic[pi][offset];
        const double abs_err = std::abs(fd - an);
        const double rel_err = abs_err / std::max({std::abs(fd), std::abs(an), 1e-6});
        report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
        report.max_relative_error = std::max(report.max_relative_error, rel_err);
        ++report.coordinates_checked;
    }
    report.pass = report.max_relative_error < tol;
    return report;
}

}  // namespace uniark
