#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// Every operation returns a new Tensor. When at least one input requires a
// gradient, the result keeps handles to its inputs and a closure that pushes
// the result's gradient back into them. `backward()` walks that graph in
// reverse topological order.
//
// Tensors are rank 0 (scalar), 1 (vector) or 2 (row-major matrix).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "diffpoi/core/error.hpp"

namespace diffpoi::core {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::shared_ptr<std::vector<double>> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    std::vector<double>& ensure_grad() {
        if (grad.size() != value->size()) grad.assign(value->size(), 0.0);
        return grad;
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (numel(shape) != values.size()) {
            throw ShapeError("tensor: data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_string(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::make_shared<std::vector<double>>(std::move(values));
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }
    static Tensor vector(std::vector<double> v, bool requires_grad = false) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v), requires_grad);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v, bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(v), requires_grad);
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    // Leaf over existing storage. Used to bind trainable parameters into a
    // tape without copying: the leaf owns its own gradient buffer.
    static Tensor shared(Shape shape, std::shared_ptr<std::vector<double>> storage, bool requires_grad) {
        if (!storage || numel(shape) != storage->size()) {
            throw ShapeError("tensor: shared storage does not match shape " + shape_string(shape));
        }
        Tensor t;
        t.node_ = std::make_shared<detail::Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(storage);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_node(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value->size(); }
    std::size_t rows() const { return rank() == 2 ? shape()[0] : 1; }
    std::size_t cols() const { return rank() == 0 ? 1 : shape().back(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op_name() const { return node_->op; }

    std::span<const double> data() const { return *node_->value; }
    const std::shared_ptr<std::vector<double>>& storage() const { return node_->value; }

    // Gradient buffer; zeros when nothing has flowed into this tensor yet.
    std::span<const double> grad() const { return node_->ensure_grad(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    double item() const {
        if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
        return (*node_->value)[0];
    }
    double operator[](std::size_t i) const { return (*node_->value)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*node_->value)[r * cols() + c]; }

    std::vector<double> to_vector() const { return *node_->value; }

    // Same storage, cut from the tape.
    Tensor detach() const { return Tensor::shared(shape(), node_->value, false); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const char* op, const Tensor& t) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite input");
    }
}

inline std::vector<double>* grad_of(const std::shared_ptr<Node>& n) {
    return n->requires_grad ? &n->ensure_grad() : nullptr;
}

inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::initializer_list<Tensor> inputs, std::function<void(Node&)> bw) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::make_shared<std::vector<double>>(std::move(values));
    node->op = op;
    for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
    if (node->requires_grad) {
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(bw);
    }
    return Tensor::from_node(std::move(node));
}

inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          const std::vector<Tensor>& inputs, std::function<void(Node&)> bw) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::make_shared<std::vector<double>>(std::move(values));
    node->op = op;
    for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
    if (node->requires_grad) {
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(bw);
    }
    return Tensor::from_node(std::move(node));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t lo, std::size_t hi) {
    if (a.rank() < lo || a.rank() > hi) {
        throw ShapeError(std::string(op) + ": unsupported rank for shape " + shape_string(a.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

// (m,k)x(k,n) -> (m,n). A rank-1 left operand is a row vector and a rank-1
// right operand a column vector; the matching output axis is dropped.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank("matmul", a, 1, 2);
    detail::require_rank("matmul", b, 1, 2);
    detail::check_finite("matmul", a);
    detail::check_finite("matmul", b);
    const std::size_t m = a.rank() == 2 ? a.shape()[0] : 1;
    const std::size_t k = a.shape().back();
    const std::size_t kb = b.shape()[0];
    const std::size_t n = b.rank() == 2 ? b.shape()[1] : 1;
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Shape out_shape;
    if (a.rank() == 2) out_shape.push_back(m);
    if (b.rank() == 2) out_shape.push_back(n);

    std::vector<double> out(m * n, 0.0);
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
    }
    return detail::make_result("matmul", std::move(out_shape), std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        const auto& g = self.grad;
        const auto& A = *self.parents[0]->value;
        const auto& B = *self.parents[1]->value;
        if (auto* ga = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* brow = B.data() + p * n;
                    const double* grow = g.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    (*ga)[i * k + p] += s;
                }
            }
        }
        if (auto* gb = detail::grad_of(self.parents[1])) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    double* gbrow = gb->data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
            }
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    detail::check_finite("add", a);
    detail::check_finite("add", b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (int p = 0; p < 2; ++p) {
            if (auto* g = detail::grad_of(self.parents[p])) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
            }
        }
    });
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("subtract", a, b);
    detail::check_finite("subtract", a);
    detail::check_finite("subtract", b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result("subtract", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
        if (auto* g = detail::grad_of(self.parents[1])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
        }
    });
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("elementwise_multiply", a, b);
    detail::check_finite("elementwise_multiply", a);
    detail::check_finite("elementwise_multiply", b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result("elementwise_multiply", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& A = *self.parents[0]->value;
        const auto& B = *self.parents[1]->value;
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * B[i];
        }
        if (auto* g = detail::grad_of(self.parents[1])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * A[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    detail::check_finite("scale", a);
    if (!std::isfinite(c)) throw NumericalError("scale: non-finite factor");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
    return detail::make_result("scale", a.shape(), std::move(out), {a}, [c](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * self.grad[i];
        }
    });
}

// Concatenation along the last axis. Rank-2 parts must share their row count.
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t rank = parts.front().rank();
    if (rank < 1 || rank > 2) throw ShapeError("concat: unsupported rank for shape " + shape_string(parts.front().shape()));
    const std::size_t rows = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank || p.rows() != rows) {
            throw ShapeError("concat: shape mismatch " + shape_string(parts.front().shape()) + " vs " +
                             shape_string(p.shape()));
        }
        detail::check_finite("concat", p);
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto src = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(src.data() + r * widths[k], widths[k], out.data() + r * total + offset);
        }
        offset += widths[k];
    }
    Shape shape = rank == 1 ? Shape{total} : Shape{rows, total};
    return detail::make_result("concat", std::move(shape), std::move(out), parts,
                               [widths, rows, total](detail::Node& self) {
                                   std::size_t offset = 0;
                                   for (std::size_t k = 0; k < widths.size(); ++k) {
                                       if (auto* g = detail::grad_of(self.parents[k])) {
                                           for (std::size_t r = 0; r < rows; ++r) {
                                               for (std::size_t c = 0; c < widths[k]; ++c) {
                                                   (*g)[r * widths[k] + c] += self.grad[r * total + offset + c];
                                               }
                                           }
                                       }
                                       offset += widths[k];
                                   }
                               });
}

// Rows of a matrix (or entries of a vector) selected by index; repeats allowed.
inline Tensor row_gather(const Tensor& table, std::vector<std::size_t> indices) {
    detail::require_rank("row_gather", table, 1, 2);
    detail::check_finite("row_gather", table);
    const std::size_t nrows = table.shape()[0];
    const std::size_t width = table.rank() == 2 ? table.shape()[1] : 1;
    for (auto idx : indices) {
        if (idx >= nrows) {
            throw std::out_of_range("row_gather: index " + std::to_string(idx) + " out of range for shape " +
                                    shape_string(table.shape()));
        }
    }
    std::vector<double> out(indices.size() * width);
    const auto src = table.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy_n(src.data() + indices[r] * width, width, out.data() + r * width);
    }
    Shape shape = table.rank() == 2 ? Shape{indices.size(), width} : Shape{indices.size()};
    return detail::make_result("row_gather", std::move(shape), std::move(out), {table},
                               [idx = std::move(indices), width](detail::Node& self) {
                                   if (auto* g = detail::grad_of(self.parents[0])) {
                                       for (std::size_t r = 0; r < idx.size(); ++r) {
                                           for (std::size_t c = 0; c < width; ++c) {
                                               (*g)[idx[r] * width + c] += self.grad[r * width + c];
                                           }
                                       }
                                   }
                               });
}

// Adjoint of row_gather: out[indices[r]] += src[r], with `rows` output rows.
inline Tensor scatter_add_rows(const Tensor& src, std::vector<std::size_t> indices, std::size_t rows) {
    detail::require_rank("scatter_add_rows", src, 1, 2);
    detail::check_finite("scatter_add_rows", src);
    if (indices.size() != src.shape()[0]) {
        throw ShapeError("scatter_add_rows: " + std::to_string(indices.size()) + " indices for shape " +
                         shape_string(src.shape()));
    }
    const std::size_t width = src.rank() == 2 ? src.shape()[1] : 1;
    for (auto idx : indices) {
        if (idx >= rows) throw std::out_of_range("scatter_add_rows: index " + std::to_string(idx) + " out of range");
    }
    std::vector<double> out(rows * width, 0.0);
    const auto s = src.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        for (std::size_t c = 0; c < width; ++c) out[indices[r] * width + c] += s[r * width + c];
    }
    Shape shape = src.rank() == 2 ? Shape{rows, width} : Shape{rows};
    return detail::make_result("scatter_add_rows", std::move(shape), std::move(out), {src},
                               [idx = std::move(indices), width](detail::Node& self) {
                                   if (auto* g = detail::grad_of(self.parents[0])) {
                                       for (std::size_t r = 0; r < idx.size(); ++r) {
                                           for (std::size_t c = 0; c < width; ++c) {
                                               (*g)[r * width + c] += self.grad[idx[r] * width + c];
                                           }
                                       }
                                   }
                               });
}

// out[i, :] = m[i, :] * w[i]
inline Tensor scale_rows(const Tensor& m, const Tensor& w) {
    if (m.rank() != 2 || w.rank() != 1 || w.shape()[0] != m.shape()[0]) {
        throw ShapeError("scale_rows: shape mismatch " + shape_string(m.shape()) + " vs " + shape_string(w.shape()));
    }
    detail::check_finite("scale_rows", m);
    detail::check_finite("scale_rows", w);
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    std::vector<double> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = m[i * cols + j] * w[i];
    }
    return detail::make_result("scale_rows", m.shape(), std::move(out), {m, w}, [rows, cols](detail::Node& self) {
        const auto& M = *self.parents[0]->value;
        const auto& W = *self.parents[1]->value;
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) (*g)[i * cols + j] += self.grad[i * cols + j] * W[i];
            }
        }
        if (auto* g = detail::grad_of(self.parents[1])) {
            for (std::size_t i = 0; i < rows; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < cols; ++j) s += self.grad[i * cols + j] * M[i * cols + j];
                (*g)[i] += s;
            }
        }
    });
}

namespace detail {

inline void softmax_inplace(const double* in, double* out, std::size_t n) {
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        z += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

}  // namespace detail

inline Tensor softmax_lastdim(const Tensor& a) {
    detail::require_rank("softmax_lastdim", a, 1, 2);
    detail::check_finite("softmax_lastdim", a);
    const std::size_t rows = a.rows(), cols = a.cols();
    if (cols == 0) throw ShapeError("softmax_lastdim: empty last axis");
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) detail::softmax_inplace(a.data().data() + r * cols, out.data() + r * cols, cols);
    return detail::make_result("softmax_lastdim", a.shape(), std::move(out), {a}, [rows, cols](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            const auto& y = *self.value;
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * self.grad[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    (*g)[r * cols + c] += y[r * cols + c] * (self.grad[r * cols + c] - dot);
                }
            }
        }
    });
}

inline Tensor log_softmax_lastdim(const Tensor& a) {
    detail::require_rank("log_softmax_lastdim", a, 1, 2);
    detail::check_finite("log_softmax_lastdim", a);
    const std::size_t rows = a.rows(), cols = a.cols();
    if (cols == 0) throw ShapeError("log_softmax_lastdim: empty last axis");
    std::vector<double> out(a.size());
    const auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data() + r * cols;
        double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
    }
    return detail::make_result("log_softmax_lastdim", a.shape(), std::move(out), {a}, [rows, cols](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            const auto& y = *self.value;
            for (std::size_t r = 0; r < rows; ++r) {
                double gsum = 0.0;
                for (std::size_t c = 0; c < cols; ++c) gsum += self.grad[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    (*g)[r * cols + c] += self.grad[r * cols + c] - std::exp(y[r * cols + c]) * gsum;
                }
            }
        }
    });
}

// Softmax within groups of a vector: entries sharing segments[i] are normalized together.
inline Tensor segment_softmax(const Tensor& logits, std::vector<std::size_t> segments, std::size_t num_segments) {
    if (logits.rank() != 1 || segments.size() != logits.size()) {
        throw ShapeError("segment_softmax: expected a vector with one segment id per entry, got " +
                         shape_string(logits.shape()));
    }
    detail::check_finite("segment_softmax", logits);
    for (auto s : segments) {
        if (s >= num_segments) throw std::out_of_range("segment_softmax: segment id out of range");
    }
    const auto x = logits.data();
    std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < x.size(); ++i) mx[segments[i]] = std::max(mx[segments[i]], x[i]);
    std::vector<double> z(num_segments, 0.0);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx[segments[i]]);
        z[segments[i]] += out[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] /= z[segments[i]];
    return detail::make_result("segment_softmax", logits.shape(), std::move(out), {logits},
                               [seg = std::move(segments), num_segments](detail::Node& self) {
                                   if (auto* g = detail::grad_of(self.parents[0])) {
                                       const auto& y = *self.value;
                                       std::vector<double> dot(num_segments, 0.0);
                                       for (std::size_t i = 0; i < y.size(); ++i) dot[seg[i]] += y[i] * self.grad[i];
                                       for (std::size_t i = 0; i < y.size(); ++i) {
                                           (*g)[i] += y[i] * (self.grad[i] - dot[seg[i]]);
                                       }
                                   }
                               });
}

// Mean along the last axis: (m,n) -> (m), (n) -> scalar.
inline Tensor mean_lastaxis(const Tensor& a) {
    detail::require_rank("mean_lastaxis", a, 1, 2);
    detail::check_finite("mean_lastaxis", a);
    const std::size_t rows = a.rows(), cols = a.cols();
    if (cols == 0) throw ShapeError("mean_lastaxis: empty last axis");
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r] += a[r * cols + c];
        out[r] /= static_cast<double>(cols);
    }
    Shape shape = a.rank() == 2 ? Shape{rows} : Shape{};
    return detail::make_result("mean_lastaxis", std::move(shape), std::move(out), {a}, [rows, cols](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            const double inv = 1.0 / static_cast<double>(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) (*g)[r * cols + c] += self.grad[r] * inv;
            }
        }
    });
}

inline Tensor sum(const Tensor& a) {
    detail::check_finite("sum", a);
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result("sum", {}, {s}, {a}, [](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (auto& v : *g) v += self.grad[0];
        }
    });
}

inline Tensor relu(const Tensor& a) {
    detail::check_finite("relu", a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return detail::make_result("relu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            const auto& x = *self.parents[0]->value;
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (x[i] > 0.0) (*g)[i] += self.grad[i];
            }
        }
    });
}

// Exact (erf) GELU.
inline Tensor gelu(const Tensor& a) {
    detail::check_finite("gelu", a);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * inv_sqrt2));
    return detail::make_result("gelu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            constexpr double inv_sqrt2 = 0.70710678118654752440;
            constexpr double inv_sqrt_2pi = 0.39894228040143267794;
            const auto& x = *self.parents[0]->value;
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
                (*g)[i] += self.grad[i] * (cdf + x[i] * pdf);
            }
        }
    });
}

inline Tensor exponential(const Tensor& a) {
    detail::check_finite("exponential", a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
    return detail::make_result("exponential", a.shape(), std::move(out), {a}, [](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (*self.value)[i];
        }
    });
}

inline Tensor l2_norm_squared(const Tensor& a) {
    detail::check_finite("l2_norm_squared", a);
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return detail::make_result("l2_norm_squared", {}, {s}, {a}, [](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            const auto& x = *self.parents[0]->value;
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += 2.0 * x[i] * self.grad[0];
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_string(a.shape()));
    detail::check_finite("transpose", a);
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
    }
    return detail::make_result("transpose", {cols, rows}, std::move(out), {a}, [rows, cols](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) (*g)[r * cols + c] += self.grad[c * rows + r];
            }
        }
    });
}

// (m,n) + (n) -> (m,n), the vector added to every row.
inline Tensor broadcast_add(const Tensor& m, const Tensor& row) {
    if (m.rank() != 2 || row.rank() != 1 || row.shape()[0] != m.shape()[1]) {
        throw ShapeError("broadcast_add: shape mismatch " + shape_string(m.shape()) + " vs " + shape_string(row.shape()));
    }
    detail::check_finite("broadcast_add", m);
    detail::check_finite("broadcast_add", row);
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    std::vector<double> out(m.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = m[r * cols + c] + row[c];
    }
    return detail::make_result("broadcast_add", m.shape(), std::move(out), {m, row}, [rows, cols](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
        if (auto* g = detail::grad_of(self.parents[1])) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) (*g)[c] += self.grad[r * cols + c];
            }
        }
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    }
    detail::check_finite("reshape", a);
    return detail::make_result("reshape", std::move(shape), a.to_vector(), {a}, [](detail::Node& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
    });
}

// Column means of a matrix: (m,n) -> (n).
inline Tensor mean_rows(const Tensor& a) { return mean_lastaxis(transpose(a)); }

// ---------------------------------------------------------------------------
// Reverse mode
// ---------------------------------------------------------------------------

struct GradientSeed {
    Tensor tensor;
    std::vector<double> grad;
};

// Propagates the given output gradients through the tape. Leaf tensors
// accumulate into their gradient buffers; interior buffers are reset first.
inline void backward(const std::vector<GradientSeed>& seeds) {
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    for (const auto& seed : seeds) {
        if (seed.grad.size() != seed.tensor.size()) {
            throw ShapeError("backward: seed gradient length does not match shape " + shape_string(seed.tensor.shape()));
        }
        auto* root = seed.tensor.node().get();
        if (!root->requires_grad || !seen.insert(root).second) continue;
        stack.emplace_back(root, 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                auto* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (auto* n : order) {
        if (n->backward) {
            n->grad.assign(n->value->size(), 0.0);
        } else {
            n->ensure_grad();
        }
    }
    for (const auto& seed : seeds) {
        auto* root = seed.tensor.node().get();
        if (!root->requires_grad) continue;
        for (std::size_t i = 0; i < seed.grad.size(); ++i) root->grad[i] += seed.grad[i];
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

inline void backward(const Tensor& loss) {
    if (loss.size() != 1 || loss.rank() != 0) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
    }
    backward({GradientSeed{loss, {1.0}}});
}

}  // namespace diffpoi::core
