#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "branchy/errors.hpp"

namespace branchy {

namespace detail {

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until touched by backward
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into the parents' grad slots.
    std::function<void(Node&)> backprop;

    std::size_t size() const { return values.size(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

}  // namespace detail

/// Dense row-major double tensor with a dynamically recorded operation tape
/// for reverse-mode gradients. Copies are shallow (shared node), so a Tensor
/// used as a trainable parameter keeps its identity across forward passes.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static Tensor from(std::vector<double> values, std::vector<std::size_t> shape) {
        std::size_t expect = 1;
        for (std::size_t d : shape) expect *= d;
        if (shape.empty() || expect != values.size()) {
            throw DimensionError("tensor shape " + detail::shape_str(shape) +
                                 " does not match " + std::to_string(values.size()) +
                                 " values");
        }
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        return Tensor(std::move(n));
    }

    static Tensor vector(std::vector<double> values) {
        std::size_t len = values.size();
        return from(std::move(values), {len});
    }

    static Tensor scalar(double v) { return from({v}, {1}); }

    static Tensor zeros(std::vector<std::size_t> shape) {
        std::size_t total = 1;
        for (std::size_t d : shape) total *= d;
        return from(std::vector<double>(total, 0.0), std::move(shape));
    }

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const { return node_->grad; }

    void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }
    void drop_grad() { node_->grad.clear(); }

    double item() const {
        if (size() != 1) {
            throw DimensionError("item() on non-scalar tensor " +
                                 detail::shape_str(shape()));
        }
        return node_->values[0];
    }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
                      std::vector<std::shared_ptr<Node>> parents,
                      std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return Tensor(std::move(n));
}

}  // namespace detail

/// Reverse-mode accumulation from a scalar loss. Gradients are summed into
/// every reachable node's grad slot; parameters used in several branches
/// receive the sum of branch contributions. Calling backward twice on the
/// same loss node would silently double the accumulated gradients, so it is
/// rejected.
inline void backward(const Tensor& loss) {
    detail::Node* root = loss.node().get();
    if (root->size() != 1) {
        throw DimensionError("backward requires a scalar loss, got " +
                             detail::shape_str(root->shape));
    }
    if (root->backward_done) {
        throw GradientError("backward already called on this loss; gradients would "
                            "double-accumulate");
    }
    root->backward_done = true;

    // Iterative post-order DFS; reversed it yields a valid topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

/// param <- param - lr * grad, then grads are zeroed.
inline void sgd_step(std::vector<Tensor>& params, double lr) {
    if (!(lr >= 0.0)) throw ConfigError("sgd_step: learning rate must be non-negative");
    for (Tensor& p : params) {
        if (!p.has_grad()) {
            throw CalibrationError("sgd_step: parameter of shape " +
                                   detail::shape_str(p.shape()) + " has no gradient");
        }
    }
    for (Tensor& p : params) {
        auto& v = p.values();
        auto& g = p.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        p.zero_grad();
    }
}

// ---- elementwise and reduction ops ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + detail::shape_str(a.shape()) +
                             " vs " + detail::shape_str(b.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::make_op(a.shape(), std::move(out), {a.node(), b.node()},
                           [](detail::Node& n) {
                               auto& pa = *n.parents[0];
                               auto& pb = *n.parents[1];
                               pa.ensure_grad();
                               pb.ensure_grad();
                               for (std::size_t i = 0; i < n.size(); ++i) {
                                   pa.grad[i] += n.grad[i];
                                   pb.grad[i] += n.grad[i];
                               }
                           });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + detail::shape_str(a.shape()) +
                             " vs " + detail::shape_str(b.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::make_op(a.shape(), std::move(out), {a.node(), b.node()},
                           [](detail::Node& n) {
                               auto& pa = *n.parents[0];
                               auto& pb = *n.parents[1];
                               pa.ensure_grad();
                               pb.ensure_grad();
                               for (std::size_t i = 0; i < n.size(); ++i) {
                                   pa.grad[i] += n.grad[i] * pb.values[i];
                                   pb.grad[i] += n.grad[i] * pa.values[i];
                               }
                           });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.values()[i];
    return detail::make_op(a.shape(), std::move(out), {a.node()},
                           [c](detail::Node& n) {
                               auto& pa = *n.parents[0];
                               pa.ensure_grad();
                               for (std::size_t i = 0; i < n.size(); ++i)
                                   pa.grad[i] += c * n.grad[i];
                           });
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return detail::make_op({1}, {s}, {a.node()}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += n.grad[0];
    });
}

// ---- linear algebra ----

namespace detail {

// Accepts rank-1 [in] (treated as a single row) or rank-2 [batch x in].
inline std::pair<std::size_t, std::size_t> as_rows(const Tensor& x) {
    if (x.rank() == 1) return {1, x.shape()[0]};
    if (x.rank() == 2) return {x.shape()[0], x.shape()[1]};
    throw DimensionError("expected rank-1 or rank-2 input, got " +
                         shape_str(x.shape()));
}

}  // namespace detail

/// out = x @ W. x is [in] or [batch x in]; W is [in x out].
inline Tensor matmul(const Tensor& x, const Tensor& W) {
    auto [rows, in] = detail::as_rows(x);
    if (W.rank() != 2 || W.shape()[0] != in) {
        throw DimensionError("matmul: input " + detail::shape_str(x.shape()) +
                             " incompatible with weight " +
                             detail::shape_str(W.shape()));
    }
    std::size_t out_dim = W.shape()[1];
    std::vector<double> out(rows * out_dim, 0.0);
    const auto& xv = x.values();
    const auto& wv = W.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < in; ++k) {
            double xrk = xv[r * in + k];
            for (std::size_t j = 0; j < out_dim; ++j)
                out[r * out_dim + j] += xrk * wv[k * out_dim + j];
        }
    std::vector<std::size_t> shape =
        x.rank() == 1 ? std::vector<std::size_t>{out_dim}
                      : std::vector<std::size_t>{rows, out_dim};
    return detail::make_op(
        std::move(shape), std::move(out), {x.node(), W.node()},
        [rows = rows, in = in, out_dim](detail::Node& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            px.ensure_grad();
            pw.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < in; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < out_dim; ++j) {
                        double g = n.grad[r * out_dim + j];
                        acc += g * pw.values[k * out_dim + j];
                        pw.grad[k * out_dim + j] += px.values[r * in + k] * g;
                    }
                    px.grad[r * in + k] += acc;
                }
        });
}

/// out = x @ W + b (bias broadcast over rows).
inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
    auto [rows, in] = detail::as_rows(x);
    if (W.rank() != 2 || W.shape()[0] != in) {
        throw DimensionError("affine: input " + detail::shape_str(x.shape()) +
                             " incompatible with weight " +
                             detail::shape_str(W.shape()));
    }
    std::size_t out_dim = W.shape()[1];
    if (b.rank() != 1 || b.shape()[0] != out_dim) {
        throw DimensionError("affine: bias " + detail::shape_str(b.shape()) +
                             " incompatible with weight " +
                             detail::shape_str(W.shape()));
    }
    Tensor y = matmul(x, W);
    std::vector<double> out = y.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += b.values()[j];
    return detail::make_op(y.shape(), std::move(out), {y.node(), b.node()},
                           [rows = rows, out_dim](detail::Node& n) {
                               auto& py = *n.parents[0];
                               auto& pb = *n.parents[1];
                               py.ensure_grad();
                               pb.ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < out_dim; ++j) {
                                       double g = n.grad[r * out_dim + j];
                                       py.grad[r * out_dim + j] += g;
                                       pb.grad[j] += g;
                                   }
                           });
}

// ---- nonlinearities ----

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    return detail::make_op(x.shape(), std::move(out), {x.node()},
                           [](detail::Node& n) {
                               auto& px = *n.parents[0];
                               px.ensure_grad();
                               for (std::size_t i = 0; i < n.size(); ++i)
                                   if (px.values[i] > 0.0) px.grad[i] += n.grad[i];
                           });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 1.0 / (1.0 + std::exp(-x.values()[i]));
    return detail::make_op(x.shape(), std::move(out), {x.node()},
                           [](detail::Node& n) {
                               auto& px = *n.parents[0];
                               px.ensure_grad();
                               for (std::size_t i = 0; i < n.size(); ++i) {
                                   double y = n.values[i];
                                   px.grad[i] += n.grad[i] * y * (1.0 - y);
                               }
                           });
}

inline Tensor tanh_op(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
    return detail::make_op(x.shape(), std::move(out), {x.node()},
                           [](detail::Node& n) {
                               auto& px = *n.parents[0];
                               px.ensure_grad();
                               for (std::size_t i = 0; i < n.size(); ++i) {
                                   double y = n.values[i];
                                   px.grad[i] += n.grad[i] * (1.0 - y * y);
                               }
                           });
}

/// Max-subtracted softmax over a rank-1 logit vector; invariant under adding
/// a constant to all logits.
inline Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 1 || logits.size() < 2) {
        throw DimensionError("softmax expects a rank-1 tensor with at least 2 "
                             "entries, got " + detail::shape_str(logits.shape()));
    }
    double mx = logits.values()[0];
    for (double v : logits.values()) mx = std::max(mx, v);
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(logits.values()[i] - mx);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return detail::make_op(logits.shape(), std::move(out), {logits.node()},
                           [](detail::Node& n) {
                               auto& px = *n.parents[0];
                               px.ensure_grad();
                               double dot = 0.0;
                               for (std::size_t i = 0; i < n.size(); ++i)
                                   dot += n.grad[i] * n.values[i];
                               for (std::size_t i = 0; i < n.size(); ++i)
                                   px.grad[i] += n.values[i] * (n.grad[i] - dot);
                           });
}

inline constexpr double kLogEpsilon = 1e-12;

/// -ln(probs[label] + eps). Composed with softmax, the logit gradient is
/// probs - onehot(label) up to the epsilon guard.
inline Tensor cross_entropy(const Tensor& probs, std::size_t label) {
    if (probs.rank() != 1) {
        throw DimensionError("cross_entropy expects a rank-1 distribution, got " +
                             detail::shape_str(probs.shape()));
    }
    if (label >= probs.size()) {
        throw IndexError("cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(probs.size()) +
                         " classes");
    }
    double p = probs.values()[label] + kLogEpsilon;
    return detail::make_op({1}, {-std::log(p)}, {probs.node()},
                           [label](detail::Node& n) {
                               auto& pp = *n.parents[0];
                               pp.ensure_grad();
                               pp.grad[label] += -n.grad[0] /
                                                 (pp.values[label] + kLogEpsilon);
                           });
}

}  // namespace branchy
