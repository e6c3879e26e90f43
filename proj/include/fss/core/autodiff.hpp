#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fss/core/tensor.hpp"

namespace fss {

// Reverse-mode autodiff over Tensor<Scalar>. A graph is built per forward
// pass out of shared_ptr nodes; parameters are leaves that outlive the graph
// and collect gradients in `grad` on every backward() call.
template <typename Scalar>
struct NodeT {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward_fn;

  bool has_grad() const { return grad.size() == value.size() && grad.size() > 0; }
};

template <typename Scalar>
using VarT = std::shared_ptr<NodeT<Scalar>>;

using Var = VarT<double>;

template <typename Scalar>
VarT<Scalar> make_leaf(Tensor<Scalar> value) {
  auto n = std::make_shared<NodeT<Scalar>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

template <typename Scalar>
VarT<Scalar> make_const(Tensor<Scalar> value) {
  auto n = std::make_shared<NodeT<Scalar>>();
  n->value = std::move(value);
  n->requires_grad = false;
  return n;
}

template <typename Scalar>
VarT<Scalar> make_op(Tensor<Scalar> value, std::vector<VarT<Scalar>> parents,
                     std::function<void(NodeT<Scalar>&)> backward_fn) {
  auto n = std::make_shared<NodeT<Scalar>>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

// Adds `delta` into the parent's gradient accumulator (no-op for constants).
template <typename Scalar, typename Expr>
void accumulate_grad(const VarT<Scalar>& node, const Expr& delta) {
  if (!node->requires_grad) return;
  if (!node->has_grad()) node->grad = Tensor<Scalar>(node->value.shape());
  node->grad.array() += delta;
}

// Backpropagates from a scalar root. Gradients of every node in this graph
// (including reused leaves) are reset first, so calling backward() per step
// doubles as zero_grad for the parameters involved.
template <typename Scalar>
void backward(const VarT<Scalar>& root) {
  if (root->value.size() != 1) throw InvalidInputError("backward: root must be scalar");

  std::vector<NodeT<Scalar>*> topo;
  std::unordered_set<NodeT<Scalar>*> visited;
  struct Frame {
    NodeT<Scalar>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      NodeT<Scalar>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  for (NodeT<Scalar>* n : topo) n->grad = Tensor<Scalar>();
  root->grad = Tensor<Scalar>(root->value.shape());
  root->grad.array().setConstant(Scalar(1));

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    NodeT<Scalar>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

namespace detail {

template <typename Scalar>
void check_same_or_scalar(const VarT<Scalar>& a, const VarT<Scalar>& b, const char* op) {
  if (!a->value.same_shape(b->value) && a->value.size() != 1 && b->value.size() != 1)
    throw InvalidInputError(std::string(op) + ": shape mismatch");
}

// Output shape under scalar broadcasting. When both operands hold a single
// element the higher-rank shape wins, so [1,1] (x) scalar stays a matrix.
template <typename Scalar>
const Shape& broadcast_shape(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  if (a->value.size() == 1 && b->value.size() > 1) return b->value.shape();
  if (b->value.size() == 1 && a->value.size() > 1) return a->value.shape();
  return a->value.rank() >= b->value.rank() ? a->value.shape() : b->value.shape();
}

}  // namespace detail

// ---- elementwise arithmetic (scalar operands broadcast) ----

template <typename Scalar>
VarT<Scalar> add(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::check_same_or_scalar(a, b, "add");
  const bool sa = a->value.size() == 1, sb = b->value.size() == 1;
  Tensor<Scalar> out(detail::broadcast_shape(a, b));
  if (sa)
    out.array() = a->value.value() + b->value.array();
  else if (sb)
    out.array() = a->value.array() + b->value.value();
  else
    out.array() = a->value.array() + b->value.array();
  return make_op<Scalar>(std::move(out), {a, b}, [a, b, sa, sb](NodeT<Scalar>& n) {
    if (sa && n.value.size() > 1)
      accumulate_grad(a, n.grad.array().sum());
    else
      accumulate_grad(a, n.grad.array());
    if (sb && n.value.size() > 1)
      accumulate_grad(b, n.grad.array().sum());
    else
      accumulate_grad(b, n.grad.array());
  });
}

template <typename Scalar>
VarT<Scalar> sub(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::check_same_or_scalar(a, b, "sub");
  const bool sa = a->value.size() == 1, sb = b->value.size() == 1;
  Tensor<Scalar> out(detail::broadcast_shape(a, b));
  if (sa)
    out.array() = a->value.value() - b->value.array();
  else if (sb)
    out.array() = a->value.array() - b->value.value();
  else
    out.array() = a->value.array() - b->value.array();
  return make_op<Scalar>(std::move(out), {a, b}, [a, b, sa, sb](NodeT<Scalar>& n) {
    if (sa && n.value.size() > 1)
      accumulate_grad(a, n.grad.array().sum());
    else
      accumulate_grad(a, n.grad.array());
    if (sb && n.value.size() > 1)
      accumulate_grad(b, -n.grad.array().sum());
    else
      accumulate_grad(b, -n.grad.array());
  });
}

template <typename Scalar>
VarT<Scalar> mul(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::check_same_or_scalar(a, b, "mul");
  const bool sa = a->value.size() == 1, sb = b->value.size() == 1;
  Tensor<Scalar> out(detail::broadcast_shape(a, b));
  if (sa)
    out.array() = a->value.value() * b->value.array();
  else if (sb)
    out.array() = a->value.array() * b->value.value();
  else
    out.array() = a->value.array() * b->value.array();
  return make_op<Scalar>(std::move(out), {a, b}, [a, b, sa, sb](NodeT<Scalar>& n) {
    if (sa)
      accumulate_grad(a, (n.grad.array() * b->value.array()).sum());
    else if (sb)
      accumulate_grad(a, n.grad.array() * b->value.value());
    else
      accumulate_grad(a, n.grad.array() * b->value.array());
    if (sb)
      accumulate_grad(b, (n.grad.array() * a->value.array()).sum());
    else if (sa)
      accumulate_grad(b, n.grad.array() * a->value.value());
    else
      accumulate_grad(b, n.grad.array() * a->value.array());
  });
}

template <typename Scalar>
VarT<Scalar> div(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::check_same_or_scalar(a, b, "div");
  const bool sa = a->value.size() == 1, sb = b->value.size() == 1;
  Tensor<Scalar> out(detail::broadcast_shape(a, b));
  if (sa)
    out.array() = a->value.value() / b->value.array();
  else if (sb)
    out.array() = a->value.array() / b->value.value();
  else
    out.array() = a->value.array() / b->value.array();
  return make_op<Scalar>(std::move(out), {a, b}, [a, b, sa, sb](NodeT<Scalar>& n) {
    if (sa)
      accumulate_grad(a, (n.grad.array() / b->value.array()).sum());
    else if (sb)
      accumulate_grad(a, n.grad.array() / b->value.value());
    else
      accumulate_grad(a, n.grad.array() / b->value.array());
    // d(a/b)/db = -a / b^2
    if (sb)
      accumulate_grad(b, -(n.grad.array() * a->value.array()).sum() /
                             (b->value.value() * b->value.value()));
    else if (sa)
      accumulate_grad(b, -n.grad.array() * a->value.value() /
                             (b->value.array() * b->value.array()));
    else
      accumulate_grad(b, -n.grad.array() * a->value.array() /
                             (b->value.array() * b->value.array()));
  });
}

template <typename Scalar>
VarT<Scalar> add_scalar(const VarT<Scalar>& a, Scalar c) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array() + c;
  return make_op<Scalar>(std::move(out), {a},
                         [a](NodeT<Scalar>& n) { accumulate_grad(a, n.grad.array()); });
}

template <typename Scalar>
VarT<Scalar> mul_scalar(const VarT<Scalar>& a, Scalar c) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array() * c;
  return make_op<Scalar>(std::move(out), {a},
                         [a, c](NodeT<Scalar>& n) { accumulate_grad(a, n.grad.array() * c); });
}

template <typename Scalar>
VarT<Scalar> neg(const VarT<Scalar>& a) {
  return mul_scalar(a, Scalar(-1));
}

template <typename Scalar>
VarT<Scalar> square(const VarT<Scalar>& a) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array().square();
  return make_op<Scalar>(std::move(out), {a}, [a](NodeT<Scalar>& n) {
    accumulate_grad(a, Scalar(2) * n.grad.array() * a->value.array());
  });
}

template <typename Scalar>
VarT<Scalar> exp(const VarT<Scalar>& a) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array().exp();
  return make_op<Scalar>(std::move(out), {a}, [a](NodeT<Scalar>& n) {
    accumulate_grad(a, n.grad.array() * n.value.array());
  });
}

template <typename Scalar>
VarT<Scalar> log(const VarT<Scalar>& a) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array().log();
  return make_op<Scalar>(std::move(out), {a}, [a](NodeT<Scalar>& n) {
    accumulate_grad(a, n.grad.array() / a->value.array());
  });
}

template <typename Scalar>
VarT<Scalar> sqrt(const VarT<Scalar>& a) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array().sqrt();
  return make_op<Scalar>(std::move(out), {a}, [a](NodeT<Scalar>& n) {
    accumulate_grad(a, n.grad.array() / (Scalar(2) * n.value.array().max(Scalar(1e-300))));
  });
}

template <typename Scalar>
VarT<Scalar> relu(const VarT<Scalar>& a) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array().max(Scalar(0));
  return make_op<Scalar>(std::move(out), {a}, [a](NodeT<Scalar>& n) {
    accumulate_grad(a, n.grad.array() * (a->value.array() > Scalar(0)).template cast<Scalar>());
  });
}

template <typename Scalar>
VarT<Scalar> sigmoid(const VarT<Scalar>& a) {
  Tensor<Scalar> out(a->value.shape());
  const auto& x = a->value.array();
  out.array() = (x >= Scalar(0))
                    .select(Scalar(1) / (Scalar(1) + (-x).exp()),
                            x.exp() / (Scalar(1) + x.exp()));
  return make_op<Scalar>(std::move(out), {a}, [a](NodeT<Scalar>& n) {
    accumulate_grad(a, n.grad.array() * n.value.array() * (Scalar(1) - n.value.array()));
  });
}

// max(a, c) elementwise against a constant (used for variance clamping).
template <typename Scalar>
VarT<Scalar> clamp_min(const VarT<Scalar>& a, Scalar c) {
  Tensor<Scalar> out(a->value.shape());
  out.array() = a->value.array().max(c);
  return make_op<Scalar>(std::move(out), {a}, [a, c](NodeT<Scalar>& n) {
    accumulate_grad(a, n.grad.array() * (a->value.array() > c).template cast<Scalar>());
  });
}

// ---- reductions ----

template <typename Scalar>
VarT<Scalar> sum(const VarT<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a->value.array().sum());
  return make_op<Scalar>(std::move(out), {a},
                         [a](NodeT<Scalar>& n) { accumulate_grad(a, n.grad.value()); });
}

template <typename Scalar>
VarT<Scalar> mean(const VarT<Scalar>& a) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a->value.size());
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a->value.array().sum() * inv);
  return make_op<Scalar>(std::move(out), {a}, [a, inv](NodeT<Scalar>& n) {
    accumulate_grad(a, n.grad.value() * inv);
  });
}

// ---- linear algebra ----

template <typename Scalar>
VarT<Scalar> matmul(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
    throw InvalidInputError("matmul: incompatible shapes");
  Tensor<Scalar> out(Shape{a->value.dim(0), b->value.dim(1)});
  out.mat().noalias() = a->value.mat() * b->value.mat();
  return make_op<Scalar>(std::move(out), {a, b}, [a, b](NodeT<Scalar>& n) {
    if (a->requires_grad) {
      if (!a->has_grad()) a->grad = Tensor<Scalar>(a->value.shape());
      a->grad.mat().noalias() += n.grad.mat() * b->value.mat().transpose();
    }
    if (b->requires_grad) {
      if (!b->has_grad()) b->grad = Tensor<Scalar>(b->value.shape());
      b->grad.mat().noalias() += a->value.mat().transpose() * n.grad.mat();
    }
  });
}

template <typename Scalar>
VarT<Scalar> transpose(const VarT<Scalar>& a) {
  if (a->value.rank() != 2) throw InvalidInputError("transpose: rank-2 required");
  Tensor<Scalar> out(Shape{a->value.dim(1), a->value.dim(0)});
  out.mat() = a->value.mat().transpose();
  return make_op<Scalar>(std::move(out), {a}, [a](NodeT<Scalar>& n) {
    if (!a->has_grad()) a->grad = Tensor<Scalar>(a->value.shape());
    a->grad.mat() += n.grad.mat().transpose();
  });
}

// M[r,c] + v[c]  (v rank-1 of length cols)
template <typename Scalar>
VarT<Scalar> add_rowvec(const VarT<Scalar>& m, const VarT<Scalar>& v) {
  if (m->value.rank() != 2 || v->value.rank() != 1 || v->value.dim(0) != m->value.dim(1))
    throw InvalidInputError("add_rowvec: shape mismatch");
  Tensor<Scalar> out(m->value.shape());
  out.mat() = m->value.mat();
  out.mat().rowwise() +=
      Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(v->value.data(),
                                                                 v->value.dim(0));
  return make_op<Scalar>(std::move(out), {m, v}, [m, v](NodeT<Scalar>& n) {
    accumulate_grad(m, n.grad.array());
    if (v->requires_grad) {
      if (!v->has_grad()) v->grad = Tensor<Scalar>(v->value.shape());
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(v->grad.data(), v->value.dim(0)) +=
          n.grad.mat().colwise().sum();
    }
  });
}

// M[r,c] + v[r]
template <typename Scalar>
VarT<Scalar> add_colvec(const VarT<Scalar>& m, const VarT<Scalar>& v) {
  if (m->value.rank() != 2 || v->value.rank() != 1 || v->value.dim(0) != m->value.dim(0))
    throw InvalidInputError("add_colvec: shape mismatch");
  Tensor<Scalar> out(m->value.shape());
  out.mat() = m->value.mat();
  out.mat().colwise() +=
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(v->value.data(),
                                                                 v->value.dim(0));
  return make_op<Scalar>(std::move(out), {m, v}, [m, v](NodeT<Scalar>& n) {
    accumulate_grad(m, n.grad.array());
    if (v->requires_grad) {
      if (!v->has_grad()) v->grad = Tensor<Scalar>(v->value.shape());
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(v->grad.data(), v->value.dim(0)) +=
          n.grad.mat().rowwise().sum();
    }
  });
}

// Row-wise squared L2 norms of a rank-2 tensor -> rank-1.
template <typename Scalar>
VarT<Scalar> rowwise_sqnorm(const VarT<Scalar>& m) {
  if (m->value.rank() != 2) throw InvalidInputError("rowwise_sqnorm: rank-2 required");
  Tensor<Scalar> out(Shape{m->value.dim(0)});
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(out.data(), out.size()) =
      m->value.mat().rowwise().squaredNorm();
  return make_op<Scalar>(std::move(out), {m}, [m](NodeT<Scalar>& n) {
    if (!m->has_grad()) m->grad = Tensor<Scalar>(m->value.shape());
    for (Index r = 0; r < m->value.dim(0); ++r)
      m->grad.mat().row(r) += Scalar(2) * n.grad[r] * m->value.mat().row(r);
  });
}

// M + s * I for scalar variable s.
template <typename Scalar>
VarT<Scalar> add_scaled_identity(const VarT<Scalar>& m, const VarT<Scalar>& s) {
  if (m->value.rank() != 2 || m->value.dim(0) != m->value.dim(1) || s->value.size() != 1)
    throw InvalidInputError("add_scaled_identity: square matrix and scalar required");
  Tensor<Scalar> out = m->value;
  out.mat().diagonal().array() += s->value.value();
  return make_op<Scalar>(std::move(out), {m, s}, [m, s](NodeT<Scalar>& n) {
    accumulate_grad(m, n.grad.array());
    accumulate_grad(s, n.grad.mat().diagonal().sum());
  });
}

// Reshape (copies; shapes are small relative to the matmuls around them).
template <typename Scalar>
VarT<Scalar> reshape(const VarT<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a->value.reshaped(std::move(shape));
  return make_op<Scalar>(std::move(out), {a},
                         [a](NodeT<Scalar>& n) { accumulate_grad(a, n.grad.array()); });
}

// Rows normalized to unit L2 norm.
template <typename Scalar>
VarT<Scalar> l2_normalize_rows(const VarT<Scalar>& m, Scalar eps = Scalar(1e-12)) {
  if (m->value.rank() != 2) throw InvalidInputError("l2_normalize_rows: rank-2 required");
  Tensor<Scalar> out(m->value.shape());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms =
      m->value.mat().rowwise().norm().cwiseMax(eps);
  out.mat() = m->value.mat().array().colwise() / norms.array();
  return make_op<Scalar>(std::move(out), {m}, [m, norms](NodeT<Scalar>& n) {
    if (!m->has_grad()) m->grad = Tensor<Scalar>(m->value.shape());
    // dx = (dy - y * <dy, y>) / ||x||
    for (Index r = 0; r < m->value.dim(0); ++r) {
      auto y = n.value.mat().row(r);
      auto dy = n.grad.mat().row(r);
      m->grad.mat().row(r) += (dy - y * dy.dot(y)) / norms(r);
    }
  });
}

// Mean cross-entropy of row-wise softmax against integer targets.
// logits: [R, C]; targets: length R with values in [0, C).
template <typename Scalar>
VarT<Scalar> row_softmax_nll(const VarT<Scalar>& logits, std::vector<int> targets) {
  if (logits->value.rank() != 2 ||
      static_cast<Index>(targets.size()) != logits->value.dim(0))
    throw InvalidInputError("row_softmax_nll: targets must match rows");
  const Index rows = logits->value.dim(0);
  auto lm = logits->value.mat();
  Scalar loss = 0;
  for (Index r = 0; r < rows; ++r) {
    const Scalar mx = lm.row(r).maxCoeff();
    const Scalar lse = mx + std::log((lm.row(r).array() - mx).exp().sum());
    loss += lse - lm(r, targets[static_cast<size_t>(r)]);
  }
  loss /= static_cast<Scalar>(rows);
  return make_op<Scalar>(Tensor<Scalar>::scalar(loss), {logits},
                         [logits, targets = std::move(targets), rows](NodeT<Scalar>& n) {
                           if (!logits->has_grad())
                             logits->grad = Tensor<Scalar>(logits->value.shape());
                           const Scalar g = n.grad.value() / static_cast<Scalar>(rows);
                           auto lm = logits->value.mat();
                           auto gm = logits->grad.mat();
                           for (Index r = 0; r < rows; ++r) {
                             const Scalar mx = lm.row(r).maxCoeff();
                             Eigen::Matrix<Scalar, 1, Eigen::Dynamic> p =
                                 (lm.row(r).array() - mx).exp();
                             p /= p.sum();
                             gm.row(r) += g * p;
                             gm(r, targets[static_cast<size_t>(r)]) -= g;
                           }
                         });
}

// Mean two-term binary cross-entropy against a constant target in {0,1},
// with probabilities clamped to [eps, 1-eps].
template <typename Scalar>
VarT<Scalar> bce_mean(const VarT<Scalar>& probs, const Tensor<Scalar>& target, Scalar eps) {
  if (!probs->value.same_shape(target)) throw InvalidInputError("bce_mean: shape mismatch");
  const auto p = probs->value.array().max(eps).min(Scalar(1) - eps);
  const auto& t = target.array();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(target.size());
  const Scalar loss = -((t * p.log() + (Scalar(1) - t) * (Scalar(1) - p).log()).sum()) * inv;
  return make_op<Scalar>(Tensor<Scalar>::scalar(loss), {probs},
                         [probs, target, eps, inv](NodeT<Scalar>& n) {
                           const auto raw = probs->value.array();
                           const auto pc = raw.max(eps).min(Scalar(1) - eps);
                           const auto& t = target.array();
                           const auto inside =
                               (raw >= eps && raw <= Scalar(1) - eps).template cast<Scalar>();
                           accumulate_grad(
                               probs, n.grad.value() * inv * inside *
                                          ((pc - t) / (pc * (Scalar(1) - pc))));
                         });
}

}  // namespace fss
