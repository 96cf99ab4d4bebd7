#pragma once

#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "domaintemp/rng.hpp"
#include "domaintemp/tensor.hpp"

namespace domaintemp {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape())) {}

  void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), T(0)); }
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::int32_t id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  const std::vector<std::int64_t>& shape() const { return value().shape(); }
};

// Reverse-mode tape. One tape records one forward computation; backward()
// consumes it. Gradients of bound parameters accumulate into Parameter::grad
// via flush_param_grads().
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> leaf(Tensor<T> value, bool needs_grad = false) {
    return push(std::move(value), grad_enabled_ && needs_grad);
  }

  Var<T> bind(Parameter<T>& p) {
    Var<T> v = push(p.value, grad_enabled_);
    if (grad_enabled_) bindings_.push_back({&p, v.id});
    return v;
  }

  Var<T> push(Tensor<T> value, bool needs_grad) {
#ifndef NDEBUG
    if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
#endif
    nodes_.push_back(Node{std::move(value), Tensor<T>(), nullptr, needs_grad, false});
    return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  void set_backward(Var<T> v, std::function<void(Tape&)> fn) {
    nodes_[v.id].backward = std::move(fn);
  }

  const Tensor<T>& value(std::int32_t id) const { return nodes_[id].value; }
  bool wants_grad(std::int32_t id) const { return nodes_[id].needs_grad; }

  // Gradient buffer, allocated (zeroed) on first touch.
  Tensor<T>& grad_ref(std::int32_t id) {
    Node& n = nodes_[id];
    if (!n.grad_allocated) {
      n.grad = Tensor<T>::zeros(n.value.shape());
      n.grad_allocated = true;
    }
    return n.grad;
  }
  bool has_grad(std::int32_t id) const { return nodes_[id].grad_allocated; }

  void backward(Var<T> loss) {
    if (consumed_) throw UsageError("backward called on a consumed tape");
    if (!grad_enabled_) throw UsageError("backward on a no-grad tape");
    if (nodes_[loss.id].value.size() != 1)
      throw UsageError("backward requires a scalar loss");
    consumed_ = true;
    grad_ref(loss.id)[0] = T(1);
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad_allocated) n.backward(*this);
    }
  }

  void flush_param_grads() {
    for (auto& b : bindings_) {
      if (has_grad(b.node)) b.param->grad.array() += nodes_[b.node].grad.array();
    }
  }

  // Gradient w.r.t. an arbitrary node after backward (zeros if unreachable).
  Tensor<T> grad_of(Var<T> v) {
    if (!consumed_) throw UsageError("grad_of before backward");
    if (has_grad(v.id)) return nodes_[v.id].grad;
    return Tensor<T>::zeros(nodes_[v.id].value.shape());
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&)> backward;
    bool needs_grad = false;
    bool grad_allocated = false;
  };
  struct Binding {
    Parameter<T>* param;
    std::int32_t node;
  };

  std::deque<Node> nodes_;
  std::vector<Binding> bindings_;
  bool grad_enabled_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops.

namespace ops {

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.value().shape_str() +
                     " vs " + b.value().shape_str());
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value();
  out.array() += b.value().array();
  bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, b, o](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      if (tp.wants_grad(a.id)) tp.grad_ref(a.id).array() += g.array();
      if (tp.wants_grad(b.id)) tp.grad_ref(b.id).array() += g.array();
    });
  return o;
}

// a + alpha * b; shapes must agree (both may be scalars).
template <typename T>
Var<T> add_scaled(Var<T> a, Var<T> b, T alpha) {
  check_same_shape(a, b, "add_scaled");
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value();
  out.array() += alpha * b.value().array();
  bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, b, o, alpha](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      if (tp.wants_grad(a.id)) tp.grad_ref(a.id).array() += g.array();
      if (tp.wants_grad(b.id)) tp.grad_ref(b.id).array() += alpha * g.array();
    });
  return o;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mul");
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value();
  out.array() *= b.value().array();
  bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, b, o](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      if (tp.wants_grad(a.id)) tp.grad_ref(a.id).array() += g.array() * b.value().array();
      if (tp.wants_grad(b.id)) tp.grad_ref(b.id).array() += g.array() * a.value().array();
    });
  return o;
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value();
  out.array() *= c;
  bool ng = t.wants_grad(a.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, o, c](Tape<T>& tp) {
      tp.grad_ref(a.id).array() += c * tp.grad_ref(o.id).array();
    });
  return o;
}

template <typename T>
Var<T> reshape(Var<T> a, std::vector<std::int64_t> shape) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value().reshaped(shape);
  bool ng = t.wants_grad(a.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, o](Tape<T>& tp) {
      tp.grad_ref(a.id).array() += tp.grad_ref(o.id).array();
    });
  return o;
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value();
  out.array() = out.array().max(T(0));
  bool ng = t.wants_grad(a.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, o](Tape<T>& tp) {
      const auto& y = tp.value(o.id);
      tp.grad_ref(a.id).array() +=
          tp.grad_ref(o.id).array() * (y.array() > T(0)).template cast<T>();
    });
  return o;
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = Tensor<T>::scalar(a.value().array().sum());
  bool ng = t.wants_grad(a.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, o](Tape<T>& tp) {
      tp.grad_ref(a.id).array() += tp.grad_ref(o.id)[0];
    });
  return o;
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  T inv = T(1) / static_cast<T>(a.value().size());
  return scale(sum_all(a), inv);
}

// Identity forward; backward multiplies the incoming gradient by -lambda.
template <typename T>
Var<T> grad_reverse(Var<T> a, T lambda) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value();
  bool ng = t.wants_grad(a.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, o, lambda](Tape<T>& tp) {
      tp.grad_ref(a.id).array() += (-lambda) * tp.grad_ref(o.id).array();
    });
  return o;
}

// x: [N,D] row-major, w: [D,M], b: [M]  ->  [N,M]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) ||
      bv.size() != static_cast<std::size_t>(wv.dim(1)))
    throw ShapeError("linear: incompatible shapes");
  std::int64_t n = xv.dim(0), m = wv.dim(1);
  Tensor<T> out({n, m});
  out.mat().noalias() = xv.mat() * wv.mat();
  out.mat().rowwise() +=
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data(), m);
  bool ng = t.wants_grad(x.id) || t.wants_grad(w.id) || t.wants_grad(b.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [x, w, b, o](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      if (tp.wants_grad(x.id))
        tp.grad_ref(x.id).mat().noalias() += g.mat() * w.value().mat().transpose();
      if (tp.wants_grad(w.id))
        tp.grad_ref(w.id).mat().noalias() += x.value().mat().transpose() * g.mat();
      if (tp.wants_grad(b.id)) {
        auto gb = tp.grad_ref(b.id).array();
        gb += g.mat().colwise().sum().array().transpose();
      }
    });
  return o;
}

// a: [N,K], b: [M,K]  ->  a * b^T : [N,M]
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1))
    throw ShapeError("matmul_nt: incompatible shapes");
  Tensor<T> out({av.dim(0), bv.dim(0)});
  out.mat().noalias() = av.mat() * bv.mat().transpose();
  bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [a, b, o](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      if (tp.wants_grad(a.id))
        tp.grad_ref(a.id).mat().noalias() += g.mat() * b.value().mat();
      if (tp.wants_grad(b.id))
        tp.grad_ref(b.id).mat().noalias() += g.mat().transpose() * a.value().mat();
    });
  return o;
}

// Rows scaled to unit Euclidean norm. Zero-norm rows are degenerate inputs.
template <typename T>
Var<T> rows_normalize(Var<T> x) {
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("rows_normalize: rank-2 input required");
  std::int64_t n = xv.dim(0), k = xv.dim(1);
  Tensor<T> out({n, k});
  auto inv_norms = std::make_shared<std::vector<T>>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    T nrm = xv.mat().row(i).norm();
    if (!(nrm > T(1e-12)))
      throw DataError("rows_normalize: zero-norm embedding row " + std::to_string(i));
    (*inv_norms)[i] = T(1) / nrm;
    out.mat().row(i) = xv.mat().row(i) * (*inv_norms)[i];
  }
  bool ng = t.wants_grad(x.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [x, o, inv_norms](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      const auto& y = tp.value(o.id);
      auto gx = tp.grad_ref(x.id).mat();
      for (std::int64_t i = 0; i < y.dim(0); ++i) {
        T dot = y.mat().row(i).dot(g.mat().row(i));
        gx.row(i) += (*inv_norms)[i] * (g.mat().row(i) - dot * y.mat().row(i));
      }
    });
  return o;
}

// Mean over the batch of -log softmax(logits)[target].
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::int32_t>& targets) {
  Tape<T>& t = *logits.tape;
  const auto& lv = logits.value();
  if (lv.rank() != 2 || static_cast<std::size_t>(lv.dim(0)) != targets.size())
    throw ShapeError("cross_entropy: logits/targets mismatch");
  std::int64_t n = lv.dim(0), c = lv.dim(1);
  for (auto tgt : targets)
    if (tgt < 0 || tgt >= c) throw DomainError("cross_entropy: target out of range");
  // softmax probabilities kept for the backward pass
  auto probs = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{n, c});
  T loss = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    auto row = lv.mat().row(i);
    T m = row.maxCoeff();
    T denom = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      T e = std::exp(row(j) - m);
      probs->mat()(i, j) = e;
      denom += e;
    }
    probs->mat().row(i) /= denom;
    loss += -(row(targets[i]) - m - std::log(denom));
  }
  loss /= static_cast<T>(n);
  bool ng = t.wants_grad(logits.id);
  Var<T> o = t.push(Tensor<T>::scalar(loss), ng);
  if (ng)
    t.set_backward(o, [logits, o, probs, targets](Tape<T>& tp) {
      T g = tp.grad_ref(o.id)[0];
      auto gl = tp.grad_ref(logits.id).mat();
      std::int64_t n2 = probs->dim(0);
      T invn = T(1) / static_cast<T>(n2);
      gl += probs->mat() * (g * invn);
      for (std::int64_t i = 0; i < n2; ++i) gl(i, targets[i]) -= g * invn;
    });
  return o;
}

}  // namespace ops

}  // namespace domaintemp
