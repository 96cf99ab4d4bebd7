#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <vector>

#include "domaintemp/nn.hpp"

namespace domaintemp {

struct TemperatureConfig {
  double tau_alpha = 0.1;  // baseline temperature
  double tau_beta = 0.25;  // strength of the domain-probability adjustment
  double tau_min = 0.01;   // lower clamp against numerical instability

  void validate() const {
    if (!(tau_alpha > 0)) throw DomainError("tau_alpha must be positive");
    if (!(tau_min > 0)) throw DomainError("tau_min must be positive");
    if (tau_beta < 0) throw DomainError("tau_beta must be nonnegative");
    if (tau_min > tau_alpha) throw DomainError("tau_min must not exceed tau_alpha");
  }
};

// Per-pair temperatures tau_ij; diagonal pinned to tau_alpha.
template <typename T>
struct EffectiveTemperatureMatrix {
  Tensor<T> tau;  // [N,N]
  T tau_alpha;
};

// tau_ij = max(tau_alpha + tau_beta * (1/N_D - w_ij), tau_min) for j != i.
// Weights are treated as constants: no gradient flows through them.
template <typename T>
EffectiveTemperatureMatrix<T> effective_temperatures(const Tensor<T>& weights,
                                                     const TemperatureConfig& cfg,
                                                     int num_domains) {
  cfg.validate();
  if (num_domains < 2) throw DomainError("effective_temperatures: N_D must be >= 2");
  if (weights.rank() != 2 || weights.dim(0) != weights.dim(1))
    throw ShapeError("effective_temperatures: square weight matrix required");
  const std::int64_t n = weights.dim(0);
  const T ta = static_cast<T>(cfg.tau_alpha);
  const T tb = static_cast<T>(cfg.tau_beta);
  const T tmin = static_cast<T>(cfg.tau_min);
  const T uniform = T(1) / static_cast<T>(num_domains);
  EffectiveTemperatureMatrix<T> out{Tensor<T>({n, n}), ta};
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      T w = weights.at({i, j});
      if (!(w >= T(0) && w <= T(1)))
        throw DomainError("effective_temperatures: weight outside [0,1]");
      out.tau.at({i, j}) = (i == j) ? ta : std::max(ta + tb * (uniform - w), tmin);
    }
  }
  return out;
}

template <typename T>
struct TemperatureTelemetryRow {
  int epoch = 0;
  T p05 = T(0), p50 = T(0), p95 = T(0), mean = T(0);
};

// Linear-interpolation percentile on a sorted copy.
template <typename T>
T percentile_sorted(const std::vector<T>& sorted, double p) {
  if (sorted.empty()) throw DataError("percentile of empty set");
  if (sorted.size() == 1) return sorted[0];
  double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  if (lo >= sorted.size() - 1) return sorted.back();
  double frac = pos - static_cast<double>(lo);
  return static_cast<T>(sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac);
}

// Distribution summary of the off-diagonal effective temperatures.
template <typename T>
TemperatureTelemetryRow<T> effective_temperature_telemetry(
    const EffectiveTemperatureMatrix<T>& tm, int epoch) {
  const std::int64_t n = tm.tau.dim(0);
  std::vector<T> vals;
  vals.reserve(static_cast<std::size_t>(n * (n - 1)));
  T sum = T(0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      if (i != j) {
        vals.push_back(tm.tau.at({i, j}));
        sum += tm.tau.at({i, j});
      }
  std::sort(vals.begin(), vals.end());
  TemperatureTelemetryRow<T> row;
  row.epoch = epoch;
  row.p05 = percentile_sorted(vals, 5.0);
  row.p50 = percentile_sorted(vals, 50.0);
  row.p95 = percentile_sorted(vals, 95.0);
  row.mean = sum / static_cast<T>(vals.size());
  return row;
}

namespace ops {

// Standard InfoNCE over a similarity matrix whose diagonal holds the
// positive pairs; denominator sums over the full row (j = i included).
template <typename T>
Var<T> info_nce(Var<T> s, T tau) {
  if (!(tau > T(0))) throw DomainError("info_nce: tau must be positive");
  Tape<T>& t = *s.tape;
  const auto& sv = s.value();
  if (sv.rank() != 2 || sv.dim(0) != sv.dim(1))
    throw ShapeError("info_nce: square similarity matrix required");
  const std::int64_t n = sv.dim(0);
  auto probs = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{n, n});
  T loss = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    auto row = sv.mat().row(i);
    T m = row.maxCoeff() / tau;
    T denom = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      T e = std::exp(row(j) / tau - m);
      probs->mat()(i, j) = e;
      denom += e;
    }
    probs->mat().row(i) /= denom;
    loss += -(row(i) / tau - m - std::log(denom));
  }
  loss /= static_cast<T>(n);
  bool ng = t.wants_grad(s.id);
  Var<T> o = t.push(Tensor<T>::scalar(loss), ng);
  if (ng)
    t.set_backward(o, [s, o, probs, n, tau](Tape<T>& tp) {
      T g = tp.grad_ref(o.id)[0] / (static_cast<T>(n) * tau);
      auto gs = tp.grad_ref(s.id).mat();
      gs += probs->mat() * g;
      for (std::int64_t i = 0; i < n; ++i) gs(i, i) -= g;
    });
  return o;
}

// InfoNCE with per-pair temperatures (positive term fixed at tau_alpha).
template <typename T>
Var<T> adaptive_info_nce(Var<T> s, const EffectiveTemperatureMatrix<T>& tm) {
  Tape<T>& t = *s.tape;
  const auto& sv = s.value();
  if (sv.rank() != 2 || sv.dim(0) != sv.dim(1))
    throw ShapeError("adaptive_info_nce: square similarity matrix required");
  if (!tm.tau.same_shape(sv))
    throw ShapeError("adaptive_info_nce: temperature matrix shape mismatch");
  if (!(tm.tau_alpha > T(0)))
    throw DomainError("adaptive_info_nce: tau_alpha must be positive");
  const std::int64_t n = sv.dim(0);
  auto tau = std::make_shared<Tensor<T>>(tm.tau);
  for (std::int64_t i = 0; i < n; ++i) {
    if (tau->at({i, i}) != tm.tau_alpha)
      throw DomainError("adaptive_info_nce: diagonal temperature must be tau_alpha");
    for (std::int64_t j = 0; j < n; ++j)
      if (!(tau->at({i, j}) > T(0)))
        throw DomainError("adaptive_info_nce: temperatures must be positive");
  }
  auto probs = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{n, n});
  T loss = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::int64_t j = 0; j < n; ++j)
      m = std::max(m, sv.at({i, j}) / tau->at({i, j}));
    T denom = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      T e = std::exp(sv.at({i, j}) / tau->at({i, j}) - m);
      probs->mat()(i, j) = e;
      denom += e;
    }
    probs->mat().row(i) /= denom;
    loss += -(sv.at({i, i}) / tm.tau_alpha - m - std::log(denom));
  }
  loss /= static_cast<T>(n);
  bool ng = t.wants_grad(s.id);
  Var<T> o = t.push(Tensor<T>::scalar(loss), ng);
  if (ng)
    t.set_backward(o, [s, o, probs, tau, n](Tape<T>& tp) {
      T g = tp.grad_ref(o.id)[0] / static_cast<T>(n);
      auto gs = tp.grad_ref(s.id).mat();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
          T d = (probs->mat()(i, j) - (i == j ? T(1) : T(0))) / tau->at({i, j});
          gs(i, j) += g * d;
        }
      }
    });
  return o;
}

// InfoNCE restricted to negatives from the anchor's own domain. The positive
// pair is always part of the denominator; an anchor with no same-domain
// negatives contributes a zero loss term.
template <typename T>
Var<T> same_domain_info_nce(Var<T> s, const std::vector<std::int32_t>& domain_ids,
                            T tau) {
  if (!(tau > T(0))) throw DomainError("same_domain_info_nce: tau must be positive");
  Tape<T>& t = *s.tape;
  const auto& sv = s.value();
  if (sv.rank() != 2 || sv.dim(0) != sv.dim(1) ||
      domain_ids.size() != static_cast<std::size_t>(sv.dim(0)))
    throw ShapeError("same_domain_info_nce: shape mismatch");
  const std::int64_t n = sv.dim(0);
  auto probs = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{n, n});
  T loss = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    T m = sv.at({i, i}) / tau;
    for (std::int64_t j = 0; j < n; ++j)
      if (j != i && domain_ids[j] == domain_ids[i])
        m = std::max(m, sv.at({i, j}) / tau);
    T denom = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      bool in = (j == i) || domain_ids[j] == domain_ids[i];
      T e = in ? std::exp(sv.at({i, j}) / tau - m) : T(0);
      probs->mat()(i, j) = e;
      denom += e;
    }
    probs->mat().row(i) /= denom;
    loss += -(sv.at({i, i}) / tau - m - std::log(denom));
  }
  loss /= static_cast<T>(n);
  bool ng = t.wants_grad(s.id);
  Var<T> o = t.push(Tensor<T>::scalar(loss), ng);
  if (ng)
    t.set_backward(o, [s, o, probs, n, tau](Tape<T>& tp) {
      T g = tp.grad_ref(o.id)[0] / (static_cast<T>(n) * tau);
      auto gs = tp.grad_ref(s.id).mat();
      gs += probs->mat() * g;
      for (std::int64_t i = 0; i < n; ++i) gs(i, i) -= g;
    });
  return o;
}

// Biased empirical MMD^2 with a Gaussian kernel, averaged over unordered
// pairs of domains present with >= 2 samples. Bandwidth gamma is the median
// pairwise squared distance over the whole batch, frozen (no gradient).
// k(u,v) = exp(-|u-v|^2 / gamma).
template <typename T>
Var<T> mmd_penalty(Var<T> z, const std::vector<std::int32_t>& domain_ids,
                   bool* all_pairs_skipped = nullptr) {
  Tape<T>& t = *z.tape;
  const auto& zv = z.value();
  if (zv.rank() != 2 || domain_ids.size() != static_cast<std::size_t>(zv.dim(0)))
    throw ShapeError("mmd_penalty: shape mismatch");
  const std::int64_t n = zv.dim(0);

  // group sample indices by domain
  std::vector<std::int32_t> uniq;
  for (auto d : domain_ids)
    if (std::find(uniq.begin(), uniq.end(), d) == uniq.end()) uniq.push_back(d);
  std::sort(uniq.begin(), uniq.end());
  std::vector<std::vector<std::int64_t>> groups;
  for (auto d : uniq) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < n; ++i)
      if (domain_ids[i] == d) idx.push_back(i);
    if (idx.size() >= 2) groups.push_back(std::move(idx));
  }
  std::size_t num_pairs = groups.size() >= 2 ? groups.size() * (groups.size() - 1) / 2 : 0;
  if (all_pairs_skipped) *all_pairs_skipped = (num_pairs == 0);
  if (num_pairs == 0) return t.push(Tensor<T>::scalar(T(0)), false);

  // pairwise squared distances and median-heuristic bandwidth
  auto d2 = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{n, n});
  std::vector<T> offdiag;
  offdiag.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (std::int64_t i = 0; i < n; ++i) {
    d2->mat()(i, i) = T(0);
    for (std::int64_t j = i + 1; j < n; ++j) {
      T d = (zv.mat().row(i) - zv.mat().row(j)).squaredNorm();
      d2->mat()(i, j) = d;
      d2->mat()(j, i) = d;
      offdiag.push_back(d);
    }
  }
  std::sort(offdiag.begin(), offdiag.end());
  T med;
  std::size_t cnt = offdiag.size();
  if (cnt % 2 == 1)
    med = offdiag[cnt / 2];
  else
    med = (offdiag[cnt / 2 - 1] + offdiag[cnt / 2]) / T(2);
  T gamma = med > T(0) ? med : T(1);

  auto kernel = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{n, n});
  kernel->array() = (-d2->array() / gamma).exp();

  T total = T(0);
  auto group_pairs = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
  for (std::size_t a = 0; a < groups.size(); ++a) {
    for (std::size_t b = a + 1; b < groups.size(); ++b) {
      const auto& ga = groups[a];
      const auto& gb = groups[b];
      T saa = T(0), sbb = T(0), sab = T(0);
      for (auto i : ga)
        for (auto j : ga) saa += kernel->mat()(i, j);
      for (auto i : gb)
        for (auto j : gb) sbb += kernel->mat()(i, j);
      for (auto i : ga)
        for (auto j : gb) sab += kernel->mat()(i, j);
      T na = static_cast<T>(ga.size()), nb = static_cast<T>(gb.size());
      total += saa / (na * na) + sbb / (nb * nb) - T(2) * sab / (na * nb);
      group_pairs->push_back({a, b});
    }
  }
  T penalty = total / static_cast<T>(num_pairs);
  if (penalty < T(0)) penalty = T(0);  // guard against rounding at ~0

  bool ng = t.wants_grad(z.id);
  auto groups_sh = std::make_shared<std::vector<std::vector<std::int64_t>>>(groups);
  Var<T> o = t.push(Tensor<T>::scalar(penalty), ng);
  if (ng)
    t.set_backward(o, [z, o, kernel, groups_sh, group_pairs, gamma,
                       num_pairs](Tape<T>& tp) {
      const T g = tp.grad_ref(o.id)[0] / static_cast<T>(num_pairs);
      const auto& zm = z.value().mat();
      auto gz = tp.grad_ref(z.id).mat();
      const T c = T(-2) / gamma;  // d/du exp(-|u-v|^2/gamma) = c*k*(u-v)
      for (auto [a, b] : *group_pairs) {
        const auto& ga = (*groups_sh)[a];
        const auto& gb = (*groups_sh)[b];
        T na = static_cast<T>(ga.size()), nb = static_cast<T>(gb.size());
        for (auto i : ga) {
          for (auto j : ga)
            gz.row(i) += g * (T(2) / (na * na)) * c * kernel->mat()(i, j) *
                         (zm.row(i) - zm.row(j));
          for (auto j : gb)
            gz.row(i) -= g * (T(2) / (na * nb)) * c * kernel->mat()(i, j) *
                         (zm.row(i) - zm.row(j));
        }
        for (auto i : gb) {
          for (auto j : gb)
            gz.row(i) += g * (T(2) / (nb * nb)) * c * kernel->mat()(i, j) *
                         (zm.row(i) - zm.row(j));
          for (auto j : ga)
            gz.row(i) -= g * (T(2) / (na * nb)) * c * kernel->mat()(i, j) *
                         (zm.row(i) - zm.row(j));
        }
      }
    });
  return o;
}

}  // namespace ops

// Adversarial domain-matching term. The adversary is trained to classify
// domains from embeddings; the encoder receives the adversary's input
// gradient scaled by -lambda (gradient reversal), so one backward pass
// updates both sides. The returned value is the adversary's cross-entropy.
template <typename T>
Var<T> dann_adversary_loss(Tape<T>& t, Var<T> z,
                           const std::vector<std::int32_t>& domain_ids,
                           LinearHead<T>& adversary, T lambda) {
  if (adversary.in_dim() != z.value().dim(1))
    throw ShapeError("dann_adversary_loss: adversary input dim mismatch");
  Var<T> rev = ops::grad_reverse(z, lambda);
  Var<T> logits = adversary.forward(t, rev);
  return ops::cross_entropy(logits, domain_ids);
}

}  // namespace domaintemp
