#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "domaintemp/tape.hpp"

namespace domaintemp {

enum class Mode { kTrain, kEval };

namespace ops {

namespace detail {

// Scatters one padded 3x3-style patch matrix back; see im2col_sample.
template <typename T>
void col2im_sample(const T* col, T* dx, std::int64_t C, std::int64_t H, std::int64_t W,
                   std::int64_t k, std::int64_t pad, std::int64_t Ho, std::int64_t Wo) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        std::int64_t r = (c * k + ky) * k + kx;
        const T* crow = col + r * Ho * Wo;
        std::int64_t ox0 = std::max<std::int64_t>(0, pad - kx);
        std::int64_t ox1 = std::min<std::int64_t>(Wo, W + pad - kx);
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          std::int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= H) continue;
          T* xrow = dx + (c * H + iy) * W + (ox0 + kx - pad);
          const T* src = crow + oy * Wo + ox0;
          for (std::int64_t i = 0; i < ox1 - ox0; ++i) xrow[i] += src[i];
        }
      }
    }
  }
}

// col has one row per (c,ky,kx) and one column per output pixel (row-major
// oy,ox). Border entries that fall outside the input are left at zero, so
// the buffer must be zero-initialized by the caller.
template <typename T>
void im2col_sample(const T* x, T* col, std::int64_t C, std::int64_t H, std::int64_t W,
                   std::int64_t k, std::int64_t pad, std::int64_t Ho, std::int64_t Wo) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        std::int64_t r = (c * k + ky) * k + kx;
        T* crow = col + r * Ho * Wo;
        std::int64_t ox0 = std::max<std::int64_t>(0, pad - kx);
        std::int64_t ox1 = std::min<std::int64_t>(Wo, W + pad - kx);
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          std::int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const T* xrow = x + (c * H + iy) * W + (ox0 + kx - pad);
          std::memcpy(crow + oy * Wo + ox0, xrow,
                      sizeof(T) * static_cast<std::size_t>(ox1 - ox0));
        }
      }
    }
  }
}

}  // namespace detail

// x: [N,C,H,W], w: [F,C,k,k], b: [F]; stride 1.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::int64_t pad) {
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1) ||
      wv.dim(2) != wv.dim(3) || b.value().size() != static_cast<std::size_t>(wv.dim(0)))
    throw ShapeError("conv2d: incompatible shapes");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::int64_t F = wv.dim(0), k = wv.dim(2);
  const std::int64_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  const std::int64_t ckk = C * k * k, hw = Ho * Wo;

  bool ng = t.wants_grad(x.id) || t.wants_grad(w.id) || t.wants_grad(b.id);
  Tensor<T> out({N, F, Ho, Wo});
  using CMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const CMat> wmat(wv.data(), F, ckk);
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> barr(b.value().data(), F);

  // The full im2col buffer is kept only when a backward pass will need it.
  auto cols = std::make_shared<std::vector<T>>();
  std::vector<T> scratch;
  T* colbase;
  if (ng) {
    cols->assign(static_cast<std::size_t>(N * ckk * hw), T(0));
    colbase = cols->data();
  } else {
    scratch.assign(static_cast<std::size_t>(ckk * hw), T(0));
    colbase = scratch.data();
  }
  for (std::int64_t n = 0; n < N; ++n) {
    T* col = ng ? colbase + n * ckk * hw : colbase;
    if (!ng) std::fill(scratch.begin(), scratch.end(), T(0));
    detail::im2col_sample(xv.data() + n * C * H * W, col, C, H, W, k, pad, Ho, Wo);
    Eigen::Map<CMat> outn(out.data() + n * F * hw, F, hw);
    outn.noalias() = wmat * Eigen::Map<const CMat>(col, ckk, hw);
    outn.array().colwise() += barr;
  }

  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [x, w, b, o, cols, N, C, H, W, F, k, pad, Ho, Wo, ckk,
                       hw](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      Eigen::Map<const CMat> wmat2(w.value().data(), F, ckk);
      if (tp.wants_grad(b.id)) {
        auto gb = tp.grad_ref(b.id).array();
        for (std::int64_t n = 0; n < N; ++n) {
          Eigen::Map<const CMat> gn(g.data() + n * F * hw, F, hw);
          gb += gn.array().rowwise().sum();
        }
      }
      if (tp.wants_grad(w.id)) {
        Eigen::Map<CMat> gw(tp.grad_ref(w.id).data(), F, ckk);
        for (std::int64_t n = 0; n < N; ++n) {
          Eigen::Map<const CMat> gn(g.data() + n * F * hw, F, hw);
          Eigen::Map<const CMat> coln(cols->data() + n * ckk * hw, ckk, hw);
          gw.noalias() += gn * coln.transpose();
        }
      }
      if (tp.wants_grad(x.id)) {
        auto& gx = tp.grad_ref(x.id);
        std::vector<T> dcol(static_cast<std::size_t>(ckk * hw));
        for (std::int64_t n = 0; n < N; ++n) {
          Eigen::Map<const CMat> gn(g.data() + n * F * hw, F, hw);
          Eigen::Map<CMat> dcoln(dcol.data(), ckk, hw);
          dcoln.noalias() = wmat2.transpose() * gn;
          detail::col2im_sample(dcol.data(), gx.data() + n * C * H * W, C, H, W, k,
                                pad, Ho, Wo);
        }
      }
    });
  return o;
}

// 2x2 max pooling, stride 2, floor semantics (odd trailing row/col dropped).
template <typename T>
Var<T> maxpool2(Var<T> x) {
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("maxpool2: rank-4 input required");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
  const T* src = xv.data();
  T* dst = out.data();
  std::size_t oi = 0;
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = src + nc * H * W;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        std::int64_t base = (2 * oy) * W + 2 * ox;
        std::int64_t best = base;
        T bv = plane[base];
        if (plane[base + 1] > bv) { bv = plane[base + 1]; best = base + 1; }
        if (plane[base + W] > bv) { bv = plane[base + W]; best = base + W; }
        if (plane[base + W + 1] > bv) { bv = plane[base + W + 1]; best = base + W + 1; }
        dst[oi] = bv;
        (*argmax)[oi] = static_cast<std::int32_t>(best);
        ++oi;
      }
    }
  }
  bool ng = t.wants_grad(x.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [x, o, argmax, N, C, H, W, Ho, Wo](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      auto& gx = tp.grad_ref(x.id);
      std::size_t oi2 = 0;
      for (std::int64_t nc = 0; nc < N * C; ++nc) {
        T* gplane = gx.data() + nc * H * W;
        for (std::int64_t j = 0; j < Ho * Wo; ++j, ++oi2)
          gplane[(*argmax)[oi2]] += g[oi2];
      }
    });
  return o;
}

// Train-mode batch normalization over (N,H,W) per channel. Running statistics
// are updated in place (biased variance normalizes, unbiased feeds the
// running buffer). Temperature of the statistics is the batch itself, so the
// backward pass includes the mean/variance paths.
template <typename T>
Var<T> batchnorm2d_train(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>* running_mean,
                         Tensor<T>* running_var, T momentum, T eps) {
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("batchnorm2d: rank-4 input required");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::int64_t hw = H * W;
  const T m = static_cast<T>(N * hw);
  if (gamma.value().size() != static_cast<std::size_t>(C) ||
      beta.value().size() != static_cast<std::size_t>(C))
    throw ShapeError("batchnorm2d: affine size mismatch");

  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto invstd = std::make_shared<std::vector<T>>(C);
  Tensor<T> out(xv.shape());
  const T* gammap = gamma.value().data();
  const T* betap = beta.value().data();
  for (std::int64_t c = 0; c < C; ++c) {
    T sum = T(0), sumsq = T(0);
    for (std::int64_t n = 0; n < N; ++n) {
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> seg(
          xv.data() + (n * C + c) * hw, hw);
      sum += seg.sum();
      sumsq += (seg * seg).sum();
    }
    T mean = sum / m;
    T var = sumsq / m - mean * mean;
    if (var < T(0)) var = T(0);
    T is = T(1) / std::sqrt(var + eps);
    (*invstd)[c] = is;
    for (std::int64_t n = 0; n < N; ++n) {
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> seg(
          xv.data() + (n * C + c) * hw, hw);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> xh(
          xhat->data() + (n * C + c) * hw, hw);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> yo(out.data() + (n * C + c) * hw,
                                                        hw);
      xh = (seg - mean) * is;
      yo = xh * gammap[c] + betap[c];
    }
    if (running_mean && running_var) {
      T unbiased = m > T(1) ? var * m / (m - T(1)) : var;
      (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * mean;
      (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * unbiased;
    }
  }

  bool ng = t.wants_grad(x.id) || t.wants_grad(gamma.id) || t.wants_grad(beta.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [x, gamma, beta, o, xhat, invstd, N, C, hw, m](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      for (std::int64_t c = 0; c < C; ++c) {
        T sum_g = T(0), sum_gx = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> gs(
              g.data() + (n * C + c) * hw, hw);
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xh(
              xhat->data() + (n * C + c) * hw, hw);
          sum_g += gs.sum();
          sum_gx += (gs * xh).sum();
        }
        if (tp.wants_grad(gamma.id)) tp.grad_ref(gamma.id)[c] += sum_gx;
        if (tp.wants_grad(beta.id)) tp.grad_ref(beta.id)[c] += sum_g;
        if (tp.wants_grad(x.id)) {
          T gam = gamma.value()[c];
          T is = (*invstd)[c];
          T mg = sum_g / m, mgx = sum_gx / m;
          auto& gx = tp.grad_ref(x.id);
          for (std::int64_t n = 0; n < N; ++n) {
            Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> gs(
                g.data() + (n * C + c) * hw, hw);
            Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xh(
                xhat->data() + (n * C + c) * hw, hw);
            Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> gxs(
                gx.data() + (n * C + c) * hw, hw);
            gxs += gam * is * (gs - mg - xh * mgx);
          }
        }
      }
    });
  return o;
}

// Eval-mode batch normalization with frozen running statistics.
template <typename T>
Var<T> batchnorm2d_eval(Var<T> x, Var<T> gamma, Var<T> beta,
                        const Tensor<T>& running_mean, const Tensor<T>& running_var,
                        T eps) {
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("batchnorm2d: rank-4 input required");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out(xv.shape());
  auto invstd = std::make_shared<std::vector<T>>(C);
  for (std::int64_t c = 0; c < C; ++c) {
    T is = T(1) / std::sqrt(running_var[c] + eps);
    (*invstd)[c] = is;
    T scale = gamma.value()[c] * is;
    T shift = beta.value()[c] - running_mean[c] * scale;
    for (std::int64_t n = 0; n < N; ++n) {
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> seg(
          xv.data() + (n * C + c) * hw, hw);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> yo(out.data() + (n * C + c) * hw,
                                                        hw);
      yo = seg * scale + shift;
    }
  }
  bool ng = t.wants_grad(x.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [x, gamma, o, invstd, N, C, hw](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      auto& gx = tp.grad_ref(x.id);
      for (std::int64_t c = 0; c < C; ++c) {
        T scale = gamma.value()[c] * (*invstd)[c];
        for (std::int64_t n = 0; n < N; ++n) {
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> gs(
              g.data() + (n * C + c) * hw, hw);
          Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> gxs(
              gx.data() + (n * C + c) * hw, hw);
          gxs += gs * scale;
        }
      }
    });
  return o;
}

// Inverted dropout; survivors are rescaled by 1/(1-rate). The mask is drawn
// from a counter-based generator seeded once per call so replaying a forward
// with the same stream reproduces it exactly.
template <typename T>
Var<T> dropout(Var<T> x, T rate, RngStream& rng) {
  if (rate <= T(0)) return x;
  if (rate >= T(1)) throw DomainError("dropout: rate must be < 1");
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  const std::size_t n = xv.size();
  T keep = T(1) - rate;
  T scalev = T(1) / keep;
  auto factors = std::make_shared<std::vector<T>>(n);
  std::uint64_t seed = rng.next_u64();
  const std::uint64_t threshold =
      static_cast<std::uint64_t>(static_cast<double>(keep) * 4294967296.0);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t r = splitmix64(seed ^ (0x9e3779b97f4a7c15ull * (i + 1)));
    T f = ((r >> 32) < threshold) ? scalev : T(0);
    (*factors)[i] = f;
    out[i] = xv[i] * f;
  }
  bool ng = t.wants_grad(x.id);
  Var<T> o = t.push(std::move(out), ng);
  if (ng)
    t.set_backward(o, [x, o, factors, n](Tape<T>& tp) {
      const auto& g = tp.grad_ref(o.id);
      auto& gx = tp.grad_ref(x.id);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (*factors)[i];
    });
  return o;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Layers

template <typename T>
inline void kaiming_uniform(Tensor<T>& w, std::int64_t fan_in, RngStream& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
struct Conv2dLayer {
  Parameter<T> w, b;
  std::int64_t pad;

  Conv2dLayer() = default;
  Conv2dLayer(std::string name, std::int64_t in_ch, std::int64_t out_ch, std::int64_t k,
              std::int64_t pad_, RngStream& rng)
      : w(name + ".w", Tensor<T>({out_ch, in_ch, k, k})),
        b(name + ".b", Tensor<T>({out_ch})),
        pad(pad_) {
    kaiming_uniform(w.value, in_ch * k * k, rng);
  }

  Var<T> forward(Tape<T>& t, Var<T> x) {
    return ops::conv2d(x, t.bind(w), t.bind(b), pad);
  }
};

template <typename T>
struct BatchNorm2dLayer {
  Parameter<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(std::string name, std::int64_t channels)
      : gamma(name + ".gamma", Tensor<T>::full({channels}, T(1))),
        beta(name + ".beta", Tensor<T>({channels})),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))) {}

  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode) {
    if (mode == Mode::kTrain)
      return ops::batchnorm2d_train(x, t.bind(gamma), t.bind(beta), &running_mean,
                                    &running_var, momentum, eps);
    return ops::batchnorm2d_eval(x, t.bind(gamma), t.bind(beta), running_mean,
                                 running_var, eps);
  }
};

// Affine map used for the domain discriminator, probes, and the DANN
// adversary.
template <typename T>
struct LinearHead {
  Parameter<T> w, b;

  LinearHead() = default;
  LinearHead(std::string name, std::int64_t in_dim, std::int64_t out_dim,
             RngStream& rng)
      : w(name + ".w", Tensor<T>({in_dim, out_dim})),
        b(name + ".b", Tensor<T>({out_dim})) {
    kaiming_uniform(w.value, in_dim, rng);
  }

  std::int64_t in_dim() const { return w.value.dim(0); }
  std::int64_t out_dim() const { return w.value.dim(1); }

  Var<T> forward(Tape<T>& t, Var<T> x) { return ops::linear(x, t.bind(w), t.bind(b)); }

  // Plain inference without a tape.
  Tensor<T> logits(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_dim())
      throw ShapeError("LinearHead: input dim mismatch");
    Tensor<T> out({x.dim(0), out_dim()});
    out.mat().noalias() = x.mat() * w.value.mat();
    out.mat().rowwise() +=
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value.data(),
                                                              out_dim());
    return out;
  }

  std::vector<Parameter<T>*> params() { return {&w, &b}; }
};

enum class ProjectorKind { kNone, kLinear, kMlp };

struct EncoderConfig {
  std::vector<std::int64_t> channels = {16, 32, 64};
  std::int64_t embed_dim = 16;
  double dropout_rate = 0.1;
  ProjectorKind projector = ProjectorKind::kNone;
  std::int64_t projector_dim = 16;
};

// Three conv blocks (conv -> batch norm -> dropout -> ReLU -> 2x2 max pool)
// followed by a linear map to the embedding. The optional projector head is
// applied on top for the pre-training loss only; downstream consumers read
// the pre-projector embedding.
template <typename T>
struct Encoder {
  EncoderConfig cfg;
  Conv2dLayer<T> conv1, conv2, conv3;
  BatchNorm2dLayer<T> bn1, bn2, bn3;
  LinearHead<T> fc;
  LinearHead<T> proj1, proj2;  // used per cfg.projector
  T dropout_rate;

  Encoder() = default;
  Encoder(const EncoderConfig& c, RngStream rng)
      : cfg(c),
        conv1("conv1", 3, c.channels.at(0), 3, 1, rng),
        conv2("conv2", c.channels.at(0), c.channels.at(1), 3, 1, rng),
        conv3("conv3", c.channels.at(1), c.channels.at(2), 3, 1, rng),
        bn1("bn1", c.channels.at(0)),
        bn2("bn2", c.channels.at(1)),
        bn3("bn3", c.channels.at(2)),
        dropout_rate(static_cast<T>(c.dropout_rate)) {
    // 28 -> 14 -> 7 -> 3 spatial; flatten feeds the embedding layer.
    std::int64_t flat = c.channels.at(2) * 3 * 3;
    fc = LinearHead<T>("fc", flat, c.embed_dim, rng);
    if (c.projector == ProjectorKind::kLinear) {
      proj1 = LinearHead<T>("proj1", c.embed_dim, c.projector_dim, rng);
    } else if (c.projector == ProjectorKind::kMlp) {
      proj1 = LinearHead<T>("proj1", c.embed_dim, c.embed_dim, rng);
      proj2 = LinearHead<T>("proj2", c.embed_dim, c.projector_dim, rng);
    }
  }

  // images: [N,3,28,28] -> embeddings [N, embed_dim]
  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode, RngStream& dropout_rng) {
    if (x.value().rank() != 4 || x.value().dim(1) != 3 || x.value().dim(2) != 28 ||
        x.value().dim(3) != 28)
      throw ShapeError("Encoder: expected [N,3,28,28] input, got " +
                       x.value().shape_str());
    auto block = [&](Var<T> in, Conv2dLayer<T>& conv, BatchNorm2dLayer<T>& bn) {
      Var<T> h = conv.forward(t, in);
      h = bn.forward(t, h, mode);
      if (mode == Mode::kTrain) h = ops::dropout(h, dropout_rate, dropout_rng);
      h = ops::relu(h);
      return ops::maxpool2(h);
    };
    Var<T> h = block(x, conv1, bn1);
    h = block(h, conv2, bn2);
    h = block(h, conv3, bn3);
    h = ops::reshape(h, {h.value().dim(0), h.value().dim(1) * 9});
    return fc.forward(t, h);
  }

  // Embedding fed to the contrastive loss (identity unless a projector is
  // configured).
  Var<T> project(Tape<T>& t, Var<T> z) {
    switch (cfg.projector) {
      case ProjectorKind::kNone:
        return z;
      case ProjectorKind::kLinear:
        return proj1.forward(t, z);
      case ProjectorKind::kMlp:
        return proj2.forward(t, ops::relu(proj1.forward(t, z)));
    }
    return z;
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> ps = {&conv1.w, &conv1.b, &bn1.gamma, &bn1.beta,
                                     &conv2.w, &conv2.b, &bn2.gamma, &bn2.beta,
                                     &conv3.w, &conv3.b, &bn3.gamma, &bn3.beta,
                                     &fc.w,    &fc.b};
    if (cfg.projector != ProjectorKind::kNone) {
      ps.push_back(&proj1.w);
      ps.push_back(&proj1.b);
      if (cfg.projector == ProjectorKind::kMlp) {
        ps.push_back(&proj2.w);
        ps.push_back(&proj2.b);
      }
    }
    return ps;
  }

  // Non-parameter state that must round-trip through checkpoints.
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    return {{"bn1.running_mean", &bn1.running_mean},
            {"bn1.running_var", &bn1.running_var},
            {"bn2.running_mean", &bn2.running_mean},
            {"bn2.running_var", &bn2.running_var},
            {"bn3.running_mean", &bn3.running_mean},
            {"bn3.running_var", &bn3.running_var}};
  }
};

// Cosine similarity of every (row of a) x (row of b) pair.
template <typename T>
Var<T> cosine_similarity_matrix(Var<T> a, Var<T> b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 ||
      a.value().dim(1) != b.value().dim(1))
    throw ShapeError("cosine_similarity_matrix: incompatible shapes");
  return ops::matmul_nt(ops::rows_normalize(a), ops::rows_normalize(b));
}

}  // namespace domaintemp
