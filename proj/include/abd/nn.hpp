#pragma once

// Minimal differentiable kernel set: dilated 1-D convolution, 2x max-pooling,
// dense layers, ReLU, softmax, class-weighted NLL, Adam, and a central
// finite-difference gradient checker. Double precision throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "abd/errors.hpp"
#include "abd/tensor.hpp"

namespace abd {

enum class Padding { valid, same };

// ---------------------------------------------------------------------------
// Convolution

struct ConvParams {
  int kernel = 3;
  int dilation = 1;
  int in_ch = 1;
  int out_ch = 1;
  std::vector<double> w;  // [kernel][in_ch][out_ch]
  std::vector<double> b;  // [out_ch]

  void resize() {
    w.assign(static_cast<std::size_t>(kernel) * in_ch * out_ch, 0.0);
    b.assign(static_cast<std::size_t>(out_ch), 0.0);
  }
  double& wt(int j, int ci, int co) {
    return w[(static_cast<std::size_t>(j) * in_ch + ci) * out_ch + co];
  }
  double wt(int j, int ci, int co) const {
    return w[(static_cast<std::size_t>(j) * in_ch + ci) * out_ch + co];
  }
};

inline int conv1d_span(const ConvParams& p) { return 1 + p.dilation * (p.kernel - 1); }

// out[t,co] = b[co] + sum_{j,ci} in[t + j*dilation - pad_left, ci] * w[j,ci,co]
// `same` zero-pads to preserve the input length, extra pad on the right.
inline Tensor2 conv1d_forward(const Tensor2& x, const ConvParams& p, Padding pad) {
  if (static_cast<int>(x.cols()) != p.in_ch)
    throw ConfigError("conv1d: input channel mismatch");
  const int span = conv1d_span(p);
  const int t_in = static_cast<int>(x.rows());
  int t_out, pad_left;
  if (pad == Padding::valid) {
    if (t_in < span) throw ConfigError("conv1d: input shorter than dilated kernel span");
    t_out = t_in - span + 1;
    pad_left = 0;
  } else {
    t_out = t_in;
    pad_left = (span - 1) / 2;
  }
  Tensor2 out(static_cast<std::size_t>(t_out), static_cast<std::size_t>(p.out_ch));
  for (int t = 0; t < t_out; ++t) {
    for (int co = 0; co < p.out_ch; ++co) out(t, co) = p.b[co];
    for (int j = 0; j < p.kernel; ++j) {
      const int src = t - pad_left + j * p.dilation;
      if (src < 0 || src >= t_in) continue;
      for (int ci = 0; ci < p.in_ch; ++ci) {
        const double xv = x(src, ci);
        if (xv == 0.0) continue;
        for (int co = 0; co < p.out_ch; ++co) out(t, co) += xv * p.wt(j, ci, co);
      }
    }
  }
  return out;
}

// Accumulates parameter gradients into `grad` and returns dL/dx.
inline Tensor2 conv1d_backward(const Tensor2& x, const ConvParams& p, Padding pad,
                               const Tensor2& dout, ConvParams& grad) {
  const int span = conv1d_span(p);
  const int t_in = static_cast<int>(x.rows());
  const int t_out = static_cast<int>(dout.rows());
  const int pad_left = pad == Padding::valid ? 0 : (span - 1) / 2;
  Tensor2 dx(x.rows(), x.cols());
  for (int t = 0; t < t_out; ++t) {
    for (int co = 0; co < p.out_ch; ++co) grad.b[co] += dout(t, co);
    for (int j = 0; j < p.kernel; ++j) {
      const int src = t - pad_left + j * p.dilation;
      if (src < 0 || src >= t_in) continue;
      for (int ci = 0; ci < p.in_ch; ++ci) {
        double dxi = 0.0;
        const double xv = x(src, ci);
        for (int co = 0; co < p.out_ch; ++co) {
          const double g = dout(t, co);
          grad.wt(j, ci, co) += xv * g;
          dxi += p.wt(j, ci, co) * g;
        }
        dx(src, ci) += dxi;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Max pooling, window 2 stride 2; trailing odd element dropped. Ties pick the
// earlier index.

inline Tensor2 maxpool1d_forward(const Tensor2& x, std::vector<std::size_t>* argmax = nullptr) {
  if (x.rows() < 2) throw ConfigError("maxpool1d: need at least 2 time steps");
  const std::size_t t_out = x.rows() / 2;
  Tensor2 out(t_out, x.cols());
  if (argmax) argmax->assign(t_out * x.cols(), 0);
  for (std::size_t t = 0; t < t_out; ++t)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double a = x(2 * t, c), b = x(2 * t + 1, c);
      const std::size_t idx = b > a ? 2 * t + 1 : 2 * t;
      out(t, c) = x(idx, c);
      if (argmax) (*argmax)[t * x.cols() + c] = idx;
    }
  return out;
}

inline Tensor2 maxpool1d_backward(const Tensor2& dout, const std::vector<std::size_t>& argmax,
                                  std::size_t in_rows) {
  Tensor2 dx(in_rows, dout.cols());
  for (std::size_t t = 0; t < dout.rows(); ++t)
    for (std::size_t c = 0; c < dout.cols(); ++c)
      dx(argmax[t * dout.cols() + c], c) += dout(t, c);
  return dx;
}

// ---------------------------------------------------------------------------
// Dense / activations

struct DenseParams {
  int in = 1;
  int out = 1;
  std::vector<double> w;  // [in][out]
  std::vector<double> b;  // [out]

  void resize() {
    w.assign(static_cast<std::size_t>(in) * out, 0.0);
    b.assign(static_cast<std::size_t>(out), 0.0);
  }
  double& wt(int i, int o) { return w[static_cast<std::size_t>(i) * out + o]; }
  double wt(int i, int o) const { return w[static_cast<std::size_t>(i) * out + o]; }
};

inline std::vector<double> dense_forward(const std::vector<double>& x, const DenseParams& p) {
  if (static_cast<int>(x.size()) != p.in) throw ConfigError("dense: input size mismatch");
  std::vector<double> out(p.b.begin(), p.b.end());
  for (int i = 0; i < p.in; ++i) {
    const double xv = x[static_cast<std::size_t>(i)];
    if (xv == 0.0) continue;
    for (int o = 0; o < p.out; ++o) out[static_cast<std::size_t>(o)] += xv * p.wt(i, o);
  }
  return out;
}

inline std::vector<double> dense_backward(const std::vector<double>& x, const DenseParams& p,
                                          const std::vector<double>& dout, DenseParams& grad) {
  std::vector<double> dx(x.size(), 0.0);
  for (int o = 0; o < p.out; ++o) grad.b[static_cast<std::size_t>(o)] += dout[static_cast<std::size_t>(o)];
  for (int i = 0; i < p.in; ++i) {
    double dxi = 0.0;
    const double xv = x[static_cast<std::size_t>(i)];
    for (int o = 0; o < p.out; ++o) {
      grad.wt(i, o) += xv * dout[static_cast<std::size_t>(o)];
      dxi += p.wt(i, o) * dout[static_cast<std::size_t>(o)];
    }
    dx[static_cast<std::size_t>(i)] = dxi;
  }
  return dx;
}

inline void relu_inplace(std::vector<double>& x) {
  for (double& v : x) v = std::max(0.0, v);
}
inline void relu_inplace(Tensor2& x) { relu_inplace(x.data()); }

// dpre = dpost where pre > 0 else 0; `pre` is the pre-activation value.
inline void relu_backward_inplace(const std::vector<double>& pre, std::vector<double>& d) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (pre[i] <= 0.0) d[i] = 0.0;
}
inline void relu_backward_inplace(const Tensor2& pre, Tensor2& d) {
  relu_backward_inplace(pre.data(), d.data());
}

// Max-subtracted softmax; outputs strictly positive, summing to 1.
inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Class-weighted NLL

struct ClassWeights {
  double theta0 = 1.0;  // idle
  double theta1 = 1.0;  // burst
  double theta(int label) const { return label ? theta1 : theta0; }
};

// theta_i = 1 / relative frequency of class i. Both classes must be present.
inline ClassWeights class_weights(std::span<const std::uint8_t> labels) {
  std::size_t ones = 0;
  for (auto v : labels) ones += v;
  if (labels.empty() || ones == 0 || ones == labels.size())
    throw DataError("class weights need both classes present");
  const double f1 = static_cast<double>(ones) / static_cast<double>(labels.size());
  return {1.0 / (1.0 - f1), 1.0 / f1};
}

// loss = sum_n theta_{P[n]} / (theta0 + theta1) * (-log yhat[n, P[n]]).
// Probabilities at the labeled index are clamped at 1e-12; occurrences are
// counted in `clamp_count` when given.
inline double weighted_nll(const Tensor2& probs, std::span<const std::uint8_t> labels,
                           const ClassWeights& cw, std::size_t* clamp_count = nullptr) {
  if (probs.rows() != labels.size() || probs.cols() != 2)
    throw ConfigError("weighted_nll: batch shape mismatch");
  const double norm = 1.0 / (cw.theta0 + cw.theta1);
  double loss = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    double p = probs(n, labels[n]);
    if (p < 1e-12) {
      p = 1e-12;
      if (clamp_count) ++*clamp_count;
    }
    loss += norm * cw.theta(labels[n]) * -std::log(p);
  }
  return loss;
}

// Gradient of the weighted NLL with respect to the softmax logits (fused
// softmax + NLL form): dlogit[n,k] = scale_n * (yhat[n,k] - [k == P[n]]).
inline Tensor2 weighted_nll_logit_grad(const Tensor2& probs,
                                       std::span<const std::uint8_t> labels,
                                       const ClassWeights& cw) {
  const double norm = 1.0 / (cw.theta0 + cw.theta1);
  Tensor2 d(probs.rows(), probs.cols());
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const double scale = norm * cw.theta(labels[n]);
    for (std::size_t k = 0; k < probs.cols(); ++k)
      d(n, k) = scale * (probs(n, k) - (k == labels[n] ? 1.0 : 0.0));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Optimizers

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ConfigError("adam: shape mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    params[i] -= cfg.lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + cfg.eps);
  }
}

inline void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size()) throw ConfigError("sgd: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

// ---------------------------------------------------------------------------
// Gradient checking

// Compares analytic gradients against central finite differences. `params`
// and `grads` are matching flat views; `loss_fn` re-evaluates the loss at the
// current parameter values. When the parameter count exceeds `max_checked`, a
// seeded random subsample (>= 200 when available) is used.
template <typename LossFn>
double grad_check(std::span<double> params, std::span<const double> grads, LossFn&& loss_fn,
                  double h = 1e-5, std::size_t max_checked = 400,
                  std::uint64_t seed = 0) {
  std::vector<std::size_t> idx(params.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (idx.size() > max_checked) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = idx.size() - 1; i > 0; --i)
      std::swap(idx[i], idx[rng() % (i + 1)]);
    idx.resize(std::max<std::size_t>(max_checked, 200));
  }
  double max_rel = 0.0;
  for (std::size_t i : idx) {
    const double orig = params[i];
    params[i] = orig + h;
    const double lp = loss_fn();
    params[i] = orig - h;
    const double lm = loss_fn();
    params[i] = orig;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = grads[i];
    if (!std::isfinite(fd) || !std::isfinite(an))
      throw NumericError("grad_check: non-finite gradient");
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace abd
