#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "todkit/rng.hpp"

namespace todkit::nn {

// Minimal dense neural core with explicit backward passes. Everything is
// 64-bit: the networks are desk-scale, so precision is cheap and gradient
// checks can be tight.

using Vec = std::vector<double>;

struct Mat {
  int rows = 0;
  int cols = 0;
  Vec w;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), w(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

  double* row(int r) { return w.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols); }
  const double* row(int r) const {
    return w.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
  }
  double& at(int r, int c) { return w[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
  double at(int r, int c) const {
    return w[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
  }
};

// y = W x + b
inline void matvec_bias(const Mat& m, const Vec& b, const double* x, double* y) {
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double acc = b[static_cast<std::size_t>(r)];
    for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// dx += W^T dy
inline void matvec_transpose_add(const Mat& m, const double* dy, double* dx) {
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    const double g = dy[r];
    for (int c = 0; c < m.cols; ++c) dx[c] += row[c] * g;
  }
}

// dW += dy x^T, db += dy
inline void outer_add(Mat& dw, Vec& db, const double* dy, const double* x) {
  for (int r = 0; r < dw.rows; ++r) {
    double* row = dw.row(r);
    const double g = dy[r];
    for (int c = 0; c < dw.cols; ++c) row[c] += g * x[c];
    db[static_cast<std::size_t>(r)] += g;
  }
}

inline void relu_inplace(double* x, int n) {
  for (int i = 0; i < n; ++i)
    if (x[i] < 0.0) x[i] = 0.0;
}

// da = dh where pre-activation z > 0, else 0.
inline void relu_backward(const double* z, const double* dh, double* da, int n) {
  for (int i = 0; i < n; ++i) da[i] = z[i] > 0.0 ? dh[i] : 0.0;
}

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out

  DenseLayer() = default;
  DenseLayer(int out, int in) : weight(out, in), bias(static_cast<std::size_t>(out), 0.0) {}

  int in_dim() const { return weight.cols; }
  int out_dim() const { return weight.rows; }

  // Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))) weights,
  // zero bias.
  void init(RngStream& rng) {
    double limit = std::sqrt(6.0 / (weight.cols + weight.rows));
    for (double& v : weight.w) v = rng.next_uniform(-limit, limit);
    for (double& v : bias) v = 0.0;
  }

  void forward(const Vec& x, Vec& y) const {
    if (static_cast<int>(x.size()) != weight.cols)
      throw std::runtime_error("dense: input dimension mismatch: got " +
                               std::to_string(x.size()) + ", want " +
                               std::to_string(weight.cols));
    y.resize(static_cast<std::size_t>(weight.rows));
    matvec_bias(weight, bias, x.data(), y.data());
  }
};

struct DenseGrads {
  Mat dweight;
  Vec dbias;

  DenseGrads() = default;
  explicit DenseGrads(const DenseLayer& layer)
      : dweight(layer.weight.rows, layer.weight.cols),
        dbias(layer.bias.size(), 0.0) {}

  void zero() {
    std::fill(dweight.w.begin(), dweight.w.end(), 0.0);
    std::fill(dbias.begin(), dbias.end(), 0.0);
  }
};

// Exact gradients for y = W x + b given upstream dy: accumulates parameter
// gradients and, when dx != nullptr, the input gradient.
inline void dense_backward(const DenseLayer& layer, const Vec& x, const Vec& dy,
                           DenseGrads& grads, Vec* dx) {
  if (static_cast<int>(dy.size()) != layer.weight.rows)
    throw std::runtime_error("dense backward: gradient dimension mismatch");
  outer_add(grads.dweight, grads.dbias, dy.data(), x.data());
  if (dx) {
    dx->assign(x.size(), 0.0);
    matvec_transpose_add(layer.weight, dy.data(), dx->data());
  }
}

// ---------------------------------------------------------------------------
// Inverted dropout: zero with probability `rate` and scale survivors by
// 1/(1-rate) during training; identity at inference.

inline void dropout_forward(double* x, int n, double rate, bool training,
                            RngStream& rng, std::vector<std::uint8_t>& keep) {
  keep.assign(static_cast<std::size_t>(n), 1);
  if (!training || rate <= 0.0) return;
  const double scale = 1.0 / (1.0 - rate);
  for (int i = 0; i < n; ++i) {
    if (rng.next_double() < rate) {
      keep[static_cast<std::size_t>(i)] = 0;
      x[i] = 0.0;
    } else {
      x[i] *= scale;
    }
  }
}

inline void dropout_backward(double* dx, int n, double rate,
                             const std::vector<std::uint8_t>& keep) {
  if (keep.empty()) return;
  const double scale = rate > 0.0 ? 1.0 / (1.0 - rate) : 1.0;
  for (int i = 0; i < n; ++i) dx[i] = keep[static_cast<std::size_t>(i)] ? dx[i] * scale : 0.0;
}

// ---------------------------------------------------------------------------
// Masked softmax cross-entropy. Masked entries get -inf before the softmax;
// the loss is -log p[target] and the returned gradient is p - onehot(target)
// with zeros at masked entries. Numerically stabilized by max subtraction.

struct SoftmaxXent {
  double loss = 0.0;
  Vec dlogits;
};

inline void masked_softmax(const Vec& logits, const std::vector<std::uint8_t>& mask,
                           Vec& probs) {
  if (logits.size() != mask.size())
    throw std::runtime_error("masked_softmax: mask size mismatch");
  probs.assign(logits.size(), 0.0);
  double max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i] && logits[i] > max) max = logits[i];
  if (max == -std::numeric_limits<double>::infinity())
    throw std::runtime_error("masked_softmax: mask has no valid entry");
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    probs[i] = std::exp(logits[i] - max);
    z += probs[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) probs[i] /= z;
}

inline SoftmaxXent masked_softmax_xent(const Vec& logits,
                                       const std::vector<std::uint8_t>& mask,
                                       int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw std::invalid_argument("masked_softmax_xent: target out of range");
  if (!mask[static_cast<std::size_t>(target)])
    throw std::invalid_argument("masked_softmax_xent: target is masked");
  SoftmaxXent out;
  masked_softmax(logits, mask, out.dlogits);
  double p = out.dlogits[static_cast<std::size_t>(target)];
  out.loss = -std::log(std::max(p, 1e-300));
  out.dlogits[static_cast<std::size_t>(target)] -= 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Adam over a named list of parameter vectors. One optimizer state per
// model; its step counter advances only when the model is updated, which
// keeps bias correction exact for models touched intermittently.

struct ParamRef {
  std::string name;
  Vec* value = nullptr;
  Vec* grad = nullptr;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  long step = 0;
  std::vector<Vec> m;
  std::vector<Vec> v;

  void ensure_shapes(const std::vector<ParamRef>& params) {
    if (m.size() == params.size()) return;
    m.clear();
    v.clear();
    for (const ParamRef& p : params) {
      m.emplace_back(p.value->size(), 0.0);
      v.emplace_back(p.value->size(), 0.0);
    }
  }
};

inline void adam_step(const std::vector<ParamRef>& params, AdamState& state) {
  state.ensure_shapes(params);
  state.step++;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Vec& value = *params[p].value;
    const Vec& grad = *params[p].grad;
    if (value.size() != grad.size() || value.size() != state.m[p].size())
      throw std::runtime_error("adam: shape mismatch for " + params[p].name);
    Vec& m = state.m[p];
    Vec& v = state.v[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        throw std::runtime_error("adam: non-finite gradient in " + params[p].name +
                                 " at step " + std::to_string(state.step));
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / corr1;
      const double vhat = v[i] / corr2;
      value[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.epsilon);
    }
  }
}

}  // namespace todkit::nn
