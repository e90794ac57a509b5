// keto - keypoint-driven tool manipulation lab
//
// Minimal neural-network substrate with hand-written reverse-mode
// gradients: dense layers with tanh activations, a permutation-invariant
// point-set encoder (per-point stack + coordinate-wise max pooling), and
// the Adam update rule. Everything is templated on the scalar so the
// gradient-check tests can run the identical math on 64-bit shadows of the
// 32-bit runtime weights.

#ifndef KETO_NN_HPP
#define KETO_NN_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "keto/common.hpp"

namespace keto {
namespace nn {

inline constexpr int kPointDim = 3;
inline constexpr int kHidden1 = 64;
inline constexpr int kFeatureDim = 128;

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  int in = 0;
  int out = 0;
  std::vector<T> W;  // row-major, out x in
  std::vector<T> b;

  void init(int in_dim, int out_dim, Rng& rng, bool zero = false) {
    in = in_dim;
    out = out_dim;
    W.assign(static_cast<std::size_t>(in) * out, T(0));
    b.assign(out, T(0));
    if (!zero) {
      double s = std::sqrt(6.0 / (in + out));
      for (auto& w : W) w = static_cast<T>(rng.uniform(-s, s));
    }
  }

  void zero_like(const Linear<T>& other) {
    in = other.in;
    out = other.out;
    W.assign(other.W.size(), T(0));
    b.assign(other.b.size(), T(0));
  }

  void forward(const T* x, T* y) const {
    for (int o = 0; o < out; ++o) {
      const T* row = W.data() + static_cast<std::size_t>(o) * in;
      T acc = b[o];
      for (int i = 0; i < in; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
  }

  /// Accumulates parameter gradients and writes the input gradient.
  /// `dx` may be null when the input gradient is not needed.
  void backward(const T* x, const T* dy, T* dx, Linear<T>& grad) const {
    for (int o = 0; o < out; ++o) {
      T g = dy[o];
      grad.b[o] += g;
      T* grow = grad.W.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) grow[i] += g * x[i];
    }
    if (dx) {
      for (int i = 0; i < in; ++i) dx[i] = T(0);
      for (int o = 0; o < out; ++o) {
        T g = dy[o];
        const T* row = W.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) dx[i] += g * row[i];
      }
    }
  }
};

template <typename T>
inline void tanh_forward(T* v, int n) {
  for (int i = 0; i < n; ++i) v[i] = std::tanh(v[i]);
}

/// d(tanh)/dx from the activated output: 1 - y^2.
template <typename T>
inline void tanh_backward(const T* y, T* dy, int n) {
  for (int i = 0; i < n; ++i) dy[i] *= (T(1) - y[i] * y[i]);
}

// ---------------------------------------------------------------------------
// Three-layer MLP head (tanh, tanh, linear)
// ---------------------------------------------------------------------------

template <typename T>
struct Mlp3 {
  Linear<T> l1, l2, l3;

  void init(int in, int h1, int h2, int out, Rng& rng, bool zero_last = true) {
    l1.init(in, h1, rng);
    l2.init(h1, h2, rng);
    l3.init(h2, out, rng, zero_last);
  }

  struct Cache {
    std::vector<T> x, h1, h2;
  };

  void forward(const T* x, T* y, Cache& c) const {
    c.x.assign(x, x + l1.in);
    c.h1.resize(l1.out);
    c.h2.resize(l2.out);
    l1.forward(x, c.h1.data());
    tanh_forward(c.h1.data(), l1.out);
    l2.forward(c.h1.data(), c.h2.data());
    tanh_forward(c.h2.data(), l2.out);
    l3.forward(c.h2.data(), y);
  }

  /// dx may be null.
  void backward(const Cache& c, const T* dy, T* dx, Mlp3<T>& grad) const {
    std::vector<T> dh2(l2.out), dh1(l1.out);
    l3.backward(c.h2.data(), dy, dh2.data(), grad.l3);
    tanh_backward(c.h2.data(), dh2.data(), l2.out);
    l2.backward(c.h1.data(), dh2.data(), dh1.data(), grad.l2);
    tanh_backward(c.h1.data(), dh1.data(), l1.out);
    l1.backward(c.x.data(), dh1.data(), dx, grad.l1);
  }

  void zero_like(const Mlp3<T>& o) {
    l1.zero_like(o.l1);
    l2.zero_like(o.l2);
    l3.zero_like(o.l3);
  }
};

// ---------------------------------------------------------------------------
// Permutation-invariant point-set encoder
// ---------------------------------------------------------------------------

/// Per-point (3 -> 64 -> 128) tanh stack followed by a coordinate-wise max
/// over points. Exactly permutation invariant; duplicated points cannot
/// change the pooled feature.
template <typename T>
struct PointEncoder {
  Linear<T> l1, l2;

  void init(Rng& rng) {
    l1.init(kPointDim, kHidden1, rng);
    l2.init(kHidden1, kFeatureDim, rng);
  }

  struct Cache {
    std::vector<T> pts;            // n x 3
    std::vector<T> h1;             // n x 64 (activated)
    std::vector<T> h2;             // n x 128 (activated)
    std::vector<int> argmax;       // 128
    std::size_t n = 0;
  };

  void forward(const std::vector<T>& pts, T* feature, Cache& c) const {
    const std::size_t n = pts.size() / kPointDim;
    c.pts = pts;
    c.n = n;
    c.h1.resize(n * kHidden1);
    c.h2.resize(n * kFeatureDim);
    c.argmax.assign(kFeatureDim, 0);
    for (int f = 0; f < kFeatureDim; ++f) {
      feature[f] = -std::numeric_limits<T>::infinity();
    }
    for (std::size_t p = 0; p < n; ++p) {
      T* h1 = c.h1.data() + p * kHidden1;
      T* h2 = c.h2.data() + p * kFeatureDim;
      l1.forward(pts.data() + p * kPointDim, h1);
      tanh_forward(h1, kHidden1);
      l2.forward(h1, h2);
      tanh_forward(h2, kFeatureDim);
      for (int f = 0; f < kFeatureDim; ++f) {
        if (h2[f] > feature[f]) {
          feature[f] = h2[f];
          c.argmax[f] = static_cast<int>(p);
        }
      }
    }
  }

  /// Routes the pooled gradient back through the winning points.
  /// `dpts` (n x 3) may be null when input gradients are not needed.
  void backward(const Cache& c, const T* dfeature, T* dpts,
                PointEncoder<T>& grad) const {
    // Group the feature gradient by winning point so each point's stack
    // backward runs at most once.
    std::vector<std::vector<int>> by_point(c.n);
    for (int f = 0; f < kFeatureDim; ++f) {
      if (dfeature[f] != T(0)) by_point[c.argmax[f]].push_back(f);
    }
    std::vector<T> dh2(kFeatureDim), dh1(kHidden1);
    for (std::size_t p = 0; p < c.n; ++p) {
      if (by_point[p].empty()) continue;
      std::fill(dh2.begin(), dh2.end(), T(0));
      for (int f : by_point[p]) dh2[f] = dfeature[f];
      const T* h2 = c.h2.data() + p * kFeatureDim;
      const T* h1 = c.h1.data() + p * kHidden1;
      tanh_backward(h2, dh2.data(), kFeatureDim);
      l2.backward(h1, dh2.data(), dh1.data(), grad.l2);
      tanh_backward(h1, dh1.data(), kHidden1);
      l1.backward(c.pts.data() + p * kPointDim, dh1.data(),
                  dpts ? dpts + p * kPointDim : nullptr, grad.l1);
    }
  }

  void zero_like(const PointEncoder<T>& o) {
    l1.zero_like(o.l1);
    l2.zero_like(o.l2);
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam over a flat list of parameter arrays (beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8).
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<std::vector<T>*> params, double lr)
      : params_(std::move(params)), lr_(lr) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->size(), T(0));
      v_[i].assign(params_[i]->size(), T(0));
    }
  }

  void step(const std::vector<const std::vector<T>*>& grads) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double c1 = 1.0 - std::pow(b1, t_);
    double c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      const auto& g = *grads[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
        v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g[j] * g[j]);
        double mhat = m[j] / c1;
        double vhat = v[j] / c2;
        p[j] = static_cast<T>(p[j] - lr_ * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

 private:
  std::vector<std::vector<T>*> params_;
  double lr_;
  std::vector<std::vector<T>> m_, v_;
  int t_ = 0;
};

/// Numerically stable sigmoid cross-entropy pieces.
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

inline double bce_loss(double logit, double label) {
  // max(l, 0) - l*y + log(1 + exp(-|l|))
  return std::max(logit, 0.0) - logit * label +
         std::log1p(std::exp(-std::abs(logit)));
}

}  // namespace nn
}  // namespace keto

#endif  // KETO_NN_HPP
