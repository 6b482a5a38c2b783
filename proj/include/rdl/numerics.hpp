#pragma once

// Deterministic numeric primitives shared by every module: dense vectors and
// row-major matrices, stable softmax/log-sum-exp, a counter-based RNG with
// labeled substreams, AdamW, and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rdl {

using Vec = std::vector<double>;

struct Mat {
  int rows = 0;
  int cols = 0;
  Vec a;  // row-major, rows*cols entries

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// y = M x
inline Vec matvec(const Mat& m, const Vec& x) {
  if (static_cast<int>(x.size()) != m.cols) throw std::invalid_argument("matvec: length mismatch");
  Vec y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = m.a.data() + static_cast<std::size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Vec& v) { return std::sqrt(dot(v, v)); }

constexpr double kDegenerateNorm = 1e-12;

// Unit-normalizes v; reports the pre-normalization norm through `norm_out`.
inline Vec l2_normalize(const Vec& v, double* norm_out = nullptr) {
  const double n = l2_norm(v);
  if (n <= kDegenerateNorm) throw std::runtime_error("degenerate embedding: near-zero norm");
  if (norm_out) *norm_out = n;
  Vec u(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) u[i] = v[i] / n;
  return u;
}

inline double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// Max-shifted log-softmax; exact on length-1 input, shift-invariant.
inline Vec log_softmax(const Vec& z) {
  if (z.empty()) throw std::invalid_argument("empty logits");
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

inline Vec softmax(const Vec& z) {
  Vec p = log_softmax(z);
  for (double& v : p) v = std::exp(v);
  return p;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Counter-based RNG (splitmix64). State is a single u64, so serialization and
// bitwise-exact resume are trivial. All randomness in the lab flows from one
// root seed through labeled substreams derived below.
// ---------------------------------------------------------------------------

constexpr std::uint64_t kSplitmixGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  return mix64(root ^ fnv1a(label));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index) {
  return mix64(derive_seed(root, label) + (index + 1) * kSplitmixGamma);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kSplitmixGamma;
    return mix64(state_);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  // Box-Muller, cosine branch only: two uniforms per draw, no cached spare,
  // so the serialized state is a single counter.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform in {0, ..., n-1}.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    return next_u64() % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay. Parameters are passed as a flat list of
// spans; `decay` marks which tensors receive weight decay (temperature-like
// scalars are excluded by the trainer).
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  long long step = 0;
  std::vector<Vec> m;
  std::vector<Vec> v;

  void init(const std::vector<std::size_t>& sizes) {
    step = 0;
    m.assign(sizes.size(), {});
    v.assign(sizes.size(), {});
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      m[i].assign(sizes[i], 0.0);
      v[i].assign(sizes[i], 0.0);
    }
  }
};

inline void adam_step(AdamState& st, const AdamConfig& cfg,
                      const std::vector<std::span<double>>& params,
                      const std::vector<std::span<const double>>& grads,
                      const std::vector<bool>& decay) {
  if (params.size() != grads.size() || params.size() != st.m.size() || params.size() != decay.size())
    throw std::invalid_argument("adam_step: tensor count mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    auto g = grads[t];
    if (p.size() != g.size() || p.size() != st.m[t].size())
      throw std::invalid_argument("adam_step: tensor size mismatch");
    const double wd = decay[t] ? cfg.weight_decay : 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      double& m = st.m[t][k];
      double& v = st.v[t][k];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[k];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p[k] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * p[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient checker. `f` evaluates the scalar loss
// at the current contents of `params` (which it closes over); `analytic` is
// the hand-derived gradient at the unperturbed point.
// ---------------------------------------------------------------------------

struct GradCheckResult {
  bool pass = true;
  double max_rel_err = 0.0;
  int worst_tensor = -1;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline GradCheckResult check_gradient(const std::function<double()>& f,
                                      const std::vector<std::span<double>>& params,
                                      const std::vector<Vec>& analytic, double rel_tol) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("check_gradient: tensor count mismatch");
  GradCheckResult res;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != analytic[t].size())
      throw std::invalid_argument("check_gradient: tensor size mismatch");
    for (std::size_t k = 0; k < params[t].size(); ++k) {
      double& x = params[t][k];
      const double x0 = x;
      const double h = 1e-5 * std::max(1.0, std::fabs(x0));
      x = x0 + h;
      const double fp = f();
      x = x0 - h;
      const double fm = f();
      x = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("check_gradient: non-finite loss");
      const double num = (fp - fm) / (2.0 * h);
      const double a = analytic[t][k];
      const double rel = std::fabs(a - num) / std::max(std::fabs(a) + std::fabs(num), 1e-4);
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_tensor = static_cast<int>(t);
        res.worst_coord = k;
        res.worst_analytic = a;
        res.worst_numeric = num;
      }
    }
  }
  res.pass = res.max_rel_err <= rel_tol;
  return res;
}

}  // namespace rdl
