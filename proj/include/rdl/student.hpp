#pragma once

// Dual-encoder student: one linear projection per view followed by L2
// normalization, plus a learnable log-temperature. Gradients are derived by
// hand; `encode_backward` pushes a gradient w.r.t. the unit embedding back
// through the normalization into the projection matrix.

#include <vector>

#include "rdl/numerics.hpp"

namespace rdl {

constexpr double kTauMin = 1e-3;
constexpr double kTauMax = 1.0;

struct StudentModel {
  Mat w_v;         // embed_dim x view_a_dim
  Mat w_t;         // embed_dim x view_b_dim
  double log_tau = 0.0;

  int embed_dim() const { return w_v.rows; }
};

inline double temperature(const StudentModel& m) { return std::exp(m.log_tau); }

inline void require_tau_in_range(double tau) {
  if (!(tau >= kTauMin && tau <= kTauMax))
    throw std::runtime_error("temperature outside clamp range");
}

inline void clamp_log_tau(StudentModel& m) {
  const double lo = std::log(kTauMin), hi = std::log(kTauMax);
  m.log_tau = std::min(hi, std::max(lo, m.log_tau));
}

inline StudentModel init_student(int embed_dim, int view_a_dim, int view_b_dim, double tau_init,
                                 Rng& rng) {
  if (embed_dim < 2) throw std::invalid_argument("init_student: embed_dim must be >= 2");
  require_tau_in_range(tau_init);
  StudentModel m;
  m.w_v = Mat(embed_dim, view_a_dim);
  m.w_t = Mat(embed_dim, view_b_dim);
  const double sv = 1.0 / std::sqrt(static_cast<double>(view_a_dim));
  for (double& v : m.w_v.a) v = sv * rng.normal();
  const double st = 1.0 / std::sqrt(static_cast<double>(view_b_dim));
  for (double& v : m.w_t.a) v = st * rng.normal();
  m.log_tau = std::log(tau_init);
  return m;
}

// Unit embedding plus the cached pre-normalization norm needed for backprop.
struct Encoded {
  Vec e;
  double unorm = 0.0;
};

inline Encoded encode(const Mat& w, const Vec& x) {
  Encoded out;
  const Vec u = matvec(w, x);
  out.e = l2_normalize(u, &out.unorm);
  return out;
}

inline Encoded encode_v(const StudentModel& m, const Vec& x) { return encode(m.w_v, x); }
inline Encoded encode_t(const StudentModel& m, const Vec& x) { return encode(m.w_t, x); }

// Given dL/de for a unit embedding e = u/|u| with u = W x, accumulates
// dL/dW += ((g - (g.e) e) / |u|) x^T.
inline void encode_backward(Mat& grad_w, const Vec& x, const Encoded& enc, const Vec& de) {
  const double ge = dot(de, enc.e);
  const int rows = grad_w.rows, cols = grad_w.cols;
  for (int r = 0; r < rows; ++r) {
    const double gr = (de[r] - ge * enc.e[r]) / enc.unorm;
    double* row = grad_w.a.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) row[c] += gr * x[c];
  }
}

}  // namespace rdl
