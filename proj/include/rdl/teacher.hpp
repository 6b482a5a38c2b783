#pragma once

// Simulated cross-encoder teacher. The teacher reads the ground-truth graded
// relevance r(i, j) through a sharp sigmoid: score = sigmoid(alpha (r - r0)),
// optionally with deterministic per-pair logit noise. (alpha, r0) are
// calibrated with a binary matching loss against positive/random pairs, which
// reproduces the characteristic near-0/near-1 concentration of matching-
// trained cross-encoder scores.

#include <cstdint>
#include <vector>

#include "rdl/corpus.hpp"
#include "rdl/numerics.hpp"

namespace rdl {

struct TeacherSim {
  double alpha = 30.0;  // sharpness > 0
  double r0 = 0.75;     // sigmoid midpoint in (0, 1)
  double epsilon = 0.0;  // logit-space noise scale >= 0
  std::uint64_t noise_seed = 0;
};

inline void validate_teacher(const TeacherSim& t) {
  if (!(t.alpha > 0.0)) throw std::invalid_argument("teacher: alpha must be > 0");
  if (!(t.r0 > 0.0 && t.r0 < 1.0)) throw std::invalid_argument("teacher: r0 must be in (0,1)");
  if (t.epsilon < 0.0) throw std::invalid_argument("teacher: epsilon must be >= 0");
}

// One standard-normal draw as a pure function of a hash state.
inline double hash_normal(std::uint64_t h) {
  const std::uint64_t a = mix64(h + kSplitmixGamma);
  const std::uint64_t b = mix64(h + 2 * kSplitmixGamma);
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Standard-normal noise as a pure function of (seed, i, j): same pair, same
// noise, on every evaluation — no stream state is consumed.
inline double pair_noise(std::uint64_t seed, long long i, long long j) {
  std::uint64_t h = mix64(seed ^ (kSplitmixGamma * static_cast<std::uint64_t>(i + 1)));
  h = mix64(h ^ (0xC2B2AE3D27D4EB4FULL * static_cast<std::uint64_t>(j + 1)));
  return hash_normal(h);
}

// Systematic per-item component of the teacher's error: a fixed random
// projection of the candidate's latent direction, unit variance across items.
// Matching teachers carry feature-correlated biases — they consistently over-
// or under-score certain items for every query — so the error on a pair is
// not independent noise. Nearby items (same cluster) receive nearly the same
// bias, so relative order high in the ranking survives; unrelated items span
// the whole bias range, so relative order among low-scored candidates is
// systematically wrong in a way a score threshold can filter out.
inline double item_bias(std::uint64_t seed, const LatentCorpus& c, int j) {
  const Vec& z = c.latent[static_cast<std::size_t>(j)];
  double dot = 0.0;
  double norm = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double nk = hash_normal(mix64(seed ^ ((k + 1) * kSplitmixGamma)));
    dot += nk * z[k];
    norm += z[k] * z[k];
  }
  if (norm <= 0.0) return 0.0;
  return dot / std::sqrt(norm);
}

// Variance shares of the two error components. Systematic candidate bias
// dominates: replayed across every query it is what a trained matching head
// gets consistently wrong, while pure per-pair scatter is the smaller part.
inline constexpr double kTeacherBiasShare = 0.8;

// The error scale follows the teacher's unreliability. A head trained with
// binary matching discriminates well around pairs it scores as matches and
// was never trained below that regime, so its error grows as the clean score
// falls: confident matches keep their true relative order, while the ordering
// it emits among low-scored candidates is structured artifact. This is also
// why a score threshold can separate the trustworthy part of its ranking.
inline double noise_mix(std::uint64_t seed, const LatentCorpus& c, int i, int j) {
  return std::sqrt(kTeacherBiasShare) * item_bias(seed, c, j) +
         std::sqrt(1.0 - kTeacherBiasShare) * pair_noise(seed, c.ids[i], c.ids[j]);
}

inline double teacher_logit(const TeacherSim& t, const LatentCorpus& c, int i, int j) {
  const double base = t.alpha * (relevance(c, i, j) - t.r0);
  if (t.epsilon <= 0.0) return base;
  const double unreliability = 1.0 - sigmoid(base);
  return base + t.epsilon * unreliability * noise_mix(t.noise_seed, c, i, j);
}

// Score in the open interval (0, 1); the clamp keeps saturated sigmoids off
// the exact endpoints so downstream validity thresholds behave.
inline double teacher_score(const TeacherSim& t, const LatentCorpus& c, int i, int j) {
  validate_teacher(t);
  const double p = sigmoid(teacher_logit(t, c, i, j));
  return std::min(1.0 - 1e-12, std::max(1e-12, p));
}

// ---------------------------------------------------------------------------
// Binary matching calibration.
// ---------------------------------------------------------------------------

struct ItmPair {
  int i = 0;      // query position
  int j = 0;      // candidate position
  int label = 0;  // 1 = matching pair, 0 = non-matching
};

inline double bce_term(double p, int y) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("bce: probability outside (0,1)");
  if (y != 0 && y != 1) throw std::invalid_argument("bce: label must be 0 or 1");
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Mean binary cross-entropy of teacher scores against match labels,
// evaluated in logit space for stability. Optional gradient w.r.t.
// (alpha, r0).
inline double itm_loss(const TeacherSim& t, const LatentCorpus& c,
                       const std::vector<ItmPair>& pairs, double* d_alpha = nullptr,
                       double* d_r0 = nullptr) {
  validate_teacher(t);
  if (pairs.empty()) throw std::invalid_argument("itm_loss: empty pair set");
  double loss = 0.0, ga = 0.0, gr = 0.0;
  for (const auto& pr : pairs) {
    if (pr.label != 0 && pr.label != 1) throw std::invalid_argument("itm_loss: label must be 0 or 1");
    const double rel = relevance(c, pr.i, pr.j);
    const double base = t.alpha * (rel - t.r0);
    double u = base;
    double du_dbase = 1.0;  // noise rides on the logit, so (alpha, r0) move it too
    if (t.epsilon > 0.0) {
      const double s = sigmoid(base);
      const double mix = noise_mix(t.noise_seed, c, pr.i, pr.j);
      u = base + t.epsilon * (1.0 - s) * mix;
      du_dbase = 1.0 - t.epsilon * s * (1.0 - s) * mix;
    }
    loss += pr.label ? softplus(-u) : softplus(u);
    if (d_alpha || d_r0) {
      const double resid = sigmoid(u) - pr.label;
      ga += resid * du_dbase * (rel - t.r0);
      gr += resid * du_dbase * (-t.alpha);
    }
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  if (d_alpha) *d_alpha = ga * inv;
  if (d_r0) *d_r0 = gr * inv;
  return loss * inv;
}

// One matching pair and one random non-matching pair per sampled item.
inline std::vector<ItmPair> make_itm_pairs(const LatentCorpus& c, int max_items, Rng& rng) {
  if (c.size() < 2) throw std::invalid_argument("make_itm_pairs: corpus too small");
  const int n = std::min(max_items, c.size());
  std::vector<ItmPair> pairs;
  pairs.reserve(2 * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pairs.push_back({i, i, 1});
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.size() - 1)));
    if (j >= i) ++j;
    pairs.push_back({i, j, 0});
  }
  return pairs;
}

// Bounded search box for calibration. An unconstrained matching loss on a
// world whose positives are exactly r = 1 would push sharpness to infinity;
// the box plays the role of finite teacher capacity.
struct CalibrationBounds {
  double alpha_lo = 5.0;
  double alpha_hi = 40.0;
  double r0_lo = 0.4;
  double r0_hi = 0.85;
};

// Coarse grid search followed by projected Adam refinement.
inline TeacherSim calibrate_teacher(const LatentCorpus& c, double epsilon,
                                    std::uint64_t noise_seed, Rng& rng,
                                    const CalibrationBounds& box = {}, int max_items = 1000,
                                    int refine_steps = 300) {
  if (!(box.alpha_lo > 0.0 && box.alpha_lo <= box.alpha_hi && box.r0_lo > 0.0 &&
        box.r0_lo <= box.r0_hi && box.r0_hi < 1.0))
    throw std::invalid_argument("calibrate_teacher: bad bounds");
  const auto pairs = make_itm_pairs(c, max_items, rng);

  TeacherSim best{box.alpha_lo, box.r0_lo, epsilon, noise_seed};
  double best_loss = std::numeric_limits<double>::infinity();
  const int ga = 9, gr = 13;
  for (int ia = 0; ia < ga; ++ia) {
    const double fa = ga == 1 ? 0.0 : static_cast<double>(ia) / (ga - 1);
    const double alpha = box.alpha_lo * std::pow(box.alpha_hi / box.alpha_lo, fa);
    for (int ir = 0; ir < gr; ++ir) {
      const double fr = gr == 1 ? 0.0 : static_cast<double>(ir) / (gr - 1);
      const double r0 = box.r0_lo + fr * (box.r0_hi - box.r0_lo);
      const TeacherSim cand{alpha, r0, epsilon, noise_seed};
      const double l = itm_loss(cand, c, pairs);
      if (l < best_loss) {
        best_loss = l;
        best = cand;
      }
    }
  }

  AdamState st;
  st.init({1, 1});
  AdamConfig acfg;
  acfg.lr = 0.02;
  for (int s = 0; s < refine_steps; ++s) {
    double da = 0.0, dr = 0.0;
    itm_loss(best, c, pairs, &da, &dr);
    std::vector<std::span<double>> params{{&best.alpha, 1}, {&best.r0, 1}};
    std::vector<std::span<const double>> grads{{&da, 1}, {&dr, 1}};
    adam_step(st, acfg, params, grads, {false, false});
    best.alpha = std::min(box.alpha_hi, std::max(box.alpha_lo, best.alpha));
    best.r0 = std::min(box.r0_hi, std::max(box.r0_lo, best.r0));
  }
  return best;
}

}  // namespace rdl
