#pragma once

// Loss zoo. Every loss returns its scalar value together with analytic
// gradients w.r.t. the live projection matrices and the log-temperature;
// candidate features come from the momentum encoder and are constant.
//
// Per-query cores operate on plain feature arrays so they can be tested (and
// finite-difference checked) in isolation; direction wrappers map them over a
// batch, push gradients through the encoder, and average the two retrieval
// directions.

#include <limits>
#include <vector>

#include "rdl/memory.hpp"
#include "rdl/mining.hpp"
#include "rdl/student.hpp"
#include "rdl/targets.hpp"

namespace rdl {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct QueryGrad {
  double value = 0.0;
  Vec d_embed;          // w.r.t. the query's unit embedding
  double d_log_tau = 0.0;
};

// ---------------------------------------------------------------------------
// Per-query cores.
// ---------------------------------------------------------------------------

// Bidirectional-alignment core: softmax cross-entropy of the positive among
// all candidates at temperature tau.
inline QueryGrad infonce_query(const Vec& q, const std::vector<const Vec*>& feats, int pos,
                               double tau) {
  if (pos < 0 || pos >= static_cast<int>(feats.size()))
    throw std::invalid_argument("infonce_query: positive index out of range");
  const int n = static_cast<int>(feats.size());
  Vec z(n);
  for (int k = 0; k < n; ++k) z[k] = dot(q, *feats[k]) / tau;
  const Vec logp = log_softmax(z);
  QueryGrad out;
  out.value = -logp[pos];
  out.d_embed.assign(q.size(), 0.0);
  for (int k = 0; k < n; ++k) {
    const double coef = std::exp(logp[k]) - (k == pos ? 1.0 : 0.0);
    const Vec& f = *feats[k];
    for (std::size_t d = 0; d < q.size(); ++d) out.d_embed[d] += coef * f[d] / tau;
    out.d_log_tau -= coef * z[k];
  }
  return out;
}

// Partial-ranking distillation core for one query.
//
// `ordered` is the teacher-ordered hard-negative feature list c_1..c_K
// (valid prefix by descending teacher score, then the invalid remainder);
// `n_valid` = J* - 1 of the target. For each valid rank j the term is a
// softmax cross-entropy of c_j against the denominator {c_j..c_K} plus,
// when `include_easy`, the student-ordered easy tail. Terms are averaged
// over the valid ranks; no valid negatives means a zero loss.
inline QueryGrad cprd_query(const Vec& q, const std::vector<const Vec*>& ordered, int n_valid,
                            const std::vector<const Vec*>& easy, double tau, bool include_easy) {
  const int kk = static_cast<int>(ordered.size());
  if (n_valid < 0 || n_valid > kk)
    throw std::invalid_argument("cprd_query: n_valid out of range");
  QueryGrad out;
  out.d_embed.assign(q.size(), 0.0);
  if (n_valid == 0) return out;

  Vec zh(kk);
  for (int k = 0; k < kk; ++k) zh[k] = dot(q, *ordered[k]) / tau;
  const int ne = include_easy ? static_cast<int>(easy.size()) : 0;
  Vec ze(ne);
  double easy_lse = kNegInf;
  for (int k = 0; k < ne; ++k) {
    ze[k] = dot(q, *easy[k]) / tau;
    easy_lse = logaddexp(easy_lse, ze[k]);
  }

  // suffix_lse[k] = lse over hard ranks k..K-1
  Vec suffix_lse(kk + 1, kNegInf);
  for (int k = kk - 1; k >= 0; --k) suffix_lse[k] = logaddexp(zh[k], suffix_lse[k + 1]);

  Vec log_denom(n_valid);
  double total = 0.0;
  for (int j = 0; j < n_valid; ++j) {
    log_denom[j] = logaddexp(suffix_lse[j], easy_lse);
    total += -zh[j] + log_denom[j];
  }
  const double inv = 1.0 / static_cast<double>(n_valid);
  out.value = total * inv;

  // Hard-candidate coefficients: candidate at rank k sits in the denominator
  // of every term j <= k, and in the numerator of term k when k is valid.
  // Each exponent z - log_denom is <= 0, so the exps cannot overflow.
  Vec coef(kk, 0.0);
  for (int k = 0; k < kk; ++k) {
    double s = 0.0;
    const int jmax = std::min(k, n_valid - 1);
    for (int j = 0; j <= jmax; ++j) s += std::exp(zh[k] - log_denom[j]);
    if (k < n_valid) s -= 1.0;
    coef[k] = s * inv;
  }
  double dlt = 0.0;
  for (int k = 0; k < kk; ++k) {
    const Vec& f = *ordered[k];
    for (std::size_t d = 0; d < q.size(); ++d) out.d_embed[d] += coef[k] * f[d] / tau;
    dlt -= coef[k] * zh[k];
  }
  if (ne > 0) {
    // Easy candidates appear in every denominator; factor the shared sum.
    const double dmin = *std::min_element(log_denom.begin(), log_denom.end());
    double sd = 0.0;
    for (int j = 0; j < n_valid; ++j) sd += std::exp(dmin - log_denom[j]);
    for (int k = 0; k < ne; ++k) {
      const double c = std::exp(ze[k] - dmin) * sd * inv;
      const Vec& f = *easy[k];
      for (std::size_t d = 0; d < q.size(); ++d) out.d_embed[d] += c * f[d] / tau;
      dlt -= c * ze[k];
    }
  }
  out.d_log_tau = dlt;
  return out;
}

// KL distillation core: teacher and student distributions over the positive
// plus the hard negatives, each at its own temperature.
inline QueryGrad kl_query(const Vec& q, const std::vector<const Vec*>& feats,
                          const Vec& teacher_scores, double tau_s, double tau_t) {
  if (feats.size() < 2) throw std::invalid_argument("kl_query: no negatives");
  if (feats.size() != teacher_scores.size())
    throw std::invalid_argument("kl_query: score count mismatch");
  if (!(tau_t > 0.0)) throw std::invalid_argument("kl_query: teacher temperature must be > 0");
  const int n = static_cast<int>(feats.size());
  Vec zt(n), zs(n);
  for (int k = 0; k < n; ++k) {
    zt[k] = teacher_scores[k] / tau_t;
    zs[k] = dot(q, *feats[k]) / tau_s;
  }
  const Vec logp = log_softmax(zt);
  const Vec logq = log_softmax(zs);
  QueryGrad out;
  out.d_embed.assign(q.size(), 0.0);
  for (int k = 0; k < n; ++k) {
    const double p = std::exp(logp[k]);
    out.value += p * (logp[k] - logq[k]);
    const double coef = std::exp(logq[k]) - p;
    const Vec& f = *feats[k];
    for (std::size_t d = 0; d < q.size(); ++d) out.d_embed[d] += coef * f[d] / tau_s;
    out.d_log_tau -= coef * zs[k];
  }
  return out;
}

// Margin-MSE core. The hardest negative is teacher-designated: the highest
// teacher score (ties by ascending id). Student and teacher positive-minus-
// hardest margins are matched by squared error. With `rescale`, student
// similarities are min-max normalized over {positive} + negatives first.
inline QueryGrad m3se_query(const Vec& q, const Vec& pos_feat,
                            const std::vector<const Vec*>& neg_feats,
                            const std::vector<long long>& neg_ids, double pos_score,
                            const Vec& neg_scores, bool rescale) {
  const int n = static_cast<int>(neg_feats.size());
  if (n == 0) throw std::invalid_argument("m3se_query: no negatives");
  if (neg_scores.size() != static_cast<std::size_t>(n) ||
      neg_ids.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("m3se_query: negative count mismatch");

  int jstar = 0;
  for (int k = 1; k < n; ++k) {
    if (neg_scores[k] > neg_scores[jstar] ||
        (neg_scores[k] == neg_scores[jstar] && neg_ids[k] < neg_ids[jstar]))
      jstar = k;
  }
  const double margin_t = pos_score - neg_scores[jstar];

  // s[0] = positive, s[1+k] = negative k
  Vec s(n + 1);
  s[0] = dot(q, pos_feat);
  for (int k = 0; k < n; ++k) s[k + 1] = dot(q, *neg_feats[k]);

  double margin_s;
  Vec dmargin(n + 1, 0.0);  // d margin_s / d s
  if (!rescale) {
    margin_s = s[0] - s[jstar + 1];
    dmargin[0] += 1.0;
    dmargin[jstar + 1] -= 1.0;
  } else {
    int imax = 0, imin = 0;
    for (int k = 1; k <= n; ++k) {
      if (s[k] > s[imax]) imax = k;
      if (s[k] < s[imin]) imin = k;
    }
    const double range = s[imax] - s[imin];
    if (range <= 1e-12) throw std::runtime_error("m3se_query: degenerate similarity range");
    margin_s = (s[0] - s[jstar + 1]) / range;
    dmargin[0] += 1.0 / range;
    dmargin[jstar + 1] -= 1.0 / range;
    dmargin[imax] -= margin_s / range;
    dmargin[imin] += margin_s / range;
  }

  QueryGrad out;
  const double diff = margin_s - margin_t;
  out.value = diff * diff;
  out.d_embed.assign(q.size(), 0.0);
  for (int k = 0; k <= n; ++k) {
    const double c = 2.0 * diff * dmargin[k];
    if (c == 0.0) continue;
    const Vec& f = k == 0 ? pos_feat : *neg_feats[k - 1];
    for (std::size_t d = 0; d < q.size(); ++d) out.d_embed[d] += c * f[d];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax gap property (ordering-amplification lemma used by the analysis).
// For descending scores s and 0-based indices i < j <= m < n with
// s_i > s_j >= s_m > s_n and s_i - s_j > s_m - s_n, the softmax at any
// temperature tau > 0 keeps q_i - q_j > q_m - q_n.
// ---------------------------------------------------------------------------

struct GapCheck {
  bool holds = false;
  double upper_gap = 0.0;  // q_i - q_j
  double lower_gap = 0.0;  // q_m - q_n
};

inline GapCheck softmax_gap_property(const Vec& scores, int i, int j, int m, int n, double tau) {
  const int len = static_cast<int>(scores.size());
  if (!(0 <= i && i < j && j <= m && m < n && n < len))
    throw std::invalid_argument("softmax_gap_property: bad index pattern");
  if (!(tau > 0.0)) throw std::invalid_argument("softmax_gap_property: tau must be > 0");
  for (int k = 0; k + 1 < len; ++k)
    if (scores[k] < scores[k + 1])
      throw std::invalid_argument("softmax_gap_property: scores must be non-increasing");
  if (!(scores[i] > scores[j] && scores[j] >= scores[m] && scores[m] > scores[n]))
    throw std::invalid_argument("softmax_gap_property: strictness preconditions violated");
  if (!(scores[i] - scores[j] > scores[m] - scores[n]))
    throw std::invalid_argument("softmax_gap_property: upper gap must exceed lower gap");
  Vec z(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) z[k] = scores[k] / tau;
  const Vec q = softmax(z);
  GapCheck g;
  g.upper_gap = q[i] - q[j];
  g.lower_gap = q[m] - q[n];
  g.holds = g.upper_gap > g.lower_gap;
  return g;
}

// ---------------------------------------------------------------------------
// Batch wrappers.
// ---------------------------------------------------------------------------

struct TrainBatch {
  std::vector<long long> ids;
  std::vector<const Vec*> x_v, x_t;  // raw inputs
  std::vector<Encoded> v, t;         // live encodes

  int size() const { return static_cast<int>(ids.size()); }
};

struct LossValue {
  double value = 0.0;
  Mat d_w_v, d_w_t;
  double d_log_tau = 0.0;

  static LossValue like(const StudentModel& m) {
    LossValue lv;
    lv.d_w_v = Mat(m.w_v.rows, m.w_v.cols);
    lv.d_w_t = Mat(m.w_t.rows, m.w_t.cols);
    return lv;
  }

  void add(const LossValue& o) {
    value += o.value;
    for (std::size_t k = 0; k < d_w_v.a.size(); ++k) d_w_v.a[k] += o.d_w_v.a[k];
    for (std::size_t k = 0; k < d_w_t.a.size(); ++k) d_w_t.a[k] += o.d_w_t.a[k];
    d_log_tau += o.d_log_tau;
  }
};

// Mining/target artifacts for one direction, aligned with the batch.
struct DistillPlan {
  std::vector<NegativeRanking> ranking;
  std::vector<HardNegativeSet> hard;
  std::vector<PartialRankingTarget> target;  // partial-ranking modes
  std::vector<double> pos_scores;            // kl / m3se modes
  std::vector<Vec> neg_scores;               // aligned with hard[i]
};

namespace detail {

// One retrieval direction: queries from `qenc`/`x` against candidate `view`;
// gradients flow into `gw`.
struct DirSide {
  const std::vector<Encoded>* qenc;
  const std::vector<const Vec*>* x;
  const CandidateView* view;
  Mat* gw;
  const DistillPlan* plan;
};

inline void apply_query_grad(LossValue& lv, const DirSide& side, int i, const QueryGrad& qg,
                             double w) {
  lv.value += w * qg.value;
  Vec de(qg.d_embed.size());
  for (std::size_t d = 0; d < de.size(); ++d) de[d] = w * qg.d_embed[d];
  encode_backward(*side.gw, *(*side.x)[i], (*side.qenc)[i], de);
  lv.d_log_tau += w * qg.d_log_tau;
}

}  // namespace detail

// Bidirectional alignment loss over batch + queue candidates. The query's
// own positive participates exactly once (its batch slot); stale queue
// duplicates of the query id are excluded.
inline LossValue align_loss(const StudentModel& model, const TrainBatch& batch,
                            const CandidateView& cand_t, const CandidateView& cand_v) {
  const double tau = temperature(model);
  require_tau_in_range(tau);
  const int b = batch.size();
  if (b == 0) throw std::invalid_argument("align_loss: empty batch");
  if (cand_t.batch_size != b || cand_v.batch_size != b)
    throw std::invalid_argument("align_loss: candidate view batch mismatch");
  LossValue lv = LossValue::like(model);
  const double w = 1.0 / (2.0 * b);
  detail::DirSide i2t{&batch.v, &batch.x_v, &cand_t, &lv.d_w_v, nullptr};
  detail::DirSide t2i{&batch.t, &batch.x_t, &cand_v, &lv.d_w_t, nullptr};
  for (const auto& side : {i2t, t2i}) {
    std::vector<const Vec*> feats;
    for (int i = 0; i < b; ++i) {
      const long long qid = batch.ids[i];
      feats.clear();
      int pos = -1;
      for (int s = 0; s < side.view->size(); ++s) {
        if (s >= side.view->batch_size && side.view->ids[s] == qid) continue;
        if (s == i) pos = static_cast<int>(feats.size());
        feats.push_back(side.view->feats[s]);
      }
      detail::apply_query_grad(lv, side, i, infonce_query((*side.qenc)[i].e, feats, pos, tau), w);
    }
  }
  return lv;
}

// Contrastive partial-ranking distillation over mined hard negatives.
// `truncate_easy` drops the easy tail from the denominators (the hat
// variant); the default keeps batch+queue easy negatives in every term.
inline LossValue cprd_loss(const StudentModel& model, const TrainBatch& batch,
                           const CandidateView& cand_t, const CandidateView& cand_v,
                           const DistillPlan& i2t, const DistillPlan& t2i,
                           bool truncate_easy = false) {
  const double tau = temperature(model);
  require_tau_in_range(tau);
  const int b = batch.size();
  if (b == 0) throw std::invalid_argument("cprd_loss: empty batch");
  if (static_cast<int>(i2t.target.size()) != b || static_cast<int>(t2i.target.size()) != b ||
      static_cast<int>(i2t.hard.size()) != b || static_cast<int>(t2i.hard.size()) != b ||
      static_cast<int>(i2t.ranking.size()) != b || static_cast<int>(t2i.ranking.size()) != b)
    throw std::invalid_argument("cprd_loss: plan size mismatch");
  LossValue lv = LossValue::like(model);
  const double w = 1.0 / (2.0 * b);
  detail::DirSide si2t{&batch.v, &batch.x_v, &cand_t, &lv.d_w_v, &i2t};
  detail::DirSide st2i{&batch.t, &batch.x_t, &cand_v, &lv.d_w_t, &t2i};
  for (const auto& side : {si2t, st2i}) {
    for (int i = 0; i < b; ++i) {
      const auto& hard = side.plan->hard[i];
      const auto& tgt = side.plan->target[i];
      const auto& rank = side.plan->ranking[i];
      if (tgt.j_star() - 1 + static_cast<int>(tgt.invalid_ids.size()) != hard.size())
        throw std::invalid_argument("cprd_loss: target does not cover the hard set");
      std::vector<const Vec*> ordered;
      ordered.reserve(hard.size());
      for (int p : tgt.valid_pos) ordered.push_back(side.view->feats[hard.slots[p]]);
      for (int p : tgt.invalid_pos) ordered.push_back(side.view->feats[hard.slots[p]]);
      std::vector<const Vec*> easy;
      if (!truncate_easy) {
        easy.reserve(rank.size() - hard.size());
        for (int k = hard.size(); k < rank.size(); ++k)
          easy.push_back(side.view->feats[rank.slots[k]]);
      }
      const auto qg = cprd_query((*side.qenc)[i].e, ordered, tgt.j_star() - 1, easy, tau,
                                 !truncate_easy);
      detail::apply_query_grad(lv, side, i, qg, w);
    }
  }
  return lv;
}

// Soft-label KL distillation over {positive} + hard negatives.
inline LossValue kl_loss(const StudentModel& model, const TrainBatch& batch,
                         const CandidateView& cand_t, const CandidateView& cand_v,
                         const DistillPlan& i2t, const DistillPlan& t2i, double tau_teacher) {
  const double tau = temperature(model);
  require_tau_in_range(tau);
  const int b = batch.size();
  if (b == 0) throw std::invalid_argument("kl_loss: empty batch");
  LossValue lv = LossValue::like(model);
  const double w = 1.0 / (2.0 * b);
  detail::DirSide si2t{&batch.v, &batch.x_v, &cand_t, &lv.d_w_v, &i2t};
  detail::DirSide st2i{&batch.t, &batch.x_t, &cand_v, &lv.d_w_t, &t2i};
  for (const auto& side : {si2t, st2i}) {
    for (int i = 0; i < b; ++i) {
      const auto& hard = side.plan->hard[i];
      std::vector<const Vec*> feats;
      feats.reserve(hard.size() + 1);
      feats.push_back(side.view->feats[i]);  // positive momentum feature
      for (int s : hard.slots) feats.push_back(side.view->feats[s]);
      Vec scores(hard.size() + 1);
      scores[0] = side.plan->pos_scores[i];
      for (int k = 0; k < hard.size(); ++k) scores[k + 1] = side.plan->neg_scores[i][k];
      const auto qg = kl_query((*side.qenc)[i].e, feats, scores, tau, tau_teacher);
      detail::apply_query_grad(lv, side, i, qg, w);
    }
  }
  return lv;
}

// Margin-MSE distillation (optionally with min-max rescaled student margins).
inline LossValue m3se_loss(const StudentModel& model, const TrainBatch& batch,
                           const CandidateView& cand_t, const CandidateView& cand_v,
                           const DistillPlan& i2t, const DistillPlan& t2i, bool rescale) {
  const int b = batch.size();
  if (b == 0) throw std::invalid_argument("m3se_loss: empty batch");
  LossValue lv = LossValue::like(model);
  const double w = 1.0 / (2.0 * b);
  detail::DirSide si2t{&batch.v, &batch.x_v, &cand_t, &lv.d_w_v, &i2t};
  detail::DirSide st2i{&batch.t, &batch.x_t, &cand_v, &lv.d_w_t, &t2i};
  for (const auto& side : {si2t, st2i}) {
    for (int i = 0; i < b; ++i) {
      const auto& hard = side.plan->hard[i];
      std::vector<const Vec*> negs;
      negs.reserve(hard.size());
      for (int s : hard.slots) negs.push_back(side.view->feats[s]);
      const auto qg =
          m3se_query((*side.qenc)[i].e, *side.view->feats[i], negs, hard.ids,
                     side.plan->pos_scores[i], side.plan->neg_scores[i], rescale);
      detail::apply_query_grad(lv, side, i, qg, w);
    }
  }
  return lv;
}

}  // namespace rdl
