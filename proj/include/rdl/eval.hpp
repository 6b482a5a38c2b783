#pragma once

// Evaluation harness: exhaustive recall@k, the two-stage rerank study,
// rank-interval Spearman against the teacher, a bootstrap Spearman protocol
// over graded ground-truth ratings, and score-distribution histograms.

#include <vector>

#include "rdl/corpus.hpp"
#include "rdl/numerics.hpp"
#include "rdl/student.hpp"
#include "rdl/teacher.hpp"

namespace rdl {

struct RetrievalReport {
  // Fractions in [0,1] for k in {1, 5, 10}, both directions.
  double i2t_r1 = 0, i2t_r5 = 0, i2t_r10 = 0;
  double t2i_r1 = 0, t2i_r5 = 0, t2i_r10 = 0;

  // Rank-sum: the six recalls in percentage points, summed (0..600).
  double r_at_s() const {
    return 100.0 * (i2t_r1 + i2t_r5 + i2t_r10 + t2i_r1 + t2i_r5 + t2i_r10);
  }
};

namespace detail {

struct CorpusEmbeds {
  std::vector<Vec> v, t;
};

inline CorpusEmbeds embed_corpus(const StudentModel& model, const LatentCorpus& c) {
  CorpusEmbeds e;
  e.v.resize(c.size());
  e.t.resize(c.size());
  for (int i = 0; i < c.size(); ++i) {
    e.v[i] = encode_v(model, c.x_v[i]).e;
    e.t[i] = encode_t(model, c.x_t[i]).e;
  }
  return e;
}

// Rank of the positive (candidate i) for query i over the whole gallery:
// 1 + the number of candidates strictly more similar, ties broken by
// ascending id.
inline int positive_rank(const LatentCorpus& c, const std::vector<Vec>& q,
                         const std::vector<Vec>& cand, int i) {
  const double sp = dot(q[i], cand[i]);
  int ahead = 0;
  for (int j = 0; j < c.size(); ++j) {
    if (j == i) continue;
    const double s = dot(q[i], cand[j]);
    if (s > sp || (s == sp && c.ids[j] < c.ids[i])) ++ahead;
  }
  return ahead + 1;
}

inline void fill_direction(const std::vector<int>& ranks, double& r1, double& r5, double& r10) {
  int a = 0, b = 0, c = 0;
  for (int r : ranks) {
    if (r <= 1) ++a;
    if (r <= 5) ++b;
    if (r <= 10) ++c;
  }
  const double n = static_cast<double>(ranks.size());
  r1 = a / n;
  r5 = b / n;
  r10 = c / n;
}

}  // namespace detail

// Exhaustive bidirectional recall over the full gallery.
inline RetrievalReport recall_at_k(const StudentModel& model, const LatentCorpus& c) {
  if (c.size() < 2) throw std::invalid_argument("recall_at_k: corpus too small");
  const auto e = detail::embed_corpus(model, c);
  std::vector<int> ri(c.size()), rt(c.size());
  for (int i = 0; i < c.size(); ++i) {
    ri[i] = detail::positive_rank(c, e.v, e.t, i);
    rt[i] = detail::positive_rank(c, e.t, e.v, i);
  }
  RetrievalReport rep;
  detail::fill_direction(ri, rep.i2t_r1, rep.i2t_r5, rep.i2t_r10);
  detail::fill_direction(rt, rep.t2i_r1, rep.t2i_r5, rep.t2i_r10);
  return rep;
}

struct RerankRow {
  int k_rerank = 0;
  RetrievalReport report;
};

// Two-stage study: the teacher reorders the student's top-K prefix (by
// teacher score, descending, ties by ascending id); the tail stays in
// student order. K = 0 is the student baseline by construction.
inline std::vector<RerankRow> rerank_study(const StudentModel& model, const TeacherSim& teacher,
                                           const LatentCorpus& c, const std::vector<int>& ks) {
  if (c.size() < 2) throw std::invalid_argument("rerank_study: corpus too small");
  for (int k : ks)
    if (k < 0) throw std::invalid_argument("rerank_study: K must be >= 0");
  const auto e = detail::embed_corpus(model, c);

  // Per direction, per query: the student rank of the positive and, for each
  // requested K, the post-rerank rank.
  auto direction = [&](const std::vector<Vec>& q, const std::vector<Vec>& cand,
                       std::vector<std::vector<int>>& ranks_per_k) {
    for (int i = 0; i < c.size(); ++i) {
      const int base_rank = detail::positive_rank(c, q, cand, i);
      for (std::size_t kx = 0; kx < ks.size(); ++kx) {
        const int kr = ks[kx];
        int final_rank;
        if (base_rank > kr) {
          final_rank = base_rank;  // positive outside the reranked prefix
        } else {
          const double tp = teacher_score(teacher, c, i, i);
          // The student's top-kr slots hold the positive plus the kr-1 top
          // negatives; re-rank that prefix by teacher score.
          std::vector<std::pair<double, int>> negs;  // (sim, position)
          negs.reserve(c.size() - 1);
          for (int j = 0; j < c.size(); ++j) {
            if (j == i) continue;
            negs.emplace_back(dot(q[i], cand[j]), j);
          }
          std::sort(negs.begin(), negs.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return c.ids[a.second] < c.ids[b.second];
          });
          int ahead = 0;
          for (int p = 0; p < kr - 1 && p < static_cast<int>(negs.size()); ++p) {
            const int jpos = negs[p].second;
            const double ts = teacher_score(teacher, c, i, jpos);
            if (ts > tp || (ts == tp && c.ids[jpos] < c.ids[i])) ++ahead;
          }
          final_rank = ahead + 1;
        }
        ranks_per_k[kx].push_back(final_rank);
      }
    }
  };

  std::vector<std::vector<int>> i2t(ks.size()), t2i(ks.size());
  direction(e.v, e.t, i2t);
  direction(e.t, e.v, t2i);
  std::vector<RerankRow> rows(ks.size());
  for (std::size_t kx = 0; kx < ks.size(); ++kx) {
    rows[kx].k_rerank = ks[kx];
    detail::fill_direction(i2t[kx], rows[kx].report.i2t_r1, rows[kx].report.i2t_r5,
                           rows[kx].report.i2t_r10);
    detail::fill_direction(t2i[kx], rows[kx].report.t2i_r1, rows[kx].report.t2i_r5,
                           rows[kx].report.t2i_r10);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Spearman rank correlation (average ranks for ties; defined as 0 when either
// side has zero rank variance).
// ---------------------------------------------------------------------------

inline Vec average_ranks(const Vec& x) {
  const int n = static_cast<int>(x.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
  Vec ranks(n, 0.0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;  // 1-based average rank
    for (int k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least 2 pairs");
  const Vec rx = average_ranks(x), ry = average_ranks(y);
  const int n = static_cast<int>(x.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Rank-interval correlation: Spearman between student similarities and
// teacher scores within windows of the student's ranked list, averaged over
// queries. Gallery too small for the requested windows shrinks to half-width
// windows and reports it.
// ---------------------------------------------------------------------------

struct IntervalRow {
  int lo = 0, hi = 0;      // 1-based inclusive positions in the ranked list
  double i2t = 0, t2i = 0;

  double mean() const { return 0.5 * (i2t + t2i); }
};

inline std::vector<std::pair<int, int>> default_intervals(int gallery, bool* shrunk = nullptr) {
  const bool small = gallery < 65;  // need 64 ranked candidates for full windows
  if (shrunk) *shrunk = small;
  if (small) return {{1, 8}, {9, 16}, {17, 24}, {25, 32}};
  return {{1, 16}, {17, 32}, {33, 48}, {49, 64}};
}

inline std::vector<IntervalRow> rank_interval_correlation(
    const StudentModel& model, const TeacherSim& teacher, const LatentCorpus& c,
    const std::vector<std::pair<int, int>>& intervals) {
  if (c.size() < 2) throw std::invalid_argument("rank_interval_correlation: corpus too small");
  for (const auto& [lo, hi] : intervals)
    if (!(1 <= lo && lo < hi && hi <= c.size()))
      throw std::invalid_argument("rank_interval_correlation: interval outside gallery");
  const auto e = detail::embed_corpus(model, c);

  auto direction = [&](const std::vector<Vec>& q, const std::vector<Vec>& cand,
                       std::vector<double>& out) {
    out.assign(intervals.size(), 0.0);
    std::vector<std::pair<double, int>> list;  // (sim, position), full gallery
    for (int i = 0; i < c.size(); ++i) {
      list.clear();
      for (int j = 0; j < c.size(); ++j)
        list.emplace_back(dot(q[i], cand[j]), j);
      std::sort(list.begin(), list.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return c.ids[a.second] < c.ids[b.second];
      });
      for (std::size_t w = 0; w < intervals.size(); ++w) {
        const auto [lo, hi] = intervals[w];
        Vec xs, ys;
        for (int p = lo - 1; p < hi; ++p) {
          xs.push_back(list[p].first);
          ys.push_back(teacher_score(teacher, c, i, list[p].second));
        }
        out[w] += spearman(xs, ys);
      }
    }
    for (double& v : out) v /= c.size();
  };

  std::vector<double> i2t, t2i;
  direction(e.v, e.t, i2t);
  direction(e.t, e.v, t2i);
  std::vector<IntervalRow> rows(intervals.size());
  for (std::size_t w = 0; w < intervals.size(); ++w) {
    rows[w].lo = intervals[w].first;
    rows[w].hi = intervals[w].second;
    rows[w].i2t = i2t[w];
    rows[w].t2i = t2i[w];
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Bootstrap Spearman over per-query rated pairs: each resample draws half the
// queries without replacement and one rated pair per drawn query, then
// correlates model scores with ground-truth ratings.
// ---------------------------------------------------------------------------

struct QueryRatings {
  std::vector<double> gt;     // graded ground-truth relevance
  std::vector<double> model;  // model similarity, aligned
};

struct BootstrapResult {
  double mean = 0.0;
  double stddev = 0.0;
  int resamples = 0;
};

inline BootstrapResult spearman_bootstrap(const std::vector<QueryRatings>& queries, int resamples,
                                          Rng& rng) {
  if (resamples < 1) throw std::invalid_argument("spearman_bootstrap: resamples must be >= 1");
  if (queries.size() < 4)
    throw std::invalid_argument("spearman_bootstrap: need at least 4 queries");
  for (const auto& q : queries) {
    if (q.gt.empty() || q.gt.size() != q.model.size())
      throw std::invalid_argument("spearman_bootstrap: each query needs aligned rated pairs");
  }
  const int nq = static_cast<int>(queries.size());
  const int half = nq / 2;
  std::vector<int> idx(nq);
  Vec vals;
  vals.reserve(resamples);
  for (int r = 0; r < resamples; ++r) {
    double rho = 0.0;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 100)
        throw std::runtime_error("spearman_bootstrap: cannot draw a usable resample");
      for (int i = 0; i < nq; ++i) idx[i] = i;
      // Partial Fisher-Yates: the first `half` entries are the drawn queries.
      for (int i = 0; i < half; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(nq - i)));
        std::swap(idx[i], idx[j]);
      }
      Vec gt, model;
      for (int i = 0; i < half; ++i) {
        const auto& q = queries[idx[i]];
        const int p = static_cast<int>(rng.below(q.gt.size()));
        gt.push_back(q.gt[p]);
        model.push_back(q.model[p]);
      }
      if (static_cast<int>(gt.size()) < 2) continue;
      rho = spearman(gt, model);
      break;
    }
    vals.push_back(rho);
  }
  BootstrapResult out;
  out.resamples = resamples;
  for (double v : vals) out.mean += v;
  out.mean /= resamples;
  if (resamples > 1) {
    double ss = 0.0;
    for (double v : vals) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / (resamples - 1));
  }
  return out;
}

// Stand-in rated-pair builder: for every query, the positive, two same-
// cluster items, and three random distinct others, rated by ground-truth
// relevance and scored by the student (query view against candidate view).
inline std::vector<QueryRatings> make_rated_pairs(const StudentModel& model,
                                                  const LatentCorpus& c, Rng& rng) {
  if (c.size() < 8) throw std::invalid_argument("make_rated_pairs: corpus too small");
  const auto e = detail::embed_corpus(model, c);
  std::vector<QueryRatings> out(c.size());
  for (int i = 0; i < c.size(); ++i) {
    std::vector<int> picks{i};
    std::vector<int> same;
    for (int j = 0; j < c.size(); ++j)
      if (j != i && c.cluster[j] == c.cluster[i]) same.push_back(j);
    for (int t = 0; t < 2 && !same.empty(); ++t) {
      const int p = static_cast<int>(rng.below(same.size()));
      picks.push_back(same[p]);
      same.erase(same.begin() + p);
    }
    while (picks.size() < 6) {
      const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.size())));
      if (std::find(picks.begin(), picks.end(), j) == picks.end()) picks.push_back(j);
    }
    for (int j : picks) {
      out[i].gt.push_back(relevance(c, i, j));
      out[i].model.push_back(dot(e.v[i], e.t[j]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Score-distribution histograms and concentration statistics.
// ---------------------------------------------------------------------------

struct ScoreHistograms {
  int bins = 0;
  Vec teacher_random;    // teacher scores over random non-positive pairs, [0,1]
  Vec student_random;    // student sims over the same pairs, [-1,1]
  Vec student_positive;  // student sims over positive pairs, [-1,1]
  double teacher_concentration = 0.0;  // mass with score <= 0.1 or >= 0.9
  double student_tail = 0.0;           // mass with |sim| > 0.9 among random pairs
};

inline ScoreHistograms score_histograms(const StudentModel& model, const TeacherSim& teacher,
                                        const LatentCorpus& c, int n_pairs, int bins, Rng& rng) {
  if (bins < 2) throw std::invalid_argument("score_histograms: bins must be >= 2");
  if (n_pairs < 1) throw std::invalid_argument("score_histograms: n_pairs must be >= 1");
  if (c.size() < 2) throw std::invalid_argument("score_histograms: corpus too small");
  const auto e = detail::embed_corpus(model, c);
  ScoreHistograms h;
  h.bins = bins;
  h.teacher_random.assign(bins, 0.0);
  h.student_random.assign(bins, 0.0);
  h.student_positive.assign(bins, 0.0);

  auto bin_of = [bins](double v, double lo, double hi) {
    int b = static_cast<int>(static_cast<double>(bins) * (v - lo) / (hi - lo));
    return std::min(bins - 1, std::max(0, b));
  };

  int concentrated = 0, tail = 0;
  for (int p = 0; p < n_pairs; ++p) {
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.size())));
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.size() - 1)));
    if (j >= i) ++j;
    const double ts = teacher_score(teacher, c, i, j);
    const double ss = dot(e.v[i], e.t[j]);
    h.teacher_random[bin_of(ts, 0.0, 1.0)] += 1.0;
    h.student_random[bin_of(ss, -1.0, 1.0)] += 1.0;
    if (ts <= 0.1 || ts >= 0.9) ++concentrated;
    if (std::fabs(ss) > 0.9) ++tail;
  }
  for (int i = 0; i < c.size(); ++i)
    h.student_positive[bin_of(dot(e.v[i], e.t[i]), -1.0, 1.0)] += 1.0;

  const double inv = 1.0 / static_cast<double>(n_pairs);
  for (double& v : h.teacher_random) v *= inv;
  for (double& v : h.student_random) v *= inv;
  const double invp = 1.0 / static_cast<double>(c.size());
  for (double& v : h.student_positive) v *= invp;
  h.teacher_concentration = concentrated * inv;
  h.student_tail = tail * inv;
  return h;
}

}  // namespace rdl
