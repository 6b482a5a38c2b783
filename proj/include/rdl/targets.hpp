#pragma once

// Partial ranking targets: teacher scores split a query's hard negatives into
// an ordered valid prefix (score >= m, sorted by score descending) and an
// unordered invalid remainder (below threshold or unavailable to the scorer).
// The first invalid index J* = |valid| + 1 bounds how deep distillation
// trusts the teacher's order.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rdl/mining.hpp"

namespace rdl {

struct PartialRankingTarget {
  long long query_id = -1;
  std::vector<long long> valid_ids;   // teacher score descending
  std::vector<int> valid_pos;         // aligned positions into the hard set
  std::vector<double> valid_scores;
  std::vector<long long> invalid_ids;  // ascending id (fixed order for reproducible sums)
  std::vector<int> invalid_pos;

  int j_star() const { return static_cast<int>(valid_ids.size()) + 1; }
  bool vacuous() const { return valid_ids.empty(); }
};

// Scorer abstraction shared by online (teacher restricted to a reference set)
// and offline (bank lookup) modes; absence means "cannot score".
using ScoreFn = std::function<std::optional<double>(long long query_id, long long candidate_id)>;

namespace detail {

struct ScoredPos {
  double score;
  long long id;
  int pos;
};

inline void sort_by_score(std::vector<ScoredPos>& v) {
  std::sort(v.begin(), v.end(), [](const ScoredPos& a, const ScoredPos& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.id != b.id) return a.id < b.id;
    return a.pos < b.pos;
  });
}

inline void sort_by_id(std::vector<ScoredPos>& v) {
  std::sort(v.begin(), v.end(), [](const ScoredPos& a, const ScoredPos& b) {
    if (a.id != b.id) return a.id < b.id;
    return a.pos < b.pos;
  });
}

inline PartialRankingTarget assemble(long long query_id, std::vector<ScoredPos>& valid,
                                     std::vector<ScoredPos>& invalid) {
  sort_by_score(valid);
  sort_by_id(invalid);
  PartialRankingTarget t;
  t.query_id = query_id;
  for (const auto& s : valid) {
    t.valid_ids.push_back(s.id);
    t.valid_pos.push_back(s.pos);
    t.valid_scores.push_back(s.score);
  }
  for (const auto& s : invalid) {
    t.invalid_ids.push_back(s.id);
    t.invalid_pos.push_back(s.pos);
  }
  return t;
}

}  // namespace detail

// Threshold mode: valid iff the scorer produces a score >= m. The boundary
// score == m is valid; absence is invalid regardless of m.
inline PartialRankingTarget build_target(const HardNegativeSet& hard, const ScoreFn& scorer,
                                         double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("build_target: m must be in [0,1]");
  std::vector<detail::ScoredPos> valid, invalid;
  for (int p = 0; p < hard.size(); ++p) {
    const auto s = scorer(hard.query_id, hard.ids[p]);
    if (s.has_value()) {
      if (!(*s > 0.0 && *s < 1.0))
        throw std::runtime_error("build_target: score outside (0,1)");
      if (*s >= m) {
        valid.push_back({*s, hard.ids[p], p});
        continue;
      }
    }
    invalid.push_back({s.value_or(0.0), hard.ids[p], p});
  }
  return detail::assemble(hard.query_id, valid, invalid);
}

// Degenerate mode: exactly the single top-teacher-scored negative is valid
// (ties by ascending id, then hard-set position); everything else is
// invalid. Vacuous when no candidate is scoreable.
inline PartialRankingTarget build_target_single(const HardNegativeSet& hard,
                                                const ScoreFn& scorer) {
  std::vector<detail::ScoredPos> scored, invalid;
  for (int p = 0; p < hard.size(); ++p) {
    const auto s = scorer(hard.query_id, hard.ids[p]);
    if (s.has_value()) {
      if (!(*s > 0.0 && *s < 1.0))
        throw std::runtime_error("build_target: score outside (0,1)");
      scored.push_back({*s, hard.ids[p], p});
    } else {
      invalid.push_back({0.0, hard.ids[p], p});
    }
  }
  std::vector<detail::ScoredPos> valid;
  if (!scored.empty()) {
    detail::sort_by_score(scored);
    valid.push_back(scored.front());
    for (std::size_t k = 1; k < scored.size(); ++k) invalid.push_back(scored[k]);
  }
  return detail::assemble(hard.query_id, valid, invalid);
}

struct TargetDiff {
  bool agree = true;
  std::string detail;
};

// Agreement: identical ordered valid lists (ids and scores) and identical
// invalid id multisets.
inline TargetDiff targets_agree(const PartialRankingTarget& a, const PartialRankingTarget& b) {
  TargetDiff d;
  if (a.query_id != b.query_id) {
    d.agree = false;
    d.detail = "query ids differ";
    return d;
  }
  if (a.valid_ids != b.valid_ids) {
    d.agree = false;
    d.detail = "valid id sequences differ (query " + std::to_string(a.query_id) + ")";
    return d;
  }
  if (a.valid_scores != b.valid_scores) {
    d.agree = false;
    d.detail = "valid scores differ (query " + std::to_string(a.query_id) + ")";
    return d;
  }
  auto ai = a.invalid_ids, bi = b.invalid_ids;
  std::sort(ai.begin(), ai.end());
  std::sort(bi.begin(), bi.end());
  if (ai != bi) {
    d.agree = false;
    d.detail = "invalid id sets differ (query " + std::to_string(a.query_id) + ")";
  }
  return d;
}

}  // namespace rdl
