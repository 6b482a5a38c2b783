#pragma once

// Hard-negative mining: rank a query's negative candidates by student
// similarity (descending, deterministic tie-breaks) and take the top-K
// prefix. Slots index back into the CandidateView so losses can fetch
// features without id lookups even when queue duplicates share an id.

#include <algorithm>
#include <vector>

#include "rdl/memory.hpp"
#include "rdl/numerics.hpp"

namespace rdl {

struct NegativeRanking {
  long long query_id = -1;
  std::vector<long long> ids;   // descending student similarity
  std::vector<int> slots;       // aligned positions in the CandidateView
  std::vector<double> sims;

  int size() const { return static_cast<int>(ids.size()); }
};

// Candidate slots that may serve as negatives for this query: everything
// except the query's own batch slot and queue duplicates of its id. Other
// batch items remain, matching the contrastive denominator convention.
inline std::vector<int> negative_slots(const CandidateView& view, long long query_id,
                                       int batch_slot) {
  std::vector<int> slots;
  slots.reserve(view.ids.size());
  for (int s = 0; s < view.size(); ++s) {
    if (s == batch_slot) continue;
    if (s >= view.batch_size && view.ids[s] == query_id) continue;
    slots.push_back(s);
  }
  return slots;
}

// Sorts the given candidate slots by similarity to the query embedding,
// descending; ties break by ascending candidate id, then ascending slot.
// Candidates must already exclude the query's positive.
inline NegativeRanking rank_negatives(const Vec& query_embed, const CandidateView& view,
                                      const std::vector<int>& slots, long long query_id) {
  NegativeRanking r;
  r.query_id = query_id;
  const int n = static_cast<int>(slots.size());
  std::vector<double> sims(n);
  for (int k = 0; k < n; ++k) sims[k] = dot(query_embed, *view.feats[slots[k]]);
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    if (view.ids[slots[a]] != view.ids[slots[b]]) return view.ids[slots[a]] < view.ids[slots[b]];
    return slots[a] < slots[b];
  });
  r.ids.reserve(n);
  r.slots.reserve(n);
  r.sims.reserve(n);
  for (int k : order) {
    r.ids.push_back(view.ids[slots[k]]);
    r.slots.push_back(slots[k]);
    r.sims.push_back(sims[k]);
  }
  return r;
}

struct HardNegativeSet {
  long long query_id = -1;
  std::vector<long long> ids;   // student order, hardest first
  std::vector<int> slots;
  std::vector<double> sims;
  bool clamped = false;  // requested K exceeded the candidate count

  int size() const { return static_cast<int>(ids.size()); }
};

// Top-K prefix of the ranking. K = 0 yields an empty set; K beyond the
// ranking length clamps and flags.
inline HardNegativeSet top_k(const NegativeRanking& r, int k) {
  if (k < 0) throw std::invalid_argument("top_k: K must be >= 0");
  HardNegativeSet h;
  h.query_id = r.query_id;
  h.clamped = k > r.size();
  const int kk = std::min(k, r.size());
  h.ids.assign(r.ids.begin(), r.ids.begin() + kk);
  h.slots.assign(r.slots.begin(), r.slots.begin() + kk);
  h.sims.assign(r.sims.begin(), r.sims.begin() + kk);
  return h;
}

// Fraction of ordered pairs of the teacher-ordered id list whose relative
// order the student list preserves. Vacuous (returns 1) below two entries.
// Every teacher-ordered id must appear in the student list.
inline double ranking_consistency(const std::vector<long long>& student_order,
                                  const std::vector<long long>& teacher_order) {
  const int m = static_cast<int>(teacher_order.size());
  if (m < 2) return 1.0;
  std::vector<int> pos(m);
  for (int k = 0; k < m; ++k) {
    const auto it = std::find(student_order.begin(), student_order.end(), teacher_order[k]);
    if (it == student_order.end())
      throw std::invalid_argument("ranking_consistency: id missing from student ranking");
    pos[k] = static_cast<int>(it - student_order.begin());
  }
  int agree = 0, total = 0;
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) {
      ++total;
      if (pos[a] < pos[b]) ++agree;
    }
  return static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace rdl
