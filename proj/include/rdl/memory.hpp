#pragma once

// Training-time memory structures: the EMA momentum encoder that produces
// candidate features, the FIFO feature queues that extend the negative pool
// beyond the batch, and the bounded reference-id queue that limits which
// candidates the online teacher may score.

#include <algorithm>
#include <vector>

#include "rdl/student.hpp"

namespace rdl {

struct MomentumEncoder {
  StudentModel shadow;  // feature extractor only; log_tau is never read
  double mu = 0.995;
};

inline MomentumEncoder momentum_init(const StudentModel& model, double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) throw std::invalid_argument("momentum: mu must be in [0,1)");
  return MomentumEncoder{model, mu};
}

// shadow <- mu * shadow + (1 - mu) * model, weights only. The temperature is
// excluded: momentum features are consumed before any temperature scaling.
inline void momentum_update(MomentumEncoder& m, const StudentModel& model) {
  if (m.shadow.w_v.a.size() != model.w_v.a.size() || m.shadow.w_t.a.size() != model.w_t.a.size())
    throw std::invalid_argument("momentum_update: shape mismatch");
  for (std::size_t k = 0; k < model.w_v.a.size(); ++k)
    m.shadow.w_v.a[k] = m.mu * m.shadow.w_v.a[k] + (1.0 - m.mu) * model.w_v.a[k];
  for (std::size_t k = 0; k < model.w_t.a.size(); ++k)
    m.shadow.w_t.a[k] = m.mu * m.shadow.w_t.a[k] + (1.0 - m.mu) * model.w_t.a[k];
}

// FIFO queue of (id, momentum feature), oldest first.
struct FeatureQueue {
  int capacity = 0;
  std::vector<long long> ids;
  std::vector<Vec> feats;

  explicit FeatureQueue(int cap = 0) : capacity(cap) {
    if (cap < 0) throw std::invalid_argument("FeatureQueue: negative capacity");
  }

  int size() const { return static_cast<int>(ids.size()); }

  void push_batch(const std::vector<long long>& batch_ids, const std::vector<Vec>& batch_feats) {
    if (batch_ids.size() != batch_feats.size())
      throw std::invalid_argument("FeatureQueue: id/feature count mismatch");
    for (std::size_t k = 0; k < batch_ids.size(); ++k) {
      ids.push_back(batch_ids[k]);
      feats.push_back(batch_feats[k]);
    }
    if (static_cast<int>(ids.size()) > capacity) {
      const std::size_t drop = ids.size() - static_cast<std::size_t>(capacity);
      ids.erase(ids.begin(), ids.begin() + drop);
      feats.erase(feats.begin(), feats.begin() + drop);
    }
  }
};

// FIFO queue of recently seen ids; membership bounds online teacher scoring.
struct ReferenceQueue {
  int capacity = 0;
  std::vector<long long> ids;  // oldest first

  explicit ReferenceQueue(int cap = 0) : capacity(cap) {
    if (cap < 0) throw std::invalid_argument("ReferenceQueue: negative capacity");
  }

  int size() const { return static_cast<int>(ids.size()); }

  void push_batch(const std::vector<long long>& batch_ids) {
    ids.insert(ids.end(), batch_ids.begin(), batch_ids.end());
    if (static_cast<int>(ids.size()) > capacity)
      ids.erase(ids.begin(), ids.end() - capacity);
  }

  std::vector<long long> sorted_ids() const {
    std::vector<long long> s = ids;
    std::sort(s.begin(), s.end());
    return s;
  }
};

// Candidate pool for one direction of one step: current batch's momentum
// features first (slot k = batch item k), then queue contents oldest ->
// newest. Feature pointers alias the batch vector and the queue; the view is
// valid until the next queue push.
struct CandidateView {
  std::vector<long long> ids;
  std::vector<const Vec*> feats;
  int batch_size = 0;

  int size() const { return static_cast<int>(ids.size()); }
};

inline CandidateView candidate_view(const FeatureQueue& q, const std::vector<long long>& batch_ids,
                                    const std::vector<Vec>& batch_feats) {
  if (batch_ids.size() != batch_feats.size())
    throw std::invalid_argument("candidate_view: id/feature count mismatch");
  CandidateView v;
  v.batch_size = static_cast<int>(batch_ids.size());
  v.ids.reserve(batch_ids.size() + q.ids.size());
  v.feats.reserve(batch_ids.size() + q.ids.size());
  for (std::size_t k = 0; k < batch_ids.size(); ++k) {
    v.ids.push_back(batch_ids[k]);
    v.feats.push_back(&batch_feats[k]);
  }
  for (std::size_t k = 0; k < q.ids.size(); ++k) {
    v.ids.push_back(q.ids[k]);
    v.feats.push_back(&q.feats[k]);
  }
  return v;
}

}  // namespace rdl
