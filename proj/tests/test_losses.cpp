// Loss zoo: frozen per-query values, independent naive oracles, analytic
// gradients against central finite differences, the softmax gap property,
// and the batch/direction wrappers.

#include <gtest/gtest.h>

#include <map>

#include "oracles.hpp"
#include "rdl/losses.hpp"

namespace rdl {
namespace {

std::vector<const Vec*> ptrs(const std::vector<Vec>& v) {
  std::vector<const Vec*> p;
  p.reserve(v.size());
  for (const auto& x : v) p.push_back(&x);
  return p;
}

Vec random_unit(Rng& rng, int dim) {
  Vec g(dim);
  for (double& v : g) v = rng.normal();
  return l2_normalize(g);
}

// ---------------------------------------------------------------------------
// Per-query cores.
// ---------------------------------------------------------------------------

TEST(InfonceQuery, FrozenValueAndGradients) {
  const Vec q{1.0, 0.0};
  const std::vector<Vec> feats{{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}};
  const auto g = infonce_query(q, ptrs(feats), 0, 1.0);
  EXPECT_DOUBLE_EQ(g.value, 0.40760596444438035);
  ASSERT_EQ(g.d_embed.size(), 2u);
  EXPECT_DOUBLE_EQ(g.d_embed[0], -0.42478961739555854);
  EXPECT_DOUBLE_EQ(g.d_embed[1], 0.24472847105479764);
  EXPECT_DOUBLE_EQ(g.d_log_tau, 0.42478961739555854);
}

TEST(InfonceQuery, MatchesNaiveOracle) {
  Rng rng(derive_seed(71, "losses"));
  for (int trial = 0; trial < 25; ++trial) {
    const int dim = 3, n = 2 + static_cast<int>(rng.below(6));
    const double tau = 0.05 + 0.95 * rng.uniform();
    const Vec q = random_unit(rng, dim);
    std::vector<Vec> feats;
    for (int k = 0; k < n; ++k) feats.push_back(random_unit(rng, dim));
    const int pos = static_cast<int>(rng.below(n));
    Vec z(n);
    for (int k = 0; k < n; ++k) z[k] = dot(q, feats[k]) / tau;
    const auto g = infonce_query(q, ptrs(feats), pos, tau);
    EXPECT_NEAR(g.value, oracle::naive_infonce(z, pos), 1e-11);
  }
}

TEST(InfonceQuery, GradientMatchesFiniteDifferences) {
  Rng rng(derive_seed(72, "losses"));
  Vec q = random_unit(rng, 4);
  std::vector<Vec> feats;
  for (int k = 0; k < 5; ++k) feats.push_back(random_unit(rng, 4));
  double log_tau = std::log(0.4);
  const auto fp = ptrs(feats);
  const auto f = [&]() { return infonce_query(q, fp, 2, std::exp(log_tau)).value; };
  const auto g = infonce_query(q, fp, 2, std::exp(log_tau));
  const auto res = check_gradient(f, {{q.data(), q.size()}, {&log_tau, 1}},
                                  {g.d_embed, Vec{g.d_log_tau}}, 1e-6);
  EXPECT_TRUE(res.pass) << "max rel err " << res.max_rel_err;
}

TEST(InfonceQuery, RejectsBadPositive) {
  const Vec q{1.0, 0.0};
  const std::vector<Vec> feats{{1.0, 0.0}};
  EXPECT_THROW(infonce_query(q, ptrs(feats), -1, 1.0), std::invalid_argument);
  EXPECT_THROW(infonce_query(q, ptrs(feats), 1, 1.0), std::invalid_argument);
}

TEST(CprdQuery, FrozenValues) {
  const Vec q{1.0, 0.0};
  const std::vector<Vec> hard{{1.0, 0.0}, {0.0, 1.0}};  // z = 1, 0
  const std::vector<Vec> easy{{-1.0, 0.0}};             // z = -1
  const auto full1 = cprd_query(q, ptrs(hard), 1, ptrs(easy), 1.0, true);
  EXPECT_DOUBLE_EQ(full1.value, 0.40760596444438035);
  const auto trunc1 = cprd_query(q, ptrs(hard), 1, ptrs(easy), 1.0, false);
  EXPECT_DOUBLE_EQ(trunc1.value, 0.3132616875182228);
  const auto full2 = cprd_query(q, ptrs(hard), 2, ptrs(easy), 1.0, true);
  EXPECT_DOUBLE_EQ(full2.value, 0.3604338259813016);
  const auto trunc2 = cprd_query(q, ptrs(hard), 2, ptrs(easy), 1.0, false);
  EXPECT_DOUBLE_EQ(trunc2.value, 0.1566308437591114);
}

TEST(CprdQuery, NoValidNegativesMeansExactlyZero) {
  const Vec q{0.6, 0.8};
  const std::vector<Vec> hard{{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<Vec> easy{{-1.0, 0.0}};
  const auto g = cprd_query(q, ptrs(hard), 0, ptrs(easy), 0.3, true);
  EXPECT_EQ(g.value, 0.0);
  EXPECT_EQ(g.d_log_tau, 0.0);
  for (double v : g.d_embed) EXPECT_EQ(v, 0.0);
}

TEST(CprdQuery, MatchesNaiveOracleAcrossShapes) {
  Rng rng(derive_seed(73, "losses"));
  // One-dimensional features make z = feat / tau, so the oracle sees the
  // exact logits the loss sees.
  for (int trial = 0; trial < 60; ++trial) {
    const int kk = 1 + static_cast<int>(rng.below(6));
    const int nv = static_cast<int>(rng.below(kk + 1));
    const int ne = static_cast<int>(rng.below(5));
    const bool include_easy = rng.uniform() < 0.5;
    const double tau = 0.1 + 0.9 * rng.uniform();
    const Vec q{1.0};
    Vec zh(kk), ze(ne);
    std::vector<Vec> hard, easy;
    for (int k = 0; k < kk; ++k) {
      zh[k] = -3.0 + 6.0 * rng.uniform();
      hard.push_back(Vec{zh[k] * tau});
    }
    for (int k = 0; k < ne; ++k) {
      ze[k] = -3.0 + 6.0 * rng.uniform();
      easy.push_back(Vec{ze[k] * tau});
    }
    const auto g = cprd_query(q, ptrs(hard), nv, ptrs(easy), tau, include_easy);
    EXPECT_NEAR(g.value, oracle::naive_cprd(zh, nv, ze, include_easy), 1e-11)
        << "K=" << kk << " nv=" << nv << " ne=" << ne << " easy=" << include_easy;
  }
}

TEST(CprdQuery, TruncationNeverIncreasesTheLoss) {
  Rng rng(derive_seed(74, "losses"));
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 3;
    const Vec q = random_unit(rng, dim);
    std::vector<Vec> hard, easy;
    for (int k = 0; k < 4; ++k) hard.push_back(random_unit(rng, dim));
    for (int k = 0; k < 3; ++k) easy.push_back(random_unit(rng, dim));
    const double tau = 0.2 + 0.8 * rng.uniform();
    const int nv = 1 + static_cast<int>(rng.below(4));
    const auto full = cprd_query(q, ptrs(hard), nv, ptrs(easy), tau, true);
    const auto trunc = cprd_query(q, ptrs(hard), nv, ptrs(easy), tau, false);
    EXPECT_GT(full.value, trunc.value);  // strictly: easy tail inflates denominators
  }
}

TEST(CprdQuery, SingleValidRankEqualsSoftmaxCrossEntropy) {
  Rng rng(derive_seed(75, "losses"));
  const int dim = 3;
  const Vec q = random_unit(rng, dim);
  std::vector<Vec> hard, easy;
  for (int k = 0; k < 3; ++k) hard.push_back(random_unit(rng, dim));
  for (int k = 0; k < 2; ++k) easy.push_back(random_unit(rng, dim));
  const double tau = 0.5;
  const auto g = cprd_query(q, ptrs(hard), 1, ptrs(easy), tau, true);
  std::vector<Vec> all = hard;
  all.insert(all.end(), easy.begin(), easy.end());
  const auto ref = infonce_query(q, ptrs(all), 0, tau);
  EXPECT_NEAR(g.value, ref.value, 1e-12);
  for (std::size_t d = 0; d < q.size(); ++d) EXPECT_NEAR(g.d_embed[d], ref.d_embed[d], 1e-12);
  EXPECT_NEAR(g.d_log_tau, ref.d_log_tau, 1e-12);
}

TEST(CprdQuery, GradientMatchesFiniteDifferences) {
  Rng rng(derive_seed(76, "losses"));
  for (const bool include_easy : {true, false}) {
    const int dim = 4;
    Vec q = random_unit(rng, dim);
    std::vector<Vec> hard, easy;
    for (int k = 0; k < 5; ++k) hard.push_back(random_unit(rng, dim));
    for (int k = 0; k < 3; ++k) easy.push_back(random_unit(rng, dim));
    const auto hp = ptrs(hard), ep = ptrs(easy);
    double log_tau = std::log(0.3);
    const int nv = 3;
    const auto f = [&]() {
      return cprd_query(q, hp, nv, ep, std::exp(log_tau), include_easy).value;
    };
    const auto g = cprd_query(q, hp, nv, ep, std::exp(log_tau), include_easy);
    const auto res = check_gradient(f, {{q.data(), q.size()}, {&log_tau, 1}},
                                    {g.d_embed, Vec{g.d_log_tau}}, 1e-6);
    EXPECT_TRUE(res.pass) << "easy=" << include_easy << " max rel err " << res.max_rel_err;
  }
}

TEST(CprdQuery, RejectsBadValidCount) {
  const Vec q{1.0, 0.0};
  const std::vector<Vec> hard{{1.0, 0.0}};
  EXPECT_THROW(cprd_query(q, ptrs(hard), -1, {}, 1.0, true), std::invalid_argument);
  EXPECT_THROW(cprd_query(q, ptrs(hard), 2, {}, 1.0, true), std::invalid_argument);
}

TEST(KlQuery, ZeroWhenDistributionsCoincide) {
  // One-dimensional features: student logits equal teacher logits exactly.
  const Vec q{1.0};
  const Vec scores{0.9, 0.4, 0.2};
  std::vector<Vec> feats{{0.9}, {0.4}, {0.2}};
  const auto g = kl_query(q, ptrs(feats), scores, 1.0, 1.0);
  EXPECT_NEAR(g.value, 0.0, 1e-15);
  for (double v : g.d_embed) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(KlQuery, MatchesNaiveOracleAndIsNonNegative) {
  Rng rng(derive_seed(77, "losses"));
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5));
    const double tau_s = 0.1 + 0.9 * rng.uniform();
    const double tau_t = 0.5 + rng.uniform();
    const Vec q{1.0};
    Vec scores(n);
    std::vector<Vec> feats;
    Vec zs(n), zt(n);
    for (int k = 0; k < n; ++k) {
      scores[k] = 0.01 + 0.98 * rng.uniform();
      const double sim = -1.0 + 2.0 * rng.uniform();
      feats.push_back(Vec{sim});
      zs[k] = sim / tau_s;
      zt[k] = scores[k] / tau_t;
    }
    const auto g = kl_query(q, ptrs(feats), scores, tau_s, tau_t);
    EXPECT_NEAR(g.value, oracle::naive_kl(zt, zs), 1e-11);
    EXPECT_GE(g.value, -1e-15);
  }
}

TEST(KlQuery, GradientMatchesFiniteDifferences) {
  Rng rng(derive_seed(78, "losses"));
  const int dim = 4, n = 5;
  Vec q = random_unit(rng, dim);
  std::vector<Vec> feats;
  Vec scores(n);
  for (int k = 0; k < n; ++k) {
    feats.push_back(random_unit(rng, dim));
    scores[k] = 0.05 + 0.9 * rng.uniform();
  }
  const auto fp = ptrs(feats);
  double log_tau = std::log(0.25);
  const auto f = [&]() { return kl_query(q, fp, scores, std::exp(log_tau), 0.8).value; };
  const auto g = kl_query(q, fp, scores, std::exp(log_tau), 0.8);
  const auto res = check_gradient(f, {{q.data(), q.size()}, {&log_tau, 1}},
                                  {g.d_embed, Vec{g.d_log_tau}}, 1e-6);
  EXPECT_TRUE(res.pass) << "max rel err " << res.max_rel_err;
}

TEST(KlQuery, RejectsDegenerateInputs) {
  const Vec q{1.0};
  std::vector<Vec> one{{0.5}};
  EXPECT_THROW(kl_query(q, ptrs(one), Vec{0.5}, 1.0, 1.0), std::invalid_argument);
  std::vector<Vec> two{{0.5}, {0.2}};
  EXPECT_THROW(kl_query(q, ptrs(two), Vec{0.5}, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(kl_query(q, ptrs(two), Vec{0.5, 0.2}, 1.0, 0.0), std::invalid_argument);
}

TEST(M3seQuery, FrozenPlainAndRescaledValues) {
  const Vec q{1.0, 0.0};
  const Vec pos{1.0, 0.0};  // s0 = 1
  const std::vector<Vec> negs{{0.5, 0.0}, {0.2, 0.0}};  // s = 0.5, 0.2
  const std::vector<long long> ids{5, 6};
  const Vec neg_scores{0.65, 0.3};  // hardest = id 5 (score 0.65)
  // margin_t = 0.9 - 0.65 = 0.25; plain margin_s = 1 - 0.5 = 0.5.
  const auto plain = m3se_query(q, pos, ptrs(negs), ids, 0.9, neg_scores, false);
  EXPECT_DOUBLE_EQ(plain.value, 0.0625);
  // rescaled: range = 1 - 0.2 = 0.8; margin_s = 0.5 / 0.8 = 0.625.
  const auto scaled = m3se_query(q, pos, ptrs(negs), ids, 0.9, neg_scores, true);
  EXPECT_DOUBLE_EQ(scaled.value, 0.140625);
}

TEST(M3seQuery, HardestIsTeacherDesignatedNotStudentDesignated) {
  const Vec q{1.0, 0.0};
  const Vec pos{1.0, 0.0};
  // Student finds neg 0 most similar, but the teacher scores neg 1 higher;
  // the margin must use neg 1.
  const std::vector<Vec> negs{{0.9, 0.0}, {0.1, 0.0}};
  const std::vector<long long> ids{5, 6};
  const Vec neg_scores{0.2, 0.7};
  const auto g = m3se_query(q, pos, ptrs(negs), ids, 0.9, neg_scores, false);
  // margin_t = 0.9 - 0.7 = 0.2; margin_s = 1 - 0.1 = 0.9; (0.7)^2 = 0.49.
  EXPECT_DOUBLE_EQ(g.value, 0.48999999999999994);
}

TEST(M3seQuery, ScoreTiesBreakByAscendingId) {
  const Vec q{1.0, 0.0};
  const Vec pos{1.0, 0.0};
  const std::vector<Vec> negs{{0.5, 0.0}, {0.3, 0.0}};
  const Vec neg_scores{0.6, 0.6};
  // ids {9, 2}: the tie goes to id 2, i.e. negative index 1 (sim 0.3).
  const auto g = m3se_query(q, pos, ptrs(negs), {9, 2}, 0.9, neg_scores, false);
  // margin_t = 0.3, margin_s = 0.7 -> 0.16.
  EXPECT_DOUBLE_EQ(g.value, 0.15999999999999992);
  // ids {2, 9}: tie goes to index 0 (sim 0.5): margin_s = 0.5 -> 0.04.
  const auto h = m3se_query(q, pos, ptrs(negs), {2, 9}, 0.9, neg_scores, false);
  EXPECT_DOUBLE_EQ(h.value, 0.03999999999999998);
}

TEST(M3seQuery, GradientMatchesFiniteDifferences) {
  Rng rng(derive_seed(79, "losses"));
  for (const bool rescale : {false, true}) {
    const int dim = 4, n = 4;
    Vec q = random_unit(rng, dim);
    const Vec pos = random_unit(rng, dim);
    std::vector<Vec> negs;
    std::vector<long long> ids;
    Vec scores(n);
    for (int k = 0; k < n; ++k) {
      negs.push_back(random_unit(rng, dim));
      ids.push_back(k);
      scores[k] = 0.1 + 0.8 * rng.uniform();
    }
    const auto np = ptrs(negs);
    const auto f = [&]() { return m3se_query(q, pos, np, ids, 0.85, scores, rescale).value; };
    const auto g = m3se_query(q, pos, np, ids, 0.85, scores, rescale);
    const auto res = check_gradient(f, {{q.data(), q.size()}}, {g.d_embed}, 1e-5);
    EXPECT_TRUE(res.pass) << "rescale=" << rescale << " max rel err " << res.max_rel_err;
    EXPECT_EQ(g.d_log_tau, 0.0);  // margins are temperature-free
  }
}

TEST(M3seQuery, RejectsDegenerateInputs) {
  const Vec q{1.0, 0.0};
  const Vec pos{1.0, 0.0};
  EXPECT_THROW(m3se_query(q, pos, {}, {}, 0.9, {}, false), std::invalid_argument);
  std::vector<Vec> negs{{0.5, 0.0}};
  EXPECT_THROW(m3se_query(q, pos, ptrs(negs), {1, 2}, 0.9, Vec{0.5}, false),
               std::invalid_argument);
  // All similarities identical: min-max range collapses.
  std::vector<Vec> same{{1.0, 0.0}, {1.0, 0.0}};
  EXPECT_THROW(m3se_query(q, pos, ptrs(same), {1, 2}, 0.9, Vec{0.5, 0.4}, true),
               std::runtime_error);
}

// ---------------------------------------------------------------------------
// Softmax gap property.
// ---------------------------------------------------------------------------

TEST(SoftmaxGap, FrozenExample) {
  const Vec s{2.0, 1.2, 1.0, 0.5};
  const auto g = softmax_gap_property(s, 0, 1, 2, 3, 1.0);
  EXPECT_TRUE(g.holds);
  EXPECT_DOUBLE_EQ(g.upper_gap, 0.2698919900897968);
  EXPECT_DOUBLE_EQ(g.lower_gap, 0.0709437558427973);
}

TEST(SoftmaxGap, HoldsAcrossRandomConfigurations) {
  Rng rng(derive_seed(80, "losses"));
  int checked = 0;
  for (int trial = 0; trial < 500 && checked < 120; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(5));
    Vec s(n);
    for (double& v : s) v = 4.0 * rng.uniform();
    std::sort(s.begin(), s.end(), std::greater<>());
    const int i = 0, j = 1;
    const int nn = n - 1;
    const int m = 2 + static_cast<int>(rng.below(nn - 2));
    if (!(j <= m && m < nn)) continue;
    if (!(s[i] > s[j] && s[j] >= s[m] && s[m] > s[nn])) continue;
    if (!(s[i] - s[j] > s[m] - s[nn])) continue;
    for (const double tau : {0.05, 0.3, 1.0, 5.0}) {
      const auto g = softmax_gap_property(s, i, j, m, nn, tau);
      EXPECT_TRUE(g.holds) << "tau=" << tau;
    }
    ++checked;
  }
  EXPECT_GE(checked, 50);
}

TEST(SoftmaxGap, RejectsEveryViolatedPrecondition) {
  const Vec s{2.0, 1.2, 1.0, 0.5};
  EXPECT_THROW(softmax_gap_property(s, 1, 0, 2, 3, 1.0), std::invalid_argument);  // i >= j
  EXPECT_THROW(softmax_gap_property(s, 0, 1, 2, 7, 1.0), std::invalid_argument);  // n range
  EXPECT_THROW(softmax_gap_property(s, 0, 1, 2, 3, 0.0), std::invalid_argument);  // tau
  const Vec up{1.0, 2.0, 0.5, 0.2};
  EXPECT_THROW(softmax_gap_property(up, 0, 1, 2, 3, 1.0), std::invalid_argument);  // order
  const Vec flat{2.0, 2.0, 1.0, 0.5};
  EXPECT_THROW(softmax_gap_property(flat, 0, 1, 2, 3, 1.0), std::invalid_argument);  // s_i == s_j
  const Vec narrow{2.0, 1.9, 1.5, 0.1};
  EXPECT_THROW(softmax_gap_property(narrow, 0, 1, 2, 3, 1.0), std::invalid_argument);  // gaps
}

// ---------------------------------------------------------------------------
// Batch wrappers.
// ---------------------------------------------------------------------------

struct Rig {
  StudentModel model;       // live
  StudentModel shadow;      // fixed candidate producer
  std::vector<long long> ids;
  std::vector<Vec> xv, xt;          // raw inputs
  std::vector<Vec> mt, mv;          // momentum features of the batch
  FeatureQueue qt{4}, qv{4};
  CandidateView cand_t, cand_v;
};

Rig make_rig(std::uint64_t seed, int batch, int n_queue) {
  Rig r;
  Rng mrng(derive_seed(seed, "live"));
  r.model = init_student(3, 4, 3, 0.5, mrng);
  Rng srng(derive_seed(seed, "shadow"));
  r.shadow = init_student(3, 4, 3, 0.5, srng);
  Rng drng(derive_seed(seed, "data"));
  for (int i = 0; i < batch; ++i) {
    r.ids.push_back(10 + i);
    Vec a(4), b(3);
    for (double& v : a) v = drng.normal();
    for (double& v : b) v = drng.normal();
    r.xv.push_back(a);
    r.xt.push_back(b);
  }
  for (int i = 0; i < batch; ++i) {
    r.mt.push_back(encode_t(r.shadow, r.xt[i]).e);
    r.mv.push_back(encode_v(r.shadow, r.xv[i]).e);
  }
  std::vector<long long> old_ids;
  std::vector<Vec> old_t, old_v;
  for (int k = 0; k < n_queue; ++k) {
    old_ids.push_back(900 + k);
    old_t.push_back(random_unit(drng, 3));
    old_v.push_back(random_unit(drng, 3));
  }
  if (n_queue > 0) {
    r.qt.push_batch(old_ids, old_t);
    r.qv.push_batch(old_ids, old_v);
  }
  r.cand_t = candidate_view(r.qt, r.ids, r.mt);
  r.cand_v = candidate_view(r.qv, r.ids, r.mv);
  return r;
}

TrainBatch make_train_batch(const StudentModel& model, const Rig& r) {
  TrainBatch b;
  b.ids = r.ids;
  for (const auto& x : r.xv) b.x_v.push_back(&x);
  for (const auto& x : r.xt) b.x_t.push_back(&x);
  for (const auto* x : b.x_v) b.v.push_back(encode_v(model, *x));
  for (const auto* x : b.x_t) b.t.push_back(encode_t(model, *x));
  return b;
}

// Independent assembly of the alignment loss: for each direction and query,
// gather allowed candidate logits and feed the naive softmax cross-entropy.
double naive_align(const StudentModel& model, const Rig& r, const TrainBatch& b,
                   bool exclude_queue_dups) {
  const double tau = temperature(model);
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    const auto& view = dir == 0 ? r.cand_t : r.cand_v;
    for (int i = 0; i < b.size(); ++i) {
      const Vec& q = (dir == 0 ? b.v : b.t)[i].e;
      Vec z;
      int pos = -1;
      for (int s = 0; s < view.size(); ++s) {
        if (exclude_queue_dups && s >= view.batch_size && view.ids[s] == b.ids[i]) continue;
        if (s == i) pos = static_cast<int>(z.size());
        z.push_back(dot(q, *view.feats[s]) / tau);
      }
      total += oracle::naive_infonce(z, pos);
    }
  }
  return total / (2.0 * b.size());
}

TEST(AlignLoss, MatchesNaiveAssembly) {
  const auto r = make_rig(81, 3, 4);
  const auto b = make_train_batch(r.model, r);
  const auto lv = align_loss(r.model, b, r.cand_t, r.cand_v);
  EXPECT_NEAR(lv.value, naive_align(r.model, r, b, true), 1e-12);
  EXPECT_GT(lv.value, 0.0);
}

TEST(AlignLoss, QueueDuplicatesOfTheQueryAreExcluded) {
  auto r = make_rig(82, 2, 0);
  // Push a stale feature under batch item 0's id plus one fresh id.
  Rng rng(derive_seed(82, "dup"));
  r.qt.push_batch({r.ids[0], 900}, {random_unit(rng, 3), random_unit(rng, 3)});
  r.qv.push_batch({r.ids[0], 900}, {random_unit(rng, 3), random_unit(rng, 3)});
  r.cand_t = candidate_view(r.qt, r.ids, r.mt);
  r.cand_v = candidate_view(r.qv, r.ids, r.mv);
  const auto b = make_train_batch(r.model, r);
  const auto lv = align_loss(r.model, b, r.cand_t, r.cand_v);
  EXPECT_NEAR(lv.value, naive_align(r.model, r, b, true), 1e-12);
  // Sanity: the exclusion rule actually changes the value here.
  EXPECT_GT(std::fabs(lv.value - naive_align(r.model, r, b, false)), 1e-6);
}

TEST(AlignLoss, GradientMatchesFiniteDifferences) {
  auto r = make_rig(83, 3, 3);
  const auto f = [&]() {
    const auto b = make_train_batch(r.model, r);
    return align_loss(r.model, b, r.cand_t, r.cand_v).value;
  };
  const auto b0 = make_train_batch(r.model, r);
  const auto lv = align_loss(r.model, b0, r.cand_t, r.cand_v);
  const auto res = check_gradient(
      f,
      {{r.model.w_v.a.data(), r.model.w_v.a.size()},
       {r.model.w_t.a.data(), r.model.w_t.a.size()},
       {&r.model.log_tau, 1}},
      {lv.d_w_v.a, lv.d_w_t.a, Vec{lv.d_log_tau}}, 1e-5);
  EXPECT_TRUE(res.pass) << "tensor " << res.worst_tensor << " coord " << res.worst_coord
                        << " analytic " << res.worst_analytic << " numeric "
                        << res.worst_numeric;
}

TEST(AlignLoss, RejectsEmptyBatchAndViewMismatch) {
  const auto r = make_rig(84, 2, 2);
  TrainBatch empty;
  EXPECT_THROW(align_loss(r.model, empty, r.cand_t, r.cand_v), std::invalid_argument);
  auto bad = r.cand_t;
  bad.batch_size = 1;
  const auto b = make_train_batch(r.model, r);
  EXPECT_THROW(align_loss(r.model, b, bad, r.cand_v), std::invalid_argument);
}

// Builds a full distillation plan for one direction with a synthetic scorer.
DistillPlan make_plan_for(const Rig& r, const TrainBatch& b, bool i2t_dir, int top_k_count,
                          const ScoreFn& scorer, double m) {
  DistillPlan plan;
  const auto& view = i2t_dir ? r.cand_t : r.cand_v;
  for (int i = 0; i < b.size(); ++i) {
    const Vec& q = (i2t_dir ? b.v : b.t)[i].e;
    const auto slots = negative_slots(view, b.ids[i], i);
    plan.ranking.push_back(rank_negatives(q, view, slots, b.ids[i]));
    plan.hard.push_back(top_k(plan.ranking.back(), top_k_count));
    plan.target.push_back(build_target(plan.hard.back(), scorer, m));
  }
  return plan;
}

// Synthetic teacher: score depends only on candidate id, spread over (0, 1).
ScoreFn id_scorer() {
  return [](long long, long long cid) -> std::optional<double> {
    return 0.05 + 0.9 * (static_cast<double>(cid % 17) / 16.0);
  };
}

// Independent assembly of the distillation loss from plan + naive core.
double naive_cprd_assembly(const StudentModel& model, const Rig& r, const TrainBatch& b,
                           const DistillPlan& i2t, const DistillPlan& t2i, bool truncate) {
  const double tau = temperature(model);
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    const auto& view = dir == 0 ? r.cand_t : r.cand_v;
    const auto& plan = dir == 0 ? i2t : t2i;
    for (int i = 0; i < b.size(); ++i) {
      const Vec& q = (dir == 0 ? b.v : b.t)[i].e;
      const auto& tgt = plan.target[i];
      const auto& hard = plan.hard[i];
      const auto& rank = plan.ranking[i];
      Vec zh, ze;
      for (int p : tgt.valid_pos) zh.push_back(dot(q, *view.feats[hard.slots[p]]) / tau);
      for (int p : tgt.invalid_pos) zh.push_back(dot(q, *view.feats[hard.slots[p]]) / tau);
      if (!truncate)
        for (int k = hard.size(); k < rank.size(); ++k)
          ze.push_back(dot(q, *view.feats[rank.slots[k]]) / tau);
      total += oracle::naive_cprd(zh, tgt.j_star() - 1, ze, !truncate);
    }
  }
  return total / (2.0 * b.size());
}

TEST(CprdLoss, MatchesNaiveAssembly) {
  const auto r = make_rig(85, 3, 4);
  const auto b = make_train_batch(r.model, r);
  const auto i2t = make_plan_for(r, b, true, 4, id_scorer(), 0.4);
  const auto t2i = make_plan_for(r, b, false, 4, id_scorer(), 0.4);
  for (const bool truncate : {false, true}) {
    const auto lv = cprd_loss(r.model, b, r.cand_t, r.cand_v, i2t, t2i, truncate);
    EXPECT_NEAR(lv.value, naive_cprd_assembly(r.model, r, b, i2t, t2i, truncate), 1e-12);
  }
}

TEST(CprdLoss, GradientMatchesFiniteDifferences) {
  auto r = make_rig(86, 2, 4);
  const auto b0 = make_train_batch(r.model, r);
  // Plans are mined once and then held fixed: mining is a stop-gradient step.
  const auto i2t = make_plan_for(r, b0, true, 3, id_scorer(), 0.3);
  const auto t2i = make_plan_for(r, b0, false, 3, id_scorer(), 0.3);
  for (const bool truncate : {false, true}) {
    const auto f = [&]() {
      const auto b = make_train_batch(r.model, r);
      return cprd_loss(r.model, b, r.cand_t, r.cand_v, i2t, t2i, truncate).value;
    };
    const auto lv = cprd_loss(r.model, b0, r.cand_t, r.cand_v, i2t, t2i, truncate);
    const auto res = check_gradient(
        f,
        {{r.model.w_v.a.data(), r.model.w_v.a.size()},
         {r.model.w_t.a.data(), r.model.w_t.a.size()},
         {&r.model.log_tau, 1}},
        {lv.d_w_v.a, lv.d_w_t.a, Vec{lv.d_log_tau}}, 1e-5);
    EXPECT_TRUE(res.pass) << "truncate=" << truncate << " tensor " << res.worst_tensor
                          << " rel " << res.max_rel_err;
  }
}

TEST(CprdLoss, AllVacuousTargetsGiveZero) {
  const auto r = make_rig(87, 2, 2);
  const auto b = make_train_batch(r.model, r);
  const ScoreFn absent = [](long long, long long) { return std::optional<double>{}; };
  const auto i2t = make_plan_for(r, b, true, 3, absent, 0.5);
  const auto t2i = make_plan_for(r, b, false, 3, absent, 0.5);
  const auto lv = cprd_loss(r.model, b, r.cand_t, r.cand_v, i2t, t2i, false);
  EXPECT_EQ(lv.value, 0.0);
  EXPECT_EQ(lv.d_log_tau, 0.0);
  for (double v : lv.d_w_v.a) EXPECT_EQ(v, 0.0);
  for (double v : lv.d_w_t.a) EXPECT_EQ(v, 0.0);
}

TEST(CprdLoss, RejectsPlanThatDoesNotCoverHardSet) {
  const auto r = make_rig(88, 2, 3);
  const auto b = make_train_batch(r.model, r);
  auto i2t = make_plan_for(r, b, true, 3, id_scorer(), 0.4);
  const auto t2i = make_plan_for(r, b, false, 3, id_scorer(), 0.4);
  ASSERT_FALSE(i2t.target[0].invalid_ids.empty());
  i2t.target[0].invalid_ids.pop_back();
  i2t.target[0].invalid_pos.pop_back();
  EXPECT_THROW(cprd_loss(r.model, b, r.cand_t, r.cand_v, i2t, t2i, false),
               std::invalid_argument);
}

TEST(KlLoss, MatchesNaiveAssembly) {
  const auto r = make_rig(89, 3, 3);
  const auto b = make_train_batch(r.model, r);
  const double tau_t = 0.5;
  auto i2t = make_plan_for(r, b, true, 3, id_scorer(), 0.0);
  auto t2i = make_plan_for(r, b, false, 3, id_scorer(), 0.0);
  Rng rng(derive_seed(89, "scores"));
  for (auto* plan : {&i2t, &t2i}) {
    for (int i = 0; i < b.size(); ++i) {
      plan->pos_scores.push_back(0.8 + 0.15 * rng.uniform());
      Vec ns(plan->hard[i].size());
      for (double& v : ns) v = 0.05 + 0.9 * rng.uniform();
      plan->neg_scores.push_back(ns);
    }
  }
  const auto lv = kl_loss(r.model, b, r.cand_t, r.cand_v, i2t, t2i, tau_t);
  const double tau = temperature(r.model);
  double expect = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    const auto& view = dir == 0 ? r.cand_t : r.cand_v;
    const auto& plan = dir == 0 ? i2t : t2i;
    for (int i = 0; i < b.size(); ++i) {
      const Vec& q = (dir == 0 ? b.v : b.t)[i].e;
      Vec zt, zs;
      zt.push_back(plan.pos_scores[i] / tau_t);
      zs.push_back(dot(q, *view.feats[i]) / tau);
      for (int k = 0; k < plan.hard[i].size(); ++k) {
        zt.push_back(plan.neg_scores[i][k] / tau_t);
        zs.push_back(dot(q, *view.feats[plan.hard[i].slots[k]]) / tau);
      }
      expect += oracle::naive_kl(zt, zs);
    }
  }
  expect /= 2.0 * b.size();
  EXPECT_NEAR(lv.value, expect, 1e-12);
}

TEST(M3seLoss, MatchesHandAssembly) {
  const auto r = make_rig(90, 2, 2);
  const auto b = make_train_batch(r.model, r);
  auto i2t = make_plan_for(r, b, true, 2, id_scorer(), 0.0);
  auto t2i = make_plan_for(r, b, false, 2, id_scorer(), 0.0);
  Rng rng(derive_seed(90, "scores"));
  for (auto* plan : {&i2t, &t2i}) {
    for (int i = 0; i < b.size(); ++i) {
      plan->pos_scores.push_back(0.9);
      Vec ns(plan->hard[i].size());
      for (double& v : ns) v = 0.1 + 0.7 * rng.uniform();
      plan->neg_scores.push_back(ns);
    }
  }
  const auto lv = m3se_loss(r.model, b, r.cand_t, r.cand_v, i2t, t2i, false);
  double expect = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    const auto& view = dir == 0 ? r.cand_t : r.cand_v;
    const auto& plan = dir == 0 ? i2t : t2i;
    for (int i = 0; i < b.size(); ++i) {
      const Vec& q = (dir == 0 ? b.v : b.t)[i].e;
      const auto& hard = plan.hard[i];
      int js = 0;
      for (int k = 1; k < hard.size(); ++k) {
        if (plan.neg_scores[i][k] > plan.neg_scores[i][js] ||
            (plan.neg_scores[i][k] == plan.neg_scores[i][js] && hard.ids[k] < hard.ids[js]))
          js = k;
      }
      const double mt = plan.pos_scores[i] - plan.neg_scores[i][js];
      const double ms = dot(q, *view.feats[i]) - dot(q, *view.feats[hard.slots[js]]);
      expect += (ms - mt) * (ms - mt);
    }
  }
  expect /= 2.0 * b.size();
  EXPECT_NEAR(lv.value, expect, 1e-12);
}

TEST(LossValue, AccumulatesComponentwise) {
  Rng rng(91);
  const auto model = init_student(3, 4, 3, 0.5, rng);
  auto a = LossValue::like(model);
  auto b = LossValue::like(model);
  a.value = 1.0;
  b.value = 2.5;
  a.d_w_v.a[0] = 3.0;
  b.d_w_v.a[0] = -1.0;
  a.d_log_tau = 0.5;
  b.d_log_tau = 0.25;
  a.add(b);
  EXPECT_DOUBLE_EQ(a.value, 3.5);
  EXPECT_DOUBLE_EQ(a.d_w_v.a[0], 2.0);
  EXPECT_DOUBLE_EQ(a.d_log_tau, 0.75);
}

}  // namespace
}  // namespace rdl
