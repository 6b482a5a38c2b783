#pragma once

// Training loop: epoch-shuffled batches, live + momentum encoding, mining,
// target construction, loss dispatch, AdamW with warmup+cosine schedule,
// momentum update, queue pushes, and per-step metrics. Checkpoints capture
// the complete state (model, momentum, optimizer, queues, rng, epoch
// permutation) as round-trip-exact text, so a resumed run reproduces the
// uninterrupted one bit for bit.

#include <chrono>
#include <cstdint>
#include <memory>
#include <sstream>
#include <unordered_map>

#include "rdl/bank.hpp"
#include "rdl/corpus.hpp"
#include "rdl/io_util.hpp"
#include "rdl/losses.hpp"
#include "rdl/memory.hpp"
#include "rdl/mining.hpp"
#include "rdl/student.hpp"
#include "rdl/targets.hpp"
#include "rdl/teacher.hpp"

namespace rdl {

enum class DistillMethod { None, Cprd, CprdSingle, CprdTrunc, Kl, M3se, RM3se };
enum class TargetMode { Online, Offline };

inline bool is_partial_ranking(DistillMethod m) {
  return m == DistillMethod::Cprd || m == DistillMethod::CprdSingle ||
         m == DistillMethod::CprdTrunc;
}

inline const char* method_name(DistillMethod m) {
  switch (m) {
    case DistillMethod::None: return "none";
    case DistillMethod::Cprd: return "cprd";
    case DistillMethod::CprdSingle: return "cprd_single";
    case DistillMethod::CprdTrunc: return "cprd_trunc";
    case DistillMethod::Kl: return "kl";
    case DistillMethod::M3se: return "m3se";
    case DistillMethod::RM3se: return "r_m3se";
  }
  return "none";
}

inline DistillMethod method_from_name(const std::string& s) {
  if (s == "none") return DistillMethod::None;
  if (s == "cprd") return DistillMethod::Cprd;
  if (s == "cprd_single") return DistillMethod::CprdSingle;
  if (s == "cprd_trunc") return DistillMethod::CprdTrunc;
  if (s == "kl") return DistillMethod::Kl;
  if (s == "m3se") return DistillMethod::M3se;
  if (s == "r_m3se") return DistillMethod::RM3se;
  throw std::invalid_argument("unknown distillation method: " + s);
}

struct TrainerConfig {
  int embed_dim = 32;
  double tau_init = 0.07;  // reference full-scale value, also the desk default
  int batch = 64;
  int epochs = 30;
  double lr_peak = 3e-3;
  double lr_floor = 1e-4;
  int warmup_steps = 100;
  double weight_decay = 0.02;
  // Hard-negative and queue geometry. K, m, mu keep their full-scale values;
  // the queues are scaled to the desk corpus (full-scale runs use queues of
  // ~58k features and ~16k reference ids).
  int k = 16;
  double m = 0.75;
  int nq = 512;
  int nc = 512;
  double mu = 0.995;
  DistillMethod method = DistillMethod::None;
  TargetMode target_mode = TargetMode::Online;
  double kl_teacher_tau = 1.0;
  std::uint64_t seed = 42;

  void validate(int corpus_size) const {
    if (batch < 2) throw std::invalid_argument("trainer: batch must be >= 2");
    if (batch > corpus_size) throw std::invalid_argument("trainer: batch larger than corpus");
    if (epochs < 1) throw std::invalid_argument("trainer: epochs must be >= 1");
    if (k < 0) throw std::invalid_argument("trainer: K must be >= 0");
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("trainer: m must be in [0,1]");
    if (nq < 0 || nc < 0) throw std::invalid_argument("trainer: queue sizes must be >= 0");
    if (!(mu >= 0.0 && mu < 1.0)) throw std::invalid_argument("trainer: mu must be in [0,1)");
    if (!(lr_peak > 0.0) || lr_floor < 0.0 || lr_floor > lr_peak)
      throw std::invalid_argument("trainer: bad learning rates");
    if (warmup_steps < 0) throw std::invalid_argument("trainer: warmup must be >= 0");
    if (!(kl_teacher_tau > 0.0))
      throw std::invalid_argument("trainer: teacher temperature must be > 0");
    if (target_mode == TargetMode::Offline &&
        (method == DistillMethod::Kl || method == DistillMethod::M3se ||
         method == DistillMethod::RM3se))
      throw std::invalid_argument(
          "trainer: offline banks store negatives only; kl/m3se need online positives");
  }
};

inline double lr_at(const TrainerConfig& c, long long step, long long total_steps) {
  if (step < c.warmup_steps)
    return c.lr_peak * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  const long long span = std::max<long long>(1, total_steps - c.warmup_steps);
  const double t = static_cast<double>(step - c.warmup_steps) / static_cast<double>(span);
  return c.lr_floor + (c.lr_peak - c.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

constexpr const char* kMetricsHeader = "step,L_align,L_distill,tau,mean_valid,wall_ms";

class TrainSession {
 public:
  // With `warm_start` the student begins from an existing model (fine-tuning:
  // fresh optimizer state, queues, and schedule) instead of a random init.
  TrainSession(const TrainerConfig& cfg, const LatentCorpus& corpus, const TeacherSim& teacher,
               std::uint64_t config_hash, const ScoreBank* bank_i2t = nullptr,
               const ScoreBank* bank_t2i = nullptr, const StudentModel* warm_start = nullptr)
      : cfg_(cfg),
        corpus_(&corpus),
        teacher_(teacher),
        config_hash_(config_hash),
        bank_i2t_(bank_i2t),
        bank_t2i_(bank_t2i),
        qv_(cfg.nq),
        qt_(cfg.nq),
        qc_(cfg.nc),
        rng_(derive_seed(cfg.seed, "train")) {
    cfg_.validate(corpus.size());
    if (cfg_.target_mode == TargetMode::Offline && cfg_.method != DistillMethod::None &&
        (!bank_i2t_ || !bank_t2i_))
      throw std::invalid_argument("trainer: offline mode needs both direction banks");
    validate_teacher(teacher_);
    if (warm_start) {
      if (warm_start->w_v.rows != cfg.embed_dim || warm_start->w_t.rows != cfg.embed_dim ||
          warm_start->w_v.cols != corpus.view_a_dim || warm_start->w_t.cols != corpus.view_b_dim)
        throw std::invalid_argument("trainer: warm-start model shape does not match config");
      model_ = *warm_start;
    } else {
      Rng init_rng(derive_seed(cfg.seed, "init"));
      model_ = init_student(cfg.embed_dim, corpus.view_a_dim, corpus.view_b_dim, cfg.tau_init,
                            init_rng);
    }
    momentum_ = momentum_init(model_, cfg.mu);
    adam_.init({model_.w_v.a.size(), model_.w_t.a.size(), 1});
    for (int i = 0; i < corpus.size(); ++i) id_to_pos_[corpus.ids[i]] = i;
    draw_epoch_perm();
  }

  long long steps_per_epoch() const {
    return static_cast<long long>(corpus_->size() / cfg_.batch);
  }
  long long total_steps() const { return steps_per_epoch() * cfg_.epochs; }
  long long step() const { return step_; }
  bool done() const { return step_ >= total_steps(); }

  const StudentModel& model() const { return model_; }
  const MomentumEncoder& momentum() const { return momentum_; }
  const TrainerConfig& config() const { return cfg_; }
  const std::vector<std::string>& metrics() const { return metrics_; }

  using StepObserver = std::function<void(const TrainSession&)>;

  void run(const StepObserver& observer = nullptr) {
    while (!done()) {
      step_once();
      if (observer) observer(*this);
    }
  }

  void step_once() {
    if (done()) throw std::runtime_error("trainer: run already complete");
    const auto t0 = std::chrono::steady_clock::now();
    const int b = cfg_.batch;
    const long long offset = (step_ % steps_per_epoch()) * b;

    TrainBatch batch;
    batch.ids.reserve(b);
    std::vector<Vec> v_hat(b), t_hat(b);
    for (int i = 0; i < b; ++i) {
      const int pos = perm_[static_cast<std::size_t>(offset) + i];
      batch.ids.push_back(corpus_->ids[pos]);
      batch.x_v.push_back(&corpus_->x_v[pos]);
      batch.x_t.push_back(&corpus_->x_t[pos]);
      batch.v.push_back(encode_v(model_, corpus_->x_v[pos]));
      batch.t.push_back(encode_t(model_, corpus_->x_t[pos]));
      v_hat[i] = encode_v(momentum_.shadow, corpus_->x_v[pos]).e;
      t_hat[i] = encode_t(momentum_.shadow, corpus_->x_t[pos]).e;
    }
    const CandidateView cand_t = candidate_view(qt_, batch.ids, t_hat);
    const CandidateView cand_v = candidate_view(qv_, batch.ids, v_hat);

    LossValue total = align_loss(model_, batch, cand_t, cand_v);
    const double align_value = total.value;
    double distill_value = 0.0;
    double mean_valid = 0.0;

    if (cfg_.method != DistillMethod::None) {
      const ScoreFn online_i2t = make_online_scorer(batch.ids);
      const ScoreFn online_t2i = online_i2t;  // symmetric ground truth access
      const ScoreFn score_i2t = cfg_.target_mode == TargetMode::Offline
                                    ? make_bank_scorer(*bank_i2t_)
                                    : online_i2t;
      const ScoreFn score_t2i = cfg_.target_mode == TargetMode::Offline
                                    ? make_bank_scorer(*bank_t2i_)
                                    : online_t2i;
      DistillPlan i2t = make_plan(batch, cand_t, score_i2t, true);
      DistillPlan t2i = make_plan(batch, cand_v, score_t2i, false);

      LossValue distill;
      switch (cfg_.method) {
        case DistillMethod::Cprd:
        case DistillMethod::CprdSingle:
          distill = cprd_loss(model_, batch, cand_t, cand_v, i2t, t2i, false);
          break;
        case DistillMethod::CprdTrunc:
          distill = cprd_loss(model_, batch, cand_t, cand_v, i2t, t2i, true);
          break;
        case DistillMethod::Kl:
          distill = kl_loss(model_, batch, cand_t, cand_v, i2t, t2i, cfg_.kl_teacher_tau);
          break;
        case DistillMethod::M3se:
          distill = m3se_loss(model_, batch, cand_t, cand_v, i2t, t2i, false);
          break;
        case DistillMethod::RM3se:
          distill = m3se_loss(model_, batch, cand_t, cand_v, i2t, t2i, true);
          break;
        case DistillMethod::None: break;
      }
      distill_value = distill.value;
      total.add(distill);

      if (is_partial_ranking(cfg_.method)) {
        long long nv = 0;
        for (const auto& t : i2t.target) nv += t.j_star() - 1;
        for (const auto& t : t2i.target) nv += t.j_star() - 1;
        mean_valid = static_cast<double>(nv) / (2.0 * b);
      } else {
        long long nh = 0;
        for (const auto& h : i2t.hard) nh += h.size();
        for (const auto& h : t2i.hard) nh += h.size();
        mean_valid = static_cast<double>(nh) / (2.0 * b);
      }
    }

    AdamConfig acfg;
    acfg.lr = lr_at(cfg_, step_, total_steps());
    acfg.weight_decay = cfg_.weight_decay;
    std::vector<std::span<double>> params{
        {model_.w_v.a.data(), model_.w_v.a.size()},
        {model_.w_t.a.data(), model_.w_t.a.size()},
        {&model_.log_tau, 1}};
    std::vector<std::span<const double>> grads{
        {total.d_w_v.a.data(), total.d_w_v.a.size()},
        {total.d_w_t.a.data(), total.d_w_t.a.size()},
        {&total.d_log_tau, 1}};
    adam_step(adam_, acfg, params, grads, {true, true, false});
    clamp_log_tau(model_);

    momentum_update(momentum_, model_);
    qv_.push_batch(batch.ids, v_hat);
    qt_.push_batch(batch.ids, t_hat);
    qc_.push_batch(batch.ids);

    ++step_;
    if (step_ % steps_per_epoch() == 0 && !done()) draw_epoch_perm();

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    metrics_.push_back(std::to_string(step_) + "," + g17(align_value) + "," +
                       g17(distill_value) + "," + g17(temperature(model_)) + "," +
                       g17(mean_valid) + "," + g17(wall_ms));
  }

  // -------------------------------------------------------------------------
  // Checkpointing: complete state as round-trip-exact text.
  // -------------------------------------------------------------------------

  std::string checkpoint_string() const {
    std::ostringstream out;
    out << "rdl-checkpoint v1\n";
    out << "config_hash " << config_hash_ << "\n";
    out << "step " << step_ << "\n";
    out << "rng " << rng_.state() << "\n";
    auto mat = [&out](const char* name, const Mat& m) {
      out << name << " " << m.rows << " " << m.cols;
      for (double v : m.a) out << " " << g17(v);
      out << "\n";
    };
    out << "log_tau " << g17(model_.log_tau) << "\n";
    mat("wv", model_.w_v);
    mat("wt", model_.w_t);
    out << "momentum_log_tau " << g17(momentum_.shadow.log_tau) << "\n";
    mat("mwv", momentum_.shadow.w_v);
    mat("mwt", momentum_.shadow.w_t);
    out << "adam_step " << adam_.step << "\n";
    auto moments = [&out](const char* name, const std::vector<Vec>& mm) {
      out << name << " " << mm.size();
      for (const Vec& t : mm) {
        out << " " << t.size();
        for (double v : t) out << " " << g17(v);
      }
      out << "\n";
    };
    moments("adam_m", adam_.m);
    moments("adam_v", adam_.v);
    auto queue = [&out](const char* name, const FeatureQueue& q) {
      out << name << " " << q.size();
      for (int e = 0; e < q.size(); ++e) {
        out << " " << q.ids[e];
        for (double v : q.feats[e]) out << " " << g17(v);
      }
      out << "\n";
    };
    out << "embed_dim " << model_.embed_dim() << "\n";
    queue("queue_v", qv_);
    queue("queue_t", qt_);
    out << "qc " << qc_.size();
    for (long long id : qc_.ids) out << " " << id;
    out << "\n";
    out << "perm " << perm_.size();
    for (int p : perm_) out << " " << p;
    out << "\nend\n";
    return out.str();
  }

  void save_checkpoint(const std::string& path) const { write_file(path, checkpoint_string()); }

  // Rebuilds a session mid-run from checkpoint text. The config hash must
  // match the one the checkpoint was written under.
  static TrainSession resume(const std::string& checkpoint_text, const TrainerConfig& cfg,
                             const LatentCorpus& corpus, const TeacherSim& teacher,
                             std::uint64_t config_hash, const ScoreBank* bank_i2t = nullptr,
                             const ScoreBank* bank_t2i = nullptr) {
    TrainSession s(cfg, corpus, teacher, config_hash, bank_i2t, bank_t2i);
    std::istringstream in(checkpoint_text);
    std::string tok;
    auto expect = [&](const char* want) {
      in >> tok;
      if (tok != want) throw std::runtime_error(std::string("checkpoint: expected ") + want);
    };
    expect("rdl-checkpoint");
    expect("v1");
    expect("config_hash");
    std::uint64_t h;
    in >> h;
    if (h != config_hash) throw std::runtime_error("checkpoint: config mismatch");
    expect("step");
    in >> s.step_;
    expect("rng");
    std::uint64_t rs;
    in >> rs;
    s.rng_.set_state(rs);
    auto mat = [&](const char* name, Mat& m) {
      expect(name);
      int r, c;
      in >> r >> c;
      if (r != m.rows || c != m.cols) throw std::runtime_error("checkpoint: shape mismatch");
      for (double& v : m.a) {
        in >> tok;
        v = parse_double(tok);
      }
    };
    expect("log_tau");
    in >> tok;
    s.model_.log_tau = parse_double(tok);
    mat("wv", s.model_.w_v);
    mat("wt", s.model_.w_t);
    expect("momentum_log_tau");
    in >> tok;
    s.momentum_.shadow.log_tau = parse_double(tok);
    mat("mwv", s.momentum_.shadow.w_v);
    mat("mwt", s.momentum_.shadow.w_t);
    expect("adam_step");
    in >> s.adam_.step;
    auto moments = [&](const char* name, std::vector<Vec>& mm) {
      expect(name);
      std::size_t cnt;
      in >> cnt;
      if (cnt != mm.size()) throw std::runtime_error("checkpoint: optimizer tensor mismatch");
      for (Vec& t : mm) {
        std::size_t sz;
        in >> sz;
        if (sz != t.size()) throw std::runtime_error("checkpoint: optimizer size mismatch");
        for (double& v : t) {
          in >> tok;
          v = parse_double(tok);
        }
      }
    };
    moments("adam_m", s.adam_.m);
    moments("adam_v", s.adam_.v);
    expect("embed_dim");
    int ed;
    in >> ed;
    if (ed != s.model_.embed_dim()) throw std::runtime_error("checkpoint: embed_dim mismatch");
    auto queue = [&](const char* name, FeatureQueue& q) {
      expect(name);
      int cnt;
      in >> cnt;
      q.ids.clear();
      q.feats.clear();
      for (int e = 0; e < cnt; ++e) {
        long long id;
        in >> id;
        Vec f(ed);
        for (double& v : f) {
          in >> tok;
          v = parse_double(tok);
        }
        q.ids.push_back(id);
        q.feats.push_back(std::move(f));
      }
    };
    queue("queue_v", s.qv_);
    queue("queue_t", s.qt_);
    expect("qc");
    int qn;
    in >> qn;
    s.qc_.ids.assign(qn, 0);
    for (long long& id : s.qc_.ids) in >> id;
    expect("perm");
    std::size_t pn;
    in >> pn;
    if (pn != s.perm_.size()) throw std::runtime_error("checkpoint: permutation size mismatch");
    for (int& p : s.perm_) in >> p;
    expect("end");
    if (!in) throw std::runtime_error("checkpoint: truncated");
    return s;
  }

 private:
  void draw_epoch_perm() {
    perm_.resize(corpus_->size());
    for (int i = 0; i < corpus_->size(); ++i) perm_[i] = i;
    rng_.shuffle(perm_);
  }

  // Online teacher scoring restricted to the batch plus the reference queue.
  ScoreFn make_online_scorer(const std::vector<long long>& batch_ids) const {
    auto allowed = std::make_shared<std::vector<long long>>(qc_.sorted_ids());
    allowed->insert(allowed->end(), batch_ids.begin(), batch_ids.end());
    std::sort(allowed->begin(), allowed->end());
    const LatentCorpus* corpus = corpus_;
    const TeacherSim teacher = teacher_;
    const auto* map = &id_to_pos_;
    return [allowed, corpus, teacher, map](long long qid, long long cid) -> std::optional<double> {
      if (!std::binary_search(allowed->begin(), allowed->end(), cid)) return std::nullopt;
      const auto qi = map->find(qid), ci = map->find(cid);
      if (qi == map->end() || ci == map->end()) return std::nullopt;
      return teacher_score(teacher, *corpus, qi->second, ci->second);
    };
  }

  static ScoreFn make_bank_scorer(const ScoreBank& bank) {
    const ScoreBank* b = &bank;
    return [b](long long qid, long long cid) { return b->lookup(qid, cid); };
  }

  DistillPlan make_plan(const TrainBatch& batch, const CandidateView& view,
                        const ScoreFn& scorer, bool i2t_dir) const {
    DistillPlan plan;
    const int b = batch.size();
    plan.ranking.reserve(b);
    plan.hard.reserve(b);
    for (int i = 0; i < b; ++i) {
      const long long qid = batch.ids[i];
      const Vec& qe = (i2t_dir ? batch.v : batch.t)[i].e;
      const auto slots = negative_slots(view, qid, i);
      plan.ranking.push_back(rank_negatives(qe, view, slots, qid));
      plan.hard.push_back(top_k(plan.ranking.back(), cfg_.k));
    }
    if (is_partial_ranking(cfg_.method)) {
      for (int i = 0; i < b; ++i)
        plan.target.push_back(cfg_.method == DistillMethod::CprdSingle
                                  ? build_target_single(plan.hard[i], scorer)
                                  : build_target(plan.hard[i], scorer, cfg_.m));
    } else {
      for (int i = 0; i < b; ++i) {
        const auto& hard = plan.hard[i];
        const auto ps = scorer(batch.ids[i], batch.ids[i]);
        if (!ps) throw std::runtime_error("trainer: missing teacher score for positive");
        plan.pos_scores.push_back(*ps);
        Vec ns(hard.size());
        for (int k = 0; k < hard.size(); ++k) {
          const auto sc = scorer(batch.ids[i], hard.ids[k]);
          if (!sc) throw std::runtime_error("trainer: missing teacher score for hard negative");
          ns[k] = *sc;
        }
        plan.neg_scores.push_back(std::move(ns));
      }
    }
    return plan;
  }

  TrainerConfig cfg_;
  const LatentCorpus* corpus_;
  TeacherSim teacher_;
  std::uint64_t config_hash_ = 0;
  const ScoreBank* bank_i2t_;
  const ScoreBank* bank_t2i_;

  StudentModel model_;
  MomentumEncoder momentum_;
  FeatureQueue qv_, qt_;
  ReferenceQueue qc_;
  AdamState adam_;
  Rng rng_;
  std::vector<int> perm_;
  long long step_ = 0;
  std::vector<std::string> metrics_;
  std::unordered_map<long long, int> id_to_pos_;
};

// Extracts just the student weights from checkpoint text, for consumers that
// evaluate or mine with a trained model and do not need the training state.
inline StudentModel checkpoint_model(const std::string& checkpoint_text) {
  std::istringstream in(checkpoint_text);
  std::string tok;
  auto expect = [&](const char* want) {
    in >> tok;
    if (tok != want) throw std::runtime_error(std::string("checkpoint: expected ") + want);
  };
  expect("rdl-checkpoint");
  expect("v1");
  expect("config_hash");
  in >> tok;
  expect("step");
  in >> tok;
  expect("rng");
  in >> tok;
  expect("log_tau");
  in >> tok;
  StudentModel m;
  m.log_tau = parse_double(tok);
  auto mat = [&](const char* name, Mat& out) {
    expect(name);
    int r, c;
    in >> r >> c;
    if (!(r > 0 && c > 0)) throw std::runtime_error("checkpoint: bad matrix shape");
    out = Mat(r, c);
    for (double& v : out.a) {
      in >> tok;
      v = parse_double(tok);
    }
  };
  mat("wv", m.w_v);
  mat("wt", m.w_t);
  if (!in) throw std::runtime_error("checkpoint: truncated");
  return m;
}

}  // namespace rdl
