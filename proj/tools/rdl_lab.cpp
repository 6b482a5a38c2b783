// Command-line laboratory driver. Subcommands cover the full experiment
// cycle: `generate` builds the synthetic corpus and calibrates the teacher,
// `bank` precomputes offline teacher scores, `train` runs the contrastive
// student with optional distillation, `eval` measures retrieval quality and
// teacher agreement (with optional pass/fail assertions), `ablate` sweeps one
// axis across seeds, and `report` prints a plain-text summary of a run
// directory.
//
// Exit codes: 0 success, 1 config/usage error, 2 runtime failure,
// 3 failed --assert.

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rdl/bank.hpp"
#include "rdl/config.hpp"
#include "rdl/corpus.hpp"
#include "rdl/eval.hpp"
#include "rdl/teacher.hpp"
#include "rdl/trainer.hpp"

namespace {

using nlohmann::json;

constexpr const char* kCorpusTrain = "corpus_train.txt";
constexpr const char* kCorpusTest = "corpus_test.txt";
constexpr const char* kTeacherFile = "teacher.txt";
constexpr const char* kBankI2T = "bank_i2t.txt";
constexpr const char* kBankT2I = "bank_t2i.txt";
constexpr const char* kCheckpoint = "checkpoint.txt";
constexpr const char* kMetricsCsv = "metrics.csv";

struct Common {
  std::string out = "run_out";
  std::string config_file;
  std::vector<std::string> sets;
};

// Invalid flags, keys, or values — exits with code 1 instead of 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

rdl::LabConfig load_config(const Common& c) {
  try {
    auto cfg = rdl::LabConfig::defaults();
    if (!c.config_file.empty()) cfg.apply_file(c.config_file);
    for (const auto& s : c.sets) cfg.apply_override(s);
    return cfg;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::string pjoin(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string iso_now_utc() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// The manifest is the only artifact that records wall-clock time; everything
// else is a pure function of the configuration.
void write_manifest(const Common& c, const rdl::LabConfig& cfg, const std::string& command,
                    const json& extra) {
  json j;
  j["command"] = command;
  j["timestamp_utc"] = iso_now_utc();
  j["training_hash"] = cfg.training_hash();
  j["seed"] = cfg.seed();
  json jc = json::object();
  for (const auto& [k, v] : cfg.items()) jc[k] = v;
  j["config"] = jc;
  j["details"] = extra;
  rdl::write_file(pjoin(c.out, "manifest_" + command + ".json"), j.dump(2) + "\n");
}

void save_teacher(const std::string& path, const rdl::TeacherSim& t) {
  std::string s = "rdl-teacher v1\n";
  s += "alpha " + rdl::g17(t.alpha) + "\n";
  s += "r0 " + rdl::g17(t.r0) + "\n";
  s += "epsilon " + rdl::g17(t.epsilon) + "\n";
  s += "noise_seed " + std::to_string(t.noise_seed) + "\n";
  rdl::write_file(path, s);
}

rdl::TeacherSim load_teacher(const std::string& path) {
  std::istringstream in(rdl::read_file(path));
  std::string tok;
  auto expect = [&](const char* want) {
    in >> tok;
    if (tok != want) throw std::runtime_error(std::string("teacher file: expected ") + want);
  };
  rdl::TeacherSim t;
  expect("rdl-teacher");
  expect("v1");
  expect("alpha");
  in >> tok;
  t.alpha = rdl::parse_double(tok);
  expect("r0");
  in >> tok;
  t.r0 = rdl::parse_double(tok);
  expect("epsilon");
  in >> tok;
  t.epsilon = rdl::parse_double(tok);
  expect("noise_seed");
  in >> t.noise_seed;
  if (!in) throw std::runtime_error("teacher file: truncated");
  rdl::validate_teacher(t);
  return t;
}

// The calibrated teacher saved by `generate` takes precedence over the raw
// configuration parameters.
rdl::TeacherSim teacher_for_run(const rdl::LabConfig& cfg, const std::string& out) {
  const std::string path = pjoin(out, kTeacherFile);
  if (std::filesystem::exists(path)) return load_teacher(path);
  return cfg.teacher_sim();
}

rdl::LatentCorpus load_required_corpus(const std::string& out, const char* name) {
  const std::string path = pjoin(out, name);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing " + path + " (run `generate` into this directory first)");
  return rdl::load_corpus(path);
}

// Fraction of teacher scores over random non-positive pairs that land in the
// concentrated bands [0, 0.1] or [0.9, 1].
double teacher_concentration(const rdl::TeacherSim& t, const rdl::LatentCorpus& c, int n_pairs,
                             rdl::Rng& rng) {
  int concentrated = 0;
  for (int p = 0; p < n_pairs; ++p) {
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.size())));
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.size() - 1)));
    if (j >= i) ++j;
    const double s = rdl::teacher_score(t, c, i, j);
    if (s <= 0.1 || s >= 0.9) ++concentrated;
  }
  return static_cast<double>(concentrated) / static_cast<double>(n_pairs);
}

int cmd_generate(const Common& c) {
  const auto cfg = load_config(c);
  std::filesystem::create_directories(c.out);

  const auto corpus_cfg = cfg.corpus_config();
  rdl::Rng crng(rdl::derive_seed(cfg.seed(), "corpus"));
  const auto world = rdl::generate_corpus(corpus_cfg, crng);
  const int n_train = static_cast<int>(cfg.get_int("corpus.n_train"));
  const auto train = rdl::slice_corpus(world, 0, n_train);
  const auto test = rdl::slice_corpus(world, n_train, world.size());
  rdl::save_corpus(train, pjoin(c.out, kCorpusTrain));
  rdl::save_corpus(test, pjoin(c.out, kCorpusTest));

  rdl::Rng calib_rng(rdl::derive_seed(cfg.seed(), "calib"));
  const auto teacher =
      rdl::calibrate_teacher(train, cfg.get_double("teacher.epsilon"),
                             rdl::derive_seed(cfg.seed(), "teacher.noise"), calib_rng,
                             cfg.calibration_bounds());
  save_teacher(pjoin(c.out, kTeacherFile), teacher);

  rdl::Rng conc_rng(rdl::derive_seed(cfg.seed(), "concentration"));
  const double conc = teacher_concentration(teacher, train, 2000, conc_rng);

  json extra;
  extra["train_items"] = train.size();
  extra["test_items"] = test.size();
  extra["teacher_alpha"] = teacher.alpha;
  extra["teacher_r0"] = teacher.r0;
  extra["teacher_concentration"] = conc;
  extra["outputs"] = {kCorpusTrain, kCorpusTest, kTeacherFile};
  write_manifest(c, cfg, "generate", extra);

  std::cout << "corpus: " << train.size() << " train / " << test.size() << " test items\n"
            << "teacher: alpha=" << teacher.alpha << " r0=" << teacher.r0
            << " concentration=" << conc << "\n";
  return 0;
}

int cmd_bank(const Common& c, const std::string& checkpoint) {
  const auto cfg = load_config(c);
  const auto train = load_required_corpus(c.out, kCorpusTrain);
  const auto teacher = teacher_for_run(cfg, c.out);

  rdl::StudentModel miner;
  if (!checkpoint.empty()) {
    miner = rdl::checkpoint_model(rdl::read_file(checkpoint));
  } else {
    // The same initial student the trainer would build for this seed.
    const auto tc = cfg.trainer_config();
    rdl::Rng init_rng(rdl::derive_seed(cfg.seed(), "init"));
    miner = rdl::init_student(tc.embed_dim, train.view_a_dim, train.view_b_dim, tc.tau_init,
                              init_rng);
  }

  const int top_n = static_cast<int>(cfg.get_int("bank.n"));
  bool clamped_i2t = false, clamped_t2i = false;
  const auto bi = rdl::build_bank(miner, train, teacher, top_n, rdl::Direction::I2T,
                                  &clamped_i2t);
  const auto bt = rdl::build_bank(miner, train, teacher, top_n, rdl::Direction::T2I,
                                  &clamped_t2i);
  rdl::save_bank(bi, pjoin(c.out, kBankI2T));
  rdl::save_bank(bt, pjoin(c.out, kBankT2I));

  json extra;
  extra["top_n_requested"] = top_n;
  extra["top_n_stored"] = bi.top_n;
  extra["clamped_to_gallery"] = clamped_i2t || clamped_t2i;
  extra["miner"] = checkpoint.empty() ? "initial student" : checkpoint;
  extra["outputs"] = {kBankI2T, kBankT2I};
  write_manifest(c, cfg, "bank", extra);

  std::cout << "banks: top " << bi.top_n << " candidates per query, both directions\n";
  return 0;
}

int cmd_train(const Common& c, bool resume) {
  const auto cfg = load_config(c);
  const auto train = load_required_corpus(c.out, kCorpusTrain);
  const auto teacher = teacher_for_run(cfg, c.out);
  auto tc = cfg.trainer_config();
  tc.validate(train.size());

  std::optional<rdl::ScoreBank> bank_i2t, bank_t2i;
  const rdl::ScoreBank* bi = nullptr;
  const rdl::ScoreBank* bt = nullptr;
  if (tc.target_mode == rdl::TargetMode::Offline) {
    const std::string pi = pjoin(c.out, kBankI2T), pt = pjoin(c.out, kBankT2I);
    if (!std::filesystem::exists(pi) || !std::filesystem::exists(pt))
      throw std::runtime_error("offline target mode needs " + pi + " and " + pt +
                               " (run `bank` first)");
    bank_i2t = rdl::load_bank(pi);
    bank_t2i = rdl::load_bank(pt);
    bi = &*bank_i2t;
    bt = &*bank_t2i;
  }

  const std::uint64_t hash = cfg.training_hash();
  const std::string ckpt_path = pjoin(c.out, kCheckpoint);
  std::optional<rdl::TrainSession> session;
  if (resume) {
    if (!std::filesystem::exists(ckpt_path))
      throw std::runtime_error("cannot resume: missing " + ckpt_path);
    session.emplace(
        rdl::TrainSession::resume(rdl::read_file(ckpt_path), tc, train, teacher, hash, bi, bt));
    std::cout << "resumed at step " << session->step() << "/" << session->total_steps() << "\n";
  } else {
    session.emplace(tc, train, teacher, hash, bi, bt);
  }

  const long long every = cfg.get_int("train.checkpoint_every");
  const long long per_epoch = session->steps_per_epoch();
  session->run([&](const rdl::TrainSession& ts) {
    if (every > 0 && ts.step() % every == 0) ts.save_checkpoint(ckpt_path);
    if (ts.step() % per_epoch == 0 || ts.step() == ts.total_steps())
      std::cout << "step " << ts.step() << "/" << ts.total_steps() << "  "
                << ts.metrics().back() << "\n";
  });
  session->save_checkpoint(ckpt_path);

  std::string csv = std::string(rdl::kMetricsHeader) + "\n";
  const std::string metrics_path = pjoin(c.out, kMetricsCsv);
  if (resume && std::filesystem::exists(metrics_path)) {
    // Keep rows from before the resume point; the session only holds the
    // rows it produced after resuming.
    const long long first_new =
        session->step() - static_cast<long long>(session->metrics().size()) + 1;
    csv.clear();
    for (const auto& line : rdl::read_lines(metrics_path)) {
      if (line.empty()) continue;
      const auto fields = rdl::split(line, ',');
      if (fields[0] == "step" || rdl::parse_int(fields[0]) < first_new) csv += line + "\n";
    }
  }
  for (const auto& row : session->metrics()) csv += row + "\n";
  rdl::write_file(metrics_path, csv);

  json extra;
  extra["method"] = rdl::method_name(tc.method);
  extra["steps"] = session->step();
  extra["final_metrics"] = session->metrics().empty() ? "" : session->metrics().back();
  extra["outputs"] = {kCheckpoint, kMetricsCsv};
  write_manifest(c, cfg, "train", extra);
  return 0;
}

std::string report_csv_row(const rdl::RetrievalReport& r) {
  return rdl::g17(r.i2t_r1) + "," + rdl::g17(r.i2t_r5) + "," + rdl::g17(r.i2t_r10) + "," +
         rdl::g17(r.t2i_r1) + "," + rdl::g17(r.t2i_r5) + "," + rdl::g17(r.t2i_r10) + "," +
         rdl::g17(r.r_at_s());
}

// "name>=0.5" / "name<=0.5" / "name>0.5" / "name<0.5" against the metric map.
bool check_assertion(const std::map<std::string, double>& metrics, const std::string& expr,
                     std::string& message) {
  static const std::vector<std::string> ops = {">=", "<=", ">", "<"};
  for (const auto& op : ops) {
    const auto pos = expr.find(op);
    if (pos == std::string::npos) continue;
    const std::string name = expr.substr(0, pos);
    const double want = rdl::parse_double(expr.substr(pos + op.size()));
    const auto it = metrics.find(name);
    if (it == metrics.end()) {
      std::string names;
      for (const auto& [k, v] : metrics) names += (names.empty() ? "" : ", ") + k;
      throw ConfigError("--assert references unknown metric '" + name +
                        "'; available: " + names);
    }
    const double got = it->second;
    bool ok = false;
    if (op == ">=") ok = got >= want;
    if (op == "<=") ok = got <= want;
    if (op == ">") ok = got > want;
    if (op == "<") ok = got < want;
    message = name + "=" + rdl::g17(got) + " " + op + " " + rdl::g17(want);
    return ok;
  }
  throw ConfigError("--assert needs one of >=, <=, >, < in: " + expr);
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& split,
             const std::vector<std::string>& asserts) {
  const auto cfg = load_config(c);
  const auto corpus =
      load_required_corpus(c.out, split == "train" ? kCorpusTrain : kCorpusTest);
  const auto teacher = teacher_for_run(cfg, c.out);
  const std::string ckpt_path = checkpoint.empty() ? pjoin(c.out, kCheckpoint) : checkpoint;
  if (!std::filesystem::exists(ckpt_path))
    throw std::runtime_error("missing checkpoint " + ckpt_path + " (run `train` first)");
  const auto model = rdl::checkpoint_model(rdl::read_file(ckpt_path));

  std::map<std::string, double> metrics;

  const auto rep = rdl::recall_at_k(model, corpus);
  metrics["i2t_r1"] = rep.i2t_r1;
  metrics["i2t_r5"] = rep.i2t_r5;
  metrics["i2t_r10"] = rep.i2t_r10;
  metrics["t2i_r1"] = rep.t2i_r1;
  metrics["t2i_r5"] = rep.t2i_r5;
  metrics["t2i_r10"] = rep.t2i_r10;
  metrics["r_at_s"] = rep.r_at_s();

  std::vector<int> ks;
  for (const auto& tok : cfg.get_string_list("eval.rerank_ks"))
    ks.push_back(static_cast<int>(rdl::parse_int(tok)));
  const auto rerank = rdl::rerank_study(model, teacher, corpus, ks);
  std::string rerank_csv = "k,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,r_at_s\n";
  for (const auto& row : rerank) {
    rerank_csv += std::to_string(row.k_rerank) + "," + report_csv_row(row.report) + "\n";
    metrics["rerank" + std::to_string(row.k_rerank) + "_r_at_s"] = row.report.r_at_s();
  }
  rdl::write_file(pjoin(c.out, "eval_rerank.csv"), rerank_csv);

  bool shrunk = false;
  const auto windows = rdl::default_intervals(corpus.size(), &shrunk);
  const auto intervals = rdl::rank_interval_correlation(model, teacher, corpus, windows);
  std::string icsv = "lo,hi,i2t,t2i,mean\n";
  for (std::size_t w = 0; w < intervals.size(); ++w) {
    const auto& row = intervals[w];
    icsv += std::to_string(row.lo) + "," + std::to_string(row.hi) + "," + rdl::g17(row.i2t) +
            "," + rdl::g17(row.t2i) + "," + rdl::g17(row.mean()) + "\n";
    metrics["interval" + std::to_string(w + 1) + "_mean"] = row.mean();
  }
  rdl::write_file(pjoin(c.out, "eval_intervals.csv"), icsv);

  rdl::Rng pairs_rng(rdl::derive_seed(cfg.seed(), "rated_pairs"));
  const auto rated = rdl::make_rated_pairs(model, corpus, pairs_rng);
  rdl::Rng boot_rng(rdl::derive_seed(cfg.seed(), "bootstrap"));
  const auto boot = rdl::spearman_bootstrap(
      rated, static_cast<int>(cfg.get_int("eval.bootstrap_resamples")), boot_rng);
  metrics["boot_mean"] = boot.mean;
  metrics["boot_std"] = boot.stddev;

  rdl::Rng hist_rng(rdl::derive_seed(cfg.seed(), "hist"));
  const auto hist = rdl::score_histograms(model, teacher, corpus,
                                          static_cast<int>(cfg.get_int("eval.hist_pairs")),
                                          static_cast<int>(cfg.get_int("eval.hist_bins")),
                                          hist_rng);
  metrics["teacher_concentration"] = hist.teacher_concentration;
  metrics["student_tail"] = hist.student_tail;
  std::string hcsv = "series,bin,lo,hi,mass\n";
  auto hist_rows = [&](const char* series, const rdl::Vec& v, double lo, double hi) {
    const double w = (hi - lo) / static_cast<double>(hist.bins);
    for (int b = 0; b < hist.bins; ++b)
      hcsv += std::string(series) + "," + std::to_string(b) + "," + rdl::g17(lo + b * w) + "," +
              rdl::g17(lo + (b + 1) * w) + "," + rdl::g17(v[b]) + "\n";
  };
  hist_rows("teacher_random", hist.teacher_random, 0.0, 1.0);
  hist_rows("student_random", hist.student_random, -1.0, 1.0);
  hist_rows("student_positive", hist.student_positive, -1.0, 1.0);
  rdl::write_file(pjoin(c.out, "eval_histograms.csv"), hcsv);

  json summary;
  for (const auto& [k, v] : metrics) summary[k] = v;
  summary["split"] = split;
  summary["intervals_shrunk"] = shrunk;
  rdl::write_file(pjoin(c.out, "eval_summary.json"), summary.dump(2) + "\n");

  json extra;
  extra["split"] = split;
  extra["checkpoint"] = ckpt_path;
  extra["outputs"] = {"eval_summary.json", "eval_rerank.csv", "eval_intervals.csv",
                      "eval_histograms.csv"};
  write_manifest(c, cfg, "eval", extra);

  std::cout << "r_at_s=" << rep.r_at_s() << "  boot_mean=" << boot.mean
            << "  teacher_concentration=" << hist.teacher_concentration
            << "  student_tail=" << hist.student_tail << "\n";

  bool all_ok = true;
  for (const auto& expr : asserts) {
    std::string msg;
    const bool ok = check_assertion(metrics, expr, msg);
    std::cout << (ok ? "ASSERT ok   " : "ASSERT FAIL ") << msg << "\n";
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 3;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) throw std::invalid_argument("median of empty set");
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_ablate(const Common& c) {
  const auto base_cfg = load_config(c);
  std::filesystem::create_directories(c.out);
  const std::string axis = base_cfg.get("ablate.axis");
  const auto values = base_cfg.get_string_list("ablate.values");
  const int n_seeds = static_cast<int>(base_cfg.get_int("ablate.seeds"));
  if (values.empty()) throw std::invalid_argument("ablate.values is empty");
  if (n_seeds < 1) throw std::invalid_argument("ablate.seeds must be >= 1");
  const std::map<std::string, std::string> axis_key = {{"m", "train.m"},
                                                       {"k", "train.k"},
                                                       {"nc", "train.nc"},
                                                       {"method", "train.method"}};
  if (axis != "rerank" && axis_key.find(axis) == axis_key.end())
    throw std::invalid_argument("ablate.axis must be one of m|k|nc|method|rerank");

  struct Row {
    std::string value;
    int seed;
    double r_at_s;
    double window1;
  };
  std::vector<Row> rows;

  // One full train+eval per (value, seed); `rerank` trains once per seed and
  // evaluates all depths on the same model.
  const std::uint64_t base_seed = base_cfg.seed();
  for (int s = 0; s < n_seeds; ++s) {
    auto seed_cfg = base_cfg;
    seed_cfg.set("seed", std::to_string(base_seed + static_cast<std::uint64_t>(s)));

    struct RunOut {
      rdl::StudentModel model;
      rdl::LatentCorpus test;
      rdl::TeacherSim teacher;
    };
    auto run_one = [&](const rdl::LabConfig& cfg) {
      rdl::Rng crng(rdl::derive_seed(cfg.seed(), "corpus"));
      const auto world = rdl::generate_corpus(cfg.corpus_config(), crng);
      const int n_train = static_cast<int>(cfg.get_int("corpus.n_train"));
      const auto train = rdl::slice_corpus(world, 0, n_train);
      const auto teacher = cfg.teacher_sim();  // sweep runs skip calibration
      auto tc = cfg.trainer_config();
      tc.validate(train.size());
      rdl::TrainSession session(tc, train, teacher, cfg.training_hash());
      session.run();
      return RunOut{session.model(), rdl::slice_corpus(world, n_train, world.size()), teacher};
    };
    auto window1_mean = [](const RunOut& r) {
      const auto win = rdl::default_intervals(r.test.size());
      return rdl::rank_interval_correlation(r.model, r.teacher, r.test, {win.front()})
          .front()
          .mean();
    };

    if (axis == "rerank") {
      const auto out = run_one(seed_cfg);
      std::vector<int> depths;
      for (const auto& v : values) depths.push_back(static_cast<int>(rdl::parse_int(v)));
      const auto study = rdl::rerank_study(out.model, out.teacher, out.test, depths);
      const double w1 = window1_mean(out);
      for (std::size_t vi = 0; vi < values.size(); ++vi)
        rows.push_back({values[vi], s, study[vi].report.r_at_s(), w1});
    } else {
      for (const auto& value : values) {
        auto cfg = seed_cfg;
        cfg.set(axis_key.at(axis), value);
        const auto out = run_one(cfg);
        const auto rep = rdl::recall_at_k(out.model, out.test);
        rows.push_back({value, s, rep.r_at_s(), window1_mean(out)});
      }
    }
  }

  std::string csv = "axis,value,seed,r_at_s,window1_spearman\n";
  for (const auto& r : rows)
    csv += axis + "," + r.value + "," + std::to_string(r.seed) + "," + rdl::g17(r.r_at_s) + "," +
           rdl::g17(r.window1) + "\n";
  for (const auto& value : values) {
    std::vector<double> rs, w1;
    for (const auto& r : rows)
      if (r.value == value) {
        rs.push_back(r.r_at_s);
        w1.push_back(r.window1);
      }
    csv += axis + "," + value + ",median," + rdl::g17(median(rs)) + "," + rdl::g17(median(w1)) +
           "\n";
  }
  rdl::write_file(pjoin(c.out, "ablate.csv"), csv);

  json extra;
  extra["axis"] = axis;
  extra["values"] = values;
  extra["seeds"] = n_seeds;
  extra["outputs"] = {"ablate.csv"};
  write_manifest(c, base_cfg, "ablate", extra);
  std::cout << "ablate: " << rows.size() << " runs over axis '" << axis << "' -> "
            << pjoin(c.out, "ablate.csv") << "\n";
  return 0;
}

int cmd_report(const Common& c) {
  bool printed = false;
  const std::string metrics_path = pjoin(c.out, kMetricsCsv);
  if (std::filesystem::exists(metrics_path)) {
    const auto lines = rdl::read_lines(metrics_path);
    if (lines.size() >= 2) {
      const auto header = rdl::split(lines.front(), ',');
      const auto last = rdl::split(lines.back(), ',');
      std::cout << "training (final step):\n";
      for (std::size_t i = 0; i < header.size() && i < last.size(); ++i)
        std::cout << "  " << header[i] << " = " << last[i] << "\n";
      printed = true;
    }
  }
  const std::string summary_path = pjoin(c.out, "eval_summary.json");
  if (std::filesystem::exists(summary_path)) {
    const auto j = json::parse(rdl::read_file(summary_path));
    std::cout << "evaluation (" << j.value("split", "?") << " split):\n";
    for (const auto& [k, v] : j.items()) std::cout << "  " << k << " = " << v << "\n";
    printed = true;
  }
  const std::string ablate_path = pjoin(c.out, "ablate.csv");
  if (std::filesystem::exists(ablate_path)) {
    std::cout << "ablation medians:\n";
    for (const auto& line : rdl::read_lines(ablate_path))
      if (line.find(",median,") != std::string::npos) std::cout << "  " << line << "\n";
    printed = true;
  }
  if (!printed) {
    std::cout << "no artifacts found in " << c.out << "\n";
    return 2;
  }
  return 0;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "run directory for inputs and outputs");
  sub->add_option("--config", c.config_file, "key=value configuration file");
  sub->add_option("--set", c.sets, "override a config key, e.g. --set train.k=8");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for ranking distillation into a dual encoder"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint;
  std::string split = "test";
  std::vector<std::string> asserts;
  bool resume = false;

  auto* gen = app.add_subcommand("generate", "build the corpus and calibrate the teacher");
  add_common(gen, common);
  auto* bank = app.add_subcommand("bank", "precompute offline teacher-score banks");
  add_common(bank, common);
  bank->add_option("--checkpoint", checkpoint, "mine with this trained student (default: initial)");
  auto* train = app.add_subcommand("train", "train the student");
  add_common(train, common);
  train->add_flag("--resume", resume, "continue from the run directory's checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate a trained student");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate (default: run dir's)");
  eval->add_option("--split", split, "corpus split: test|train")
      ->check(CLI::IsMember({"test", "train"}));
  eval->add_option("--assert", asserts, "require metric bound, e.g. --assert r_at_s>=150");
  auto* ablate = app.add_subcommand("ablate", "sweep one axis across seeds");
  add_common(ablate, common);
  auto* report = app.add_subcommand("report", "print a text summary of a run directory");
  add_common(report, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(common);
    if (bank->parsed()) return cmd_bank(common, checkpoint);
    if (train->parsed()) return cmd_train(common, resume);
    if (eval->parsed()) return cmd_eval(common, checkpoint, split, asserts);
    if (ablate->parsed()) return cmd_ablate(common);
    if (report->parsed()) return cmd_report(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
