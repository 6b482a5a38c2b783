#pragma once

// Offline teacher-score bank: for every query, the teacher scores of the
// top-N candidates under a frozen student's similarity. Lookups for pairs
// outside a query's stored list report absence — downstream target
// construction treats absent exactly like below-threshold.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "rdl/corpus.hpp"
#include "rdl/io_util.hpp"
#include "rdl/student.hpp"
#include "rdl/teacher.hpp"

namespace rdl {

enum class Direction { I2T, T2I };

struct ScoreBank {
  int top_n = 0;
  std::vector<long long> query_ids;  // ascending
  // Aligned with query_ids; each row sorted by candidate id ascending.
  std::vector<std::vector<std::pair<long long, double>>> rows;

  std::optional<double> lookup(long long query_id, long long candidate_id) const {
    const auto qit = std::lower_bound(query_ids.begin(), query_ids.end(), query_id);
    if (qit == query_ids.end() || *qit != query_id) return std::nullopt;
    const auto& row = rows[static_cast<std::size_t>(qit - query_ids.begin())];
    const auto cit = std::lower_bound(
        row.begin(), row.end(), candidate_id,
        [](const std::pair<long long, double>& e, long long c) { return e.first < c; });
    if (cit == row.end() || cit->first != candidate_id) return std::nullopt;
    return cit->second;
  }
};

// Builds one direction's bank with the given (frozen) student as the miner.
// N is clamped to gallery-1; `clamped` reports whether that happened.
inline ScoreBank build_bank(const StudentModel& model, const LatentCorpus& c,
                            const TeacherSim& teacher, int top_n, Direction dir,
                            bool* clamped = nullptr) {
  if (top_n < 1) throw std::invalid_argument("build_bank: N must be >= 1");
  if (c.size() < 2) throw std::invalid_argument("build_bank: corpus too small");
  const int n = c.size();
  const int eff_n = std::min(top_n, n - 1);
  if (clamped) *clamped = eff_n != top_n;

  std::vector<Vec> q_emb(n), cand_emb(n);
  for (int i = 0; i < n; ++i) {
    q_emb[i] = (dir == Direction::I2T ? encode_v(model, c.x_v[i]) : encode_t(model, c.x_t[i])).e;
    cand_emb[i] = (dir == Direction::I2T ? encode_t(model, c.x_t[i]) : encode_v(model, c.x_v[i])).e;
  }

  ScoreBank bank;
  bank.top_n = eff_n;
  bank.query_ids.resize(n);
  bank.rows.resize(n);
  struct Scored {
    double sim;
    long long id;
    int pos;
  };
  std::vector<Scored> scored;
  scored.reserve(n - 1);
  for (int i = 0; i < n; ++i) {
    bank.query_ids[i] = c.ids[i];
    scored.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      scored.push_back({dot(q_emb[i], cand_emb[j]), c.ids[j], j});
    }
    auto cmp = [](const Scored& a, const Scored& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return a.id < b.id;
    };
    std::partial_sort(scored.begin(), scored.begin() + eff_n, scored.end(), cmp);
    auto& row = bank.rows[i];
    row.reserve(eff_n);
    for (int k = 0; k < eff_n; ++k)
      row.emplace_back(scored[k].id, teacher_score(teacher, c, i, scored[k].pos));
    std::sort(row.begin(), row.end());
  }
  return bank;
}

inline std::string bank_to_string(const ScoreBank& b) {
  std::string out = "rdl-bank v1 N=" + std::to_string(b.top_n) + "\n";
  for (std::size_t q = 0; q < b.query_ids.size(); ++q)
    for (const auto& [cid, score] : b.rows[q])
      out += std::to_string(b.query_ids[q]) + "," + std::to_string(cid) + "," + g17(score) + "\n";
  return out;
}

inline void save_bank(const ScoreBank& b, const std::string& path) {
  write_file(path, bank_to_string(b));
}

inline ScoreBank load_bank(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error("bank file empty: " + path);
  const auto head = split(lines[0], ' ');
  if (head.size() != 3 || head[0] != "rdl-bank" || head[1] != "v1" ||
      head[2].rfind("N=", 0) != 0)
    throw std::runtime_error("bad bank header: " + path);
  ScoreBank b;
  b.top_n = static_cast<int>(parse_int(head[2].substr(2)));
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto f = split(lines[li], ',');
    if (f.size() != 3) throw std::runtime_error("bad bank record: " + path);
    const long long q = parse_int(f[0]);
    const long long cid = parse_int(f[1]);
    const double s = parse_double(f[2]);
    if (!(s > 0.0 && s < 1.0)) throw std::runtime_error("bank score outside (0,1): " + path);
    if (b.query_ids.empty() || b.query_ids.back() != q) {
      if (!b.query_ids.empty() && q < b.query_ids.back())
        throw std::runtime_error("bank queries out of order: " + path);
      b.query_ids.push_back(q);
      b.rows.emplace_back();
    }
    auto& row = b.rows.back();
    if (!row.empty() && cid <= row.back().first)
      throw std::runtime_error("bank candidates out of order: " + path);
    row.emplace_back(cid, s);
  }
  return b;
}

}  // namespace rdl
