#pragma once

// Synthetic latent-factor corpus. Every item is a point in latent space drawn
// around one of `cluster_count` unit-norm cluster centers; the two retrieval
// views are linear projections of the latent plus observation noise. Graded
// ground-truth relevance between items is cosine similarity of their latents
// mapped to [0, 1], so the "true" ranking of candidates is known exactly.

#include <string>
#include <vector>

#include "rdl/io_util.hpp"
#include "rdl/numerics.hpp"

namespace rdl {

struct CorpusConfig {
  int n_items = 2500;
  int latent_dim = 8;
  int view_a_dim = 24;  // "image" view
  int view_b_dim = 16;  // "text" view
  int cluster_count = 20;
  double intra_spread = 0.15;  // latent scatter around the cluster center
  double noise_sigma = 0.1;    // observation noise per view coordinate
  bool identity_mixing = false;  // debug worlds: views equal the latent
};

struct LatentCorpus {
  int latent_dim = 0;
  int view_a_dim = 0;
  int view_b_dim = 0;
  int cluster_count = 0;
  std::vector<long long> ids;  // stable item ids (global across splits)
  std::vector<int> cluster;
  std::vector<Vec> latent;
  std::vector<Vec> x_v;
  std::vector<Vec> x_t;

  int size() const { return static_cast<int>(ids.size()); }
};

// Graded ground-truth relevance r(i, j) = (1 + cos(z_i, z_j)) / 2 in [0, 1].
// Indices are positions within this corpus, not global ids.
inline double relevance(const LatentCorpus& c, int i, int j) {
  if (i < 0 || j < 0 || i >= c.size() || j >= c.size())
    throw std::out_of_range("relevance: index out of range");
  if (i == j) return 1.0;
  const double ni = l2_norm(c.latent[i]);
  const double nj = l2_norm(c.latent[j]);
  if (ni <= kDegenerateNorm || nj <= kDegenerateNorm)
    throw std::runtime_error("relevance: degenerate latent");
  double cs = dot(c.latent[i], c.latent[j]) / (ni * nj);
  cs = std::min(1.0, std::max(-1.0, cs));
  return 0.5 * (1.0 + cs);
}

inline LatentCorpus generate_corpus(const CorpusConfig& cfg, Rng& rng) {
  if (cfg.latent_dim < 2 || cfg.view_a_dim < 2 || cfg.view_b_dim < 2)
    throw std::invalid_argument("generate_corpus: dims must be >= 2");
  if (cfg.cluster_count < 2) throw std::invalid_argument("generate_corpus: need >= 2 clusters");
  if (cfg.n_items < 4 * cfg.cluster_count)
    throw std::invalid_argument("generate_corpus: n_items must be >= 4 * cluster_count");
  if (cfg.identity_mixing &&
      (cfg.view_a_dim != cfg.latent_dim || cfg.view_b_dim != cfg.latent_dim))
    throw std::invalid_argument("generate_corpus: identity mixing needs view dims == latent_dim");

  LatentCorpus c;
  c.latent_dim = cfg.latent_dim;
  c.view_a_dim = cfg.view_a_dim;
  c.view_b_dim = cfg.view_b_dim;
  c.cluster_count = cfg.cluster_count;

  std::vector<Vec> centers(cfg.cluster_count);
  for (auto& ctr : centers) {
    Vec g(cfg.latent_dim);
    for (double& v : g) v = rng.normal();
    ctr = l2_normalize(g);
  }

  auto gaussian_matrix = [&](int rows, int cols) {
    Mat m(rows, cols);
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : m.a) v = s * rng.normal();
    return m;
  };
  Mat mix_v, mix_t;
  if (!cfg.identity_mixing) {
    mix_v = gaussian_matrix(cfg.view_a_dim, cfg.latent_dim);
    mix_t = gaussian_matrix(cfg.view_b_dim, cfg.latent_dim);
  }

  c.ids.resize(cfg.n_items);
  c.cluster.resize(cfg.n_items);
  c.latent.resize(cfg.n_items);
  c.x_v.resize(cfg.n_items);
  c.x_t.resize(cfg.n_items);
  for (int i = 0; i < cfg.n_items; ++i) {
    c.ids[i] = i;
    const int k = i % cfg.cluster_count;  // balanced assignment
    c.cluster[i] = k;
    Vec z = centers[k];
    for (double& v : z) v += cfg.intra_spread * rng.normal();
    c.latent[i] = z;

    Vec xv = cfg.identity_mixing ? z : matvec(mix_v, z);
    for (double& v : xv) v += cfg.noise_sigma * rng.normal();
    c.x_v[i] = std::move(xv);

    Vec xt = cfg.identity_mixing ? z : matvec(mix_t, z);
    for (double& v : xt) v += cfg.noise_sigma * rng.normal();
    c.x_t[i] = std::move(xt);
  }
  return c;
}

// Sub-corpus over positions [from, to); global ids are retained so the slice
// remains traceable to the generating world.
inline LatentCorpus slice_corpus(const LatentCorpus& c, int from, int to) {
  if (from < 0 || to > c.size() || from >= to)
    throw std::invalid_argument("slice_corpus: bad range");
  LatentCorpus s;
  s.latent_dim = c.latent_dim;
  s.view_a_dim = c.view_a_dim;
  s.view_b_dim = c.view_b_dim;
  s.cluster_count = c.cluster_count;
  for (int i = from; i < to; ++i) {
    s.ids.push_back(c.ids[i]);
    s.cluster.push_back(c.cluster[i]);
    s.latent.push_back(c.latent[i]);
    s.x_v.push_back(c.x_v[i]);
    s.x_t.push_back(c.x_t[i]);
  }
  return s;
}

inline std::string corpus_to_string(const LatentCorpus& c) {
  std::string out = "rdl-corpus v1 n=" + std::to_string(c.size()) +
                    " latent=" + std::to_string(c.latent_dim) +
                    " va=" + std::to_string(c.view_a_dim) + " vb=" + std::to_string(c.view_b_dim) +
                    " clusters=" + std::to_string(c.cluster_count) + "\n";
  for (int i = 0; i < c.size(); ++i) {
    out += std::to_string(c.ids[i]);
    out += ',';
    out += std::to_string(c.cluster[i]);
    for (double v : c.latent[i]) {
      out += ',';
      out += g17(v);
    }
    for (double v : c.x_v[i]) {
      out += ',';
      out += g17(v);
    }
    for (double v : c.x_t[i]) {
      out += ',';
      out += g17(v);
    }
    out += '\n';
  }
  return out;
}

inline void save_corpus(const LatentCorpus& c, const std::string& path) {
  write_file(path, corpus_to_string(c));
}

inline LatentCorpus load_corpus(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error("corpus file empty: " + path);
  const auto head = split(lines[0], ' ');
  if (head.size() != 7 || head[0] != "rdl-corpus" || head[1] != "v1")
    throw std::runtime_error("bad corpus header: " + path);
  auto field = [&](std::size_t i, const char* key) {
    const auto kv = split(head[i], '=');
    if (kv.size() != 2 || kv[0] != key)
      throw std::runtime_error(std::string("bad corpus header field: ") + key);
    return static_cast<int>(parse_int(kv[1]));
  };
  const int n = field(2, "n");
  LatentCorpus c;
  c.latent_dim = field(3, "latent");
  c.view_a_dim = field(4, "va");
  c.view_b_dim = field(5, "vb");
  c.cluster_count = field(6, "clusters");
  if (static_cast<int>(lines.size()) != n + 1)
    throw std::runtime_error("corpus record count mismatch: " + path);
  const std::size_t want = 2 + c.latent_dim + c.view_a_dim + c.view_b_dim;
  for (int i = 0; i < n; ++i) {
    const auto f = split(lines[i + 1], ',');
    if (f.size() != want) throw std::runtime_error("bad corpus record: " + path);
    std::size_t p = 0;
    c.ids.push_back(parse_int(f[p++]));
    c.cluster.push_back(static_cast<int>(parse_int(f[p++])));
    Vec z(c.latent_dim), xv(c.view_a_dim), xt(c.view_b_dim);
    for (double& v : z) v = parse_double(f[p++]);
    for (double& v : xv) v = parse_double(f[p++]);
    for (double& v : xt) v = parse_double(f[p++]);
    c.latent.push_back(std::move(z));
    c.x_v.push_back(std::move(xv));
    c.x_t.push_back(std::move(xt));
  }
  return c;
}

}  // namespace rdl
