#include "core/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "core/rng.hpp"

namespace gnnbench {

namespace fs = std::filesystem;

// ---- GraphDataset ---------------------------------------------------------

bool GraphDataset::has_edge(int32_t u, int32_t v) const {
  if (u == v) return false;
  Edge e{std::min(u, v), std::max(u, v)};
  return std::binary_search(edges.begin(), edges.end(), e);
}

std::vector<int64_t> GraphDataset::degrees() const {
  std::vector<int64_t> deg(n, 0);
  for (const auto& [u, v] : edges) {
    ++deg[u];
    ++deg[v];
  }
  return deg;
}

void GraphDataset::validate() const {
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n)
      throw std::invalid_argument("GraphDataset: edge endpoint out of range [0," +
                                  std::to_string(n) + ")");
    if (u >= v) throw std::invalid_argument("GraphDataset: edges must be stored with u < v");
  }
  if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
    throw std::invalid_argument("GraphDataset: duplicate edge");
  if (!std::is_sorted(edges.begin(), edges.end()))
    throw std::invalid_argument("GraphDataset: edge list not sorted");
  if (static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("GraphDataset: label count != n");
  for (int32_t l : labels)
    if (l < 0 || l >= num_classes)
      throw std::invalid_argument("GraphDataset: label out of range [0," +
                                  std::to_string(num_classes) + ")");
  if (features.defined() && features.rows() != n)
    throw std::invalid_argument("GraphDataset: feature rows != n");
  if (!train_mask.empty()) {
    if (static_cast<int64_t>(train_mask.size()) != n ||
        static_cast<int64_t>(test_mask.size()) != n)
      throw std::invalid_argument("GraphDataset: mask length != n");
    for (int64_t i = 0; i < n; ++i) {
      if (train_mask[i] && test_mask[i])
        throw std::invalid_argument("GraphDataset: masks overlap at node " + std::to_string(i));
      if (!train_mask[i] && !test_mask[i])
        throw std::invalid_argument("GraphDataset: node " + std::to_string(i) +
                                    " in neither mask");
    }
  }
}

namespace {

std::vector<Edge> normalize_edges(std::vector<Edge> edges, int64_t n, LoadStats* stats) {
  std::vector<Edge> out;
  out.reserve(edges.size());
  int64_t self_loops = 0;
  for (auto [u, v] : edges) {
    if (u == v) {
      ++self_loops;
      continue;
    }
    if (u > v) std::swap(u, v);
    if (u < 0 || v >= n)
      throw std::invalid_argument("edge (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") endpoint out of range [0," + std::to_string(n) + ")");
    out.emplace_back(u, v);
  }
  std::sort(out.begin(), out.end());
  const int64_t before = static_cast<int64_t>(out.size());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (stats) {
    stats->self_loops_dropped += self_loops;
    stats->duplicate_lines_merged += before - static_cast<int64_t>(out.size());
    stats->directed_arcs = 2 * static_cast<int64_t>(out.size());
  }
  return out;
}

}  // namespace

GraphDataset GraphDataset::with_edges(std::vector<Edge> new_edges) const {
  GraphDataset g = *this;
  g.edges = normalize_edges(std::move(new_edges), n, nullptr);
  return g;
}

GraphDataset GraphDataset::with_features(Tensor new_features) const {
  if (new_features.rows() != n)
    throw std::invalid_argument("with_features: row count " + std::to_string(new_features.rows()) +
                                " != n " + std::to_string(n));
  GraphDataset g = *this;
  g.features = std::move(new_features);
  return g;
}

NeighborIndex NeighborIndex::build(const GraphDataset& g) {
  NeighborIndex idx;
  idx.offsets.assign(g.n + 1, 0);
  for (const auto& [u, v] : g.edges) {
    ++idx.offsets[u + 1];
    ++idx.offsets[v + 1];
  }
  for (int64_t i = 0; i < g.n; ++i) idx.offsets[i + 1] += idx.offsets[i];
  idx.neighbors.resize(idx.offsets[g.n]);
  std::vector<int64_t> cursor(idx.offsets.begin(), idx.offsets.end() - 1);
  for (const auto& [u, v] : g.edges) {
    idx.neighbors[cursor[u]++] = v;
    idx.neighbors[cursor[v]++] = u;
  }
  for (int64_t i = 0; i < g.n; ++i)
    std::sort(idx.neighbors.begin() + idx.offsets[i], idx.neighbors.begin() + idx.offsets[i + 1]);
  return idx;
}

// ---- file I/O ---------------------------------------------------------------

namespace {

struct Line {
  std::string text;
  int64_t number;
};

std::vector<Line> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<Line> lines;
  std::string s;
  int64_t ln = 0;
  while (std::getline(in, s)) {
    ++ln;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    // strip leading whitespace to find comments
    size_t start = s.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    if (s[start] == '#') continue;
    lines.push_back({s, ln});
  }
  return lines;
}

int64_t parse_int(const std::string& token, const std::string& path, int64_t line) {
  int64_t value = 0;
  auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || p != token.data() + token.size())
    throw std::runtime_error(path + ":" + std::to_string(line) + ": invalid integer '" + token +
                             "'");
  return value;
}

double parse_double(const std::string& token, const std::string& path, int64_t line) {
  double value = 0;
  auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || p != token.data() + token.size())
    throw std::runtime_error(path + ":" + std::to_string(line) + ": invalid number '" + token +
                             "'");
  return value;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace

GraphDataset load_dataset(const std::string& edges_path, const std::string& features_path,
                          const std::string& labels_path, LoadStats* stats) {
  GraphDataset g;

  // features define n and d
  auto feat_lines = read_lines(features_path);
  const int64_t n = static_cast<int64_t>(feat_lines.size());
  if (n == 0) throw std::runtime_error(features_path + ": no feature rows");
  int64_t d = -1;
  std::vector<std::vector<double>> rows(n);
  for (const auto& line : feat_lines) {
    auto cols = split(line.text, '\t');
    if (cols.size() != 2)
      throw std::runtime_error(features_path + ":" + std::to_string(line.number) +
                               ": expected 'node_id<TAB>v1,v2,...'");
    const int64_t id = parse_int(cols[0], features_path, line.number);
    if (id < 0 || id >= n)
      throw std::runtime_error(features_path + ":" + std::to_string(line.number) + ": node id " +
                               std::to_string(id) + " out of range [0," + std::to_string(n) + ")");
    auto values = split(cols[1], ',');
    if (d < 0) d = static_cast<int64_t>(values.size());
    if (static_cast<int64_t>(values.size()) != d)
      throw std::runtime_error(features_path + ":" + std::to_string(line.number) +
                               ": feature count " + std::to_string(values.size()) +
                               " differs from first row's " + std::to_string(d));
    rows[id].reserve(d);
    for (const auto& v : values) rows[id].push_back(parse_double(v, features_path, line.number));
  }
  std::vector<double> flat;
  flat.reserve(n * d);
  for (const auto& r : rows) {
    if (static_cast<int64_t>(r.size()) != d)
      throw std::runtime_error(features_path + ": missing feature row for some node");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  g.n = n;
  g.features = Tensor::from_data({n, d}, std::move(flat));

  // labels
  auto label_lines = read_lines(labels_path);
  g.labels.assign(n, -1);
  int32_t max_label = -1;
  for (const auto& line : label_lines) {
    auto cols = split(line.text, '\t');
    if (cols.size() != 2)
      throw std::runtime_error(labels_path + ":" + std::to_string(line.number) +
                               ": expected 'node_id<TAB>class_id'");
    const int64_t id = parse_int(cols[0], labels_path, line.number);
    if (id < 0 || id >= n)
      throw std::runtime_error(labels_path + ":" + std::to_string(line.number) + ": node id " +
                               std::to_string(id) + " out of range [0," + std::to_string(n) + ")");
    const int64_t cls = parse_int(cols[1], labels_path, line.number);
    if (cls < 0)
      throw std::runtime_error(labels_path + ":" + std::to_string(line.number) +
                               ": negative class id");
    g.labels[id] = static_cast<int32_t>(cls);
    max_label = std::max(max_label, static_cast<int32_t>(cls));
  }
  for (int64_t i = 0; i < n; ++i)
    if (g.labels[i] < 0)
      throw std::runtime_error(labels_path + ": node " + std::to_string(i) + " has no label");
  g.num_classes = max_label + 1;

  // edges
  auto edge_lines = read_lines(edges_path);
  std::vector<Edge> raw;
  raw.reserve(edge_lines.size());
  for (const auto& line : edge_lines) {
    auto cols = split(line.text, '\t');
    if (cols.size() != 2)
      throw std::runtime_error(edges_path + ":" + std::to_string(line.number) +
                               ": expected 'u<TAB>v'");
    const int64_t u = parse_int(cols[0], edges_path, line.number);
    const int64_t v = parse_int(cols[1], edges_path, line.number);
    if (u < 0 || u >= n || v < 0 || v >= n)
      throw std::runtime_error(edges_path + ":" + std::to_string(line.number) +
                               ": node id out of range [0," + std::to_string(n) + ")");
    raw.emplace_back(static_cast<int32_t>(u), static_cast<int32_t>(v));
  }
  g.edges = normalize_edges(std::move(raw), n, stats);
  g.validate();
  return g;
}

void save_dataset(const GraphDataset& g, const std::string& dir, uint64_t seed) {
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "edges.tsv");
    for (const auto& [u, v] : g.edges) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(fs::path(dir) / "features.tsv");
    const int64_t d = g.feature_dim();
    for (int64_t i = 0; i < g.n; ++i) {
      out << i << '\t';
      for (int64_t j = 0; j < d; ++j) {
        if (j) out << ',';
        out << format_double(g.features.at(i, j));
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(fs::path(dir) / "labels.tsv");
    for (int64_t i = 0; i < g.n; ++i) out << i << '\t' << g.labels[i] << '\n';
  }
  {
    std::ofstream out(fs::path(dir) / "meta.tsv");
    out << "n\t" << g.n << '\n';
    out << "d\t" << g.feature_dim() << '\n';
    out << "num_classes\t" << g.num_classes << '\n';
    out << "seed\t" << seed << '\n';
  }
}

GraphDataset load_dataset_dir(const std::string& dir, LoadStats* stats) {
  fs::path p(dir);
  return load_dataset((p / "edges.tsv").string(), (p / "features.tsv").string(),
                      (p / "labels.tsv").string(), stats);
}

// ---- builtin graphs ---------------------------------------------------------

GraphDataset karate_club() {
  // Zachary karate club; labels are the four modularity communities.
  static const int32_t kEdges[][2] = {
      {0, 1},   {0, 2},   {0, 3},   {0, 4},   {0, 5},   {0, 6},   {0, 7},   {0, 8},
      {0, 10},  {0, 11},  {0, 12},  {0, 13},  {0, 17},  {0, 19},  {0, 21},  {0, 31},
      {1, 2},   {1, 3},   {1, 7},   {1, 13},  {1, 17},  {1, 19},  {1, 21},  {1, 30},
      {2, 3},   {2, 7},   {2, 8},   {2, 9},   {2, 13},  {2, 27},  {2, 28},  {2, 32},
      {3, 7},   {3, 12},  {3, 13},  {4, 6},   {4, 10},  {5, 6},   {5, 10},  {5, 16},
      {6, 16},  {8, 30},  {8, 32},  {8, 33},  {9, 33},  {13, 33}, {14, 32}, {14, 33},
      {15, 32}, {15, 33}, {18, 32}, {18, 33}, {19, 33}, {20, 32}, {20, 33}, {22, 32},
      {22, 33}, {23, 25}, {23, 27}, {23, 29}, {23, 32}, {23, 33}, {24, 25}, {24, 27},
      {24, 31}, {25, 31}, {26, 29}, {26, 33}, {27, 33}, {28, 31}, {28, 33}, {29, 32},
      {29, 33}, {30, 32}, {30, 33}, {31, 32}, {31, 33}, {32, 33}};
  static const int32_t kLabels[34] = {0, 0, 0, 0, 1, 1, 1, 0, 2, 2, 1, 0, 0, 0, 2, 2, 1,
                                      0, 2, 0, 2, 0, 2, 2, 3, 3, 2, 2, 3, 2, 2, 3, 2, 2};
  GraphDataset g;
  g.n = 34;
  g.num_classes = 4;
  g.labels.assign(kLabels, kLabels + 34);
  for (const auto& e : kEdges) g.edges.emplace_back(e[0], e[1]);
  g.features = Tensor::identity(34);
  g.validate();
  return g;
}

GraphDataset sbm_generate(int64_t n, int32_t k_blocks, double p_in, double p_out,
                          int64_t d_features, uint64_t seed) {
  if (k_blocks < 1 || n < k_blocks || n % k_blocks != 0)
    throw std::invalid_argument("sbm_generate: n must be a positive multiple of k_blocks");
  if (!(0.0 <= p_out && p_out < p_in && p_in <= 1.0))
    throw std::invalid_argument("sbm_generate: need 0 <= p_out < p_in <= 1");
  if (d_features < k_blocks)
    throw std::invalid_argument("sbm_generate: d_features must be >= k_blocks");

  Rng rng(seed);
  Rng edge_rng = rng.fork(1);
  Rng feat_rng = rng.fork(2);

  GraphDataset g;
  g.n = n;
  g.num_classes = k_blocks;
  const int64_t block_size = n / k_blocks;
  g.labels.resize(n);
  for (int64_t i = 0; i < n; ++i) g.labels[i] = static_cast<int32_t>(i / block_size);

  for (int32_t u = 0; u < n; ++u)
    for (int32_t v = u + 1; v < n; ++v) {
      const double p = g.labels[u] == g.labels[v] ? p_in : p_out;
      if (edge_rng.uniform() < p) g.edges.emplace_back(u, v);
    }

  // Block-characteristic binary features: each block owns a contiguous slice
  // of columns its members switch on with high probability; remaining columns
  // fire as background noise. Binary features keep the Jaccard index
  // meaningful, mirroring bag-of-words graphs.
  const double p_on = 0.8;
  const double p_background = 0.05;
  const int64_t slice = d_features / k_blocks;
  std::vector<double> feat(n * d_features, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t b = g.labels[i];
    const int64_t lo = b * slice;
    const int64_t hi = (b + 1 == k_blocks) ? d_features : (b + 1) * slice;
    for (int64_t j = 0; j < d_features; ++j) {
      const double p = (j >= lo && j < hi) ? p_on : p_background;
      if (feat_rng.uniform() < p) feat[i * d_features + j] = 1.0;
    }
  }
  g.features = Tensor::from_data({n, d_features}, std::move(feat));
  g.validate();
  return g;
}

std::pair<std::vector<uint8_t>, std::vector<uint8_t>> split_masks(int64_t n,
                                                                  double train_fraction,
                                                                  uint64_t seed) {
  if (n < 2) throw std::invalid_argument("split_masks: need at least 2 nodes");
  if (!(0.0 < train_fraction && train_fraction < 1.0))
    throw std::invalid_argument("split_masks: train_fraction must lie in (0,1)");
  std::vector<int64_t> perm(n);
  for (int64_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  const int64_t n_train = std::llround(train_fraction * static_cast<double>(n));
  std::vector<uint8_t> train(n, 0), test(n, 0);
  for (int64_t i = 0; i < n; ++i) {
    if (i < n_train)
      train[perm[i]] = 1;
    else
      test[perm[i]] = 1;
  }
  return {train, test};
}

// ---- operators ---------------------------------------------------------------

Tensor dense_adjacency(const GraphDataset& g) {
  Tensor a = Tensor::zeros({g.n, g.n});
  for (const auto& [u, v] : g.edges) {
    a.set(u, v, 1.0);
    a.set(v, u, 1.0);
  }
  return a;
}

NormalizedAdjacency gcn_normalize(const GraphDataset& g) {
  const int64_t n = g.n;
  std::vector<double> deg(n, 1.0);  // self-loop contributes 1
  for (const auto& [u, v] : g.edges) {
    deg[u] += 1.0;
    deg[v] += 1.0;
  }
  std::vector<double> dinv(n);
  for (int64_t i = 0; i < n; ++i) dinv[i] = 1.0 / std::sqrt(deg[i]);
  Tensor a = Tensor::zeros({n, n});
  auto buf = a.mutable_data();
  for (int64_t i = 0; i < n; ++i) buf[i * n + i] = dinv[i] * dinv[i];
  for (const auto& [u, v] : g.edges) {
    const double w = dinv[u] * dinv[v];
    buf[u * g.n + v] = w;
    buf[v * g.n + u] = w;
  }
  return {n, std::move(a)};
}

Tensor normalize_adjacency_tensor(const Tensor& adj) {
  if (adj.shape().size() != 2 || adj.shape()[0] != adj.shape()[1])
    throw std::invalid_argument("normalize_adjacency_tensor: expected square matrix");
  const int64_t n = adj.shape()[0];
  Tensor with_loops = add(adj, Tensor::identity(n));
  Tensor dinv_sqrt = rsqrt(sum_rows(with_loops));
  return scale_cols(scale_rows(with_loops, dinv_sqrt), dinv_sqrt);
}

double jaccard_index(std::span<const double> u_features, std::span<const double> v_features) {
  if (u_features.size() != v_features.size())
    throw std::invalid_argument("jaccard_index: feature length mismatch " +
                                std::to_string(u_features.size()) + " vs " +
                                std::to_string(v_features.size()));
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < u_features.size(); ++i) {
    const bool a = u_features[i] != 0.0;
    const bool b = v_features[i] != 0.0;
    inter += (a && b);
    uni += (a || b);
  }
  if (uni == 0) return 0.0;  // both vectors empty: maximally dissimilar
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double modularity(const GraphDataset& g, const std::vector<int32_t>& community_labels) {
  if (static_cast<int64_t>(community_labels.size()) != g.n)
    throw std::invalid_argument("modularity: community labels must cover all nodes");
  if (g.edges.empty())
    throw std::invalid_argument("modularity: undefined for a graph with no edges");
  int32_t k = 0;
  for (int32_t c : community_labels) {
    if (c < 0) throw std::invalid_argument("modularity: negative community label");
    k = std::max(k, c + 1);
  }
  const double m = static_cast<double>(g.edges.size());
  std::vector<double> intra(k, 0.0), degree(k, 0.0);
  for (const auto& [u, v] : g.edges) {
    degree[community_labels[u]] += 1.0;
    degree[community_labels[v]] += 1.0;
    if (community_labels[u] == community_labels[v]) intra[community_labels[u]] += 1.0;
  }
  double q = 0.0;
  for (int32_t c = 0; c < k; ++c) {
    const double frac = degree[c] / (2.0 * m);
    q += intra[c] / m - frac * frac;
  }
  return q;
}

GraphDataset augment_view(const GraphDataset& g, double drop_edge_rate, double drop_feature_rate,
                          const std::string& drop_scheme, uint64_t seed) {
  if (drop_edge_rate < 0.0 || drop_edge_rate >= 1.0 || drop_feature_rate < 0.0 ||
      drop_feature_rate >= 1.0)
    throw std::invalid_argument("augment_view: rates must lie in [0,1)");
  if (drop_scheme != "uniform" && drop_scheme != "degree")
    throw std::invalid_argument("augment_view: unknown drop_scheme '" + drop_scheme + "'");

  Rng rng(seed);
  Rng edge_rng = rng.fork(1);
  Rng feat_rng = rng.fork(2);

  GraphDataset out = g;
  if (drop_edge_rate > 0.0 && !g.edges.empty()) {
    std::vector<double> drop_prob(g.edges.size(), drop_edge_rate);
    if (drop_scheme == "degree") {
      // GRACE-style degree centrality: edges incident to low-degree nodes are
      // less central and get dropped more often. Probabilities are scaled so
      // the mean drop rate stays at drop_edge_rate, then capped.
      auto deg = g.degrees();
      std::vector<double> score(g.edges.size());
      double s_max = -1e300, s_sum = 0.0;
      for (size_t e = 0; e < g.edges.size(); ++e) {
        const auto& [u, v] = g.edges[e];
        score[e] = 0.5 * (std::log(1.0 + static_cast<double>(deg[u])) +
                          std::log(1.0 + static_cast<double>(deg[v])));
        s_max = std::max(s_max, score[e]);
        s_sum += score[e];
      }
      const double s_mean = s_sum / static_cast<double>(g.edges.size());
      const double denom = s_max - s_mean;
      if (denom > 1e-12) {
        for (size_t e = 0; e < g.edges.size(); ++e)
          drop_prob[e] = std::min(drop_edge_rate * (s_max - score[e]) / denom, 0.95);
      }
    }
    std::vector<Edge> kept;
    kept.reserve(g.edges.size());
    for (size_t e = 0; e < g.edges.size(); ++e)
      if (edge_rng.uniform() >= drop_prob[e]) kept.push_back(g.edges[e]);
    out.edges = std::move(kept);
  }

  if (drop_feature_rate > 0.0 && g.feature_dim() > 0) {
    const int64_t d = g.feature_dim();
    std::vector<uint8_t> keep_col(d);
    for (int64_t j = 0; j < d; ++j) keep_col[j] = feat_rng.uniform() >= drop_feature_rate;
    Tensor masked = g.features.deep_copy();
    auto buf = masked.mutable_data();
    for (int64_t i = 0; i < g.n; ++i)
      for (int64_t j = 0; j < d; ++j)
        if (!keep_col[j]) buf[i * d + j] = 0.0;
    out.features = std::move(masked);
  }
  return out;
}

}  // namespace gnnbench
