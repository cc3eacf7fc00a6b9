#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>

#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "doctest.h"

using namespace gnnbench;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("gnnbench_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// BFS connectivity oracle
bool connected(const GraphDataset& g) {
  if (g.n == 0) return true;
  NeighborIndex idx = NeighborIndex::build(g);
  std::vector<uint8_t> seen(g.n, 0);
  std::queue<int32_t> q;
  q.push(0);
  seen[0] = 1;
  int64_t count = 1;
  while (!q.empty()) {
    int32_t u = q.front();
    q.pop();
    for (int32_t v : idx.of(u))
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
  }
  return count == g.n;
}

// brute-force modularity oracle: iterate node pairs directly
double modularity_oracle(const GraphDataset& g, const std::vector<int32_t>& labels) {
  const double m = static_cast<double>(g.edges.size());
  auto deg = g.degrees();
  double q = 0.0;
  for (int32_t i = 0; i < g.n; ++i)
    for (int32_t j = 0; j < g.n; ++j) {
      if (labels[i] != labels[j]) continue;
      const double a_ij = g.has_edge(i, j) ? 1.0 : 0.0;
      q += a_ij - static_cast<double>(deg[i]) * static_cast<double>(deg[j]) / (2.0 * m);
    }
  return q / (2.0 * m);
}

GraphDataset random_graph(int64_t n, double p, int32_t classes, Rng& rng) {
  GraphDataset g;
  g.n = n;
  g.num_classes = classes;
  g.labels.resize(n);
  for (auto& l : g.labels) l = static_cast<int32_t>(rng.uniform_int(0, classes - 1));
  std::vector<Edge> edges;
  for (int32_t u = 0; u < n; ++u)
    for (int32_t v = u + 1; v < n; ++v)
      if (rng.uniform() < p) edges.emplace_back(u, v);
  g.edges = std::move(edges);
  g.features = Tensor::identity(n);
  return g;
}

}  // namespace

TEST_CASE("load_dataset: triangle, dedup, comments") {
  auto dir = temp_dir("load");
  write_file(dir / "edges.tsv", "# triangle\n0\t1\n0\t1\n1\t2\n2\t0\n1\t1\n");
  write_file(dir / "features.tsv", "0\t1,0\n1\t0,1\n2\t1,1\n");
  write_file(dir / "labels.tsv", "0\t0\n1\t1\n2\t1\n");
  LoadStats stats;
  GraphDataset g = load_dataset((dir / "edges.tsv").string(), (dir / "features.tsv").string(),
                                (dir / "labels.tsv").string(), &stats);
  CHECK(g.n == 3);
  CHECK(g.edges.size() == 3);  // "0 1" twice collapses to one edge
  CHECK(g.feature_dim() == 2);
  CHECK(g.num_classes == 2);
  CHECK(stats.duplicate_lines_merged == 1);
  CHECK(stats.self_loops_dropped == 1);
  CHECK(stats.directed_arcs == 6);
}

TEST_CASE("load_dataset errors carry file and line") {
  auto dir = temp_dir("load_err");
  write_file(dir / "features.tsv", "0\t1,0\n1\t0,1\n");
  write_file(dir / "labels.tsv", "0\t0\n1\t1\n");
  write_file(dir / "edges.tsv", "0\t7\n");
  CHECK_THROWS_WITH_AS(load_dataset((dir / "edges.tsv").string(),
                                    (dir / "features.tsv").string(),
                                    (dir / "labels.tsv").string()),
                       doctest::Contains("edges.tsv:1"), std::runtime_error);

  write_file(dir / "features.tsv", "0\t1,0\n1\t0,1,1\n");
  write_file(dir / "edges.tsv", "0\t1\n");
  CHECK_THROWS_WITH_AS(load_dataset((dir / "edges.tsv").string(),
                                    (dir / "features.tsv").string(),
                                    (dir / "labels.tsv").string()),
                       doctest::Contains("feature count"), std::runtime_error);

  CHECK_THROWS_AS(load_dataset("/nonexistent/file", (dir / "features.tsv").string(),
                               (dir / "labels.tsv").string()),
                  std::runtime_error);
}

TEST_CASE("save then load is the identity on edges, features, labels") {
  GraphDataset g = karate_club();
  auto dir = temp_dir("roundtrip");
  save_dataset(g, dir.string(), 42);
  GraphDataset g2 = load_dataset_dir(dir.string());
  CHECK(g2.n == g.n);
  CHECK(g2.edges == g.edges);
  CHECK(g2.labels == g.labels);
  REQUIRE(g2.features.numel() == g.features.numel());
  for (int64_t i = 0; i < g.features.numel(); ++i)
    CHECK(g2.features.data()[i] == g.features.data()[i]);
}

TEST_CASE("karate club is the canonical 34-node graph") {
  GraphDataset g = karate_club();
  CHECK(g.n == 34);
  CHECK(g.edges.size() == 78);
  std::set<int32_t> classes(g.labels.begin(), g.labels.end());
  CHECK(classes.size() == 4);
  CHECK(connected(g));
  CHECK(g.feature_dim() == 34);  // identity features
}

TEST_CASE("sbm_generate honors block structure") {
  GraphDataset g = sbm_generate(60, 3, 0.3, 0.0, 12, 5);
  for (const auto& [u, v] : g.edges) CHECK(g.labels[u] == g.labels[v]);  // p_out = 0

  GraphDataset a = sbm_generate(90, 3, 0.1, 0.02, 12, 9);
  GraphDataset b = sbm_generate(90, 3, 0.1, 0.02, 12, 9);
  CHECK(a.edges == b.edges);  // same seed, same graph
  for (int64_t i = 0; i < a.features.numel(); ++i)
    CHECK(a.features.data()[i] == b.features.data()[i]);

  CHECK_THROWS_AS(sbm_generate(10, 3, 0.1, 0.01, 8, 1), std::invalid_argument);
  CHECK_THROWS_AS(sbm_generate(9, 3, 0.1, 0.2, 8, 1), std::invalid_argument);
}

TEST_CASE("split_masks: 80/20 on ten nodes, disjoint covering, seeded") {
  auto [train, test] = split_masks(10, 0.8, 3);
  int64_t tr = 0, te = 0;
  for (int i = 0; i < 10; ++i) {
    tr += train[i];
    te += test[i];
    CHECK((train[i] ^ test[i]) == 1);  // disjoint and covering
  }
  CHECK(tr == 8);
  CHECK(te == 2);

  auto [train2, test2] = split_masks(10, 0.8, 3);
  CHECK(train == train2);
  CHECK(test == test2);
  CHECK_THROWS_AS(split_masks(1, 0.8, 1), std::invalid_argument);
}

TEST_CASE("gcn_normalize hand values") {
  GraphDataset isolated;
  isolated.n = 1;
  isolated.labels = {0};
  isolated.num_classes = 1;
  isolated.features = Tensor::identity(1);
  NormalizedAdjacency a = gcn_normalize(isolated);
  CHECK(a.values.item() == doctest::Approx(1.0));

  GraphDataset pair;
  pair.n = 2;
  pair.edges = {{0, 1}};
  pair.labels = {0, 0};
  pair.num_classes = 1;
  pair.features = Tensor::identity(2);
  NormalizedAdjacency b = gcn_normalize(pair);
  for (int64_t i = 0; i < 4; ++i) CHECK(b.values.data()[i] == doctest::Approx(0.5));
}

TEST_CASE("gcn_normalize equals the naive dense oracle and is symmetric") {
  Rng rng(77);
  for (int inst = 0; inst < 20; ++inst) {
    GraphDataset g = random_graph(2 + static_cast<int64_t>(rng.uniform_int(0, 40)), 0.15, 2, rng);
    NormalizedAdjacency norm = gcn_normalize(g);

    // oracle: build A+I densely, D from row sums, multiply out
    const int64_t n = g.n;
    std::vector<double> a((n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
    for (const auto& [u, v] : g.edges) a[u * n + v] = a[v * n + u] = 1.0;
    std::vector<double> deg(n, 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const double expected = a[i * n + j] / std::sqrt(deg[i] * deg[j]);
        CHECK(std::abs(norm.values.at(i, j) - expected) < 1e-12);
        CHECK(std::abs(norm.values.at(i, j) - norm.values.at(j, i)) < 1e-12);
      }
  }
}

TEST_CASE("normalize_adjacency_tensor matches gcn_normalize on 0/1 adjacency") {
  Rng rng(78);
  GraphDataset g = random_graph(12, 0.3, 2, rng);
  Tensor direct = gcn_normalize(g).values;
  Tensor via_tensor = normalize_adjacency_tensor(dense_adjacency(g));
  for (int64_t i = 0; i < direct.numel(); ++i)
    CHECK(via_tensor.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));
}

TEST_CASE("jaccard_index examples") {
  std::vector<double> a{1, 1, 0}, b{1, 0, 1};
  CHECK(jaccard_index(a, b) == doctest::Approx(1.0 / 3.0));

  std::vector<double> c{0.5, 2.0, 0.0};
  CHECK(jaccard_index(c, c) == doctest::Approx(1.0));  // identical nonzero

  std::vector<double> z{0, 0, 0};
  CHECK(jaccard_index(z, z) == 0.0);  // both-empty rule

  std::vector<double> short_vec{1};
  CHECK_THROWS_AS(jaccard_index(a, short_vec), std::invalid_argument);
}

TEST_CASE("modularity hand values") {
  // two disjoint triangles, communities = components
  GraphDataset g;
  g.n = 6;
  g.edges = {{0, 1}, {0, 2}, {1, 2}, {3, 4}, {3, 5}, {4, 5}};
  g.labels = {0, 0, 0, 1, 1, 1};
  g.num_classes = 2;
  g.features = Tensor::identity(6);
  CHECK(modularity(g, g.labels) == doctest::Approx(0.5).epsilon(1e-12));

  std::vector<int32_t> one_community(6, 0);
  CHECK(modularity(g, one_community) == doctest::Approx(0.0).epsilon(1e-12));

  GraphDataset empty;
  empty.n = 3;
  empty.labels = {0, 0, 0};
  empty.num_classes = 1;
  empty.features = Tensor::identity(3);
  CHECK_THROWS_AS(modularity(empty, empty.labels), std::invalid_argument);
}

TEST_CASE("modularity equals brute-force oracle and stays in [-1,1]") {
  Rng rng(100);
  for (int inst = 0; inst < 30; ++inst) {
    GraphDataset g = random_graph(4 + static_cast<int64_t>(rng.uniform_int(0, 12)), 0.3, 3, rng);
    if (g.edges.empty()) continue;
    const double q = modularity(g, g.labels);
    CHECK(q == doctest::Approx(modularity_oracle(g, g.labels)).epsilon(1e-12));
    CHECK(q >= -1.0);
    CHECK(q <= 1.0);
  }
}

TEST_CASE("augment_view: zero rates give the identical dataset") {
  GraphDataset g = karate_club();
  GraphDataset v = augment_view(g, 0.0, 0.0, "degree", 4);
  CHECK(v.edges == g.edges);
  for (int64_t i = 0; i < g.features.numel(); ++i)
    CHECK(v.features.data()[i] == g.features.data()[i]);
}

TEST_CASE("augment_view drops roughly the configured edge fraction") {
  Rng rng(55);
  GraphDataset g = random_graph(50, 0.16, 2, rng);
  REQUIRE(g.edges.size() > 80);

  // fixed seed: assert the exact seeded count, which must hover near 70%
  GraphDataset v = augment_view(g, 0.3, 0.0, "uniform", 1234);
  const double kept = static_cast<double>(v.edges.size());
  const double expected = 0.7 * static_cast<double>(g.edges.size());
  CHECK(std::abs(kept - expected) < 0.15 * static_cast<double>(g.edges.size()));
  GraphDataset v2 = augment_view(g, 0.3, 0.0, "uniform", 1234);
  CHECK(v2.edges == v.edges);  // exact for the fixed seed

  // degree scheme: mean drop rate also tracks the configured rate
  GraphDataset vd = augment_view(g, 0.3, 0.0, "degree", 99);
  CHECK(vd.edges.size() < g.edges.size());
  GraphDataset vd2 = augment_view(g, 0.3, 0.0, "degree", 99);
  CHECK(vd2.edges == vd.edges);
}

TEST_CASE("augment_view masks feature columns") {
  GraphDataset g = karate_club();
  GraphDataset v = augment_view(g, 0.0, 0.4, "uniform", 77);
  int64_t zero_cols = 0;
  for (int64_t j = 0; j < g.feature_dim(); ++j) {
    bool all_zero = true;
    for (int64_t i = 0; i < g.n; ++i)
      if (v.features.at(i, j) != 0.0) all_zero = false;
    zero_cols += all_zero;
  }
  CHECK(zero_cols > 0);
  CHECK(zero_cols < g.feature_dim());
  CHECK_THROWS_AS(augment_view(g, 1.0, 0.0, "uniform", 1), std::invalid_argument);
  CHECK_THROWS_AS(augment_view(g, 0.1, 0.0, "nope", 1), std::invalid_argument);
}
