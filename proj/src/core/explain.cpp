#include "core/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <stdexcept>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace gnnbench {

int64_t conv_depth(const BlockModel& model) {
  int64_t depth = 0;
  for (const auto& b : model.blocks)
    if (b.kind == BlockKind::GcnConv || b.kind == BlockKind::GinConv) ++depth;
  return depth;
}

ComputationalSubgraph computational_subgraph(const GraphDataset& g, int64_t target,
                                             int64_t hops) {
  if (target < 0 || target >= g.n)
    throw std::invalid_argument("computational_subgraph: target node out of range");
  NeighborIndex idx = NeighborIndex::build(g);
  std::vector<int64_t> dist(g.n, -1);
  dist[target] = 0;
  std::queue<int32_t> q;
  q.push(static_cast<int32_t>(target));
  while (!q.empty()) {
    int32_t u = q.front();
    q.pop();
    if (dist[u] >= hops) continue;
    for (int32_t v : idx.of(u)) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  ComputationalSubgraph sub;
  for (int32_t i = 0; i < g.n; ++i)
    if (dist[i] >= 0) sub.nodes.push_back(i);
  for (const auto& [u, v] : g.edges) {
    if (dist[u] < 0 || dist[v] < 0) continue;
    // an edge can carry a message to the target within `hops` rounds
    if (std::min(dist[u], dist[v]) <= hops - 1) sub.edges.emplace_back(u, v);
  }
  return sub;
}

namespace {

int64_t argmax_row(const Tensor& logits, int64_t row) {
  int64_t arg = 0;
  for (int64_t j = 1; j < logits.cols(); ++j)
    if (logits.at(row, j) > logits.at(row, arg)) arg = j;
  return arg;
}

struct FeatureStats {
  std::vector<double> mean, stddev;
};

FeatureStats feature_stats(const GraphDataset& g) {
  const int64_t d = g.feature_dim();
  std::vector<uint8_t> rows = g.has_masks() ? g.train_mask : std::vector<uint8_t>(g.n, 1);
  int64_t m = 0;
  for (uint8_t b : rows) m += b;
  FeatureStats st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  for (int64_t i = 0; i < g.n; ++i) {
    if (!rows[i]) continue;
    for (int64_t j = 0; j < d; ++j) st.mean[j] += g.features.at(i, j);
  }
  for (auto& v : st.mean) v /= static_cast<double>(m);
  for (int64_t i = 0; i < g.n; ++i) {
    if (!rows[i]) continue;
    for (int64_t j = 0; j < d; ++j) {
      const double dlt = g.features.at(i, j) - st.mean[j];
      st.stddev[j] += dlt * dlt;
    }
  }
  for (auto& v : st.stddev) v = std::sqrt(v / static_cast<double>(m));
  return st;
}

}  // namespace

double fidelity(const BlockModel& model, const GraphDataset& dataset, const Explanation& expl,
                int64_t k_draws, uint64_t seed, double noise_scale) {
  if (k_draws < 1) throw std::invalid_argument("fidelity: k_draws must be >= 1");
  if (expl.target_node < 0 || expl.target_node >= dataset.n)
    throw std::invalid_argument("fidelity: explanation target out of range");

  const int64_t target = expl.target_node;
  const int64_t hops = conv_depth(model);
  ComputationalSubgraph subg = computational_subgraph(dataset, target, hops);

  // clean prediction on the unmodified dataset
  int64_t clean_class;
  {
    GraphOps gops = GraphOps::from(dataset);
    Tensor logits = forward(model, gops, dataset.features, false, 0);
    clean_class = argmax_row(logits, target);
  }

  // edge component: excluded subgraph edges are removed outright
  GraphDataset working = dataset;
  if (expl.has_edge_component) {
    std::set<Edge> kept;
    for (const auto& [e, w] : expl.edge_mask)
      if (w >= 0.5) kept.insert(e);
    std::set<Edge> sub_edges(subg.edges.begin(), subg.edges.end());
    std::vector<Edge> edges;
    for (const auto& e : dataset.edges) {
      if (sub_edges.count(e) && !kept.count(e)) continue;
      edges.push_back(e);
    }
    working = dataset.with_edges(std::move(edges));
  }
  GraphOps gops = GraphOps::from(working);

  const bool randomize_features = expl.has_node_component || expl.has_feature_component;
  FeatureStats st;
  std::vector<uint8_t> node_kept(dataset.n, 1), feat_kept(dataset.feature_dim(), 1);
  if (randomize_features) {
    st = feature_stats(dataset);
    if (expl.has_node_component) {
      std::fill(node_kept.begin(), node_kept.end(), 0);
      for (int32_t v : expl.node_set) node_kept[v] = 1;
    }
    if (expl.has_feature_component) {
      std::fill(feat_kept.begin(), feat_kept.end(), 0);
      for (int64_t j : expl.feature_set) feat_kept[j] = 1;
    }
  }

  Rng master(seed);
  int64_t preserved = 0;
  for (int64_t k = 0; k < k_draws; ++k) {
    Tensor x = working.features;
    if (randomize_features) {
      Rng rng = master.fork(k + 1);
      x = working.features.deep_copy();
      auto buf = x.mutable_data();
      const int64_t d = dataset.feature_dim();
      for (int32_t i : subg.nodes) {
        for (int64_t j = 0; j < d; ++j) {
          if (node_kept[i] && feat_kept[j]) continue;
          buf[i * d + j] =
              st.mean[j] + noise_scale * st.stddev[j] * rng.normal();
        }
      }
    }
    Tensor logits = forward(model, gops, x, false, 0);
    if (argmax_row(logits, target) == clean_class) ++preserved;
    if (!randomize_features) {
      // nothing varies between draws
      return preserved > 0 ? 1.0 : 0.0;
    }
  }
  return static_cast<double>(preserved) / static_cast<double>(k_draws);
}

Explanation gnn_explain(const BlockModel& model, const GraphDataset& dataset,
                        int64_t target_node, const GnnExplainConfig& cfg) {
  const int64_t hops = conv_depth(model);
  ComputationalSubgraph subg = computational_subgraph(dataset, target_node, hops);

  Explanation expl;
  expl.target_node = target_node;
  expl.method = "gnn_explain";
  expl.has_edge_component = true;

  if (subg.edges.empty()) {
    expl.flagged = true;  // isolated target: nothing to mask
    expl.fidelity_value = fidelity(model, dataset, expl, 1, cfg.seed);
    return expl;
  }

  const int64_t n = dataset.n;
  const int64_t k = static_cast<int64_t>(subg.edges.size());
  GraphOps base = GraphOps::from(dataset);

  int64_t clean_class;
  {
    Tensor logits = forward(model, base, dataset.features, false, 0);
    clean_class = argmax_row(logits, target_node);
  }
  std::vector<int32_t> targets(n, 0);
  targets[target_node] = static_cast<int32_t>(clean_class);
  std::vector<uint8_t> target_mask(n, 0);
  target_mask[target_node] = 1;

  // mask parameters, one per subgraph edge
  Rng rng(cfg.seed);
  std::vector<double> init(k);
  for (auto& v : init) v = 0.1 * rng.normal();
  Tensor theta = Tensor::from_data({k}, std::move(init), true);

  std::vector<std::pair<int64_t, int64_t>> pos_uv, pos_vu;
  for (const auto& [u, v] : subg.edges) {
    pos_uv.emplace_back(u, v);
    pos_vu.emplace_back(v, u);
  }
  // ones everywhere except the masked positions
  Tensor base_mask = Tensor::full({n, n}, 1.0);
  for (const auto& [u, v] : subg.edges) {
    base_mask.set(u, v, 0.0);
    base_mask.set(v, u, 0.0);
  }
  Tensor ones_k = Tensor::full({k}, 1.0);
  Tensor eps_k = Tensor::full({k}, 1e-12);

  std::map<std::string, Tensor> params{{"theta", theta}};
  AdamState adam(params, AdamConfig{cfg.lr});

  for (int64_t e = 0; e < cfg.epochs; ++e) {
    Tape tape;
    Tensor s = sigmoid(theta);
    Tensor mask_mat =
        add(base_mask, add(scatter_add_pairs(s, pos_uv, n, n), scatter_add_pairs(s, pos_vu, n, n)));
    GraphOps gops;
    gops.norm.n = n;
    gops.norm.values = mul(base.norm.values, mask_mat);
    gops.raw = mul(base.raw, mask_mat);
    Tensor logp = forward(model, gops, dataset.features, false, 0);
    Tensor pred_loss = nll_loss(logp, targets, target_mask);

    Tensor size_term = scale(sum(s), cfg.mask_reg);
    Tensor one_minus = sub(ones_k, s);
    Tensor entropy = scale(
        add(sum(mul(s, log(add(s, eps_k)))), sum(mul(one_minus, log(add(one_minus, eps_k))))),
        -1.0);
    Tensor loss = add(pred_loss, add(size_term, scale(entropy, cfg.entropy_reg)));

    theta.zero_grad();
    tape.backward(loss);
    adam.step(params);
  }

  Tensor weights = sigmoid(theta);
  for (int64_t e = 0; e < k; ++e) expl.edge_mask.emplace_back(subg.edges[e], weights.data()[e]);
  std::stable_sort(expl.edge_mask.begin(), expl.edge_mask.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  expl.fidelity_value = fidelity(model, dataset, expl, 1, cfg.seed);
  return expl;
}

Explanation zorro(const BlockModel& model, const GraphDataset& dataset, int64_t target_node,
                  const ZorroConfig& cfg) {
  if (!(cfg.tau_f > 0.0 && cfg.tau_f <= 1.0))
    throw std::invalid_argument("zorro: tau_f must lie in (0,1]");
  const int64_t hops = conv_depth(model);
  ComputationalSubgraph subg = computational_subgraph(dataset, target_node, hops);
  const int64_t d = dataset.feature_dim();

  const int64_t draws = cfg.noise_draws > 0 ? cfg.noise_draws : 1;
  const double noise = cfg.noise_draws > 0 ? cfg.noise_scale : 0.0;

  Explanation expl;
  expl.target_node = target_node;
  expl.method = "zorro";
  expl.has_node_component = true;
  expl.has_feature_component = true;

  // candidate pool: subgraph nodes, then feature columns
  struct Candidate {
    bool is_node;
    int64_t id;
  };
  std::vector<Candidate> pool;
  for (int32_t v : subg.nodes) pool.push_back({true, v});
  for (int64_t j = 0; j < d; ++j) pool.push_back({false, j});

  auto eval = [&](const Explanation& e, uint64_t step, uint64_t cand) {
    // the evaluation seed depends only on (seed, step, candidate) so greedy
    // prefixes agree across tau_f values
    uint64_t state = cfg.seed ^ (step * 0x9e3779b97f4a7c15ULL) ^ (cand * 0xc2b2ae3d27d4eb4fULL);
    return fidelity(model, dataset, e, draws, splitmix64(state), noise);
  };

  double fid = eval(expl, 0, 0);
  uint64_t step = 1;
  while (fid < cfg.tau_f && !pool.empty()) {
    double best_fid = -1.0;
    size_t best_idx = 0;
    for (size_t c = 0; c < pool.size(); ++c) {
      Explanation trial = expl;
      if (pool[c].is_node)
        trial.node_set.push_back(static_cast<int32_t>(pool[c].id));
      else
        trial.feature_set.push_back(pool[c].id);
      const uint64_t cand_tag = pool[c].is_node ? pool[c].id : dataset.n + pool[c].id;
      const double f = eval(trial, step, cand_tag + 1);
      if (f > best_fid) {
        best_fid = f;
        best_idx = c;
      }
    }
    if (pool[best_idx].is_node)
      expl.node_set.push_back(static_cast<int32_t>(pool[best_idx].id));
    else
      expl.feature_set.push_back(pool[best_idx].id);
    pool.erase(pool.begin() + best_idx);
    fid = best_fid;
    ++step;
  }
  if (fid < cfg.tau_f) expl.flagged = true;  // threshold unreachable with the full set
  expl.fidelity_value = fid;
  std::sort(expl.node_set.begin(), expl.node_set.end());
  std::sort(expl.feature_set.begin(), expl.feature_set.end());
  return expl;
}

void save_explanation(const Explanation& expl, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open explanation file: " + path);
  out << "node=" << expl.target_node << '\n';
  out << "fidelity=" << expl.fidelity_value << '\n';
  out << "method=" << expl.method << '\n';
  out << "fidelity_def=prediction_preservation_under_randomized_exclusions\n";
  if (expl.flagged) out << "flagged=1\n";
  if (expl.has_node_component) {
    out << "nodes=";
    for (size_t i = 0; i < expl.node_set.size(); ++i) out << (i ? "," : "") << expl.node_set[i];
    out << '\n';
  }
  if (expl.has_feature_component) {
    out << "features=";
    for (size_t i = 0; i < expl.feature_set.size(); ++i)
      out << (i ? "," : "") << expl.feature_set[i];
    out << '\n';
  }
  auto sorted = expl.edge_mask;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [e, w] : sorted) out << e.first << '\t' << e.second << '\t' << w << '\n';
}

}  // namespace gnnbench
