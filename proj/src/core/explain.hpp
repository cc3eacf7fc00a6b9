#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/model.hpp"

namespace gnnbench {

/// Local explanation of one node's prediction. Only the components an
/// explanation restricts take part in fidelity randomization: edge
/// explanations remove excluded subgraph edges; node/feature selections
/// replace excluded entries with noised training means.
struct Explanation {
  int64_t target_node = -1;
  std::string method;

  bool has_edge_component = false;
  std::vector<std::pair<Edge, double>> edge_mask;  // subgraph edges, weights in [0,1]

  bool has_node_component = false;
  std::vector<int32_t> node_set;

  bool has_feature_component = false;
  std::vector<int64_t> feature_set;

  double fidelity_value = 0.0;
  bool flagged = false;  // isolated target / unreachable threshold
};

/// Nodes within `hops` of the target, plus the edges that can carry messages
/// to it in that many rounds.
struct ComputationalSubgraph {
  std::vector<int32_t> nodes;  // includes the target
  std::vector<Edge> edges;
};
ComputationalSubgraph computational_subgraph(const GraphDataset& g, int64_t target, int64_t hops);

int64_t conv_depth(const BlockModel& model);

struct GnnExplainConfig {
  int64_t epochs = 100;
  double mask_reg = 0.005;
  double entropy_reg = 0.1;
  double lr = 0.1;
  uint64_t seed = 0;
};

/// Differentiable edge mask over the target's computational subgraph trained
/// to keep the model's original prediction while shrinking the mask.
Explanation gnn_explain(const BlockModel& model, const GraphDataset& dataset, int64_t target_node,
                        const GnnExplainConfig& cfg);

struct ZorroConfig {
  double tau_f = 0.8;
  int64_t noise_draws = 10;
  double noise_scale = 1.0;  // 0 = deterministic baseline replacement
  uint64_t seed = 0;
};

/// Greedy node/feature selection grown until fidelity reaches tau_f.
Explanation zorro(const BlockModel& model, const GraphDataset& dataset, int64_t target_node,
                  const ZorroConfig& cfg);

/// Fraction of k_draws noise instantiations over the excluded components for
/// which the prediction of the target node is unchanged.
double fidelity(const BlockModel& model, const GraphDataset& dataset, const Explanation& expl,
                int64_t k_draws, uint64_t seed, double noise_scale = 1.0);

void save_explanation(const Explanation& expl, const std::string& path);

}  // namespace gnnbench
