#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace gnnbench {

class Rng;

/// Undirected edge stored with u < v.
using Edge = std::pair<int32_t, int32_t>;

/// Node-classification dataset: undirected simple graph, dense feature
/// matrix, one label per node, optional train/test masks. Treated as
/// immutable after construction; attacks and defenses build modified copies.
struct GraphDataset {
  int64_t n = 0;
  std::vector<Edge> edges;  // sorted, unique, u < v, no self-loops
  Tensor features;          // [n, d]
  std::vector<int32_t> labels;
  int32_t num_classes = 0;
  std::vector<uint8_t> train_mask;  // empty = unset
  std::vector<uint8_t> test_mask;

  int64_t feature_dim() const { return features.defined() ? features.cols() : 0; }
  bool has_masks() const { return !train_mask.empty(); }
  bool has_edge(int32_t u, int32_t v) const;
  std::vector<int64_t> degrees() const;
  void validate() const;

  /// Copy of this dataset with a replacement edge list (normalized: flipped
  /// to u < v, deduplicated, self-loops removed, sorted).
  GraphDataset with_edges(std::vector<Edge> new_edges) const;
  GraphDataset with_features(Tensor new_features) const;
};

/// Read-only CSR view for neighbor iteration.
struct NeighborIndex {
  std::vector<int64_t> offsets;    // n+1
  std::vector<int32_t> neighbors;  // sorted within each node

  static NeighborIndex build(const GraphDataset& g);
  std::span<const int32_t> of(int32_t u) const {
    return {neighbors.data() + offsets[u], static_cast<size_t>(offsets[u + 1] - offsets[u])};
  }
};

/// Symmetric D^{-1/2}(A+I)D^{-1/2} propagation operator, dense.
struct NormalizedAdjacency {
  int64_t n = 0;
  Tensor values;
};

struct LoadStats {
  int64_t self_loops_dropped = 0;
  int64_t duplicate_lines_merged = 0;
  int64_t directed_arcs = 0;  // 2 * |unordered pairs|
};

GraphDataset load_dataset(const std::string& edges_path, const std::string& features_path,
                          const std::string& labels_path, LoadStats* stats = nullptr);

/// Writes edges.tsv / features.tsv / labels.tsv / meta.tsv into `dir`.
void save_dataset(const GraphDataset& g, const std::string& dir, uint64_t seed = 0);
GraphDataset load_dataset_dir(const std::string& dir, LoadStats* stats = nullptr);

/// Zachary karate club: 34 nodes, 78 edges, four communities, identity features.
GraphDataset karate_club();

/// Planted-partition graph with block-characteristic binary features.
/// Labels are block ids. n must be divisible by k_blocks.
GraphDataset sbm_generate(int64_t n, int32_t k_blocks, double p_in, double p_out,
                          int64_t d_features, uint64_t seed);

std::pair<std::vector<uint8_t>, std::vector<uint8_t>> split_masks(int64_t n,
                                                                  double train_fraction,
                                                                  uint64_t seed);

NormalizedAdjacency gcn_normalize(const GraphDataset& g);

/// Differentiable D^{-1/2}(A+I)D^{-1/2} built from a dense (possibly relaxed)
/// adjacency tensor; gradients flow through the degree terms.
Tensor normalize_adjacency_tensor(const Tensor& adj);

/// Dense 0/1 adjacency, no self-loops.
Tensor dense_adjacency(const GraphDataset& g);

/// Jaccard index of binarized feature vectors (nonzero -> 1).
/// Two all-zero vectors give 0.
double jaccard_index(std::span<const double> u_features, std::span<const double> v_features);

/// Newman modularity Q = sum_c [ e_c/m - (d_c/2m)^2 ].
double modularity(const GraphDataset& g, const std::vector<int32_t>& community_labels);

/// Contrastive-view augmentation: drops edges (uniform or degree-weighted
/// scheme) and masks feature columns.
GraphDataset augment_view(const GraphDataset& g, double drop_edge_rate, double drop_feature_rate,
                          const std::string& drop_scheme, uint64_t seed);

}  // namespace gnnbench
