#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/model.hpp"
#include "core/tensor.hpp"

namespace gnnbench {

struct EvasionConfig {
  double epsilon = 0.005;
  double alpha = 0.0005;
  int64_t num_iterations = 10;
  int64_t num_samples = 20;  // discretization draws (structure variant)
  uint64_t seed = 0;
};

/// Gradient of the masked NLL loss with respect to the inputs; parameter
/// gradients are suppressed while this runs.
Tensor input_gradient(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                      const std::vector<int32_t>& y, const std::vector<uint8_t>& mask);

/// x' = x + epsilon * sign(d loss / d x), loss on the masked nodes.
Tensor fgsm(const BlockModel& model, const GraphOps& gops, const Tensor& x,
            const std::vector<int32_t>& y, const std::vector<uint8_t>& mask, double epsilon);

/// Iterated sign steps clipped to the epsilon-infinity ball around x.
Tensor pgd_features(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                    const std::vector<int32_t>& y, const std::vector<uint8_t>& mask,
                    const EvasionConfig& cfg);

struct StructureAttackResult {
  std::vector<Edge> edges;   // perturbed edge set
  int64_t toggles = 0;       // unordered pairs flipped
  bool feasible = true;      // false: no sampled perturbation met the budget
};

/// Relaxed adjacency ascent + Bernoulli discretization; at most `budget`
/// edge toggles in the returned set.
StructureAttackResult pgd_structure(const BlockModel& model, const GraphDataset& dataset,
                                    const std::vector<uint8_t>& target_mask, int64_t budget,
                                    const EvasionConfig& cfg);

/// Removes exactly floor(remove_fraction * |E|) edges uniformly.
GraphDataset random_poison(const GraphDataset& dataset, double remove_fraction, uint64_t seed);

// ---- CLGA -------------------------------------------------------------------

struct ClgaConfig {
  int64_t budget_edges = 0;  // 0 = use 5% of |E|
  int64_t num_hidden = 256;
  int64_t num_proj_hidden = 32;
  double tau = 0.4;
  double drop_edge_rate_1 = 0.3;
  double drop_edge_rate_2 = 0.4;
  double drop_feature_rate_1 = 0.1;
  double drop_feature_rate_2 = 0.0;
  int64_t epochs = 3000;
  int64_t refresh_epochs = 10;  // fine-tuning between flips
  double weight_decay = 1e-5;
  double learning_rate = 0.01;
  std::string drop_scheme = "degree";
  std::string activation = "prelu";
  uint64_t seed = 0;
};

namespace clga_detail {

/// One-layer GCN encoder with a two-layer projection head (GRACE-style).
struct Encoder {
  bool use_prelu = true;
  std::map<std::string, Tensor> params;  // w1, slope, p1.weight/bias, p2.weight/bias

  static Encoder make(int64_t in_dim, const ClgaConfig& cfg, uint64_t seed);
  Tensor embed(const Tensor& a_hat, const Tensor& x) const;  // projected embedding
};

/// Two-view InfoNCE at temperature tau over projected, L2-normalized rows.
Tensor contrastive_loss(const Encoder& enc, const Tensor& a_hat_1, const Tensor& x1,
                        const Tensor& a_hat_2, const Tensor& x2, double tau);

/// Loss as a function of the dense adjacency with the two views' edge keep
/// masks and (column-masked) features held fixed. Pure forward evaluation.
double loss_for_adjacency(const Encoder& enc, const Tensor& a_dense, const Tensor& keep_mask_1,
                          const Tensor& x1, const Tensor& keep_mask_2, const Tensor& x2,
                          double tau);

/// Same loss, reverse-mode gradient with respect to the dense adjacency.
Tensor adjacency_gradient(const Encoder& enc, const Tensor& a_dense, const Tensor& keep_mask_1,
                          const Tensor& x1, const Tensor& keep_mask_2, const Tensor& x2,
                          double tau);

}  // namespace clga_detail

/// Snapshot of the first flip decision, for oracle verification.
struct ClgaReport {
  clga_detail::Encoder encoder;
  Tensor adjacency;     // dense adjacency the gradient was taken at
  Tensor keep_mask_1, keep_mask_2;
  Tensor view_features_1, view_features_2;
  Tensor gradient;      // d loss / d adjacency
  Edge first_flip{-1, -1};
  bool first_flip_added = false;
};

GraphDataset clga(const GraphDataset& dataset, const ClgaConfig& cfg,
                  ClgaReport* report = nullptr);

// ---- Q-Attack -----------------------------------------------------------------

struct QAttackConfig {
  int64_t population_size = 20;
  int64_t generations = 50;
  int64_t rewiring_budget = 0;
  double mutation_rate = 0.1;
  double elite_fraction = 0.2;
  uint64_t seed = 0;
};

/// Genetic rewiring attack: each applied rewire deletes one intra-community
/// edge and adds one inter-community edge, so |E| is preserved. Fitness is
/// -modularity under the supplied labels.
GraphDataset qattack(const GraphDataset& dataset, const std::vector<int32_t>& predicted_labels,
                     const QAttackConfig& cfg);

}  // namespace gnnbench
