#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/attack.hpp"
#include "core/graph.hpp"
#include "core/model.hpp"
#include "core/tensor.hpp"

namespace gnnbench {

/// Removes every edge whose endpoint features have Jaccard index strictly
/// below the threshold.
GraphDataset jaccard_defense(const GraphDataset& dataset, double threshold);

struct AdvTrainConfig {
  std::string inner_attack = "fgsm";  // fgsm | pgd
  double epsilon = 0.01;
  double lambda = 1.0;
  EvasionConfig pgd;  // used when inner_attack == "pgd"
};

/// l(f(x),y) + lambda * l(f(x'),y) with x' regenerated against the current
/// model and treated as a constant. base_loss/base_logits, when given, are
/// reused for the clean term (they must come from the active tape).
Tensor adversarial_training_loss(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                                 const std::vector<int32_t>& y, const std::vector<uint8_t>& mask,
                                 const AdvTrainConfig& cfg, const Tensor* base_loss = nullptr);

struct GradRegConfig {
  double lambda = 50.0;
  double h_step = 0.01;
};

/// l + lambda * (1/(h^2 n)) * ||f(z) - f(x)||_2^2 over the masked outputs,
/// z = x + h * grad/||grad||_2 held constant. Zero input gradient makes the
/// penalty zero.
Tensor gradient_regularization_loss(const BlockModel& model, const GraphOps& gops,
                                    const Tensor& x, const std::vector<int32_t>& y,
                                    const std::vector<uint8_t>& mask, const GradRegConfig& cfg,
                                    const Tensor* base_loss = nullptr,
                                    const Tensor* base_logits = nullptr);

struct DistillTrainConfig {
  int64_t epochs = 200;
  double lr = 0.01;
  uint64_t seed = 0;
};

/// Trains a student on the teacher's temperature-T soft labels (cross-entropy
/// of temperature-T student outputs, train mask only).
BlockModel distill(const BlockModel& teacher, const GraphDataset& dataset, double temperature,
                   const std::vector<BlockSpec>& student_spec, const DistillTrainConfig& cfg);

/// Maps every value to the nearest of num_levels uniform grid points on
/// [lo, hi]; out-of-range values clamp first, ties round toward lo.
Tensor quantize_features(const Tensor& x, int64_t num_levels, double lo, double hi);

struct AutoencoderConfig {
  int64_t hidden_dim = 16;
  double noise_eps = 0.1;
  int64_t train_epochs = 200;
  double lambda_ae = 1.0;
  double lr = 0.01;
  uint64_t seed = 0;
};

/// One-hidden-layer denoising autoencoder.
struct Denoiser {
  Tensor w1, b1, w2, b2;
  Tensor apply(const Tensor& x) const;
};

/// Trains the denoiser on train-mask rows (all rows when masks are unset)
/// and returns it with the purified feature matrix denoiser(X).
std::pair<Denoiser, Tensor> autoencoder_defense(const GraphDataset& dataset,
                                                const AutoencoderConfig& cfg);

}  // namespace gnnbench
