#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

namespace gnnbench {

enum class BlockKind { GcnConv, GinConv, Linear, BatchNorm, Relu, Dropout, LogSoftmax };

std::string block_kind_name(BlockKind k);
BlockKind block_kind_from_name(const std::string& s);

/// One layer block of the model builder. Blocks chain sequentially; a block
/// may additionally add the output of an earlier block (skip connection).
struct BlockSpec {
  BlockKind kind = BlockKind::Linear;
  int64_t in_dim = 0;
  int64_t out_dim = 0;
  double dropout_p = 0.5;
  bool gin_eps_learnable = false;
  double gin_eps_init = 0.0;
  std::optional<int> skip_from;

  static BlockSpec gcn_conv(int64_t in, int64_t out);
  static BlockSpec gin_conv(int64_t in, int64_t out, bool eps_learnable = false,
                            double eps_init = 0.0);
  static BlockSpec linear(int64_t in, int64_t out);
  static BlockSpec batchnorm(int64_t dim);
  static BlockSpec relu_block();
  static BlockSpec dropout_block(double p);
  static BlockSpec log_softmax_block();
};

struct BlockModel {
  std::vector<BlockSpec> blocks;
  std::map<std::string, Tensor> params;   // trainable tensors, requires_grad on
  std::map<std::string, Tensor> buffers;  // batchnorm running statistics

  std::vector<std::string> param_names() const;
  BlockModel clone() const;
  int64_t input_dim() const;
  int64_t output_dim() const;
  void zero_grads();
};

std::vector<BlockSpec> gcn2_spec(int64_t in_dim, int64_t hidden, int64_t out_dim);
std::vector<BlockSpec> gin2_spec(int64_t in_dim, int64_t hidden, int64_t out_dim);

/// Validates the chain and initializes parameters (Glorot-uniform weights,
/// zero biases), deterministically from the seed.
BlockModel build_model(const std::vector<BlockSpec>& specs, uint64_t seed);

/// Propagation operators a forward pass needs: the symmetric-normalized
/// adjacency for gcn_conv and the raw 0/1 adjacency for gin_conv's neighbor
/// sum. from_dense() builds both from a (possibly relaxed, tape-linked)
/// dense adjacency so structure attacks can differentiate through them.
struct GraphOps {
  NormalizedAdjacency norm;
  Tensor raw;

  static GraphOps from(const GraphDataset& g);
  static GraphOps from_dense(const Tensor& adj);
};

Tensor forward(const BlockModel& model, const GraphOps& gops, const Tensor& x, bool training,
               uint64_t seed);

/// Forward pass stopping before a trailing log_softmax block; raw class
/// scores, as a distillation teacher exposes them.
Tensor forward_raw_scores(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                          bool training, uint64_t seed);

double accuracy(const Tensor& logits, const std::vector<int32_t>& labels,
                const std::vector<uint8_t>& mask);

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with bias correction; moment buffers keyed by parameter name.
/// Works over any named parameter map (models, attack encoders, masks).
class AdamState {
 public:
  AdamState(const std::map<std::string, Tensor>& params, AdamConfig cfg);
  AdamState(const BlockModel& model, AdamConfig cfg) : AdamState(model.params, cfg) {}

  /// One update from the gradients currently on the parameters.
  /// A parameter without a populated gradient is a contract violation.
  void step(std::map<std::string, Tensor>& params);
  void step(BlockModel& model) { step(model.params); }

  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
  int64_t t_ = 0;
};

void save_model(const BlockModel& model, const std::string& path);
BlockModel load_model(const std::string& path);

}  // namespace gnnbench
