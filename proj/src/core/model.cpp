#include "core/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "core/rng.hpp"

namespace gnnbench {

std::string block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::GcnConv: return "gcn_conv";
    case BlockKind::GinConv: return "gin_conv";
    case BlockKind::Linear: return "linear";
    case BlockKind::BatchNorm: return "batchnorm";
    case BlockKind::Relu: return "relu";
    case BlockKind::Dropout: return "dropout";
    case BlockKind::LogSoftmax: return "log_softmax";
  }
  throw std::logic_error("block_kind_name: bad kind");
}

BlockKind block_kind_from_name(const std::string& s) {
  if (s == "gcn_conv") return BlockKind::GcnConv;
  if (s == "gin_conv") return BlockKind::GinConv;
  if (s == "linear") return BlockKind::Linear;
  if (s == "batchnorm") return BlockKind::BatchNorm;
  if (s == "relu") return BlockKind::Relu;
  if (s == "dropout") return BlockKind::Dropout;
  if (s == "log_softmax") return BlockKind::LogSoftmax;
  throw std::invalid_argument("unknown block kind '" + s + "'");
}

BlockSpec BlockSpec::gcn_conv(int64_t in, int64_t out) {
  BlockSpec b;
  b.kind = BlockKind::GcnConv;
  b.in_dim = in;
  b.out_dim = out;
  return b;
}

BlockSpec BlockSpec::gin_conv(int64_t in, int64_t out, bool eps_learnable, double eps_init) {
  BlockSpec b;
  b.kind = BlockKind::GinConv;
  b.in_dim = in;
  b.out_dim = out;
  b.gin_eps_learnable = eps_learnable;
  b.gin_eps_init = eps_init;
  return b;
}

BlockSpec BlockSpec::linear(int64_t in, int64_t out) {
  BlockSpec b;
  b.kind = BlockKind::Linear;
  b.in_dim = in;
  b.out_dim = out;
  return b;
}

BlockSpec BlockSpec::batchnorm(int64_t dim) {
  BlockSpec b;
  b.kind = BlockKind::BatchNorm;
  b.in_dim = dim;
  b.out_dim = dim;
  return b;
}

BlockSpec BlockSpec::relu_block() {
  BlockSpec b;
  b.kind = BlockKind::Relu;
  return b;
}

BlockSpec BlockSpec::dropout_block(double p) {
  BlockSpec b;
  b.kind = BlockKind::Dropout;
  b.dropout_p = p;
  return b;
}

BlockSpec BlockSpec::log_softmax_block() {
  BlockSpec b;
  b.kind = BlockKind::LogSoftmax;
  return b;
}

std::vector<std::string> BlockModel::param_names() const {
  std::vector<std::string> names;
  names.reserve(params.size());
  for (const auto& [k, v] : params) names.push_back(k);
  return names;  // std::map iterates sorted
}

BlockModel BlockModel::clone() const {
  BlockModel m;
  m.blocks = blocks;
  for (const auto& [k, v] : params) m.params.emplace(k, v.deep_copy());
  for (const auto& [k, v] : buffers) m.buffers.emplace(k, v.deep_copy());
  return m;
}

int64_t BlockModel::input_dim() const {
  for (const auto& b : blocks)
    if (b.in_dim > 0) return b.in_dim;
  return 0;
}

int64_t BlockModel::output_dim() const {
  int64_t dim = input_dim();
  for (const auto& b : blocks)
    if (b.out_dim > 0) dim = b.out_dim;
  return dim;
}

void BlockModel::zero_grads() {
  for (auto& [k, v] : params) v.zero_grad();
}

std::vector<BlockSpec> gcn2_spec(int64_t in_dim, int64_t hidden, int64_t out_dim) {
  return {BlockSpec::gcn_conv(in_dim, hidden), BlockSpec::relu_block(),
          BlockSpec::gcn_conv(hidden, out_dim), BlockSpec::log_softmax_block()};
}

std::vector<BlockSpec> gin2_spec(int64_t in_dim, int64_t hidden, int64_t out_dim) {
  return {BlockSpec::gin_conv(in_dim, hidden), BlockSpec::relu_block(),
          BlockSpec::gin_conv(hidden, out_dim), BlockSpec::log_softmax_block()};
}

namespace {

std::string pkey(size_t block, const char* suffix) {
  return "b" + std::to_string(block) + "." + suffix;
}

Tensor glorot(int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = rng.uniform(-limit, limit);
  Tensor t = Tensor::from_data({fan_in, fan_out}, std::move(w));
  t.set_requires_grad(true);
  return t;
}

/// Per-block output dims; validates the chain, including across skips.
std::vector<int64_t> chain_dims(const std::vector<BlockSpec>& specs) {
  if (specs.empty()) throw std::invalid_argument("build_model: empty block list");
  std::vector<int64_t> out_dims(specs.size());
  int64_t cur = -1;
  for (size_t i = 0; i < specs.size(); ++i) {
    const BlockSpec& b = specs[i];
    switch (b.kind) {
      case BlockKind::GcnConv:
      case BlockKind::GinConv:
      case BlockKind::Linear:
        if (b.in_dim <= 0 || b.out_dim <= 0)
          throw std::invalid_argument("build_model: block " + std::to_string(i) +
                                      " needs positive in/out dims");
        if (cur >= 0 && b.in_dim != cur)
          throw std::invalid_argument("build_model: block " + std::to_string(i) + " expects " +
                                      std::to_string(b.in_dim) + " inputs but receives " +
                                      std::to_string(cur));
        cur = b.out_dim;
        break;
      case BlockKind::BatchNorm:
        if (cur >= 0 && b.in_dim != cur)
          throw std::invalid_argument("build_model: batchnorm dim mismatch at block " +
                                      std::to_string(i));
        cur = b.in_dim;
        break;
      case BlockKind::Relu:
      case BlockKind::Dropout:
      case BlockKind::LogSoftmax:
        if (cur < 0)
          throw std::invalid_argument("build_model: block " + std::to_string(i) +
                                      " has no preceding dimensioned block");
        break;
    }
    if (b.kind == BlockKind::LogSoftmax && i + 1 != specs.size())
      throw std::invalid_argument("build_model: log_softmax may appear only as the final block");
    if (b.kind == BlockKind::Dropout && (b.dropout_p < 0.0 || b.dropout_p >= 1.0))
      throw std::invalid_argument("build_model: dropout p must lie in [0,1)");
    out_dims[i] = cur;
    if (b.skip_from) {
      const int s = *b.skip_from;
      if (s < 0 || static_cast<size_t>(s) >= i)
        throw std::invalid_argument("build_model: skip_from must reference an earlier block");
      if (out_dims[s] != out_dims[i])
        throw std::invalid_argument("build_model: skip from block " + std::to_string(s) + " (" +
                                    std::to_string(out_dims[s]) + " dims) into block " +
                                    std::to_string(i) + " (" + std::to_string(out_dims[i]) +
                                    " dims)");
    }
  }
  return out_dims;
}

}  // namespace

BlockModel build_model(const std::vector<BlockSpec>& specs, uint64_t seed) {
  chain_dims(specs);
  BlockModel m;
  m.blocks = specs;
  Rng rng(seed);
  for (size_t i = 0; i < specs.size(); ++i) {
    const BlockSpec& b = specs[i];
    switch (b.kind) {
      case BlockKind::GcnConv:
      case BlockKind::Linear: {
        m.params.emplace(pkey(i, "weight"), glorot(b.in_dim, b.out_dim, rng));
        Tensor bias = Tensor::zeros({b.out_dim}, true);
        m.params.emplace(pkey(i, "bias"), std::move(bias));
        break;
      }
      case BlockKind::GinConv: {
        m.params.emplace(pkey(i, "mlp1.weight"), glorot(b.in_dim, b.out_dim, rng));
        m.params.emplace(pkey(i, "mlp1.bias"), Tensor::zeros({b.out_dim}, true));
        m.params.emplace(pkey(i, "mlp2.weight"), glorot(b.out_dim, b.out_dim, rng));
        m.params.emplace(pkey(i, "mlp2.bias"), Tensor::zeros({b.out_dim}, true));
        if (b.gin_eps_learnable)
          m.params.emplace(pkey(i, "eps"), Tensor::scalar(b.gin_eps_init, true));
        break;
      }
      case BlockKind::BatchNorm: {
        m.params.emplace(pkey(i, "gamma"), Tensor::from_data({b.in_dim},
                                                             std::vector<double>(b.in_dim, 1.0),
                                                             true));
        m.params.emplace(pkey(i, "beta"), Tensor::zeros({b.in_dim}, true));
        m.buffers.emplace(pkey(i, "running_mean"), Tensor::zeros({b.in_dim}));
        m.buffers.emplace(pkey(i, "running_var"),
                          Tensor::from_data({b.in_dim}, std::vector<double>(b.in_dim, 1.0)));
        break;
      }
      default:
        break;
    }
  }
  return m;
}

GraphOps GraphOps::from(const GraphDataset& g) {
  GraphOps ops;
  ops.norm = gcn_normalize(g);
  ops.raw = dense_adjacency(g);
  return ops;
}

GraphOps GraphOps::from_dense(const Tensor& adj) {
  GraphOps ops;
  ops.norm.n = adj.shape()[0];
  ops.norm.values = normalize_adjacency_tensor(adj);
  ops.raw = adj;
  return ops;
}

namespace {

Tensor forward_blocks(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                      bool training, uint64_t seed, size_t nblocks) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("forward: features must be rank-2, got " + shape_str(x.shape()));
  if (model.input_dim() > 0 && x.cols() != model.input_dim())
    throw std::invalid_argument("forward: feature width " + std::to_string(x.cols()) +
                                " != model input dim " + std::to_string(model.input_dim()));

  std::vector<Tensor> outputs(nblocks);
  Tensor h = x;
  for (size_t i = 0; i < nblocks; ++i) {
    const BlockSpec& b = model.blocks[i];
    switch (b.kind) {
      case BlockKind::GcnConv: {
        const Tensor& w = model.params.at(pkey(i, "weight"));
        const Tensor& bias = model.params.at(pkey(i, "bias"));
        h = add_rowwise(matmul(gops.norm.values, matmul(h, w)), bias);
        break;
      }
      case BlockKind::GinConv: {
        Tensor agg = matmul(gops.raw, h);  // neighbor sum
        if (b.gin_eps_learnable) {
          const Tensor& eps = model.params.at(pkey(i, "eps"));
          agg = add(agg, add(h, mul_scalar_tensor(h, eps)));
        } else {
          agg = add(agg, scale(h, 1.0 + b.gin_eps_init));
        }
        Tensor z = add_rowwise(matmul(agg, model.params.at(pkey(i, "mlp1.weight"))),
                               model.params.at(pkey(i, "mlp1.bias")));
        z = relu(z);
        h = add_rowwise(matmul(z, model.params.at(pkey(i, "mlp2.weight"))),
                        model.params.at(pkey(i, "mlp2.bias")));
        break;
      }
      case BlockKind::Linear:
        h = add_rowwise(matmul(h, model.params.at(pkey(i, "weight"))),
                        model.params.at(pkey(i, "bias")));
        break;
      case BlockKind::BatchNorm: {
        // running buffers are updated in place during training
        Tensor& mean_buf = const_cast<BlockModel&>(model).buffers.at(pkey(i, "running_mean"));
        Tensor& var_buf = const_cast<BlockModel&>(model).buffers.at(pkey(i, "running_var"));
        h = batchnorm(h, model.params.at(pkey(i, "gamma")), model.params.at(pkey(i, "beta")),
                      mean_buf, var_buf, 0.1, 1e-5, training);
        break;
      }
      case BlockKind::Relu:
        h = relu(h);
        break;
      case BlockKind::Dropout: {
        uint64_t state = seed ^ (0x9e3779b97f4a7c15ULL * (i + 1));
        h = dropout(h, b.dropout_p, splitmix64(state), training);
        break;
      }
      case BlockKind::LogSoftmax:
        h = log_softmax(h);
        break;
    }
    if (b.skip_from) h = add(h, outputs[*b.skip_from]);
    outputs[i] = h;
  }
  return h;
}

}  // namespace

Tensor forward(const BlockModel& model, const GraphOps& gops, const Tensor& x, bool training,
               uint64_t seed) {
  return forward_blocks(model, gops, x, training, seed, model.blocks.size());
}

Tensor forward_raw_scores(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                          bool training, uint64_t seed) {
  size_t nblocks = model.blocks.size();
  if (nblocks > 0 && model.blocks.back().kind == BlockKind::LogSoftmax) --nblocks;
  return forward_blocks(model, gops, x, training, seed, nblocks);
}

double accuracy(const Tensor& logits, const std::vector<int32_t>& labels,
                const std::vector<uint8_t>& mask) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("accuracy: logits must be rank-2");
  const int64_t n = logits.rows(), c = logits.cols();
  if (static_cast<int64_t>(labels.size()) != n || static_cast<int64_t>(mask.size()) != n)
    throw std::invalid_argument("accuracy: labels/mask length must equal row count");
  int64_t total = 0, correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++total;
    int64_t arg = 0;
    double best = logits.at(i, 0);
    for (int64_t j = 1; j < c; ++j) {
      if (logits.at(i, j) > best) {  // ties keep the lowest class index
        best = logits.at(i, j);
        arg = j;
      }
    }
    if (arg == labels[i]) ++correct;
  }
  if (total == 0) throw std::invalid_argument("accuracy: mask selects no nodes");
  return static_cast<double>(correct) / static_cast<double>(total);
}

AdamState::AdamState(const std::map<std::string, Tensor>& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& [name, p] : params) {
    m_[name].assign(p.numel(), 0.0);
    v_[name].assign(p.numel(), 0.0);
  }
}

void AdamState::step(std::map<std::string, Tensor>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!p.has_grad())
      throw std::runtime_error("adam_step: parameter '" + name + "' has no gradient");
    auto g = p.grad();
    auto& m = m_.at(name);
    auto& v = v_.at(name);
    auto w = p.mutable_data();
    for (size_t i = 0; i < m.size(); ++i) {
      double gi = g[i] + cfg_.weight_decay * w[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

// ---- checkpoint I/O ---------------------------------------------------------

namespace {
constexpr char kMagic[] = "gnnbench-checkpoint v1";

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
  out << name << ' ' << t.shape().size();
  for (int64_t d : t.shape()) out << ' ' << d;
  out << '\n';
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& in, std::string& name) {
  size_t rank = 0;
  in >> name >> rank;
  std::vector<int64_t> shape(rank);
  int64_t numel = 1;
  for (auto& d : shape) {
    in >> d;
    numel *= d;
  }
  in.ignore();  // newline before raw block
  std::vector<double> data(numel);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(numel * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor payload for '" + name + "'");
  return Tensor::from_data(std::move(shape), std::move(data));
}
}  // namespace

void save_model(const BlockModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << kMagic << '\n';
  out << "blocks " << model.blocks.size() << '\n';
  for (const auto& b : model.blocks) {
    out << block_kind_name(b.kind) << ' ' << b.in_dim << ' ' << b.out_dim << ' ' << b.dropout_p
        << ' ' << (b.gin_eps_learnable ? 1 : 0) << ' ' << b.gin_eps_init << ' '
        << (b.skip_from ? *b.skip_from : -1) << '\n';
  }
  out << "params " << model.params.size() << '\n';
  for (const auto& [name, t] : model.params) write_tensor(out, name, t);
  out << "\nbuffers " << model.buffers.size() << '\n';
  for (const auto& [name, t] : model.buffers) write_tensor(out, name, t);
}

BlockModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw std::runtime_error("checkpoint: bad header in " + path);
  std::string tag;
  size_t count = 0;
  in >> tag >> count;
  if (tag != "blocks") throw std::runtime_error("checkpoint: expected blocks section");
  BlockModel m;
  m.blocks.resize(count);
  for (auto& b : m.blocks) {
    std::string kind;
    int learnable = 0, skip = -1;
    in >> kind >> b.in_dim >> b.out_dim >> b.dropout_p >> learnable >> b.gin_eps_init >> skip;
    b.kind = block_kind_from_name(kind);
    b.gin_eps_learnable = learnable != 0;
    if (skip >= 0) b.skip_from = skip;
  }
  in >> tag >> count;
  if (tag != "params") throw std::runtime_error("checkpoint: expected params section");
  for (size_t i = 0; i < count; ++i) {
    std::string name;
    Tensor t = read_tensor(in, name);
    t.set_requires_grad(true);
    m.params.emplace(name, std::move(t));
  }
  in >> tag >> count;
  if (tag != "buffers") throw std::runtime_error("checkpoint: expected buffers section");
  for (size_t i = 0; i < count; ++i) {
    std::string name;
    Tensor t = read_tensor(in, name);
    m.buffers.emplace(name, std::move(t));
  }
  return m;
}

}  // namespace gnnbench
