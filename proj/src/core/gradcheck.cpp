#include "core/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "core/graph.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace gnnbench {

bool GradCheckReport::all_passed() const {
  for (const auto& e : entries)
    if (!e.passed) return false;
  return true;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.passed ? "PASS" : "FAIL") << "  " << e.name << "  instances=" << e.instances
       << "  max_err=" << e.max_err << "\n";
  }
  os << (all_passed() ? "gradcheck: all checks passed" : "gradcheck: FAILURES present") << "\n";
  return os.str();
}

namespace {

constexpr double kStep = 1e-5;
constexpr double kRtol = 1e-4;
constexpr double kAtol = 1e-7;

using ScalarFn = std::function<Tensor(std::vector<Tensor>&)>;

struct Instance {
  std::vector<Tensor> inputs;  // leaves to differentiate
  ScalarFn fn;
};

/// Compares reverse-mode gradients of fn against central differences for
/// every coordinate of every input. Returns worst normalized error.
double check_instance(Instance& inst, bool& ok) {
  for (auto& t : inst.inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = inst.fn(inst.inputs);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& t : inst.inputs) {
    std::vector<double> bp(t.numel(), 0.0);
    if (t.has_grad()) {
      auto g = t.grad();
      bp.assign(g.begin(), g.end());
    }
    auto buf = t.mutable_data();
    for (int64_t j = 0; j < t.numel(); ++j) {
      const double orig = buf[j];
      buf[j] = orig + kStep;
      const double fp = inst.fn(inst.inputs).item();  // no tape: pure forward
      buf[j] = orig - kStep;
      const double fm = inst.fn(inst.inputs).item();
      buf[j] = orig;
      const double fd = (fp - fm) / (2.0 * kStep);
      const double err = std::abs(bp[j] - fd);
      const double norm = err / std::max({1.0, std::abs(fd), std::abs(bp[j])});
      worst = std::max(worst, norm);
      if (err > kAtol + kRtol * std::abs(fd)) ok = false;
    }
  }
  return worst;
}

Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

/// Push values away from non-differentiable points so the finite-difference
/// stencil never straddles a kink.
void avoid(Tensor& t, std::initializer_list<double> kinks, double margin = 0.02) {
  auto buf = t.mutable_data();
  for (auto& v : buf)
    for (double k : kinks)
      if (std::abs(v - k) < margin) v = k + (v >= k ? margin : -margin);
}

Tensor probe(const Tensor& like, Rng& rng) {
  return rand_tensor(like.shape(), rng, -1.0, 1.0);
}

struct Check {
  std::string name;
  std::function<Instance(Rng&)> make;
};

std::vector<Check> op_checks() {
  std::vector<Check> checks;

  checks.push_back({"matmul", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({5, 4}, rng), rand_tensor({4, 3}, rng)};
    Tensor r = rand_tensor({5, 3}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(matmul(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"transpose", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({4, 3}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(transpose(x[0]), r)); };
    return in;
  }});

  checks.push_back({"add", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(add(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"sub", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(sub(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"mul", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(mul(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"add_rowwise", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng), rand_tensor({4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(add_rowwise(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"scale", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(scale(x[0], 1.7), r)); };
    return in;
  }});

  checks.push_back({"mul_scalar_tensor", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng), rand_tensor({1}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(mul_scalar_tensor(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"relu", [](Rng& rng) {
    Instance in;
    Tensor x = rand_tensor({3, 4}, rng);
    avoid(x, {0.0});
    in.inputs = {x};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(relu(x[0]), r)); };
    return in;
  }});

  checks.push_back({"prelu", [](Rng& rng) {
    Instance in;
    Tensor x = rand_tensor({3, 4}, rng);
    avoid(x, {0.0});
    in.inputs = {x, rand_tensor({1}, rng, 0.05, 0.5)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(prelu(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"sigmoid", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(sigmoid(x[0]), r)); };
    return in;
  }});

  checks.push_back({"exp", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(gnnbench::exp(x[0]), r)); };
    return in;
  }});

  checks.push_back({"log", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng, 0.1, 3.0)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(gnnbench::log(x[0]), r)); };
    return in;
  }});

  checks.push_back({"rsqrt", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng, 0.1, 3.0)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(rsqrt(x[0]), r)); };
    return in;
  }});

  checks.push_back({"clip_scalar_bounds", [](Rng& rng) {
    Instance in;
    Tensor x = rand_tensor({3, 4}, rng);
    avoid(x, {-1.0, 1.0});
    in.inputs = {x};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(clip(x[0], -1.0, 1.0), r)); };
    return in;
  }});

  checks.push_back({"clip_tensor_bounds", [](Rng& rng) {
    Instance in;
    Tensor x = rand_tensor({3, 4}, rng);
    Tensor lo = Tensor::full({3, 4}, -0.8);
    Tensor hi = Tensor::full({3, 4}, 0.8);
    avoid(x, {-0.8, 0.8});
    in.inputs = {x};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r, lo, hi](std::vector<Tensor>& x) { return sum(mul(clip(x[0], lo, hi), r)); };
    return in;
  }});

  checks.push_back({"dropout", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    const uint64_t seed = rng.next_u64();
    in.fn = [r, seed](std::vector<Tensor>& x) {
      return sum(mul(dropout(x[0], 0.3, seed, true), r));
    };
    return in;
  }});

  checks.push_back({"sum", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng)};
    in.fn = [](std::vector<Tensor>& x) { return sum(x[0]); };
    return in;
  }});

  checks.push_back({"mean", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng)};
    in.fn = [](std::vector<Tensor>& x) { return mean(x[0]); };
    return in;
  }});

  checks.push_back({"sum_rows", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng)};
    Tensor r = rand_tensor({3}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(sum_rows(x[0]), r)); };
    return in;
  }});

  checks.push_back({"l1_norm", [](Rng& rng) {
    Instance in;
    Tensor x = rand_tensor({3, 4}, rng);
    avoid(x, {0.0});
    in.inputs = {x};
    in.fn = [](std::vector<Tensor>& x) { return l1_norm(x[0]); };
    return in;
  }});

  checks.push_back({"l2_norm", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng, 0.5, 2.0)};
    in.fn = [](std::vector<Tensor>& x) { return l2_norm(x[0]); };
    return in;
  }});

  checks.push_back({"diag", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({4, 4}, rng)};
    Tensor r = rand_tensor({4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(diag(x[0]), r)); };
    return in;
  }});

  checks.push_back({"select_rows", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({5, 3}, rng)};
    std::vector<uint8_t> mask = {1, 0, 1, 1, 0};
    Tensor r = rand_tensor({3, 3}, rng, -1, 1);
    in.fn = [r, mask](std::vector<Tensor>& x) { return sum(mul(select_rows(x[0], mask), r)); };
    return in;
  }});

  checks.push_back({"rows_l2_normalize", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng, 0.3, 2.0)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(rows_l2_normalize(x[0]), r)); };
    return in;
  }});

  checks.push_back({"scale_rows", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng), rand_tensor({3}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(scale_rows(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"scale_cols", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 4}, rng), rand_tensor({4}, rng)};
    Tensor r = rand_tensor({3, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(scale_cols(x[0], x[1]), r)); };
    return in;
  }});

  checks.push_back({"log_softmax", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 5}, rng)};
    Tensor r = rand_tensor({3, 5}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(log_softmax(x[0]), r)); };
    return in;
  }});

  checks.push_back({"softmax_rows", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({3, 5}, rng)};
    Tensor r = rand_tensor({3, 5}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) { return sum(mul(softmax_rows(x[0], 2.5), r)); };
    return in;
  }});

  checks.push_back({"nll_loss", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({5, 3}, rng)};
    std::vector<int32_t> targets(5);
    for (auto& t : targets) t = static_cast<int32_t>(rng.uniform_int(0, 2));
    std::vector<uint8_t> mask = {1, 1, 0, 1, 1};
    in.fn = [targets, mask](std::vector<Tensor>& x) { return nll_loss(x[0], targets, mask); };
    return in;
  }});

  checks.push_back({"nll_of_log_softmax", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({5, 3}, rng)};
    std::vector<int32_t> targets(5);
    for (auto& t : targets) t = static_cast<int32_t>(rng.uniform_int(0, 2));
    std::vector<uint8_t> mask(5, 1);
    in.fn = [targets, mask](std::vector<Tensor>& x) {
      return nll_loss(log_softmax(x[0]), targets, mask);
    };
    return in;
  }});

  checks.push_back({"batchnorm_train", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({6, 4}, rng), rand_tensor({4}, rng, 0.5, 1.5),
                 rand_tensor({4}, rng, -0.5, 0.5)};
    Tensor r = rand_tensor({6, 4}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) {
      Tensor rm = Tensor::zeros({4});
      Tensor rv = Tensor::full({4}, 1.0);
      return sum(mul(batchnorm(x[0], x[1], x[2], rm, rv, 0.1, 1e-5, true), r));
    };
    return in;
  }});

  checks.push_back({"batchnorm_eval", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({6, 4}, rng), rand_tensor({4}, rng, 0.5, 1.5),
                 rand_tensor({4}, rng, -0.5, 0.5)};
    Tensor rm = rand_tensor({4}, rng, -0.5, 0.5);
    Tensor rv = rand_tensor({4}, rng, 0.5, 1.5);
    Tensor r = rand_tensor({6, 4}, rng, -1, 1);
    in.fn = [r, rm, rv](std::vector<Tensor>& x) {
      Tensor m = rm.deep_copy();
      Tensor v = rv.deep_copy();
      return sum(mul(batchnorm(x[0], x[1], x[2], m, v, 0.1, 1e-5, false), r));
    };
    return in;
  }});

  checks.push_back({"scatter_add_pairs", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({4}, rng)};
    std::vector<std::pair<int64_t, int64_t>> pos = {{0, 1}, {1, 0}, {2, 3}, {2, 3}};
    Tensor r = rand_tensor({4, 4}, rng, -1, 1);
    in.fn = [r, pos](std::vector<Tensor>& x) {
      return sum(mul(scatter_add_pairs(x[0], pos, 4, 4), r));
    };
    return in;
  }});

  checks.push_back({"normalize_adjacency", [](Rng& rng) {
    Instance in;
    in.inputs = {rand_tensor({5, 5}, rng, 0.05, 1.0)};
    Tensor r = rand_tensor({5, 5}, rng, -1, 1);
    in.fn = [r](std::vector<Tensor>& x) {
      return sum(mul(normalize_adjacency_tensor(x[0]), r));
    };
    return in;
  }});

  return checks;
}

/// Random 12-node graph plus a model; the checked inputs are every model
/// parameter and the feature matrix.
Instance model_instance(Rng& rng, const std::string& arch) {
  const int64_t n = 12, d = 6, c = 3;
  std::vector<Edge> edges;
  for (int32_t u = 0; u < n; ++u)
    for (int32_t v = u + 1; v < n; ++v)
      if (rng.uniform() < 0.3) edges.emplace_back(u, v);
  if (edges.empty()) edges.emplace_back(0, 1);
  GraphDataset g;
  g.n = n;
  g.edges = std::move(edges);
  g.num_classes = c;
  g.labels.resize(n);
  for (auto& l : g.labels) l = static_cast<int32_t>(rng.uniform_int(0, c - 1));
  g.features = rand_tensor({n, d}, rng);

  std::vector<BlockSpec> spec;
  if (arch == "gcn2") {
    spec = gcn2_spec(d, 8, c);
  } else if (arch == "gin2") {
    spec = gin2_spec(d, 8, c);
    spec[0].gin_eps_learnable = true;
    spec[0].gin_eps_init = 0.1;
  } else {  // gcn2 with a skip connection around the hidden stage
    spec = {BlockSpec::gcn_conv(d, 8), BlockSpec::relu_block(), BlockSpec::gcn_conv(8, 8),
            BlockSpec::gcn_conv(8, c), BlockSpec::log_softmax_block()};
    spec[2].skip_from = 0;
  }
  auto model = std::make_shared<BlockModel>(build_model(spec, rng.next_u64()));
  auto gops = std::make_shared<GraphOps>(GraphOps::from(g));

  Instance in;
  std::vector<std::string> names = model->param_names();
  for (const auto& nm : names) in.inputs.push_back(model->params.at(nm));
  in.inputs.push_back(g.features);
  auto labels = g.labels;
  std::vector<uint8_t> mask(n, 1);
  in.fn = [model, gops, labels, mask](std::vector<Tensor>& x) {
    Tensor logits = forward(*model, *gops, x.back(), false, 0);
    return nll_loss(logits, labels, mask);
  };
  return in;
}

}  // namespace

GradCheckReport run_gradcheck(uint64_t seed, int instances_per_op) {
  GradCheckReport report;
  Rng master(seed);

  auto run = [&](const std::string& name, const std::function<Instance(Rng&)>& make,
                 int instances) {
    GradCheckEntry entry;
    entry.name = name;
    entry.instances = instances;
    entry.passed = true;
    Rng rng = master.fork(std::hash<std::string>{}(name));
    for (int i = 0; i < instances; ++i) {
      Instance inst = make(rng);
      bool ok = true;
      entry.max_err = std::max(entry.max_err, check_instance(inst, ok));
      if (!ok) entry.passed = false;
    }
    report.entries.push_back(std::move(entry));
  };

  for (const auto& check : op_checks()) run(check.name, check.make, instances_per_op);

  run("model_gcn2", [](Rng& rng) { return model_instance(rng, "gcn2"); }, instances_per_op);
  run("model_gin2", [](Rng& rng) { return model_instance(rng, "gin2"); }, instances_per_op);
  run("model_gcn_skip", [](Rng& rng) { return model_instance(rng, "skip"); }, instances_per_op);

  return report;
}

}  // namespace gnnbench
