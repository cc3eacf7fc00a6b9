#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <functional>

#include "core/graph.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "doctest.h"

using namespace gnnbench;

namespace {

GraphDataset tiny_graph() {
  GraphDataset g;
  g.n = 4;
  g.edges = {{0, 1}, {1, 2}, {2, 3}};
  g.labels = {0, 0, 1, 1};
  g.num_classes = 2;
  g.features = Tensor::from_data({4, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0});
  return g;
}

}  // namespace

TEST_CASE("build_model: GCN-2l has exactly two weight matrices") {
  BlockModel m = build_model(gcn2_spec(8, 16, 3), 1);
  int weights = 0;
  for (const auto& name : m.param_names())
    if (name.find("weight") != std::string::npos) ++weights;
  CHECK(weights == 2);
  CHECK(m.params.at("b0.weight").shape() == std::vector<int64_t>{8, 16});
  CHECK(m.params.at("b2.weight").shape() == std::vector<int64_t>{16, 3});
  for (double b : m.params.at("b0.bias").data()) CHECK(b == 0.0);  // zero bias init
}

TEST_CASE("build_model validation errors") {
  CHECK_THROWS_AS(build_model({}, 1), std::invalid_argument);

  // dimension chain violation
  std::vector<BlockSpec> bad = {BlockSpec::gcn_conv(8, 16), BlockSpec::gcn_conv(8, 3)};
  CHECK_THROWS_AS(build_model(bad, 1), std::invalid_argument);

  // log_softmax not final
  std::vector<BlockSpec> misplaced = {BlockSpec::gcn_conv(8, 16),
                                      BlockSpec::log_softmax_block(),
                                      BlockSpec::relu_block()};
  CHECK_THROWS_AS(build_model(misplaced, 1), std::invalid_argument);

  // skip with mismatched dims
  std::vector<BlockSpec> skip = {BlockSpec::gcn_conv(8, 16), BlockSpec::gcn_conv(16, 3)};
  skip[1].skip_from = 0;
  CHECK_THROWS_AS(build_model(skip, 1), std::invalid_argument);
}

TEST_CASE("build_model is bitwise deterministic given seed") {
  BlockModel a = build_model(gcn2_spec(5, 7, 2), 42);
  BlockModel b = build_model(gcn2_spec(5, 7, 2), 42);
  for (const auto& name : a.param_names()) {
    auto da = a.params.at(name).data();
    auto db = b.params.at(name).data();
    REQUIRE(da.size() == db.size());
    for (size_t i = 0; i < da.size(); ++i) CHECK(da[i] == db[i]);
  }
}

TEST_CASE("gcn_conv with isolated self-loop adjacency degenerates to a linear layer") {
  // a graph with no edges: normalized adjacency is the identity
  GraphDataset g;
  g.n = 3;
  g.labels = {0, 1, 0};
  g.num_classes = 2;
  g.features = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  BlockModel m = build_model({BlockSpec::gcn_conv(2, 2)}, 7);
  GraphOps gops = GraphOps::from(g);
  Tensor out = forward(m, gops, g.features, false, 0);
  Tensor expected = add_rowwise(matmul(g.features, m.params.at("b0.weight")),
                                m.params.at("b0.bias"));
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("untrained GCN-2l on karate gives finite normalized log-probs") {
  GraphDataset g = karate_club();
  BlockModel m = build_model(gcn2_spec(g.feature_dim(), 16, g.num_classes), 3);
  GraphOps gops = GraphOps::from(g);
  Tensor logp = forward(m, gops, g.features, false, 0);
  for (int64_t i = 0; i < g.n; ++i) {
    double s = 0;
    for (int64_t j = 0; j < g.num_classes; ++j) {
      CHECK(std::isfinite(logp.at(i, j)));
      s += std::exp(logp.at(i, j));
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("eval-mode forward is bitwise identical across calls") {
  GraphDataset g = tiny_graph();
  BlockModel m = build_model(
      {BlockSpec::gcn_conv(3, 4), BlockSpec::relu_block(), BlockSpec::dropout_block(0.5),
       BlockSpec::gcn_conv(4, 2), BlockSpec::log_softmax_block()},
      11);
  GraphOps gops = GraphOps::from(g);
  Tensor a = forward(m, gops, g.features, false, 5);
  Tensor b = forward(m, gops, g.features, false, 5);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);

  Tensor t1 = forward(m, gops, g.features, true, 5);
  Tensor t2 = forward(m, gops, g.features, true, 5);
  for (int64_t i = 0; i < t1.numel(); ++i) CHECK(t1.data()[i] == t2.data()[i]);
}

TEST_CASE("whole-model gradient matches finite differences (GCN-2l and GIN-2l)") {
  GraphDataset g = tiny_graph();
  GraphOps gops = GraphOps::from(g);
  std::vector<uint8_t> mask(4, 1);

  for (const std::string arch : {"gcn2", "gin2"}) {
    BlockModel m = arch == "gcn2" ? build_model(gcn2_spec(3, 5, 2), 13)
                                  : build_model(gin2_spec(3, 5, 2), 13);
    auto loss_value = [&]() {
      return nll_loss(forward(m, gops, g.features, false, 0), g.labels, mask).item();
    };
    m.zero_grads();
    {
      Tape tape;
      tape.backward(nll_loss(forward(m, gops, g.features, false, 0), g.labels, mask));
    }
    for (const auto& name : m.param_names()) {
      Tensor& p = m.params.at(name);
      auto bp = p.grad();
      auto buf = p.mutable_data();
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double orig = buf[i];
        buf[i] = orig + 1e-5;
        const double fp = loss_value();
        buf[i] = orig - 1e-5;
        const double fm = loss_value();
        buf[i] = orig;
        const double fd = (fp - fm) / 2e-5;
        CHECK(std::abs(bp[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
      }
    }
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  BlockModel m = build_model(gcn2_spec(3, 4, 2), 9);
  std::vector<double> before(m.params.at("b0.weight").data().begin(),
                             m.params.at("b0.weight").data().end());
  for (auto& [k, v] : m.params) {
    v.zero_grad();
    v.mutable_grad();  // no allocation yet
  }
  // populate zero gradients through a zero loss
  {
    Tape tape;
    Tensor zero = scale(sum(m.params.at("b0.weight")), 0.0);
    Tensor loss = zero;
    for (const auto& name : m.param_names())
      loss = add(loss, scale(sum(m.params.at(name)), 0.0));
    tape.backward(loss);
  }
  AdamState adam(m, AdamConfig{});
  adam.step(m);
  auto after = m.params.at("b0.weight").data();
  for (size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);
}

TEST_CASE("adam: first step with constant gradient is -lr*g/(|g|+eps)") {
  std::map<std::string, Tensor> params;
  Tensor w = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
  params.emplace("w", w);
  const double g = 0.37;
  {
    Tape tape;
    tape.backward(sum(scale(params.at("w"), g)));
  }
  AdamConfig cfg;  // lr=0.01, eps=1e-8
  AdamState adam(params, cfg);
  adam.step(params);
  // closed form: mhat = g, vhat = g^2, update = -lr*g/(|g|+eps)
  const double expected_delta = -cfg.lr * g / (std::abs(g) + cfg.eps);
  CHECK(params.at("w").data()[0] == doctest::Approx(1.0 + expected_delta).epsilon(1e-12));
  CHECK(params.at("w").data()[1] == doctest::Approx(2.0 + expected_delta).epsilon(1e-12));
}

TEST_CASE("adam: 100 steps on w^2 from w=1 decrease monotonically toward 0") {
  std::map<std::string, Tensor> params;
  params.emplace("w", Tensor::from_data({1}, {1.0}, true));
  AdamState adam(params, AdamConfig{});
  double prev = 1.0;
  for (int step = 0; step < 100; ++step) {
    params.at("w").zero_grad();
    {
      Tape tape;
      tape.backward(sum(mul(params.at("w"), params.at("w"))));
    }
    adam.step(params);
    const double cur = params.at("w").item();
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK(prev < 0.5);
  CHECK(prev > -0.5);
}

TEST_CASE("adam: missing gradient is a contract error") {
  BlockModel m = build_model(gcn2_spec(3, 4, 2), 9);
  AdamState adam(m, AdamConfig{});
  m.zero_grads();
  CHECK_THROWS_AS(adam.step(m), std::runtime_error);
}

TEST_CASE("accuracy examples and tie-break") {
  Tensor logits = Tensor::from_data({4, 2}, {0.9, 0.1, 0.8, 0.2, 0.2, 0.8, 0.3, 0.7});
  std::vector<uint8_t> mask(4, 1);
  CHECK(accuracy(logits, {0, 0, 1, 1}, mask) == doctest::Approx(1.0));
  CHECK(accuracy(logits, {1, 1, 0, 0}, mask) == doctest::Approx(0.0));
  CHECK(accuracy(logits, {0, 0, 0, 0}, mask) == doctest::Approx(0.5));
  CHECK_THROWS_AS(accuracy(logits, {0, 0, 0, 0}, std::vector<uint8_t>(4, 0)),
                  std::invalid_argument);

  // exact tie goes to the lowest class index
  Tensor tied = Tensor::from_data({1, 3}, {0.5, 0.5, 0.5});
  CHECK(accuracy(tied, {0}, {1}) == doctest::Approx(1.0));
  CHECK(accuracy(tied, {1}, {1}) == doctest::Approx(0.0));
}

TEST_CASE("checkpoint round trip preserves the model") {
  GraphDataset g = tiny_graph();
  std::vector<BlockSpec> spec = {BlockSpec::gcn_conv(3, 4), BlockSpec::batchnorm(4),
                                 BlockSpec::relu_block(), BlockSpec::gcn_conv(4, 2),
                                 BlockSpec::log_softmax_block()};
  BlockModel m = build_model(spec, 21);
  GraphOps gops = GraphOps::from(g);
  forward(m, gops, g.features, true, 0);  // move the batchnorm buffers

  auto path = (std::filesystem::temp_directory_path() / "gnnbench_ckpt_test.bin").string();
  save_model(m, path);
  BlockModel loaded = load_model(path);

  REQUIRE(loaded.blocks.size() == m.blocks.size());
  CHECK(loaded.blocks[1].kind == BlockKind::BatchNorm);
  for (const auto& name : m.param_names()) {
    auto a = m.params.at(name).data();
    auto b = loaded.params.at(name).data();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  for (const auto& [name, buf] : m.buffers) {
    auto a = buf.data();
    auto b = loaded.buffers.at(name).data();
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  Tensor out_a = forward(m, gops, g.features, false, 0);
  Tensor out_b = forward(loaded, gops, g.features, false, 0);
  for (int64_t i = 0; i < out_a.numel(); ++i) CHECK(out_a.data()[i] == out_b.data()[i]);
}

TEST_CASE("skip connections keep shapes and the forward pass works") {
  GraphDataset g = tiny_graph();
  std::vector<BlockSpec> spec = {BlockSpec::gcn_conv(3, 4), BlockSpec::relu_block(),
                                 BlockSpec::gcn_conv(4, 4), BlockSpec::gcn_conv(4, 2),
                                 BlockSpec::log_softmax_block()};
  spec[2].skip_from = 0;
  BlockModel m = build_model(spec, 31);
  GraphOps gops = GraphOps::from(g);
  Tensor out = forward(m, gops, g.features, false, 0);
  CHECK(out.shape() == std::vector<int64_t>{4, 2});
}
