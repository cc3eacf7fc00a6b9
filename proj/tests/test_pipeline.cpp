#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "core/bench.hpp"
#include "core/config.hpp"
#include "core/graph.hpp"
#include "core/model.hpp"
#include "core/pipeline.hpp"
#include "doctest.h"

using namespace gnnbench;

namespace {

GraphDataset karate_with_masks(uint64_t seed) {
  GraphDataset g = karate_club();
  auto [train, test] = split_masks(g.n, 0.8, seed);
  g.train_mask = std::move(train);
  g.test_mask = std::move(test);
  return g;
}

RunPlan karate_plan(uint64_t seed, int64_t epochs = 200) {
  RunPlan plan;
  plan.model_spec = gcn2_spec(34, 16, 4);
  plan.train.epochs = epochs;
  plan.train.seed = seed;
  return plan;
}

}  // namespace

TEST_CASE("hook trace equals the train/attack/defend/evaluate order literally") {
  GraphDataset g = karate_with_masks(1);
  RunPlan plan = karate_plan(1, 3);
  RunResult res = train_and_evaluate(g, plan);

  std::vector<HookEvent> expected = {HookEvent::PoisonAttack, HookEvent::PoisonDefense,
                                     HookEvent::ModelInit};
  for (int e = 0; e < 3; ++e) {
    expected.push_back(HookEvent::EvasionDefenseBefore);
    expected.push_back(HookEvent::TrainStep);
    expected.push_back(HookEvent::EvasionDefenseAfter);
    expected.push_back(HookEvent::OptimizerStep);
  }
  expected.push_back(HookEvent::EvasionAttack);
  expected.push_back(HookEvent::PrivacyAttackSlot);
  expected.push_back(HookEvent::Evaluate);

  REQUIRE(res.trace.events.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) CHECK(res.trace.events[i].first == expected[i]);
  CHECK(res.trace.order_violation().empty());
}

TEST_CASE("order violations are detected") {
  HookTrace t;
  t.record(HookEvent::ModelInit);
  t.record(HookEvent::PoisonAttack);  // poison after init
  CHECK_FALSE(t.order_violation().empty());

  HookTrace ok;
  ok.record(HookEvent::PoisonAttack);
  ok.record(HookEvent::PoisonDefense);
  ok.record(HookEvent::ModelInit);
  ok.record(HookEvent::EvasionDefenseBefore);
  ok.record(HookEvent::TrainStep);
  ok.record(HookEvent::EvasionDefenseAfter);
  ok.record(HookEvent::OptimizerStep);
  ok.record(HookEvent::EvasionAttack);
  ok.record(HookEvent::PrivacyAttackSlot);
  ok.record(HookEvent::Evaluate);
  CHECK(ok.order_violation().empty());

  HookTrace missing_step;
  missing_step.record(HookEvent::PoisonAttack);
  missing_step.record(HookEvent::PoisonDefense);
  missing_step.record(HookEvent::ModelInit);
  missing_step.record(HookEvent::EvasionAttack);
  missing_step.record(HookEvent::PrivacyAttackSlot);
  missing_step.record(HookEvent::Evaluate);
  CHECK_FALSE(missing_step.order_violation().empty());
}

TEST_CASE("clean karate reference run: train 1.0, test >= 0.75, reproducible") {
  GraphDataset g = karate_with_masks(1);
  RunPlan plan = karate_plan(1);
  RunResult a = train_and_evaluate(g, plan);
  CHECK(a.metrics.train_acc.back() == doctest::Approx(1.0));
  CHECK(a.metrics.test_acc >= 0.75);

  RunResult b = train_and_evaluate(g, plan);
  CHECK(a.metrics.to_csv() == b.metrics.to_csv());  // byte-identical serialization
}

TEST_CASE("epochs=0 is rejected") {
  GraphDataset g = karate_with_masks(1);
  RunPlan plan = karate_plan(1, 0);
  CHECK_THROWS_AS(train_and_evaluate(g, plan), PipelineError);
}

TEST_CASE("a failing hook aborts with the partial trace attached") {
  GraphDataset g = karate_with_masks(1);
  RunPlan plan = karate_plan(1, 2);
  plan.poison_defense = "no_such_defense";
  try {
    train_and_evaluate(g, plan);
    FAIL("expected PipelineError");
  } catch (const PipelineError& e) {
    // poison attack slot was recorded before the failure
    REQUIRE(e.partial_trace.events.size() >= 1);
    CHECK(e.partial_trace.events[0].first == HookEvent::PoisonAttack);
  }
}

TEST_CASE("poison attacks only touch the working copy") {
  GraphDataset g = karate_with_masks(1);
  const size_t edges_before = g.edges.size();
  RunPlan plan = karate_plan(1, 2);
  plan.poison_attack = "random_poison";
  plan.params = TrustConfig::parse_string("[attack.random_poison]\nremove_fraction = 0.3\n");
  RunResult res = train_and_evaluate(g, plan);
  CHECK(g.edges.size() == edges_before);  // pristine dataset untouched
  CHECK(res.metrics.poison_attack == "random_poison");
}

TEST_CASE("evaluate: converged karate model has train accuracy 1.0") {
  GraphDataset g = karate_with_masks(1);
  RunResult res = train_and_evaluate(g, karate_plan(1));
  CHECK(evaluate(res.model, g, g.train_mask) == doctest::Approx(1.0));
  // deterministic across repeated calls
  CHECK(evaluate(res.model, g, g.test_mask) == evaluate(res.model, g, g.test_mask));
}

TEST_CASE("evaluate: constant-prediction model scores the mask's class prior") {
  GraphDataset g = karate_with_masks(3);
  // zero weights make all logits equal; argmax tie-break picks class 0
  BlockModel m = build_model(gcn2_spec(34, 4, 4), 1);
  for (auto& [name, p] : m.params)
    for (auto& v : p.mutable_data()) v = 0.0;
  int64_t class0 = 0, total = 0;
  for (int64_t i = 0; i < g.n; ++i) {
    if (!g.test_mask[i]) continue;
    ++total;
    class0 += g.labels[i] == 0;
  }
  CHECK(evaluate(m, g, g.test_mask) ==
        doctest::Approx(static_cast<double>(class0) / static_cast<double>(total)));
}

TEST_CASE("early_stop_check definition") {
  CHECK_FALSE(early_stop_check({1.0, 0.9, 0.8, 0.7}, 3, 0.0));  // monotone improvement
  CHECK(early_stop_check({1.0, 1.0, 1.0, 1.0}, 3, 0.0));        // flat: true at epoch 4
  CHECK_FALSE(early_stop_check({1.0, 1.0, 1.0}, 3, 0.0));       // only 2 stale epochs
  CHECK_FALSE(early_stop_check({1.0}, 3, 0.0));
  CHECK_THROWS_AS(early_stop_check({}, 3, 0.0), std::invalid_argument);
}

TEST_CASE("early stopping disabled by default; enabled emits early_stop and halts") {
  GraphDataset g = karate_with_masks(1);
  RunPlan plan = karate_plan(1, 30);
  RunResult no_stop = train_and_evaluate(g, plan);
  for (const auto& [e, d] : no_stop.trace.events) CHECK(e != HookEvent::EarlyStop);
  CHECK(no_stop.metrics.train_loss.size() == 30);

  // an impossible min_delta forces the stop right after `patience` epochs
  plan.train.early_stopping_patience = 3;
  plan.train.early_stopping_min_delta = 1e9;
  RunResult stopped = train_and_evaluate(g, plan);
  bool saw_stop = false;
  for (const auto& [e, d] : stopped.trace.events) saw_stop |= e == HookEvent::EarlyStop;
  CHECK(saw_stop);
  CHECK(stopped.metrics.train_loss.size() == 4);  // 3 stale epochs after the first
  CHECK(stopped.trace.order_violation().empty());
}

TEST_CASE("metrics csv layout: header, rows, footer keys") {
  GraphDataset g = karate_with_masks(1);
  RunPlan plan = karate_plan(1, 2);
  RunResult res = train_and_evaluate(g, plan);
  res.metrics.config_hash = "deadbeef";
  const std::string csv = res.metrics.to_csv();
  CHECK(csv.rfind("epoch,train_loss,train_acc\n", 0) == 0);
  CHECK(csv.find("\ntest_acc=") != std::string::npos);
  CHECK(csv.find("\nseed=1\n") != std::string::npos);
  CHECK(csv.find("\nconfig_hash=deadbeef\n") != std::string::npos);
  CHECK(csv.find("\nversion=") != std::string::npos);
  CHECK(csv.find("1,") == csv.find("epoch,train_loss,train_acc\n") + 27);
}

TEST_CASE("dataset without masks is rejected") {
  GraphDataset g = karate_club();
  CHECK_THROWS_AS(train_and_evaluate(g, karate_plan(1, 2)), PipelineError);
}
