#include "core/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

#include "core/attack.hpp"
#include "core/defense.hpp"
#include "core/rng.hpp"
#include "core/version.hpp"

namespace gnnbench {

std::string hook_event_name(HookEvent e) {
  switch (e) {
    case HookEvent::PoisonAttack: return "poison_attack";
    case HookEvent::PoisonDefense: return "poison_defense";
    case HookEvent::ModelInit: return "model_init";
    case HookEvent::EvasionDefenseBefore: return "evasion_defense_before";
    case HookEvent::TrainStep: return "train_step";
    case HookEvent::EvasionDefenseAfter: return "evasion_defense_after";
    case HookEvent::OptimizerStep: return "optimizer_step";
    case HookEvent::EarlyStop: return "early_stop";
    case HookEvent::EvasionAttack: return "evasion_attack";
    case HookEvent::PrivacyAttackSlot: return "privacy_attack_slot";
    case HookEvent::Evaluate: return "evaluate";
  }
  return "?";
}

void HookTrace::record(HookEvent e, std::string detail) {
  events.emplace_back(e, std::move(detail));
}

std::string HookTrace::to_string() const {
  std::ostringstream os;
  for (const auto& [e, detail] : events) {
    os << hook_event_name(e);
    if (!detail.empty()) os << ' ' << detail;
    os << '\n';
  }
  return os.str();
}

std::string HookTrace::order_violation() const {
  size_t i = 0;
  auto at = [&](size_t k) { return k < events.size() ? events[k].first : HookEvent::Evaluate; };
  auto fail = [&](const std::string& msg) {
    return "event " + std::to_string(i) + ": " + msg;
  };

  if (i < events.size() && at(i) == HookEvent::PoisonAttack) ++i;
  if (i < events.size() && at(i) == HookEvent::PoisonDefense) ++i;
  if (i >= events.size() || at(i) != HookEvent::ModelInit)
    return fail("expected model_init after the poison slots");
  ++i;

  int64_t epochs = 0;
  bool stopped = false;
  while (i < events.size() && at(i) == HookEvent::EvasionDefenseBefore) {
    ++i;
    if (at(i) != HookEvent::TrainStep) return fail("expected train_step");
    ++i;
    if (at(i) != HookEvent::EvasionDefenseAfter) return fail("expected evasion_defense_after");
    ++i;
    if (at(i) != HookEvent::OptimizerStep) return fail("expected optimizer_step");
    ++i;
    ++epochs;
    if (i < events.size() && at(i) == HookEvent::EarlyStop) {
      ++i;
      stopped = true;
      break;
    }
  }
  (void)stopped;
  if (epochs == 0) return fail("no training epochs recorded");
  if (i >= events.size() || at(i) != HookEvent::EvasionAttack)
    return fail("expected evasion_attack after training");
  ++i;
  if (i >= events.size() || at(i) != HookEvent::PrivacyAttackSlot)
    return fail("expected privacy_attack_slot after evasion_attack");
  ++i;
  if (i >= events.size() || at(i) != HookEvent::Evaluate) return fail("expected evaluate last");
  ++i;
  if (i != events.size()) return fail("trailing events after evaluate");

  // poison slots must not appear anywhere else
  for (size_t k = 0; k < events.size(); ++k) {
    if ((events[k].first == HookEvent::PoisonAttack && k != 0) ||
        (events[k].first == HookEvent::PoisonDefense && k > 1))
      return "poison slot recorded after model_init";
  }
  return "";
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace

std::string Metrics::to_csv() const {
  std::string out = "epoch,train_loss,train_acc\n";
  for (size_t e = 0; e < train_loss.size(); ++e) {
    out += std::to_string(e + 1);
    out += ',';
    out += fmt(train_loss[e]);
    out += ',';
    out += fmt(train_acc[e]);
    out += '\n';
  }
  out += "test_acc=" + fmt(test_acc) + "\n";
  out += "seed=" + std::to_string(seed) + "\n";
  out += "config_hash=" + config_hash + "\n";
  out += "version=" + std::string(kVersion) + "\n";
  return out;
}

GraphDataset PoisonCache::get_or_compute(const std::string& key,
                                         const std::function<GraphDataset()>& compute) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = store_.find(key);
    if (it != store_.end()) return it->second;
  }
  GraphDataset g = compute();  // heavy work outside the lock; duplicate work is benign
  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = store_.emplace(key, std::move(g));
  return it->second;
}

bool early_stop_check(const std::vector<double>& history, int64_t patience, double min_delta) {
  if (history.empty()) throw std::invalid_argument("early_stop_check: empty history");
  if (patience <= 0) return false;
  double best = history[0];
  size_t last_improvement = 0;
  for (size_t e = 1; e < history.size(); ++e) {
    if (history[e] < best - min_delta) {
      best = history[e];
      last_improvement = e;
    } else {
      best = std::min(best, history[e]);
    }
  }
  return static_cast<int64_t>(history.size() - 1 - last_improvement) >= patience;
}

// ---- evasion defense hooks ------------------------------------------------------

namespace {

class EvasionDefenseHook {
 public:
  virtual ~EvasionDefenseHook() = default;
  virtual void before(BlockModel&, GraphDataset&, GraphOps&, int64_t, uint64_t) {}
  virtual Tensor after(BlockModel&, const GraphOps&, const GraphDataset&, Tensor base_loss,
                       const Tensor&, int64_t, uint64_t) {
    return base_loss;
  }
  virtual void finalize(BlockModel&, const GraphDataset&, const TrainConfig&) {}
};

class AdvTrainHook : public EvasionDefenseHook {
 public:
  explicit AdvTrainHook(const TrustConfig& p) {
    cfg_.inner_attack = p.get_str("defense.adv_train.inner_attack", "fgsm");
    cfg_.epsilon = p.get_double("defense.adv_train.epsilon", 0.01);
    cfg_.lambda = p.get_double("defense.adv_train.lambda", 1.0);
    cfg_.pgd.num_iterations = p.get_int("defense.adv_train.num_iterations", 10);
    cfg_.pgd.alpha = p.get_double("defense.adv_train.alpha", cfg_.epsilon / 10.0);
  }

  void before(BlockModel& model, GraphDataset& working, GraphOps& gops, int64_t,
              uint64_t) override {
    // fresh adversarial batch against the live model
    if (cfg_.lambda == 0.0) return;
    if (cfg_.inner_attack == "fgsm") {
      adv_x_ = fgsm(model, gops, working.features, working.labels, working.train_mask,
                    cfg_.epsilon);
    } else {
      EvasionConfig pc = cfg_.pgd;
      pc.epsilon = cfg_.epsilon;
      adv_x_ = pgd_features(model, gops, working.features, working.labels, working.train_mask,
                            pc);
    }
  }

  Tensor after(BlockModel& model, const GraphOps& gops, const GraphDataset& working,
               Tensor base_loss, const Tensor&, int64_t, uint64_t) override {
    if (cfg_.lambda == 0.0) return base_loss;
    Tensor adv_loss = nll_loss(forward(model, gops, adv_x_, false, 0), working.labels,
                               working.train_mask);
    return add(base_loss, scale(adv_loss, cfg_.lambda));
  }

 private:
  AdvTrainConfig cfg_;
  Tensor adv_x_;
};

class GradRegHook : public EvasionDefenseHook {
 public:
  explicit GradRegHook(const TrustConfig& p) {
    cfg_.lambda = p.get_double("defense.grad_reg.lambda", 50.0);
    cfg_.h_step = p.get_double("defense.grad_reg.h_step", 0.01);
  }

  Tensor after(BlockModel& model, const GraphOps& gops, const GraphDataset& working,
               Tensor base_loss, const Tensor& base_logits, int64_t, uint64_t) override {
    return gradient_regularization_loss(model, gops, working.features, working.labels,
                                        working.train_mask, cfg_, &base_loss, &base_logits);
  }

 private:
  GradRegConfig cfg_;
};

class QuantizeHook : public EvasionDefenseHook {
 public:
  explicit QuantizeHook(const TrustConfig& p) {
    levels_ = p.get_int("defense.quantize.num_levels", 2);
    lo_ = p.get_double("defense.quantize.lo", 0.0);
    hi_ = p.get_double("defense.quantize.hi", 1.0);
  }

  void before(BlockModel&, GraphDataset& working, GraphOps&, int64_t, uint64_t) override {
    if (done_) return;
    working.features = quantize_features(working.features, levels_, lo_, hi_);
    done_ = true;
  }

 private:
  int64_t levels_;
  double lo_, hi_;
  bool done_ = false;
};

class AutoencoderHook : public EvasionDefenseHook {
 public:
  AutoencoderHook(const TrustConfig& p, uint64_t run_seed) {
    cfg_.hidden_dim = p.get_int("defense.autoencoder.hidden_dim", 16);
    cfg_.noise_eps = p.get_double("defense.autoencoder.noise_eps", 0.1);
    cfg_.train_epochs = p.get_int("defense.autoencoder.train_epochs", 200);
    cfg_.lambda_ae = p.get_double("defense.autoencoder.lambda_ae", 1.0);
    cfg_.lr = p.get_double("defense.autoencoder.lr", 0.01);
    cfg_.seed = run_seed;
  }

  void before(BlockModel&, GraphDataset& working, GraphOps&, int64_t, uint64_t) override {
    if (done_) return;
    auto [denoiser, purified] = autoencoder_defense(working, cfg_);
    working.features = purified;
    done_ = true;
  }

 private:
  AutoencoderConfig cfg_;
  bool done_ = false;
};

class DistillHook : public EvasionDefenseHook {
 public:
  DistillHook(const TrustConfig& p, uint64_t run_seed) : seed_(run_seed) {
    temperature_ = p.get_double("defense.distill.temperature", 5.0);
  }

  void finalize(BlockModel& model, const GraphDataset& working,
                const TrainConfig& tc) override {
    DistillTrainConfig dc;
    dc.epochs = tc.epochs;
    dc.lr = tc.lr.value_or(0.01);
    dc.seed = seed_ ^ 0x5851f42d4c957f2dULL;
    model = distill(model, working, temperature_, model.blocks, dc);
  }

 private:
  double temperature_;
  uint64_t seed_;
};

std::unique_ptr<EvasionDefenseHook> make_evasion_defense(const std::string& id,
                                                         const TrustConfig& params,
                                                         uint64_t run_seed) {
  if (id == "none") return std::make_unique<EvasionDefenseHook>();
  if (id == "adv_train") return std::make_unique<AdvTrainHook>(params);
  if (id == "grad_reg") return std::make_unique<GradRegHook>(params);
  if (id == "quantize") return std::make_unique<QuantizeHook>(params);
  if (id == "autoencoder") return std::make_unique<AutoencoderHook>(params, run_seed);
  if (id == "distill") return std::make_unique<DistillHook>(params, run_seed);
  throw std::invalid_argument("unknown evasion defense '" + id + "'");
}

GraphDataset apply_poison_attack(const GraphDataset& working, const RunPlan& plan) {
  const TrustConfig& p = plan.params;
  const uint64_t seed = plan.train.seed ^ 0x6a09e667f3bcc908ULL;
  if (plan.poison_attack == "random_poison") {
    return random_poison(working, p.get_double("attack.random_poison.remove_fraction", 0.1),
                         seed);
  }
  if (plan.poison_attack == "clga") {
    ClgaConfig cfg;
    cfg.budget_edges = p.get_int("attack.clga.budget_edges", 0);
    cfg.num_hidden = p.get_int("attack.clga.num_hidden", 256);
    cfg.num_proj_hidden = p.get_int("attack.clga.num_proj_hidden", 32);
    cfg.tau = p.get_double("attack.clga.tau", 0.4);
    cfg.drop_edge_rate_1 = p.get_double("attack.clga.drop_edge_rate_1", 0.3);
    cfg.drop_edge_rate_2 = p.get_double("attack.clga.drop_edge_rate_2", 0.4);
    cfg.drop_feature_rate_1 = p.get_double("attack.clga.drop_feature_rate_1", 0.1);
    cfg.drop_feature_rate_2 = p.get_double("attack.clga.drop_feature_rate_2", 0.0);
    cfg.epochs = p.get_int("attack.clga.epochs", 3000);
    cfg.refresh_epochs = p.get_int("attack.clga.refresh_epochs", 10);
    cfg.weight_decay = p.get_double("attack.clga.weight_decay", 1e-5);
    cfg.learning_rate = p.get_double("attack.clga.learning_rate", 0.01);
    cfg.drop_scheme = p.get_str("attack.clga.drop_scheme", "degree");
    cfg.activation = p.get_str("attack.clga.activation", "prelu");
    cfg.seed = seed;
    return clga(working, cfg);
  }
  if (plan.poison_attack == "qattack") {
    // surrogate predictions stand in for community labels
    const int64_t sur_epochs = p.get_int("attack.qattack.surrogate_epochs", 100);
    BlockModel surrogate = build_model(plan.model_spec, seed ^ 0x9e3779b97f4a7c15ULL);
    GraphOps gops = GraphOps::from(working);
    AdamState adam(surrogate, AdamConfig{plan.train.lr.value_or(0.01)});
    for (int64_t e = 0; e < sur_epochs; ++e) {
      Tape tape;
      Tensor logits = forward(surrogate, gops, working.features, true, seed + e);
      Tensor loss = nll_loss(logits, working.labels, working.train_mask);
      surrogate.zero_grads();
      tape.backward(loss);
      adam.step(surrogate);
    }
    Tensor logits = forward(surrogate, gops, working.features, false, 0);
    std::vector<int32_t> predicted(working.n);
    for (int64_t i = 0; i < working.n; ++i) {
      int32_t arg = 0;
      for (int64_t j = 1; j < logits.cols(); ++j)
        if (logits.at(i, j) > logits.at(i, arg)) arg = static_cast<int32_t>(j);
      predicted[i] = arg;
    }
    QAttackConfig cfg;
    cfg.population_size = p.get_int("attack.qattack.population_size", 20);
    cfg.generations = p.get_int("attack.qattack.generations", 50);
    cfg.rewiring_budget = p.get_int("attack.qattack.rewiring_budget", 10);
    cfg.mutation_rate = p.get_double("attack.qattack.mutation_rate", 0.1);
    cfg.elite_fraction = p.get_double("attack.qattack.elite_fraction", 0.2);
    cfg.seed = seed;
    return qattack(working, predicted, cfg);
  }
  throw std::invalid_argument("unknown poison attack '" + plan.poison_attack + "'");
}

}  // namespace

double evaluate(const BlockModel& model, const GraphDataset& dataset,
                const std::vector<uint8_t>& mask, const Tensor* features_override,
                const GraphOps* gops_override) {
  GraphOps local;
  const GraphOps* gops = gops_override;
  if (!gops) {
    local = GraphOps::from(dataset);
    gops = &local;
  }
  const Tensor& x = features_override ? *features_override : dataset.features;
  Tensor logits = forward(model, *gops, x, false, 0);
  return accuracy(logits, dataset.labels, mask);
}

RunResult train_and_evaluate(const GraphDataset& dataset, const RunPlan& plan,
                             PoisonCache* poison_cache) {
  HookTrace trace;
  try {
    if (plan.train.epochs < 1)
      throw std::invalid_argument("train_and_evaluate: epochs must be >= 1");
    if (!dataset.has_masks())
      throw std::invalid_argument("train_and_evaluate: dataset masks must be set");
    dataset.validate();

    const auto t0 = std::chrono::steady_clock::now();
    GraphDataset working = dataset;

    trace.record(HookEvent::PoisonAttack, plan.poison_attack);
    if (plan.poison_attack != "none") {
      if (poison_cache) {
        const std::string key =
            plan.poison_attack + "|" +
            plan.params.subset({"attack"}).hash() + "|" + std::to_string(plan.train.seed);
        working = poison_cache->get_or_compute(
            key, [&] { return apply_poison_attack(working, plan); });
      } else {
        working = apply_poison_attack(working, plan);
      }
    }

    trace.record(HookEvent::PoisonDefense, plan.poison_defense);
    if (plan.poison_defense == "jaccard") {
      working = jaccard_defense(working,
                                plan.params.get_double("defense.jaccard.threshold", 0.4));
    } else if (plan.poison_defense != "none") {
      throw std::invalid_argument("unknown poison defense '" + plan.poison_defense + "'");
    }

    BlockModel model = build_model(plan.model_spec, plan.train.seed);
    trace.record(HookEvent::ModelInit);

    auto defense = make_evasion_defense(plan.evasion_defense, plan.params, plan.train.seed);
    GraphOps gops = GraphOps::from(working);
    AdamState adam(model, AdamConfig{plan.train.lr.value_or(0.01)});

    Metrics metrics;
    metrics.seed = plan.train.seed;
    metrics.poison_attack = plan.poison_attack;
    metrics.poison_defense = plan.poison_defense;
    metrics.evasion_attack = plan.evasion_attack;
    metrics.evasion_defense = plan.evasion_defense;

    for (int64_t epoch = 1; epoch <= plan.train.epochs; ++epoch) {
      uint64_t state = plan.train.seed ^ (0xbf58476d1ce4e5b9ULL * static_cast<uint64_t>(epoch));
      const uint64_t epoch_seed = splitmix64(state);

      trace.record(HookEvent::EvasionDefenseBefore, plan.evasion_defense);
      defense->before(model, working, gops, epoch, epoch_seed);

      Tape tape;
      Tensor logits = forward(model, gops, working.features, true, epoch_seed);
      Tensor base_loss = nll_loss(logits, working.labels, working.train_mask);
      trace.record(HookEvent::TrainStep);
      metrics.train_loss.push_back(base_loss.item());
      metrics.train_acc.push_back(accuracy(logits, working.labels, working.train_mask));

      trace.record(HookEvent::EvasionDefenseAfter, plan.evasion_defense);
      Tensor final_loss =
          defense->after(model, gops, working, base_loss, logits, epoch, epoch_seed);

      model.zero_grads();
      tape.backward(final_loss);
      adam.step(model);
      trace.record(HookEvent::OptimizerStep);

      if (plan.train.early_stopping_patience &&
          early_stop_check(metrics.train_loss, *plan.train.early_stopping_patience,
                           plan.train.early_stopping_min_delta)) {
        trace.record(HookEvent::EarlyStop, "epoch=" + std::to_string(epoch));
        break;
      }
    }

    defense->finalize(model, working, plan.train);

    // Evasion attack perturbs only the inputs the test evaluation consumes.
    trace.record(HookEvent::EvasionAttack, plan.evasion_attack);
    Tensor x_eval = working.features;
    GraphOps eval_gops = gops;
    const TrustConfig& p = plan.params;
    if (plan.evasion_attack == "fgsm") {
      x_eval = fgsm(model, gops, working.features, working.labels, working.test_mask,
                    p.get_double("attack.fgsm.epsilon", 0.01));
    } else if (plan.evasion_attack == "pgd") {
      EvasionConfig cfg;
      cfg.epsilon = p.get_double("attack.pgd.epsilon", 0.005);
      cfg.num_iterations = p.get_int("attack.pgd.num_iterations", 10);
      cfg.alpha = p.get_double("attack.pgd.alpha", 0.0005);
      x_eval = pgd_features(model, gops, working.features, working.labels, working.test_mask,
                            cfg);
    } else if (plan.evasion_attack == "pgd_structure") {
      EvasionConfig cfg;
      cfg.num_iterations = p.get_int("attack.pgd_structure.num_iterations", 50);
      cfg.alpha = p.get_double("attack.pgd_structure.alpha", 0.1);
      cfg.num_samples = p.get_int("attack.pgd_structure.num_samples", 20);
      cfg.seed = plan.train.seed ^ 0x3c6ef372fe94f82bULL;
      const int64_t budget = p.get_int("attack.pgd_structure.budget", 10);
      auto res = pgd_structure(model, working, working.test_mask, budget, cfg);
      eval_gops = GraphOps::from(working.with_edges(res.edges));
    } else if (plan.evasion_attack != "none") {
      throw std::invalid_argument("unknown evasion attack '" + plan.evasion_attack + "'");
    }

    trace.record(HookEvent::PrivacyAttackSlot, "none");

    Tensor logits_eval = forward(model, eval_gops, x_eval, false, 0);
    metrics.test_acc = accuracy(logits_eval, working.labels, working.test_mask);
    trace.record(HookEvent::Evaluate);

    metrics.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();

    RunResult result;
    result.model = std::move(model);
    result.metrics = std::move(metrics);
    result.trace = std::move(trace);
    return result;
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(e.what(), trace);
  }
}

}  // namespace gnnbench
