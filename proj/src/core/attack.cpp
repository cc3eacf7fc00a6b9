#include "core/attack.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "core/rng.hpp"

namespace gnnbench {

namespace {

/// Suppresses gradient accumulation into model parameters while an attack
/// differentiates with respect to inputs.
class NoParamGrad {
 public:
  explicit NoParamGrad(const std::map<std::string, Tensor>& params) {
    for (const auto& [name, p] : params) {
      if (p.requires_grad()) {
        handles_.push_back(p);
        handles_.back().set_requires_grad(false);
      }
    }
  }
  ~NoParamGrad() {
    for (auto& h : handles_) h.set_requires_grad(true);
  }
  NoParamGrad(const NoParamGrad&) = delete;
  NoParamGrad& operator=(const NoParamGrad&) = delete;

 private:
  std::vector<Tensor> handles_;
};

Tensor grad_to_tensor(const Tensor& leaf) {
  if (!leaf.has_grad()) return Tensor::zeros(leaf.shape());
  auto g = leaf.grad();
  return Tensor::from_data(leaf.shape(), std::vector<double>(g.begin(), g.end()));
}

}  // namespace

Tensor input_gradient(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                      const std::vector<int32_t>& y, const std::vector<uint8_t>& mask) {
  NoParamGrad guard(model.params);
  Tensor leaf = detach(x);
  leaf.set_requires_grad(true);
  {
    Tape tape;
    Tensor logits = forward(model, gops, leaf, false, 0);
    Tensor loss = nll_loss(logits, y, mask);
    tape.backward(loss);
  }
  return grad_to_tensor(leaf);
}

Tensor fgsm(const BlockModel& model, const GraphOps& gops, const Tensor& x,
            const std::vector<int32_t>& y, const std::vector<uint8_t>& mask, double epsilon) {
  if (epsilon < 0) throw std::invalid_argument("fgsm: epsilon must be >= 0");
  Tensor g = input_gradient(model, gops, x, y, mask);
  return add(detach(x), scale(sign(g), epsilon));
}

Tensor pgd_features(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                    const std::vector<int32_t>& y, const std::vector<uint8_t>& mask,
                    const EvasionConfig& cfg) {
  if (cfg.epsilon < 0) throw std::invalid_argument("pgd_features: epsilon must be >= 0");
  if (cfg.num_iterations < 1) throw std::invalid_argument("pgd_features: num_iterations >= 1");
  if (cfg.alpha <= 0) throw std::invalid_argument("pgd_features: alpha must be > 0");
  Tensor x0 = detach(x);
  Tensor lo = add(x0, Tensor::full(x.shape(), -cfg.epsilon));
  Tensor hi = add(x0, Tensor::full(x.shape(), cfg.epsilon));
  Tensor cur = x0;
  for (int64_t it = 0; it < cfg.num_iterations; ++it) {
    Tensor g = input_gradient(model, gops, cur, y, mask);
    cur = clip(add(cur, scale(sign(g), cfg.alpha)), lo, hi);
  }
  return cur;
}

// ---- PGD on the graph structure ------------------------------------------------

namespace {

/// Projects s onto { 0 <= s_i <= 1, sum(s) <= budget } (box + simplex cap).
void project_budget(std::vector<double>& s, double budget) {
  double total = 0.0, hi = 0.0;
  for (auto& v : s) {
    v = std::clamp(v, 0.0, 1.0);
    total += v;
    hi = std::max(hi, v);
  }
  if (total <= budget) return;
  double lo = 0.0;
  for (int iter = 0; iter < 64; ++iter) {
    const double mu = 0.5 * (lo + hi);
    double acc = 0.0;
    for (double v : s) acc += std::clamp(v - mu, 0.0, 1.0);
    if (acc > budget)
      lo = mu;
    else
      hi = mu;
  }
  for (auto& v : s) v = std::clamp(v - hi, 0.0, 1.0);
}

double attack_loss_on_graph(const BlockModel& model, const GraphDataset& g,
                            const std::vector<uint8_t>& mask) {
  GraphOps gops = GraphOps::from(g);
  Tensor logits = forward(model, gops, g.features, false, 0);
  return nll_loss(logits, g.labels, mask).item();
}

}  // namespace

StructureAttackResult pgd_structure(const BlockModel& model, const GraphDataset& dataset,
                                    const std::vector<uint8_t>& target_mask, int64_t budget,
                                    const EvasionConfig& cfg) {
  if (budget < 0) throw std::invalid_argument("pgd_structure: budget must be >= 0");
  StructureAttackResult result;
  result.edges = dataset.edges;
  if (budget == 0) return result;

  const int64_t n = dataset.n;
  std::vector<std::pair<int32_t, int32_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (int32_t u = 0; u < n; ++u)
    for (int32_t v = u + 1; v < n; ++v) pairs.emplace_back(u, v);

  Tensor a = dense_adjacency(dataset);
  Tensor flip_dir = Tensor::zeros({n, n});  // 1-2A: +1 where edge absent, -1 where present
  for (int64_t i = 0; i < n * n; ++i)
    flip_dir.mutable_data()[i] = 1.0 - 2.0 * a.data()[i];
  for (int64_t i = 0; i < n; ++i) flip_dir.set(i, i, 0.0);  // keep the diagonal clean

  std::vector<double> s(pairs.size(), 0.0);
  NoParamGrad guard(model.params);
  for (int64_t it = 0; it < cfg.num_iterations; ++it) {
    Tensor smat = Tensor::zeros({n, n});
    for (size_t p = 0; p < pairs.size(); ++p) {
      smat.set(pairs[p].first, pairs[p].second, s[p]);
      smat.set(pairs[p].second, pairs[p].first, s[p]);
    }
    smat.set_requires_grad(true);
    {
      Tape tape;
      Tensor relaxed = add(a, mul(flip_dir, smat));
      GraphOps gops = GraphOps::from_dense(relaxed);
      Tensor logits = forward(model, gops, dataset.features, false, 0);
      Tensor loss = nll_loss(logits, dataset.labels, target_mask);
      tape.backward(loss);
    }
    auto g = smat.grad();
    for (size_t p = 0; p < pairs.size(); ++p) {
      const auto& [u, v] = pairs[p];
      s[p] += cfg.alpha * (g[u * n + v] + g[v * n + u]);
    }
    project_budget(s, static_cast<double>(budget));
  }

  // Random discretization: Bernoulli draws with expected toggles <= budget,
  // keep the feasible draw that maximizes the attack loss.
  Rng rng(cfg.seed);
  double best_loss = -1e300;
  std::vector<size_t> best_toggles;
  bool any_feasible = false;
  for (int64_t d = 0; d < cfg.num_samples; ++d) {
    std::vector<size_t> toggles;
    for (size_t p = 0; p < pairs.size(); ++p)
      if (rng.uniform() < s[p]) toggles.push_back(p);
    if (static_cast<int64_t>(toggles.size()) > budget) continue;
    std::vector<Edge> edges = dataset.edges;
    auto g2 = dataset.with_edges([&] {
      std::set<Edge> es(edges.begin(), edges.end());
      for (size_t p : toggles) {
        Edge e{pairs[p].first, pairs[p].second};
        if (es.count(e))
          es.erase(e);
        else
          es.insert(e);
      }
      return std::vector<Edge>(es.begin(), es.end());
    }());
    const double loss = attack_loss_on_graph(model, g2, target_mask);
    if (!any_feasible || loss > best_loss) {
      any_feasible = true;
      best_loss = loss;
      best_toggles = std::move(toggles);
    }
  }

  if (!any_feasible) {
    // best effort: take the strongest relaxed entries up to the budget
    result.feasible = false;
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t x, size_t y) { return s[x] > s[y]; });
    for (size_t i = 0; i < order.size() && static_cast<int64_t>(best_toggles.size()) < budget;
         ++i)
      if (s[order[i]] > 0) best_toggles.push_back(order[i]);
  }

  std::set<Edge> es(dataset.edges.begin(), dataset.edges.end());
  for (size_t p : best_toggles) {
    Edge e{pairs[p].first, pairs[p].second};
    if (es.count(e))
      es.erase(e);
    else
      es.insert(e);
  }
  result.edges.assign(es.begin(), es.end());
  result.toggles = static_cast<int64_t>(best_toggles.size());
  return result;
}

GraphDataset random_poison(const GraphDataset& dataset, double remove_fraction, uint64_t seed) {
  if (remove_fraction < 0.0 || remove_fraction > 1.0)
    throw std::invalid_argument("random_poison: remove_fraction must lie in [0,1]");
  const int64_t remove =
      static_cast<int64_t>(std::floor(remove_fraction * static_cast<double>(dataset.edges.size())));
  if (remove == 0) return dataset;
  std::vector<size_t> order(dataset.edges.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Edge> kept;
  kept.reserve(dataset.edges.size() - remove);
  std::vector<uint8_t> removed(dataset.edges.size(), 0);
  for (int64_t i = 0; i < remove; ++i) removed[order[i]] = 1;
  for (size_t i = 0; i < dataset.edges.size(); ++i)
    if (!removed[i]) kept.push_back(dataset.edges[i]);
  return dataset.with_edges(std::move(kept));
}

// ---- CLGA ----------------------------------------------------------------------

namespace clga_detail {

Encoder Encoder::make(int64_t in_dim, const ClgaConfig& cfg, uint64_t seed) {
  Encoder enc;
  enc.use_prelu = cfg.activation == "prelu";
  if (!enc.use_prelu && cfg.activation != "relu")
    throw std::invalid_argument("clga: unknown activation '" + cfg.activation + "'");
  Rng rng(seed);
  auto glorot = [&rng](int64_t in, int64_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng.uniform(-limit, limit);
    Tensor t = Tensor::from_data({in, out}, std::move(w));
    t.set_requires_grad(true);
    return t;
  };
  enc.params.emplace("w1", glorot(in_dim, cfg.num_hidden));
  if (enc.use_prelu) enc.params.emplace("slope", Tensor::scalar(0.25, true));
  enc.params.emplace("p1.weight", glorot(cfg.num_hidden, cfg.num_proj_hidden));
  enc.params.emplace("p1.bias", Tensor::zeros({cfg.num_proj_hidden}, true));
  enc.params.emplace("p2.weight", glorot(cfg.num_proj_hidden, cfg.num_hidden));
  enc.params.emplace("p2.bias", Tensor::zeros({cfg.num_hidden}, true));
  return enc;
}

Tensor Encoder::embed(const Tensor& a_hat, const Tensor& x) const {
  Tensor h = matmul(a_hat, matmul(x, params.at("w1")));
  h = use_prelu ? prelu(h, params.at("slope")) : relu(h);
  Tensor p = relu(add_rowwise(matmul(h, params.at("p1.weight")), params.at("p1.bias")));
  return add_rowwise(matmul(p, params.at("p2.weight")), params.at("p2.bias"));
}

namespace {

/// One direction of the GRACE objective: positives on the diagonal of the
/// cross-view similarity, negatives from both the cross-view row and the
/// intra-view row (minus the self term).
Tensor semi_loss(const Tensor& za, const Tensor& zb, double tau) {
  Tensor cross = gnnbench::exp(scale(matmul(za, transpose(zb)), 1.0 / tau));
  Tensor intra = gnnbench::exp(scale(matmul(za, transpose(za)), 1.0 / tau));
  Tensor denom = sub(add(sum_rows(cross), sum_rows(intra)), diag(intra));
  return mean(sub(gnnbench::log(denom), gnnbench::log(diag(cross))));
}

}  // namespace

Tensor contrastive_loss(const Encoder& enc, const Tensor& a_hat_1, const Tensor& x1,
                        const Tensor& a_hat_2, const Tensor& x2, double tau) {
  if (tau <= 0) throw std::invalid_argument("clga: tau must be positive");
  Tensor z1 = rows_l2_normalize(enc.embed(a_hat_1, x1));
  Tensor z2 = rows_l2_normalize(enc.embed(a_hat_2, x2));
  return scale(add(semi_loss(z1, z2, tau), semi_loss(z2, z1, tau)), 0.5);
}

double loss_for_adjacency(const Encoder& enc, const Tensor& a_dense, const Tensor& keep_mask_1,
                          const Tensor& x1, const Tensor& keep_mask_2, const Tensor& x2,
                          double tau) {
  Tensor a1 = normalize_adjacency_tensor(mul(a_dense, keep_mask_1));
  Tensor a2 = normalize_adjacency_tensor(mul(a_dense, keep_mask_2));
  return contrastive_loss(enc, a1, x1, a2, x2, tau).item();
}

Tensor adjacency_gradient(const Encoder& enc, const Tensor& a_dense, const Tensor& keep_mask_1,
                          const Tensor& x1, const Tensor& keep_mask_2, const Tensor& x2,
                          double tau) {
  NoParamGrad guard(enc.params);
  Tensor leaf = detach(a_dense);
  leaf.set_requires_grad(true);
  {
    Tape tape;
    Tensor a1 = normalize_adjacency_tensor(mul(leaf, keep_mask_1));
    Tensor a2 = normalize_adjacency_tensor(mul(leaf, keep_mask_2));
    Tensor loss = contrastive_loss(enc, a1, x1, a2, x2, tau);
    tape.backward(loss);
  }
  return grad_to_tensor(leaf);
}

}  // namespace clga_detail

namespace {

/// Dense mask that zeroes the view's dropped edges and leaves every other
/// entry (kept edges and non-edges) passing through.
Tensor view_keep_mask(const GraphDataset& base, const GraphDataset& view) {
  Tensor m = Tensor::full({base.n, base.n}, 1.0);
  std::set<Edge> kept(view.edges.begin(), view.edges.end());
  for (const auto& e : base.edges) {
    if (!kept.count(e)) {
      m.set(e.first, e.second, 0.0);
      m.set(e.second, e.first, 0.0);
    }
  }
  return m;
}

struct ClgaViews {
  GraphDataset v1, v2;
};

ClgaViews sample_views(const GraphDataset& g, const ClgaConfig& cfg, uint64_t seed) {
  ClgaViews views;
  Rng rng(seed);
  views.v1 = augment_view(g, cfg.drop_edge_rate_1, cfg.drop_feature_rate_1, cfg.drop_scheme,
                          rng.next_u64());
  views.v2 = augment_view(g, cfg.drop_edge_rate_2, cfg.drop_feature_rate_2, cfg.drop_scheme,
                          rng.next_u64());
  return views;
}

void clga_train_epochs(clga_detail::Encoder& enc, AdamState& adam, const GraphDataset& g,
                       const ClgaConfig& cfg, int64_t epochs, uint64_t seed_base) {
  for (int64_t e = 0; e < epochs; ++e) {
    uint64_t state = seed_base ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(e + 1));
    ClgaViews views = sample_views(g, cfg, splitmix64(state));
    Tensor a1 = gcn_normalize(views.v1).values;
    Tensor a2 = gcn_normalize(views.v2).values;
    Tape tape;
    Tensor loss =
        clga_detail::contrastive_loss(enc, a1, views.v1.features, a2, views.v2.features, cfg.tau);
    for (auto& [k, v] : enc.params) v.zero_grad();
    tape.backward(loss);
    adam.step(enc.params);
  }
}

}  // namespace

GraphDataset clga(const GraphDataset& dataset, const ClgaConfig& cfg, ClgaReport* report) {
  int64_t budget = cfg.budget_edges;
  if (budget == 0) budget = std::max<int64_t>(1, static_cast<int64_t>(dataset.edges.size()) / 20);
  if (budget < 1) throw std::invalid_argument("clga: budget_edges must be >= 1");

  Rng master(cfg.seed);
  clga_detail::Encoder enc =
      clga_detail::Encoder::make(dataset.feature_dim(), cfg, master.fork(1).next_u64());
  AdamState adam(enc.params,
                 AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  GraphDataset cur = dataset;
  clga_train_epochs(enc, adam, cur, cfg, cfg.epochs, master.fork(2).next_u64());

  std::set<Edge> toggled;
  for (int64_t t = 0; t < budget; ++t) {
    if (t > 0 && cfg.refresh_epochs > 0)
      clga_train_epochs(enc, adam, cur, cfg, cfg.refresh_epochs,
                        master.fork(1000 + t).next_u64());

    ClgaViews views = sample_views(cur, cfg, master.fork(5000 + t).next_u64());
    Tensor m1 = view_keep_mask(cur, views.v1);
    Tensor m2 = view_keep_mask(cur, views.v2);
    Tensor a = dense_adjacency(cur);
    Tensor grad = clga_detail::adjacency_gradient(enc, a, m1, views.v1.features, m2,
                                                  views.v2.features, cfg.tau);

    // eligible flips: add where the gradient pushes an absent edge up,
    // remove where it pushes a present edge down; one toggle per pair
    const int64_t n = cur.n;
    double best_score = 0.0;
    Edge best{-1, -1};
    bool best_add = false;
    for (int32_t u = 0; u < n; ++u)
      for (int32_t v = u + 1; v < n; ++v) {
        if (toggled.count({u, v})) continue;
        const double g = grad.at(u, v) + grad.at(v, u);
        const bool present = a.at(u, v) != 0.0;
        double score = 0.0;
        bool add_edge = false;
        if (!present && g > 0) {
          score = g;
          add_edge = true;
        } else if (present && g < 0) {
          score = -g;
        } else {
          continue;
        }
        if (best.first < 0 || score > best_score) {
          best_score = score;
          best = {u, v};
          best_add = add_edge;
        }
      }
    if (best.first < 0)
      throw std::runtime_error("clga: no eligible flips remain (budget too large)");

    if (t == 0 && report) {
      report->encoder = enc;
      report->adjacency = a;
      report->keep_mask_1 = m1;
      report->keep_mask_2 = m2;
      report->view_features_1 = views.v1.features;
      report->view_features_2 = views.v2.features;
      report->gradient = grad;
      report->first_flip = best;
      report->first_flip_added = best_add;
    }

    std::vector<Edge> edges = cur.edges;
    if (best_add) {
      edges.push_back(best);
    } else {
      edges.erase(std::remove(edges.begin(), edges.end(), best), edges.end());
    }
    cur = cur.with_edges(std::move(edges));
    toggled.insert(best);
  }
  return cur;
}

// ---- Q-Attack -------------------------------------------------------------------

namespace {

struct Rewire {
  Edge del{-1, -1};
  Edge add{-1, -1};
  bool active = false;
};

using Plan = std::vector<Rewire>;

std::vector<Edge> apply_plan(const GraphDataset& g, const Plan& plan) {
  std::set<Edge> edges(g.edges.begin(), g.edges.end());
  for (const auto& r : plan) {
    if (!r.active) continue;
    if (!edges.count(r.del) || edges.count(r.add)) continue;  // invalidated; skip whole gene
    edges.erase(r.del);
    edges.insert(r.add);
  }
  return {edges.begin(), edges.end()};
}

}  // namespace

GraphDataset qattack(const GraphDataset& dataset, const std::vector<int32_t>& predicted_labels,
                     const QAttackConfig& cfg) {
  if (static_cast<int64_t>(predicted_labels.size()) != dataset.n)
    throw std::invalid_argument("qattack: predicted labels must cover all nodes");
  if (cfg.rewiring_budget < 0) throw std::invalid_argument("qattack: negative rewiring budget");
  if (cfg.rewiring_budget == 0) return dataset;
  if (cfg.population_size < 2 || cfg.generations < 1)
    throw std::invalid_argument("qattack: population_size >= 2 and generations >= 1 required");

  std::vector<Edge> intra;
  for (const auto& e : dataset.edges)
    if (predicted_labels[e.first] == predicted_labels[e.second]) intra.push_back(e);
  if (intra.empty())
    throw std::runtime_error("qattack: no deletable intra-community edge");

  std::vector<Edge> inter_nonedges;
  for (int32_t u = 0; u < dataset.n; ++u)
    for (int32_t v = u + 1; v < dataset.n; ++v)
      if (predicted_labels[u] != predicted_labels[v] && !dataset.has_edge(u, v))
        inter_nonedges.emplace_back(u, v);

  Rng rng(cfg.seed);
  auto random_gene = [&]() {
    Rewire r;
    if (inter_nonedges.empty()) return r;  // stays inactive
    r.del = intra[static_cast<size_t>(rng.uniform_int(0, intra.size() - 1))];
    r.add = inter_nonedges[static_cast<size_t>(rng.uniform_int(0, inter_nonedges.size() - 1))];
    r.active = true;
    return r;
  };

  const int64_t budget = cfg.rewiring_budget;
  std::vector<Plan> population;
  population.push_back(Plan(budget));  // identity plan anchors the elitism guarantee
  while (static_cast<int64_t>(population.size()) < cfg.population_size) {
    Plan p(budget);
    for (auto& gene : p) gene = random_gene();
    population.push_back(std::move(p));
  }

  auto fitness = [&](const Plan& p) {
    GraphDataset g2 = dataset.with_edges(apply_plan(dataset, p));
    return -modularity(g2, predicted_labels);
  };

  std::vector<double> fit(population.size());
  for (size_t i = 0; i < population.size(); ++i) fit[i] = fitness(population[i]);

  const int64_t elites =
      std::max<int64_t>(1, std::llround(cfg.elite_fraction * static_cast<double>(
                                                                 cfg.population_size)));
  for (int64_t gen = 0; gen < cfg.generations; ++gen) {
    std::vector<size_t> order(population.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return fit[a] > fit[b];
    });

    std::vector<Plan> next;
    std::vector<double> next_fit;
    for (int64_t i = 0; i < elites; ++i) {
      next.push_back(population[order[i]]);
      next_fit.push_back(fit[order[i]]);
    }
    auto tournament = [&]() -> const Plan& {
      size_t best = static_cast<size_t>(rng.uniform_int(0, population.size() - 1));
      for (int k = 0; k < 2; ++k) {
        size_t cand = static_cast<size_t>(rng.uniform_int(0, population.size() - 1));
        if (fit[cand] > fit[best]) best = cand;
      }
      return population[best];
    };
    while (static_cast<int64_t>(next.size()) < cfg.population_size) {
      const Plan& pa = tournament();
      const Plan& pb = tournament();
      Plan child(budget);
      const int64_t cut = rng.uniform_int(0, budget);
      for (int64_t i = 0; i < budget; ++i) child[i] = i < cut ? pa[i] : pb[i];
      for (auto& gene : child)
        if (rng.uniform() < cfg.mutation_rate) gene = random_gene();
      next_fit.push_back(fitness(child));
      next.push_back(std::move(child));
    }
    population = std::move(next);
    fit = std::move(next_fit);
  }

  size_t best = 0;
  for (size_t i = 1; i < population.size(); ++i)
    if (fit[i] > fit[best]) best = i;
  return dataset.with_edges(apply_plan(dataset, population[best]));
}

}  // namespace gnnbench
