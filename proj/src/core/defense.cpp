#include "core/defense.hpp"

#include <cmath>
#include <stdexcept>

#include "core/rng.hpp"

namespace gnnbench {

GraphDataset jaccard_defense(const GraphDataset& dataset, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("jaccard_defense: threshold must lie in [0,1]");
  const int64_t d = dataset.feature_dim();
  auto row = [&](int32_t i) {
    return std::span<const double>(dataset.features.data().data() + i * d, d);
  };
  std::vector<Edge> kept;
  kept.reserve(dataset.edges.size());
  for (const auto& e : dataset.edges)
    if (jaccard_index(row(e.first), row(e.second)) >= threshold) kept.push_back(e);
  return dataset.with_edges(std::move(kept));
}

Tensor adversarial_training_loss(const BlockModel& model, const GraphOps& gops, const Tensor& x,
                                 const std::vector<int32_t>& y, const std::vector<uint8_t>& mask,
                                 const AdvTrainConfig& cfg, const Tensor* base_loss) {
  Tensor base;
  if (base_loss) {
    base = *base_loss;
  } else {
    base = nll_loss(forward(model, gops, x, false, 0), y, mask);
  }
  if (cfg.lambda == 0.0) return base;

  Tensor adv_x;
  if (cfg.inner_attack == "fgsm") {
    adv_x = fgsm(model, gops, x, y, mask, cfg.epsilon);
  } else if (cfg.inner_attack == "pgd") {
    EvasionConfig pc = cfg.pgd;
    pc.epsilon = cfg.epsilon;
    adv_x = pgd_features(model, gops, x, y, mask, pc);
  } else {
    throw std::invalid_argument("adversarial_training_loss: unknown inner attack '" +
                                cfg.inner_attack + "'");
  }
  Tensor adv_loss = nll_loss(forward(model, gops, adv_x, false, 0), y, mask);
  return add(base, scale(adv_loss, cfg.lambda));
}

Tensor gradient_regularization_loss(const BlockModel& model, const GraphOps& gops,
                                    const Tensor& x, const std::vector<int32_t>& y,
                                    const std::vector<uint8_t>& mask, const GradRegConfig& cfg,
                                    const Tensor* base_loss, const Tensor* base_logits) {
  if (cfg.h_step <= 0) throw std::invalid_argument("gradient_regularization_loss: h_step > 0");
  Tensor logits = base_logits ? *base_logits : forward(model, gops, x, false, 0);
  Tensor base = base_loss ? *base_loss : nll_loss(logits, y, mask);
  if (cfg.lambda == 0.0) return base;

  Tensor g = input_gradient(model, gops, x, y, mask);
  double norm = 0.0;
  for (double v : g.data()) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) return base;  // penalty defined as zero

  Tensor z = add(detach(x), scale(g, cfg.h_step / norm));
  Tensor fz = forward(model, gops, z, false, 0);
  Tensor diff = sub(select_rows(fz, mask), select_rows(logits, mask));
  int64_t masked = 0;
  for (uint8_t b : mask) masked += b;
  const double n_outputs = static_cast<double>(masked * logits.cols());
  Tensor penalty = scale(sum(mul(diff, diff)), 1.0 / (cfg.h_step * cfg.h_step * n_outputs));
  return add(base, scale(penalty, cfg.lambda));
}

BlockModel distill(const BlockModel& teacher, const GraphDataset& dataset, double temperature,
                   const std::vector<BlockSpec>& student_spec, const DistillTrainConfig& cfg) {
  if (temperature <= 0) throw std::invalid_argument("distill: temperature must be positive");
  if (!dataset.has_masks()) throw std::invalid_argument("distill: dataset masks must be set");

  GraphOps gops = GraphOps::from(dataset);
  Tensor soft_targets;
  {
    Tensor raw = forward_raw_scores(teacher, gops, dataset.features, false, 0);
    soft_targets = detach(softmax_rows(raw, temperature));
  }

  BlockModel student = build_model(student_spec, cfg.seed);
  AdamState adam(student, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  int64_t masked = 0;
  for (uint8_t b : dataset.train_mask) masked += b;
  Tensor targets_masked = detach(select_rows(soft_targets, dataset.train_mask));

  for (int64_t e = 0; e < cfg.epochs; ++e) {
    Tape tape;
    Tensor raw = forward_raw_scores(student, gops, dataset.features, true, cfg.seed + e);
    Tensor logp = log_softmax(scale(raw, 1.0 / temperature));
    Tensor picked = select_rows(logp, dataset.train_mask);
    Tensor loss = scale(sum(mul(picked, targets_masked)), -1.0 / static_cast<double>(masked));
    student.zero_grads();
    tape.backward(loss);
    adam.step(student);
  }
  return student;
}

Tensor quantize_features(const Tensor& x, int64_t num_levels, double lo, double hi) {
  if (num_levels < 2) throw std::invalid_argument("quantize_features: num_levels must be >= 2");
  if (!(lo < hi)) throw std::invalid_argument("quantize_features: need lo < hi");
  const double step = (hi - lo) / static_cast<double>(num_levels - 1);
  Tensor out = x.deep_copy();
  out.set_requires_grad(false);
  for (auto& v : out.mutable_data()) {
    const double c = std::clamp(v, lo, hi);
    const double t = (c - lo) / step;
    double k = std::floor(t);
    if (t - k > 0.5) k += 1.0;  // exact ties keep the lower grid point
    k = std::min(k, static_cast<double>(num_levels - 1));
    v = lo + k * step;
  }
  return out;
}

Tensor Denoiser::apply(const Tensor& x) const {
  Tensor h = relu(add_rowwise(matmul(x, w1), b1));
  return add_rowwise(matmul(h, w2), b2);
}

std::pair<Denoiser, Tensor> autoencoder_defense(const GraphDataset& dataset,
                                                const AutoencoderConfig& cfg) {
  if (cfg.hidden_dim < 1)
    throw std::invalid_argument("autoencoder_defense: hidden_dim must be >= 1");
  const int64_t d = dataset.feature_dim();
  Rng rng(cfg.seed);

  Denoiser ae;
  auto glorot = [&rng](int64_t in, int64_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng.uniform(-limit, limit);
    Tensor t = Tensor::from_data({in, out}, std::move(w));
    t.set_requires_grad(true);
    return t;
  };
  ae.w1 = glorot(d, cfg.hidden_dim);
  ae.b1 = Tensor::zeros({cfg.hidden_dim}, true);
  ae.w2 = glorot(cfg.hidden_dim, d);
  ae.b2 = Tensor::zeros({d}, true);

  std::vector<uint8_t> rows =
      dataset.has_masks() ? dataset.train_mask : std::vector<uint8_t>(dataset.n, 1);
  Tensor clean = detach(select_rows(dataset.features, rows));

  std::map<std::string, Tensor> params{
      {"w1", ae.w1}, {"b1", ae.b1}, {"w2", ae.w2}, {"b2", ae.b2}};
  AdamState adam(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  Rng noise_rng = rng.fork(7);

  for (int64_t e = 0; e < cfg.train_epochs; ++e) {
    Tensor noisy = clean.deep_copy();
    if (cfg.noise_eps > 0.0) {
      auto buf = noisy.mutable_data();
      for (auto& v : buf) v += cfg.noise_eps * noise_rng.normal();
    }
    Tape tape;
    Tensor recon = ae.apply(noisy);
    Tensor loss =
        scale(l1_norm(sub(recon, clean)), cfg.lambda_ae / static_cast<double>(clean.numel()));
    for (auto& [k, v] : params) v.zero_grad();
    tape.backward(loss);
    adam.step(params);
  }

  Tensor purified = detach(ae.apply(dataset.features));
  return {ae, purified};
}

}  // namespace gnnbench
