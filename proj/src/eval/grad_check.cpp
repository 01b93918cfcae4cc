#include "ssvp/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ssvp/io.hpp"

namespace ssvp {

namespace {

std::string module_of(const std::string& name) {
  if (name.rfind("hsvs.", 0) == 0) return "hsvs";
  if (name.rfind("gate.", 0) == 0) return "vtam";
  return "vcpg";
}

struct Batch {
  std::vector<FeatureBundle> bundles;
  std::vector<Tensor> eps;
  std::vector<Tensor> anchors;  // t_init at the expansion point
};

Var batch_loss(Tape& t, const SsvpModel& model, const Batch& batch, const TrainConfig& cfg) {
  Var total;
  const double inv_b = 1.0 / static_cast<double>(batch.bundles.size());
  for (std::size_t i = 0; i < batch.bundles.size(); ++i) {
    const ForwardResult fwd = forward_pipeline(t, batch.bundles[i], model, batch.eps[i], cfg.scoring());
    const Tensor* anchor = batch.anchors.empty() ? nullptr : &batch.anchors[i];
    const Var w = t.scale(sample_losses(t, fwd, batch.bundles[i], model, cfg, anchor).total, inv_b);
    total = total ? t.add(total, w) : w;
  }
  return total;
}

double loss_value(const SsvpModel& model, const Batch& batch, const TrainConfig& cfg) {
  Tape t;
  return batch_loss(t, model, batch, cfg).item();
}

}  // namespace

ModelConfig grad_check_model_config() {
  ModelConfig c;
  c.d_clip = 8;
  c.d_dino = 6;
  c.layers = 2;
  c.d_head = 4;
  c.d_hidden = 8;
  c.d_z = 4;
  c.n_z = 2;
  c.d_k = 4;
  c.vae_hidden = 6;
  c.gate_hidden = 4;
  c.prompt_bg_len = 2;
  c.prompt_state_len = 2;
  c.n_normal = 2;
  c.n_abnormal = 2;
  c.text_hidden = 6;
  return c;
}

SsvpModel grad_check_model(std::uint64_t seed) {
  SsvpModel model(grad_check_model_config(), seed);
  Rng rng = seeded_stream(seed, 3);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& p : model.parameters()) {
    for (auto& v : p.mutable_value().storage()) v += n(rng);
  }
  return model;
}

std::vector<FeatureBundle> grad_check_batch(std::uint64_t seed) {
  const ModelConfig m = grad_check_model_config();
  io::SynthSpec spec;
  spec.n_categories = 1;
  spec.samples_per_split = 1;
  spec.anomaly_rate = 0.5;
  spec.grid = {3, 3};
  spec.d_clip = m.d_clip;
  spec.d_dino = m.d_dino;
  spec.layers = m.layers;
  spec.region_size = {1, 2};
  spec.seed = seed;
  io::SynthDataset ds = io::gen_synthetic(spec);
  return {ds.train.front(), ds.test.front()};
}

TrainConfig grad_check_train_config() {
  TrainConfig c;
  c.xi = 1.0;  // keeps the hinge of the margin loss open
  c.per_layer_focal = true;
  return c;
}

double gradient_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  diff = std::sqrt(diff);
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  return scale < 1e-8 ? diff : diff / scale;
}

GradCheckResult grad_check(const GradCheckOptions& opts) {
  SsvpModel model = grad_check_model(opts.seed);
  const TrainConfig cfg = grad_check_train_config();
  Batch batch;
  batch.bundles = grad_check_batch(opts.seed);
  Rng rng = seeded_stream(opts.seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < batch.bundles.size(); ++i) {
    Tensor e({model.config().d_z});
    for (auto& v : e.storage()) v = normal(rng);
    batch.eps.push_back(std::move(e));
  }

  for (std::size_t i = 0; i < batch.bundles.size(); ++i) {
    Tape t;
    const auto fwd = forward_pipeline(t, batch.bundles[i], model, batch.eps[i], cfg.scoring());
    batch.anchors.push_back(fwd.aux.t_init.value());
  }
  {
    Tape t;
    const Var loss = batch_loss(t, model, batch, cfg);
    t.backward(loss);
  }

  GradCheckResult result;
  for (auto& p : model.parameters()) {
    std::vector<double> analytic = p.has_grad() ? p.grad().storage()
                                                : std::vector<double>(p.value().size(), 0.0);
    std::vector<double> numeric(analytic.size());
    auto& values = p.mutable_value().storage();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + opts.h;
      const double up = loss_value(model, batch, cfg);
      values[i] = orig - opts.h;
      const double down = loss_value(model, batch, cfg);
      values[i] = orig;
      numeric[i] = (up - down) / (2.0 * opts.h);
    }
    TensorGradError e{p.name(), module_of(p.name()), values.size(), gradient_error(analytic, numeric)};
    result.worst[e.module] = std::max(result.worst[e.module], e.error);
    result.worst_overall = std::max(result.worst_overall, e.error);
    result.tensors.push_back(std::move(e));
  }
  result.passed = result.worst_overall < opts.tol;
  return result;
}

}  // namespace ssvp
