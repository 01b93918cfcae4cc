#include "ssvp/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ssvp/numcore/adam.hpp"

namespace ssvp {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("train config: ") + what + " must be > 0");
  };
  positive(static_cast<double>(epochs), "epochs");
  positive(static_cast<double>(batch_size), "batch_size");
  positive(lr_prompts, "lr_prompts");
  positive(lr_other, "lr_other");
  positive(tau, "tau");
  positive(static_cast<double>(topk), "topk");
  positive(grad_clip, "grad_clip");
  if (beta < 0 || lambda1 < 0 || lambda2 < 0) {
    throw std::invalid_argument("train config: loss weights must be >= 0");
  }
  if (focal_gamma < 0) throw std::invalid_argument("train config: focal_gamma must be >= 0");
  if (gamma < 0 || gamma > 1) throw std::invalid_argument("train config: gamma must be in [0, 1]");
}

#define SSVP_TRAIN_FIELDS(X)                                                                   \
  X(epochs) X(batch_size) X(lr_prompts) X(lr_other) X(cosine_decay) X(beta) X(lambda1)         \
  X(lambda2) X(xi) X(gamma) X(focal_gamma) X(tau) X(topk) X(grad_clip) X(per_layer_focal)      \
  X(freeze_gates) X(seed)

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  SSVP_TRAIN_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
#define X(f)           \
  if (key == #f) {     \
    value.get_to(c.f); \
    known = true;      \
  }
    SSVP_TRAIN_FIELDS(X)
#undef X
    if (!known) throw std::invalid_argument("unknown train config key '" + key + "'");
  }
}

#undef SSVP_TRAIN_FIELDS

nlohmann::json to_json(const StepRecord& r) {
  return {{"epoch", r.epoch}, {"step", r.step},       {"seg", r.seg},
          {"cls", r.cls},     {"vae", r.vae},         {"reg", r.reg},
          {"total", r.total}, {"lr", r.lr},           {"lr_prompts", r.lr_prompts},
          {"min_cos", r.min_cos}, {"grad_norm", r.grad_norm}};
}

Var focal_loss(Tape& t, const Var& p, const Tensor& target, double focal_gamma) {
  if (p.value().size() != target.size()) {
    throw nc::ShapeError("focal_loss: prediction " + nc::shape_str(p.shape()) + " vs target " +
                         nc::shape_str(target.shape()));
  }
  const Var y = nc::constant(target.reshaped(p.shape()));
  Tensor ones_minus(target.shape());
  for (std::size_t i = 0; i < target.size(); ++i) ones_minus[i] = 1.0 - target[i];
  const Var not_y = nc::constant(ones_minus.reshaped(p.shape()));

  const Var pc = t.clamp(p, 1e-7, 1.0 - 1e-7);
  const Var qc = t.add_scalar(t.scale(pc, -1.0), 1.0);  // 1 - p
  const Var pos = t.mul(y, t.mul(t.pow(qc, focal_gamma), t.log(pc)));
  const Var neg = t.mul(not_y, t.mul(t.pow(pc, focal_gamma), t.log(qc)));
  return t.scale(t.mean(t.add(pos, neg)), -1.0);
}

Var class_loss(Tape& t, const Var& s_final, int label) {
  return t.bce_with_logits(s_final, static_cast<double>(label));
}

Var total_loss(Tape& t, const Var& seg, const Var& cls, const Var& vae, const Var& reg,
               double lambda1, double lambda2) {
  return t.add(t.add(seg, cls), t.add(t.scale(vae, lambda1), t.scale(reg, lambda2)));
}

Tensor grid_target(const FeatureBundle& b) {
  Tensor y({b.grid.h, b.grid.w}, 0.0);
  if (!b.gt_mask) {
    if (b.label == 1) {
      throw std::invalid_argument("anomalous bundle '" + b.source_id + "' has no mask");
    }
    return y;
  }
  const auto& m = *b.gt_mask;
  const std::size_t mh = m.shape[0];
  const std::size_t mw = m.shape[1];
  for (std::size_t r = 0; r < mh; ++r) {
    for (std::size_t c = 0; c < mw; ++c) {
      if (m.data[r * mw + c] > 0.5f) y.at(r * b.grid.h / mh, c * b.grid.w / mw) = 1.0;
    }
  }
  return y;
}

LossParts sample_losses(Tape& t, const ForwardResult& fwd, const FeatureBundle& b,
                        const SsvpModel& model, const TrainConfig& cfg, const Tensor* anchor) {
  LossParts parts;
  const Tensor y = grid_target(b);
  parts.seg = focal_loss(t, fwd.p_map, y, cfg.focal_gamma);
  if (cfg.per_layer_focal) {
    for (const auto& pl : fwd.per_layer) {
      parts.seg = t.add(parts.seg, t.scale(focal_loss(t, pl, y, cfg.focal_gamma),
                                           1.0 / static_cast<double>(fwd.per_layer.size())));
    }
  }
  parts.cls = class_loss(t, fwd.scores.s_final, b.label);
  parts.vae = vae_loss(t, fwd.aux.v_global, fwd.aux.latent, model.vae, cfg.beta).total;
  const MarginLoss margin = margin_reg_loss(t, fwd.aux.t_final, anchor ? nc::constant(*anchor) : fwd.aux.t_init, cfg.xi);
  parts.reg = margin.loss;
  parts.min_cos = *std::min_element(margin.cos.begin(), margin.cos.end());
  parts.total = total_loss(t, parts.seg, parts.cls, parts.vae, parts.reg, cfg.lambda1, cfg.lambda2);
  return parts;
}

namespace {


bool contains(const std::vector<Var>& set, const Var& v) {
  return std::any_of(set.begin(), set.end(), [&v](const Var& s) { return s.node() == v.node(); });
}

}  // namespace

TrainResult train(SsvpModel& model, std::span<const FeatureBundle> data, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate();
  if (data.empty()) throw TrainingError("training set is empty");

  const auto prompt_params = model.prompt_parameters();
  const auto gate_params = model.gate_parameters();
  std::vector<Var> other;
  for (const auto& p : model.parameters()) {
    if (contains(prompt_params, p)) continue;
    if (cfg.freeze_gates && contains(gate_params, p)) continue;
    other.push_back(p);
  }
  std::vector<Var> trainable = prompt_params;
  trainable.insert(trainable.end(), other.begin(), other.end());
  nc::Adam opt({{prompt_params, cfg.lr_prompts}, {other, cfg.lr_other}});

  Rng order_rng = seeded_stream(cfg.seed, 1);
  Rng eps_rng = seeded_stream(cfg.seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const auto total_steps = static_cast<std::int64_t>(steps_per_epoch * cfg.epochs);
  const ScoringOptions scoring = cfg.scoring();

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = static_cast<std::size_t>(step);
      const double scale = cfg.cosine_decay ? nc::cosine_decay(1.0, step, total_steps) : 1.0;
      rec.lr = cfg.lr_other * scale;
      rec.lr_prompts = cfg.lr_prompts * scale;

      for (auto& p : model.parameters()) p.zero_grad();
      Tape tape;
      try {
        Var batch_total;
        for (std::size_t i = start; i < end; ++i) {
          const FeatureBundle& b = data[order[i]];
          Tensor eps({model.config().d_z});
          for (auto& e : eps.storage()) e = normal(eps_rng);
          const ForwardResult fwd = forward_pipeline(tape, b, model, eps, scoring);
          const LossParts parts = sample_losses(tape, fwd, b, model, cfg);
          rec.seg += parts.seg.item() * inv_b;
          rec.cls += parts.cls.item() * inv_b;
          rec.vae += parts.vae.item() * inv_b;
          rec.reg += parts.reg.item() * inv_b;
          rec.min_cos = std::min(rec.min_cos, parts.min_cos);
          const Var weighted = tape.scale(parts.total, inv_b);
          batch_total = batch_total ? tape.add(batch_total, weighted) : weighted;
        }
        rec.total = batch_total.item();
        if (!std::isfinite(rec.total)) throw nc::NumericError("non-finite loss");
        tape.backward(batch_total);
      } catch (const nc::NumericError& e) {
        throw TrainingError("numeric failure at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + ": " + e.what());
      }
      rec.grad_norm = nc::clip_grad_norm(trainable, cfg.grad_clip);
      opt.step(scale);
      result.history.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  std::ostringstream rng_state;
  rng_state << order_rng << ' ' << eps_rng;
  result.rng_state = rng_state.str();
  return result;
}

}  // namespace ssvp
