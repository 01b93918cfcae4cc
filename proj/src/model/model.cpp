#include "ssvp/model.hpp"

#include <stdexcept>

namespace ssvp {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string("model config: ") + what + " must be > 0");
  };
  positive(d_clip, "d_clip");
  positive(d_dino, "d_dino");
  positive(layers, "layers");
  positive(d_head, "d_head");
  positive(d_z, "d_z");
  positive(n_z, "n_z");
  positive(d_k, "d_k");
  positive(vae_hidden, "vae_hidden");
  positive(gate_hidden, "gate_hidden");
  positive(prompt_bg_len, "prompt_bg_len");
  positive(prompt_state_len, "prompt_state_len");
  positive(n_normal, "n_normal");
  positive(n_abnormal, "n_abnormal");
  positive(text_hidden, "text_hidden");
  if (d_clip < 2) throw std::invalid_argument("model config: d_clip must be >= 2");
  if (d_z % n_z != 0) throw std::invalid_argument("model config: d_z must be divisible by n_z");
}

#define SSVP_MODEL_FIELDS(X)                                                                    \
  X(d_clip) X(d_dino) X(layers) X(d_head) X(d_hidden) X(d_z) X(n_z) X(d_k) X(vae_hidden)       \
  X(gate_hidden) X(prompt_bg_len) X(prompt_state_len) X(n_normal) X(n_abnormal) X(text_hidden) \
  X(text_seed) X(class_seed) X(text_embeddings)

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  SSVP_MODEL_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
#define X(f)                  \
  if (key == #f) {            \
    value.get_to(c.f);        \
    known = true;             \
  }
    SSVP_MODEL_FIELDS(X)
#undef X
    if (!known) throw std::invalid_argument("unknown model config key '" + key + "'");
  }
}

#undef SSVP_MODEL_FIELDS

SsvpModel::SsvpModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = seeded_stream(seed, 0);
  hsvs = make_hsvs(cfg_.layers, cfg_.d_clip, cfg_.d_dino, cfg_.d_head, cfg_.hidden(), rng);
  prompts = make_prompt_bank(cfg_.prompt_bg_len, cfg_.prompt_state_len, cfg_.d_clip,
                             cfg_.n_normal, cfg_.n_abnormal, rng);
  vae = make_vae(cfg_.d_clip, cfg_.d_z, cfg_.vae_hidden, rng);
  inject = make_injection(cfg_.d_clip, cfg_.d_z, cfg_.n_z, cfg_.d_k, rng);
  gates = make_gates(cfg_.d_clip, cfg_.layers, cfg_.gate_hidden, rng);
  if (cfg_.text_embeddings.empty()) {
    encoder_ = std::make_shared<ToyTextEncoder>(cfg_.prompt_bg_len + cfg_.prompt_state_len + 1,
                                                cfg_.d_clip, cfg_.text_hidden, cfg_.d_clip,
                                                cfg_.text_seed);
  } else {
    encoder_ = std::make_shared<PrecomputedTextEncoder>(
        PrecomputedTextEncoder::from_json_file(cfg_.text_embeddings));
  }
  for (const auto& p : prompt_parameters()) static_prompts_.push_back(p.value());
}

std::vector<Var> SsvpModel::parameters() const {
  std::vector<Var> out;
  hsvs.collect(out);
  prompts.collect(out);
  vae.collect(out);
  inject.collect(out);
  gates.collect(out);
  return out;
}

std::vector<Var> SsvpModel::prompt_parameters() const {
  std::vector<Var> out;
  prompts.collect(out);
  return out;
}

std::vector<Var> SsvpModel::gate_parameters() const {
  std::vector<Var> out;
  gates.collect(out);
  return out;
}

Var SsvpModel::find(const std::string& name) const {
  for (const auto& p : parameters()) {
    if (p.name() == name) return p;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

void SsvpModel::set_static_prompts(std::vector<Tensor> s) {
  const auto params = prompt_parameters();
  if (s.size() != params.size()) throw std::invalid_argument("static prompt count mismatch");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].shape() != params[i].shape()) {
      throw std::invalid_argument("static prompt shape mismatch for " + params[i].name());
    }
  }
  static_prompts_ = std::move(s);
}

Tensor SsvpModel::t_static(const std::string& category) const {
  PromptBank frozen;
  frozen.v_bg = nc::constant(static_prompts_.at(0));
  std::size_t i = 1;
  for (std::size_t k = 0; k < cfg_.n_normal; ++k) frozen.v_normal.push_back(nc::constant(static_prompts_.at(i++)));
  for (std::size_t k = 0; k < cfg_.n_abnormal; ++k) frozen.v_abnormal.push_back(nc::constant(static_prompts_.at(i++)));
  Tape t;
  return encode_prompts(t, frozen, *encoder_, category, cfg_.class_seed, cfg_.d_clip).value();
}

ForwardResult forward_pipeline(Tape& t, const FeatureBundle& b, const SsvpModel& model,
                               const Tensor& eps, const ScoringOptions& opts) {
  const auto& cfg = model.config();
  if (b.d_clip() != cfg.d_clip || b.d_dino() != cfg.d_dino || b.layers() != cfg.layers) {
    throw nc::ShapeError("bundle dims (D_c=" + std::to_string(b.d_clip()) +
                         ", D_d=" + std::to_string(b.d_dino()) + ", L=" +
                         std::to_string(b.layers()) + ") do not match the model");
  }
  if (eps.size() != cfg.d_z) throw nc::ShapeError("eps must have d_z elements");
  const PromptLabels labels = model.prompt_labels();

  ForwardResult r;
  // Stage 1: synergistic features.
  const SynergyFeatures syn = hsvs_forward(t, bundle_inputs(b), model.hsvs);
  r.aux.v_global = syn.v_global;
  r.aux.v_locals = syn.v_locals;

  // Stage 2: vision-conditioned prompts.
  r.aux.t_init = encode_prompts(t, model.prompts, model.encoder(), b.category, cfg.class_seed,
                                cfg.d_clip);
  r.aux.latent = vae_encode(t, syn.v_global, model.vae);
  r.aux.latent.z = reparameterize(t, r.aux.latent.mu, r.aux.latent.logvar, eps);
  const Var delta = text_latent_attention(t, r.aux.t_init, r.aux.latent.z, model.inject);
  r.aux.t_final = gated_inject(t, r.aux.t_init, delta, model.inject.alpha, model.inject.ln_gain,
                               model.inject.ln_bias);

  // Stage 3: expert maps and dual-gated aggregation.
  for (const auto& v : syn.v_locals) {
    r.per_layer.push_back(
        probability_map(t, raw_anomaly_map(t, v, r.aux.t_final), labels, opts.tau, b.grid));
  }
  r.w_scale = scale_gate(t, syn.v_global, model.gates);
  for (std::size_t l = 0; l < syn.v_locals.size(); ++l) {
    r.masks.push_back(spatial_gate(t, syn.v_locals[l], model.gates, l, b.grid));
  }
  r.p_map = moe_aggregate(t, r.per_layer, r.masks, r.w_scale);

  // Scoring.
  const Var s_local = local_evidence(t, r.p_map, opts.topk);
  r.scores = final_score(t, syn.v_global, r.aux.t_final, s_local, opts.gamma, labels, opts.tau);
  return r;
}

}  // namespace ssvp
