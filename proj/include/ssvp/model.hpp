#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssvp/hsvs.hpp"
#include "ssvp/vcpg.hpp"
#include "ssvp/vtam.hpp"

namespace ssvp {

/// Architecture sizes. Everything here is fixed at construction and recorded
/// in checkpoints.
struct ModelConfig {
  std::size_t d_clip = 64;
  std::size_t d_dino = 96;
  std::size_t layers = 2;
  std::size_t d_head = 256;
  std::size_t d_hidden = 0;  // 0 means 2 * d_head
  std::size_t d_z = 64;
  std::size_t n_z = 4;
  std::size_t d_k = 64;
  std::size_t vae_hidden = 128;
  std::size_t gate_hidden = 64;
  std::size_t prompt_bg_len = 8;
  std::size_t prompt_state_len = 4;
  std::size_t n_normal = 3;
  std::size_t n_abnormal = 3;
  std::size_t text_hidden = 128;
  std::uint64_t text_seed = 1234;   // frozen toy text encoder
  std::uint64_t class_seed = 4321;  // class-slot tokens
  std::string text_embeddings;      // non-empty: pre-computed embeddings file

  std::size_t hidden() const { return d_hidden ? d_hidden : 2 * d_head; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Rejects unknown keys.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Options that shape the forward pass but are not parameters.
struct ScoringOptions {
  double tau = 0.07;
  double gamma = 0.5;
  std::size_t topk = 1;
};

class SsvpModel {
 public:
  /// Initialises every parameter from `seed`.
  SsvpModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const TextEncoder& encoder() const { return *encoder_; }
  PromptLabels prompt_labels() const {
    return PromptLabels::banks(cfg_.n_normal, cfg_.n_abnormal);
  }

  /// All trainable tensors in a stable order; names are unique.
  std::vector<Var> parameters() const;
  std::vector<Var> prompt_parameters() const;
  std::vector<Var> gate_parameters() const;
  Var find(const std::string& name) const;

  /// Prompt vectors as they were at initialisation (same order as
  /// prompt_parameters()).
  const std::vector<Tensor>& static_prompts() const { return static_prompts_; }
  void set_static_prompts(std::vector<Tensor> s);
  /// Frozen text embeddings of the initial prompts for a category.
  Tensor t_static(const std::string& category) const;

  HsvsParams hsvs;
  PromptBank prompts;
  VaeParams vae;
  InjectionParams inject;
  GateParams gates;

 private:
  ModelConfig cfg_;
  std::shared_ptr<const TextEncoder> encoder_;
  std::vector<Tensor> static_prompts_;
};

struct ForwardAux {
  LatentGaussian latent;  // mu, logvar, z
  Var v_global;
  std::vector<Var> v_locals;
  Var t_init;
  Var t_final;
};

struct ForwardResult {
  Var p_map;                   // [h x w]
  std::vector<Var> per_layer;  // L x [h x w]
  std::vector<Var> masks;      // L x [h x w]
  Var w_scale;                 // [1 x L]
  ScorePair scores;
  ForwardAux aux;
};

/// Feature synergy, prompt generation, expert aggregation and scoring, in that
/// order. `eps` is the reparameterisation noise ([d_z]; zeros at evaluation).
ForwardResult forward_pipeline(Tape& t, const FeatureBundle& b, const SsvpModel& model,
                               const Tensor& eps, const ScoringOptions& opts);

}  // namespace ssvp
