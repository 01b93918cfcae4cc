#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssvp/layers.hpp"

namespace ssvp {

/// Learnable prompt vectors. Every prompt is [v_bg ; v_state ; class], with
/// v_bg shared by reference across all prompts.
struct PromptBank {
  Var v_bg;                     // [L_p x d_tok]
  std::vector<Var> v_normal;    // n_n x [L_s x d_tok]
  std::vector<Var> v_abnormal;  // n_a x [L_s x d_tok]

  std::size_t prompts() const { return v_normal.size() + v_abnormal.size(); }
  std::size_t d_tok() const { return v_bg.shape()[1]; }
  /// State vectors of prompt i, normal prompts first.
  const Var& state(std::size_t i) const;
  void collect(std::vector<Var>& out) const;
};

PromptBank make_prompt_bank(std::size_t bg_len, std::size_t state_len, std::size_t d_tok,
                            std::size_t n_normal, std::size_t n_abnormal, Rng& rng);

/// Fixed per-category class-slot token, derived from the category name.
Tensor class_token(const std::string& category, std::size_t d_tok, std::uint64_t seed);

/// Maps one prompt's token sequence [T x d_tok] to a [1 x D_c] embedding.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Var encode(Tape& t, const Var& tokens, const std::string& category,
                     std::size_t prompt_index) const = 0;
  virtual std::size_t out_dim() const = 0;
};

/// Frozen, randomly initialised two-layer MLP over the flattened token
/// sequence. Deterministic from its seed; gradients reach the prompt vectors.
class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(std::size_t seq_len, std::size_t d_tok, std::size_t hidden, std::size_t out_dim,
                 std::uint64_t seed);
  Var encode(Tape& t, const Var& tokens, const std::string& category,
             std::size_t prompt_index) const override;
  std::size_t out_dim() const override { return out_dim_; }

 private:
  std::size_t seq_len_, d_tok_, out_dim_;
  Var w1_, b1_, w2_, b2_;
};

/// Returns pre-computed embedding rows (one table per category, with an
/// optional "*" fallback). Prompt vectors receive no gradient on this path.
class PrecomputedTextEncoder final : public TextEncoder {
 public:
  explicit PrecomputedTextEncoder(std::map<std::string, Tensor> tables);
  /// Reads {"d_c": D, "categories": {name: [[...], ...]}} with normal rows first.
  static PrecomputedTextEncoder from_json_file(const std::string& path);

  Var encode(Tape& t, const Var& tokens, const std::string& category,
             std::size_t prompt_index) const override;
  std::size_t out_dim() const override { return dim_; }

 private:
  std::map<std::string, Tensor> tables_;
  std::size_t dim_ = 0;
};

/// T_init: one row per prompt, normal prompts first. [P x D_c]
Var encode_prompts(Tape& t, const PromptBank& bank, const TextEncoder& encoder,
                   const std::string& category, std::uint64_t class_seed,
                   std::size_t expected_dim);

struct VaeParams {
  Mlp2 enc_mu;      // D_c -> d_z
  Mlp2 enc_logvar;  // D_c -> d_z
  Mlp2 decoder;     // d_z -> D_c

  std::size_t d_z() const { return enc_mu.out_dim(); }
  void collect(std::vector<Var>& out) const;
};

VaeParams make_vae(std::size_t d_clip, std::size_t d_z, std::size_t hidden, Rng& rng);

inline constexpr double kLogvarClamp = 10.0;

struct LatentGaussian {
  Var mu;      // [1 x d_z]
  Var logvar;  // [1 x d_z], clamped to [-10, 10]
  Var z;       // [1 x d_z]
};

/// (mu, clamped logvar) for a [1 x D_c] global feature.
LatentGaussian vae_encode(Tape& t, const Var& v_global, const VaeParams& p);

/// mu + eps * exp(logvar / 2)
Var reparameterize(Tape& t, const Var& mu, const Var& logvar, const Tensor& eps);

struct VaeLoss {
  Var recon;  // |v - D(z)|^2
  Var kl;     // 0.5 * sum(mu^2 + sigma^2 - 1 - logvar)
  Var total;  // recon + beta * kl
};

VaeLoss vae_loss(Tape& t, const Var& v_global, const LatentGaussian& q, const VaeParams& p,
                 double beta);

struct InjectionParams {
  Var wq;     // [D_c x d_k]
  Var wk;     // [d_z/n_z x d_k]
  Var wv;     // [d_z/n_z x D_c]
  Var alpha;  // [1], starts at 0
  Var ln_gain, ln_bias;  // [D_c]
  std::size_t n_z = 4;

  void collect(std::vector<Var>& out) const;
};

InjectionParams make_injection(std::size_t d_clip, std::size_t d_z, std::size_t n_z,
                               std::size_t d_k, Rng& rng);

/// softmax(Q_text K_z^T / sqrt(d_k)) V_z with z split into n_z tokens.
Var text_latent_attention(Tape& t, const Var& t_init, const Var& z, const InjectionParams& p);

/// LayerNorm(t_init + alpha * delta), row-wise.
Var gated_inject(Tape& t, const Var& t_init, const Var& delta, const Var& alpha,
                 const Var& ln_gain, const Var& ln_bias);

struct MarginLoss {
  Var loss;                 // mean over rows of max(0, xi - cos)
  std::vector<double> cos;  // per-row cosine, for diagnostics
};

/// Hinge on the per-row cosine between t_final and stop_gradient(t_init).
MarginLoss margin_reg_loss(Tape& t, const Var& t_final, const Var& t_init, double xi);

}  // namespace ssvp
