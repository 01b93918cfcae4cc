#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssvp/model.hpp"

namespace ssvp {

/// Optimisation and loss hyperparameters. Defaults are the reference recipe.
struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 8;
  double lr_prompts = 5e-4;
  double lr_other = 1e-4;
  bool cosine_decay = true;
  double beta = 0.1;     // KL weight
  double lambda1 = 1.0;  // VAE loss weight
  double lambda2 = 0.5;  // margin loss weight
  double xi = 0.85;      // margin threshold
  double gamma = 0.5;    // global/local score balance
  double focal_gamma = 2.0;
  double tau = 0.07;
  std::size_t topk = 1;
  double grad_clip = 5.0;
  bool per_layer_focal = false;  // add focal terms on every expert map
  bool freeze_gates = false;
  std::uint64_t seed = 7;

  ScoringOptions scoring() const { return {tau, gamma, topk}; }
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Rejects unknown keys.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Focal loss with p clamped to [1e-7, 1 - 1e-7], averaged over pixels.
Var focal_loss(Tape& t, const Var& p, const Tensor& target, double focal_gamma);

/// BCE(sigmoid(s_final), y)
Var class_loss(Tape& t, const Var& s_final, int label);

/// seg + cls + lambda1 * vae + lambda2 * reg
Var total_loss(Tape& t, const Var& seg, const Var& cls, const Var& vae, const Var& reg,
               double lambda1, double lambda2);

/// Binary target at grid resolution. Full-resolution masks are reduced by
/// marking a cell anomalous when any of its pixels is; a missing mask is all
/// zeros for normal images and an error for anomalous ones.
Tensor grid_target(const FeatureBundle& b);

struct LossParts {
  Var seg, cls, vae, reg, total;
  double min_cos = 1.0;  // smallest per-row cosine seen by the margin loss
};

/// `anchor`, when given, replaces t_init as the fixed target of the margin
/// loss (finite-difference checks hold it at the expansion point).
LossParts sample_losses(Tape& t, const ForwardResult& fwd, const FeatureBundle& b,
                        const SsvpModel& model, const TrainConfig& cfg,
                        const Tensor* anchor = nullptr);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double seg = 0, cls = 0, vae = 0, reg = 0, total = 0;
  double lr = 0;
  double lr_prompts = 0;
  double min_cos = 1.0;
  double grad_norm = 0;
};

nlohmann::json to_json(const StepRecord& r);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<StepRecord> history;
  std::string rng_state;  // serialized data/eps generators after the last step
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Mini-batch Adam over two parameter groups (prompt vectors at lr_prompts,
/// everything else at lr_other) with cosine decay and global-norm clipping.
/// Throws TrainingError on an empty dataset or a non-finite loss.
TrainResult train(SsvpModel& model, std::span<const FeatureBundle> data, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

}  // namespace ssvp
