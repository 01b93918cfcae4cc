#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssvp/numcore/tape.hpp"

namespace ssvp::nc {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
};

/// One bias-corrected adaptive-moment update in place. Throws
/// std::invalid_argument on lr <= 0 or mismatched lengths.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hp);

/// lr0 * (1 + cos(pi * step / total)) / 2
double cosine_decay(double lr0, std::int64_t step, std::int64_t total);

/// Scales every grad in place so the joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Var> params, double max_norm);

/// Adam over groups of parameters that share a base learning rate.
class Adam {
 public:
  struct Group {
    std::vector<Var> params;
    double lr;
  };

  Adam(std::vector<Group> groups, AdamHyper hp = {});

  /// Applies one update; each group's lr is multiplied by lr_scale.
  void step(double lr_scale);
  void zero_grad();

  const std::vector<Group>& groups() const { return groups_; }
  const std::vector<std::vector<AdamState>>& states() const { return states_; }

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<AdamState>> states_;
  AdamHyper hp_;
};

}  // namespace ssvp::nc
