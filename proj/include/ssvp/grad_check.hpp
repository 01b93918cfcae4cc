#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssvp/model.hpp"
#include "ssvp/objective.hpp"

namespace ssvp {

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tol = 1e-4;
};

struct TensorGradError {
  std::string name;
  std::string module;  // hsvs, vcpg or vtam
  std::size_t entries = 0;
  double error = 0;  // |a - n| / max(|a|, |n|), absolute when both are tiny
};

struct GradCheckResult {
  std::vector<TensorGradError> tensors;
  std::map<std::string, double> worst;  // per module
  double worst_overall = 0;
  bool passed = false;
};

/// Small model with every parameter drawn at random (zero-initialised ones
/// included) so that each tensor receives a gradient.
ModelConfig grad_check_model_config();
SsvpModel grad_check_model(std::uint64_t seed);
/// Two bundles, one anomalous and one normal, matching grad_check_model_config().
std::vector<FeatureBundle> grad_check_batch(std::uint64_t seed);
/// Objective settings under which every loss term is active.
TrainConfig grad_check_train_config();

/// Central differences on the batch-mean objective over every entry of every
/// parameter tensor.
GradCheckResult grad_check(const GradCheckOptions& opts);

/// Relative error between two gradient vectors.
double gradient_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

}  // namespace ssvp
