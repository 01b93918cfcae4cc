#pragma once

#include <functional>
#include <span>

#include "ssvp/metrics.hpp"
#include "ssvp/model.hpp"

namespace ssvp {

/// Deterministic (eps = 0) outputs for one bundle.
struct Inference {
  double s_final = 0;
  Tensor p_map;  // [h x w]
};

Inference infer(const SsvpModel& model, const FeatureBundle& b, const ScoringOptions& opts);

using HeatmapSink = std::function<void(const FeatureBundle&, const Tensor& p_map)>;

/// Image and pixel metrics per category and pooled, plus prompt diagnostics.
/// Metrics that are undefined for a subset (one class only) are NaN.
metrics::EvalReport evaluate(const SsvpModel& model, std::span<const FeatureBundle> data,
                             const ScoringOptions& opts, const metrics::ProOptions& pro = {},
                             const HeatmapSink& sink = {});

}  // namespace ssvp
