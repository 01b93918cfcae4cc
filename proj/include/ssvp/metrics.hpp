#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssvp/numcore/tensor.hpp"

namespace ssvp::metrics {

using nc::Tensor;

/// Raised when a metric is undefined for its input (e.g. a single class).
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mann-Whitney estimate of P(score_pos > score_neg); ties count one half.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Best F1 over thresholds at the distinct score values (score >= thr is positive).
double f1_max(std::span<const double> scores, std::span<const int> labels);

/// Step-wise average precision: sum over distinct thresholds, in descending
/// order, of (recall gain) * precision. Tied scores enter together.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct ProOptions {
  double fpr_limit = 0.30;
  /// 0 sweeps every distinct score exactly; otherwise this many quantiles of
  /// the pooled scores.
  std::size_t thresholds = 0;
};

/// Labels 4-connected components of a binary [H x W] mask. Background is -1,
/// components are numbered from 0 in raster order of their first pixel.
std::vector<int> connected_components(const Tensor& mask, int* count = nullptr);

/// Per-region overlap averaged over all ground-truth regions, as a step
/// function of dataset false-positive rate, integrated over [0, fpr_limit]
/// and divided by fpr_limit.
double pro(std::span<const Tensor> maps, std::span<const Tensor> masks, ProOptions opts = {});

/// Mean cosine between foreground patch features and t_abn. `features` holds
/// one [N x D] matrix per image, `masks` one N-element binary mask per image.
double tir_fg(std::span<const Tensor> features, std::span<const Tensor> masks, const Tensor& t_abn);

/// Mean over rows of |t_final_row - t_static_row|.
double scd(const Tensor& t_final, const Tensor& t_static);

struct ImageMetrics {
  double auroc = 0, f1_max = 0, ap = 0;
};

struct PixelMetrics {
  double auroc = 0, pro = 0, ap = 0;
};

struct Diagnostics {
  double tir_fg = 0, scd_normal = 0, scd_abnormal = 0;
};

struct Counts {
  std::size_t images = 0, anomalous_images = 0, pixels = 0, anomalous_pixels = 0;
};

struct CategoryReport {
  ImageMetrics image;
  PixelMetrics pixel;
  Diagnostics diagnostics;
  Counts counts;
};

struct EvalReport {
  CategoryReport overall;
  std::map<std::string, CategoryReport> per_category;
  nlohmann::json config;  // resolved configuration that produced the report
};

/// Fixed key layout, every metric rounded to 6 decimals.
std::string report_to_json(const EvalReport& r);

}  // namespace ssvp::metrics
