#include "ssvp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace ssvp::metrics {

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  ClassCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::isfinite(scores[i])) throw MetricError("non-finite score");
    if (labels[i] == 1) {
      ++c.pos;
    } else if (labels[i] == 0) {
      ++c.neg;
    } else {
      throw MetricError("labels must be 0 or 1");
    }
  }
  return c;
}

void require_both(const ClassCounts& c, const char* metric) {
  if (c.pos == 0 || c.neg == 0) {
    throw MetricError(std::string(metric) + " needs both positive and negative samples");
  }
}

/// Indices sorted by descending score; ties keep input order.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

constexpr double kNormFloor = 1e-12;

double round6(double v) { return std::round(v * 1e6) / 1e6; }

nlohmann::json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round6(v);
}

nlohmann::json category_json(const CategoryReport& r) {
  return {
      {"image", {{"auroc", num(r.image.auroc)}, {"f1_max", num(r.image.f1_max)}, {"ap", num(r.image.ap)}}},
      {"pixel", {{"auroc", num(r.pixel.auroc)}, {"pro", num(r.pixel.pro)}, {"ap", num(r.pixel.ap)}}},
      {"diagnostics",
       {{"tir_fg", num(r.diagnostics.tir_fg)},
        {"scd_normal", num(r.diagnostics.scd_normal)},
        {"scd_abnormal", num(r.diagnostics.scd_abnormal)}}},
      {"counts",
       {{"images", r.counts.images},
        {"anomalous_images", r.counts.anomalous_images},
        {"pixels", r.counts.pixels},
        {"anomalous_pixels", r.counts.anomalous_pixels}}},
  };
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  const ClassCounts c = count_classes(scores, labels);
  require_both(c, "AUROC");
  // Rank-sum form of Mann-Whitney U with mid-ranks for ties.
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) rank_sum += mid;
    }
    i = j;
  }
  const double np = static_cast<double>(c.pos);
  const double nn = static_cast<double>(c.neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double f1_max(std::span<const double> scores, std::span<const int> labels) {
  const ClassCounts c = count_classes(scores, labels);
  require_both(c, "F1-max");
  const auto idx = descending(scores);
  double best = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double fn = static_cast<double>(c.pos - tp);
    const double f1 = 2.0 * static_cast<double>(tp) /
                      (2.0 * static_cast<double>(tp) + static_cast<double>(fp) + fn);
    best = std::max(best, f1);
    i = j;
  }
  return best;
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  const ClassCounts c = count_classes(scores, labels);
  if (c.pos == 0) throw MetricError("AP needs at least one positive sample");
  const auto idx = descending(scores);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::vector<int> connected_components(const Tensor& mask, int* count) {
  const std::size_t h = mask.rows();
  const std::size_t w = mask.cols();
  std::vector<int> label(h * w, -1);
  int next = 0;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (mask[start] <= 0.5 || label[start] >= 0) continue;
    label[start] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      const std::size_t r = p / w;
      const std::size_t c = p % w;
      auto visit = [&](std::size_t q) {
        if (mask[q] > 0.5 && label[q] < 0) {
          label[q] = next;
          queue.push_back(q);
        }
      };
      if (r > 0) visit(p - w);
      if (r + 1 < h) visit(p + w);
      if (c > 0) visit(p - 1);
      if (c + 1 < w) visit(p + 1);
    }
    ++next;
  }
  if (count) *count = next;
  return label;
}

double pro(std::span<const Tensor> maps, std::span<const Tensor> masks, ProOptions opts) {
  if (maps.size() != masks.size()) throw MetricError("PRO: maps and masks differ in count");
  if (!(opts.fpr_limit > 0.0 && opts.fpr_limit <= 1.0)) {
    throw MetricError("PRO: fpr_limit must lie in (0, 1]");
  }
  // Pool pixels, tagging each with a global region id (-1 for normal pixels).
  std::vector<double> score;
  std::vector<int> region;
  std::vector<double> region_size;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].size() != masks[i].size()) throw MetricError("PRO: map and mask sizes differ");
    int n = 0;
    const auto cc = connected_components(masks[i], &n);
    const int base = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + static_cast<std::size_t>(n), 0.0);
    for (std::size_t p = 0; p < cc.size(); ++p) {
      score.push_back(maps[i][p]);
      region.push_back(cc[p] < 0 ? -1 : base + cc[p]);
      if (cc[p] >= 0) region_size[static_cast<std::size_t>(base + cc[p])] += 1.0;
    }
  }
  if (region_size.empty()) throw MetricError("PRO: no anomalous regions in any mask");
  const auto negatives = static_cast<double>(std::count(region.begin(), region.end(), -1));
  if (negatives == 0.0) throw MetricError("PRO: no normal pixels to measure false positives");

  const auto idx = descending(score);
  std::vector<double> thresholds;
  if (opts.thresholds == 0) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k == 0 || score[idx[k]] != score[idx[k - 1]]) thresholds.push_back(score[idx[k]]);
    }
  } else {
    // Quantiles of the pooled scores, from highest to lowest.
    const std::size_t n = idx.size();
    for (std::size_t q = 0; q < opts.thresholds; ++q) {
      const double pos = static_cast<double>(q) * static_cast<double>(n - 1) /
                         static_cast<double>(std::max<std::size_t>(1, opts.thresholds - 1));
      thresholds.push_back(score[idx[static_cast<std::size_t>(std::llround(pos))]]);
    }
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  }

  const double n_regions = static_cast<double>(region_size.size());
  double overlap_sum = 0.0;  // sum over regions of |region & pred| / |region|
  double fp = 0.0;
  double area = 0.0;
  double cur_fpr = 0.0;
  double cur_pro = 0.0;
  std::size_t k = 0;
  for (double thr : thresholds) {
    while (k < idx.size() && score[idx[k]] >= thr) {
      const int reg = region[idx[k]];
      if (reg < 0) {
        fp += 1.0;
      } else {
        overlap_sum += 1.0 / region_size[static_cast<std::size_t>(reg)];
      }
      ++k;
    }
    const double fpr = fp / negatives;
    const double pro_here = overlap_sum / n_regions;
    if (fpr > opts.fpr_limit) break;
    area += cur_pro * (fpr - cur_fpr);
    cur_fpr = fpr;
    cur_pro = pro_here;
  }
  if (cur_fpr < opts.fpr_limit) area += cur_pro * (opts.fpr_limit - cur_fpr);
  return area / opts.fpr_limit;
}

double tir_fg(std::span<const Tensor> features, std::span<const Tensor> masks, const Tensor& t_abn) {
  if (features.size() != masks.size()) throw MetricError("TIR-FG: features and masks differ");
  double t_norm = 0.0;
  for (double v : t_abn.storage()) t_norm += v * v;
  t_norm = std::max(std::sqrt(t_norm), kNormFloor);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Tensor& f = features[i];
    if (f.cols() != t_abn.size()) throw MetricError("TIR-FG: feature width != prompt width");
    if (masks[i].size() != f.rows()) throw MetricError("TIR-FG: mask size != patch count");
    for (std::size_t r = 0; r < f.rows(); ++r) {
      if (masks[i][r] <= 0.5) continue;
      double dot = 0.0;
      double n = 0.0;
      const auto row = f.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        dot += row[c] * t_abn[c];
        n += row[c] * row[c];
      }
      sum += dot / (std::max(std::sqrt(n), kNormFloor) * t_norm);
      ++count;
    }
  }
  if (count == 0) throw MetricError("TIR-FG: empty foreground");
  return sum / static_cast<double>(count);
}

double scd(const Tensor& t_final, const Tensor& t_static) {
  if (t_final.shape() != t_static.shape()) throw MetricError("SCD: shapes differ");
  double sum = 0.0;
  for (std::size_t r = 0; r < t_final.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < t_final.cols(); ++c) {
      const double d = t_final.at(r, c) - t_static.at(r, c);
      sq += d * d;
    }
    sum += std::sqrt(sq);
  }
  return sum / static_cast<double>(t_final.rows());
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j = category_json(r.overall);
  j["format_version"] = 1;
  j["per_category"] = nlohmann::json::object();
  for (const auto& [name, cat] : r.per_category) j["per_category"][name] = category_json(cat);
  j["config"] = r.config;
  return j.dump(2);
}

}  // namespace ssvp::metrics
