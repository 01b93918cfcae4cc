#pragma once

// Brute-force reference implementations of the evaluation metrics, written
// without sharing code with the library.

#include <algorithm>
#include <cstddef>
#include <random>
#include <set>
#include <vector>

#include "ssvp/numcore/tensor.hpp"

namespace ssvp::oracle {

using nc::Tensor;

inline double auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) wins += 1;
      if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct Confusion {
  double tp = 0, fp = 0, fn = 0;
};

inline Confusion at_threshold(const std::vector<double>& s, const std::vector<int>& y, double thr) {
  Confusion c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s[i] >= thr;
    if (pred && y[i] == 1) c.tp += 1;
    if (pred && y[i] == 0) c.fp += 1;
    if (!pred && y[i] == 1) c.fn += 1;
  }
  return c;
}

inline double f1_max(const std::vector<double>& s, const std::vector<int>& y) {
  double best = 0;
  for (double thr : std::set<double>(s.begin(), s.end())) {
    const Confusion c = at_threshold(s, y, thr);
    best = std::max(best, 2 * c.tp / (2 * c.tp + c.fp + c.fn));
  }
  return best;
}

inline double average_precision(const std::vector<double>& s, const std::vector<int>& y) {
  const std::set<double> distinct(s.begin(), s.end());
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double ap = 0;
  double prev_recall = 0;
  for (auto it = distinct.rbegin(); it != distinct.rend(); ++it) {
    const Confusion c = at_threshold(s, y, *it);
    const double recall = c.tp / pos;
    ap += (recall - prev_recall) * (c.tp / (c.tp + c.fp));
    prev_recall = recall;
  }
  return ap;
}

/// Region id per pixel (depth-first flood fill), -1 for background.
inline std::vector<int> regions(const Tensor& mask, int& count) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  std::vector<int> id(static_cast<std::size_t>(h * w), -1);
  count = 0;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (mask.at(r, c) <= 0.5 || id[r * w + c] >= 0) continue;
      stack.push_back({r, c});
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        if (y < 0 || y >= h || x < 0 || x >= w) continue;
        if (mask.at(y, x) <= 0.5 || id[y * w + x] >= 0) continue;
        id[y * w + x] = count;
        stack.push_back({y + 1, x});
        stack.push_back({y - 1, x});
        stack.push_back({y, x + 1});
        stack.push_back({y, x - 1});
      }
      ++count;
    }
  }
  return id;
}

/// Mean per-region overlap as a function of dataset FPR, taken as the best
/// overlap reachable without exceeding that FPR, integrated exactly on
/// [0, limit] and divided by limit. Every distinct score is a threshold.
inline double pro(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks, double limit) {
  std::set<double> thresholds;
  for (const auto& m : maps) thresholds.insert(m.storage().begin(), m.storage().end());
  std::vector<std::vector<int>> ids;
  std::vector<int> counts;
  double negatives = 0;
  int total_regions = 0;
  for (const auto& m : masks) {
    int n = 0;
    ids.push_back(regions(m, n));
    counts.push_back(n);
    total_regions += n;
    for (double v : m.storage()) negatives += v <= 0.5 ? 1 : 0;
  }
  std::vector<std::pair<double, double>> points;  // (fpr, pro)
  for (double thr : thresholds) {
    double fp = 0;
    double overlap = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      std::vector<double> hit(static_cast<std::size_t>(counts[i]), 0), size(hit.size(), 0);
      for (std::size_t p = 0; p < maps[i].size(); ++p) {
        const int r = ids[i][p];
        const bool pred = maps[i][p] >= thr;
        if (r < 0) {
          fp += pred ? 1 : 0;
        } else {
          size[static_cast<std::size_t>(r)] += 1;
          hit[static_cast<std::size_t>(r)] += pred ? 1 : 0;
        }
      }
      for (std::size_t r = 0; r < hit.size(); ++r) overlap += hit[r] / size[r];
    }
    points.push_back({fp / negatives, overlap / total_regions});
  }
  auto curve = [&](double f) {
    double best = 0;
    for (auto [fpr, p] : points) {
      if (fpr <= f) best = std::max(best, p);
    }
    return best;
  };
  std::set<double> breaks{0.0, limit};
  for (auto [fpr, p] : points) {
    if (fpr < limit) breaks.insert(fpr);
  }
  double area = 0;
  for (auto it = breaks.begin(); std::next(it) != breaks.end(); ++it) {
    area += curve(*it) * (*std::next(it) - *it);
  }
  return area / limit;
}

/// Random score/label instance with both classes and frequent ties.
inline void random_instance(std::mt19937_64& rng, std::vector<double>& s, std::vector<int>& y) {
  const std::size_t n = 2 + rng() % 63;
  const bool coarse = rng() % 2 == 0;
  s.assign(n, 0);
  y.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = coarse ? static_cast<double>(rng() % 5) : std::uniform_real_distribution<double>(0, 1)(rng);
    y[i] = static_cast<int>(rng() % 2);
  }
  y[0] = 1;
  y[1] = 0;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> shuffled(n);
  for (std::size_t i = 0; i < n; ++i) shuffled[i] = y[perm[i]];
  y = shuffled;
}

/// One to three maps of at most 8x8 with random blob masks; at least one
/// region and one normal pixel overall.
inline void random_pro_instance(std::mt19937_64& rng, std::vector<Tensor>& maps, std::vector<Tensor>& masks) {
  maps.clear();
  masks.clear();
  const std::size_t images = 1 + rng() % 3;
  const std::size_t h = 2 + rng() % 7;
  const std::size_t w = 2 + rng() % 7;
  const bool coarse = rng() % 2 == 0;
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < images; ++i) {
    Tensor m({h, w}, 0.0);
    Tensor s({h, w});
    const double density = u(rng) * 0.5;
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = u(rng) < density ? 1.0 : 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double base = coarse ? static_cast<double>(rng() % 4) / 3.0 : u(rng);
      s[k] = std::clamp(base + (m[k] > 0.5 ? 0.3 * u(rng) : 0.0), 0.0, 1.0);
    }
    maps.push_back(s);
    masks.push_back(m);
  }
  masks[0][0] = 1.0;
  masks[0][masks[0].size() - 1] = 0.0;
}

}  // namespace ssvp::oracle
