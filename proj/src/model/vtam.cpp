#include "ssvp/vtam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssvp {

void GateParams::collect(std::vector<Var>& out) const {
  global_gate.collect(out);
  for (const auto& g : local_gates) g.collect(out);
}

GateParams make_gates(std::size_t d_clip, std::size_t layers, std::size_t hidden, Rng& rng) {
  GateParams p;
  p.global_gate = make_mlp2(d_clip, hidden, layers, Init::kZero, rng, "gate.global");
  for (std::size_t l = 0; l < layers; ++l) {
    p.local_gates.push_back(
        make_linear(d_clip, 1, Init::kZero, rng, "gate.local" + std::to_string(l)));
  }
  return p;
}

PromptLabels PromptLabels::banks(std::size_t n_normal, std::size_t n_abnormal) {
  PromptLabels p;
  p.labels.assign(n_normal, 0);
  p.labels.insert(p.labels.end(), n_abnormal, 1);
  return p;
}

std::size_t PromptLabels::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

Tensor PromptLabels::averaging_matrix() const {
  const std::size_t nn = count(0);
  const std::size_t na = count(1);
  if (nn == 0 || na == 0) {
    throw std::invalid_argument("prompt labels need at least one normal and one abnormal prompt");
  }
  if (nn + na != labels.size()) throw std::invalid_argument("prompt labels must be 0 or 1");
  Tensor a({labels.size(), 2}, 0.0);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == 0) {
      a.at(p, 0) = 1.0 / static_cast<double>(nn);
    } else {
      a.at(p, 1) = 1.0 / static_cast<double>(na);
    }
  }
  return a;
}

Var raw_anomaly_map(Tape& t, const Var& v_local, const Var& t_final) {
  return t.cosine_rows(v_local, t_final);
}

namespace {

// [R x P] similarities -> [R x 1] anomalous probability.
Var two_channel(Tape& t, const Var& sim, const PromptLabels& labels, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (sim.value().cols() != labels.labels.size()) {
    throw nc::ShapeError("similarity has " + std::to_string(sim.value().cols()) +
                         " prompt columns, labels describe " +
                         std::to_string(labels.labels.size()));
  }
  const Var channels = t.matmul(sim, nc::constant(labels.averaging_matrix()));
  return t.slice_cols(t.softmax(t.scale(channels, 1.0 / tau), 1), 1, 2);
}

}  // namespace

Var probability_map(Tape& t, const Var& sim, const PromptLabels& labels, double tau, Grid grid) {
  if (sim.value().rows() != grid.cells()) {
    throw nc::ShapeError("probability_map: " + std::to_string(sim.value().rows()) +
                         " patches for a " + std::to_string(grid.h) + "x" +
                         std::to_string(grid.w) + " grid");
  }
  return t.reshape(two_channel(t, sim, labels, tau), {grid.h, grid.w});
}

Var scale_gate(Tape& t, const Var& v_global, const GateParams& p) {
  return t.softmax(p.global_gate.forward(t, v_global), 1);
}

Var spatial_gate(Tape& t, const Var& v_local, const GateParams& p, std::size_t layer, Grid grid) {
  const Var logits = p.local_gates.at(layer).forward(t, v_local);
  return t.reshape(t.sigmoid(logits), {grid.h, grid.w});
}

Var moe_aggregate(Tape& t, std::span<const Var> maps, std::span<const Var> masks,
                  const Var& w_scale) {
  if (maps.empty() || maps.size() != masks.size() || w_scale.value().size() != maps.size()) {
    throw nc::ShapeError("moe_aggregate: need matching counts of maps, masks and weights");
  }
  const Var w = t.reshape(w_scale, {1, maps.size()});
  Var fused;
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const Var expert = t.mul_scalar(t.mul(masks[l], maps[l]), t.slice_cols(w, l, l + 1));
    fused = fused ? t.add(fused, expert) : expert;
  }
  return fused;
}

Var local_evidence(Tape& t, const Var& p_map, std::size_t k) { return t.topk_mean(p_map, k); }

ScorePair final_score(Tape& t, const Var& v_global, const Var& t_final, const Var& s_local,
                      double gamma, const PromptLabels& labels, double tau) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must lie in [0, 1]");
  ScorePair s;
  s.s_global = t.reshape(two_channel(t, t.cosine_rows(v_global, t_final), labels, tau), {1});
  s.s_local = t.reshape(s_local, {1});
  s.s_final = t.add(t.scale(s.s_global, 1.0 - gamma), t.scale(s.s_local, gamma));
  return s;
}

Tensor upsample_map(const Tensor& map, std::size_t h, std::size_t w) {
  const std::size_t sh = map.rows();
  const std::size_t sw = map.cols();
  if (h < sh || w < sw) throw std::invalid_argument("upsample_map: target smaller than source");
  if (h == sh && w == sw) return map.reshaped({h, w});
  Tensor out({h, w});
  const double ry = static_cast<double>(sh) / static_cast<double>(h);
  const double rx = static_cast<double>(sw) / static_cast<double>(w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * ry - 0.5, 0.0,
                                 static_cast<double>(sh - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(fy));
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * rx - 0.5, 0.0,
                                   static_cast<double>(sw - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(fx));
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1.0 - wx) * map.at(y0, x0) + wx * map.at(y0, x1);
      const double bot = (1.0 - wx) * map.at(y1, x0) + wx * map.at(y1, x1);
      out.at(y, x) = (1.0 - wy) * top + wy * bot;
    }
  }
  return out;
}

}  // namespace ssvp
