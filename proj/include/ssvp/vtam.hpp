#pragma once

#include <span>
#include <vector>

#include "ssvp/feature_bundle.hpp"
#include "ssvp/layers.hpp"

namespace ssvp {

struct GateParams {
  Mlp2 global_gate;                // D_c -> hidden -> L
  std::vector<Linear> local_gates;  // per layer, D_c -> 1 (a 1x1 convolution)

  std::size_t layers() const { return local_gates.size(); }
  void collect(std::vector<Var>& out) const;
};

/// Output layers of both gates start at zero: uniform scale weights and 0.5 masks.
GateParams make_gates(std::size_t d_clip, std::size_t layers, std::size_t hidden, Rng& rng);

/// 0 = normal prompt, 1 = abnormal prompt.
struct PromptLabels {
  std::vector<int> labels;

  static PromptLabels banks(std::size_t n_normal, std::size_t n_abnormal);
  std::size_t count(int label) const;
  /// [P x 2] averaging matrix: column 0 averages normal rows, column 1 abnormal.
  Tensor averaging_matrix() const;
};

/// Cosine between every patch and every prompt row: [N x P].
Var raw_anomaly_map(Tape& t, const Var& v_local, const Var& t_final);

/// Two-channel softmax over the per-bank mean similarities, anomalous
/// channel, reshaped to the grid. Throws if a bank is empty.
Var probability_map(Tape& t, const Var& sim, const PromptLabels& labels, double tau, Grid grid);

/// softmax(F_gate_global(v_global)) -> [1 x L]
Var scale_gate(Tape& t, const Var& v_global, const GateParams& p);

/// sigmoid(F_gate_local^(l)(v_local)) reshaped to the grid.
Var spatial_gate(Tape& t, const Var& v_local, const GateParams& p, std::size_t layer, Grid grid);

/// sum_l w[l] * (mask_l .* map_l)
Var moe_aggregate(Tape& t, std::span<const Var> maps, std::span<const Var> masks,
                  const Var& w_scale);

/// Mean of the k largest map values; k = 1 is the spatial max.
Var local_evidence(Tape& t, const Var& p_map, std::size_t k);

struct ScorePair {
  Var s_global;
  Var s_local;
  Var s_final;
};

/// s_global is the anomalous-channel probability of the two-channel softmax
/// over mean cosine(v_global, bank); s_final = (1-gamma) s_global + gamma s_local.
ScorePair final_score(Tape& t, const Var& v_global, const Var& t_final, const Var& s_local,
                      double gamma, const PromptLabels& labels, double tau);

/// Bilinear resize with half-pixel centres and edge clamping.
Tensor upsample_map(const Tensor& map, std::size_t h, std::size_t w);

}  // namespace ssvp
