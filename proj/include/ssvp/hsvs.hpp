#pragma once

#include <vector>

#include "ssvp/feature_bundle.hpp"
#include "ssvp/layers.hpp"

namespace ssvp {

/// Parameters of one adaptive token fusion block (CLIP <-> DINO).
struct AtfParams {
  Var wq_c, wk_c, wv_c;  // [D_c x d_head]
  Var wq_d, wk_d, wv_d;  // [D_d x d_head]
  Var ln_cd_gain, ln_cd_bias;  // [d_head], applied to the clip->dino path
  Var ln_dc_gain, ln_dc_bias;  // [d_head], applied to the dino->clip path
  Mlp2 mlp;                    // 2*d_head -> d_hidden -> D_c

  std::size_t d_head() const { return wq_c.shape()[1]; }
  void collect(std::vector<Var>& out) const;
};

/// Projections use scaled-uniform init; the MLP output layer starts at zero so
/// the block is the identity on the CLIP branch until trained.
AtfParams make_atf(std::size_t d_clip, std::size_t d_dino, std::size_t d_head,
                   std::size_t d_hidden, Rng& rng, const std::string& name);

/// f_c + MLP([LN(attn_{c->d}) || LN(attn_{d->c})]) with single-head attention
/// scaled by 1/sqrt(d_head). f_c: [N x D_c], f_d: [N x D_d].
Var atf_fuse(Tape& t, const Var& f_c, const Var& f_d, const AtfParams& p);

struct HsvsParams {
  std::vector<AtfParams> locals;  // one per layer pair
  AtfParams global;               // class-token pair, run as N = 1

  void collect(std::vector<Var>& out) const;
};

HsvsParams make_hsvs(std::size_t layers, std::size_t d_clip, std::size_t d_dino,
                     std::size_t d_head, std::size_t d_hidden, Rng& rng);

struct SynergyFeatures {
  Var v_global;               // [1 x D_c]
  std::vector<Var> v_locals;  // L x [N x D_c]
};

/// Bundle tensors as non-differentiable 64-bit leaves.
struct BundleInputs {
  Var clip_global;  // [1 x D_c]
  Var dino_global;  // [1 x D_d]
  std::vector<Var> clip_locals;
  std::vector<Var> dino_locals;
};

BundleInputs bundle_inputs(const FeatureBundle& b);

SynergyFeatures hsvs_forward(Tape& t, const BundleInputs& in, const HsvsParams& p);

}  // namespace ssvp
