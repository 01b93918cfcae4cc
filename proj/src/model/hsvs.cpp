#include "ssvp/hsvs.hpp"

#include <cmath>
#include <stdexcept>

namespace ssvp {

void AtfParams::collect(std::vector<Var>& out) const {
  for (const Var* v : {&wq_c, &wk_c, &wv_c, &wq_d, &wk_d, &wv_d, &ln_cd_gain, &ln_cd_bias,
                       &ln_dc_gain, &ln_dc_bias}) {
    out.push_back(*v);
  }
  mlp.collect(out);
}

AtfParams make_atf(std::size_t d_clip, std::size_t d_dino, std::size_t d_head,
                   std::size_t d_hidden, Rng& rng, const std::string& name) {
  auto proj = [&](std::size_t in, const char* suffix) {
    return nc::parameter(init_tensor({in, d_head}, in, Init::kScaledUniform, rng),
                         name + "." + suffix);
  };
  AtfParams p;
  p.wq_c = proj(d_clip, "wq_c");
  p.wk_c = proj(d_clip, "wk_c");
  p.wv_c = proj(d_clip, "wv_c");
  p.wq_d = proj(d_dino, "wq_d");
  p.wk_d = proj(d_dino, "wk_d");
  p.wv_d = proj(d_dino, "wv_d");
  p.ln_cd_gain = nc::parameter(Tensor({d_head}, 1.0), name + ".ln_cd.gain");
  p.ln_cd_bias = nc::parameter(Tensor({d_head}, 0.0), name + ".ln_cd.bias");
  p.ln_dc_gain = nc::parameter(Tensor({d_head}, 1.0), name + ".ln_dc.gain");
  p.ln_dc_bias = nc::parameter(Tensor({d_head}, 0.0), name + ".ln_dc.bias");
  p.mlp = make_mlp2(2 * d_head, d_hidden, d_clip, Init::kZero, rng, name + ".mlp");
  return p;
}

Var atf_fuse(Tape& t, const Var& f_c, const Var& f_d, const AtfParams& p) {
  const auto& fc = f_c.value();
  const auto& fd = f_d.value();
  if (fc.rows() == 0 || fc.rank() != 2 || fd.rank() != 2) {
    throw nc::ShapeError("atf_fuse: inputs must be non-empty [N x D] matrices");
  }
  if (fc.rows() != fd.rows()) {
    throw nc::ShapeError("atf_fuse: clip and dino token counts differ (" +
                         std::to_string(fc.rows()) + " vs " + std::to_string(fd.rows()) + ")");
  }
  if (fc.cols() != p.wq_c.shape()[0] || fd.cols() != p.wq_d.shape()[0]) {
    throw nc::ShapeError("atf_fuse: feature dims do not match projection weights");
  }
  if (p.mlp.out_dim() != fc.cols()) {
    throw nc::ShapeError("atf_fuse: MLP output must equal D_c for the residual");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p.d_head()));

  const Var q_c = t.matmul(f_c, p.wq_c);
  const Var k_c = t.matmul(f_c, p.wk_c);
  const Var v_c = t.matmul(f_c, p.wv_c);
  const Var q_d = t.matmul(f_d, p.wq_d);
  const Var k_d = t.matmul(f_d, p.wk_d);
  const Var v_d = t.matmul(f_d, p.wv_d);

  const Var attn_cd = t.matmul(t.softmax(t.scale(t.matmul_nt(q_c, k_d), inv_sqrt)), v_d);
  const Var attn_dc = t.matmul(t.softmax(t.scale(t.matmul_nt(q_d, k_c), inv_sqrt)), v_c);

  const Var joint = t.concat(t.layer_norm(attn_cd, p.ln_cd_gain, p.ln_cd_bias),
                             t.layer_norm(attn_dc, p.ln_dc_gain, p.ln_dc_bias), 1);
  return t.add(f_c, p.mlp.forward(t, joint));
}

void HsvsParams::collect(std::vector<Var>& out) const {
  for (const auto& l : locals) l.collect(out);
  global.collect(out);
}

HsvsParams make_hsvs(std::size_t layers, std::size_t d_clip, std::size_t d_dino,
                     std::size_t d_head, std::size_t d_hidden, Rng& rng) {
  HsvsParams p;
  for (std::size_t l = 0; l < layers; ++l) {
    p.locals.push_back(
        make_atf(d_clip, d_dino, d_head, d_hidden, rng, "hsvs.local" + std::to_string(l)));
  }
  p.global = make_atf(d_clip, d_dino, d_head, d_hidden, rng, "hsvs.global");
  return p;
}

BundleInputs bundle_inputs(const FeatureBundle& b) {
  BundleInputs in;
  in.clip_global = nc::constant(b.clip_global.to_f64().reshaped({1, b.d_clip()}));
  in.dino_global = nc::constant(b.dino_global.to_f64().reshaped({1, b.d_dino()}));
  for (const auto& t : b.clip_locals) in.clip_locals.push_back(nc::constant(t.to_f64()));
  for (const auto& t : b.dino_locals) in.dino_locals.push_back(nc::constant(t.to_f64()));
  return in;
}

SynergyFeatures hsvs_forward(Tape& t, const BundleInputs& in, const HsvsParams& p) {
  if (in.clip_locals.size() != p.locals.size() || in.dino_locals.size() != p.locals.size()) {
    throw std::invalid_argument("hsvs_forward: bundle has " + std::to_string(in.clip_locals.size()) +
                                " layers, parameters expect " + std::to_string(p.locals.size()));
  }
  SynergyFeatures out;
  out.v_global = atf_fuse(t, in.clip_global, in.dino_global, p.global);
  for (std::size_t l = 0; l < p.locals.size(); ++l) {
    out.v_locals.push_back(atf_fuse(t, in.clip_locals[l], in.dino_locals[l], p.locals[l]));
  }
  return out;
}

}  // namespace ssvp
