#include "ssvp/vcpg.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace ssvp {

// ---------------------------------------------------------------- prompts

const Var& PromptBank::state(std::size_t i) const {
  if (i < v_normal.size()) return v_normal[i];
  return v_abnormal.at(i - v_normal.size());
}

void PromptBank::collect(std::vector<Var>& out) const {
  out.push_back(v_bg);
  for (const auto& v : v_normal) out.push_back(v);
  for (const auto& v : v_abnormal) out.push_back(v);
}

PromptBank make_prompt_bank(std::size_t bg_len, std::size_t state_len, std::size_t d_tok,
                            std::size_t n_normal, std::size_t n_abnormal, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  auto draw = [&](std::size_t rows, const std::string& name) {
    Tensor t({rows, d_tok});
    for (auto& v : t.storage()) v = dist(rng);
    return nc::parameter(std::move(t), name);
  };
  PromptBank b;
  b.v_bg = draw(bg_len, "prompt.bg");
  for (std::size_t i = 0; i < n_normal; ++i) {
    b.v_normal.push_back(draw(state_len, "prompt.normal" + std::to_string(i)));
  }
  for (std::size_t i = 0; i < n_abnormal; ++i) {
    b.v_abnormal.push_back(draw(state_len, "prompt.abnormal" + std::to_string(i)));
  }
  return b;
}

Tensor class_token(const std::string& category, std::size_t d_tok, std::uint64_t seed) {
  // FNV-1a, stable across platforms unlike std::hash.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : category) {
    h ^= c;
    h *= 1099511628211ull;
  }
  Rng rng(h ^ seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t({1, d_tok});
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

ToyTextEncoder::ToyTextEncoder(std::size_t seq_len, std::size_t d_tok, std::size_t hidden,
                               std::size_t out_dim, std::uint64_t seed)
    : seq_len_(seq_len), d_tok_(d_tok), out_dim_(out_dim) {
  Rng rng(seed);
  const std::size_t in = seq_len * d_tok;
  w1_ = nc::constant(init_tensor({in, hidden}, in, Init::kScaledUniform, rng));
  b1_ = nc::constant(Tensor({hidden}, 0.0));
  w2_ = nc::constant(init_tensor({hidden, out_dim}, hidden, Init::kScaledUniform, rng));
  b2_ = nc::constant(Tensor({out_dim}, 0.0));
}

Var ToyTextEncoder::encode(Tape& t, const Var& tokens, const std::string&, std::size_t) const {
  if (tokens.value().rows() != seq_len_ || tokens.value().cols() != d_tok_) {
    throw nc::ShapeError("toy text encoder expects [" + std::to_string(seq_len_) + " x " +
                         std::to_string(d_tok_) + "] tokens, got " +
                         nc::shape_str(tokens.shape()));
  }
  const Var flat = t.reshape(tokens, {1, seq_len_ * d_tok_});
  const Var h = t.gelu(t.add_row(t.matmul(flat, w1_), b1_));
  return t.add_row(t.matmul(h, w2_), b2_);
}

PrecomputedTextEncoder::PrecomputedTextEncoder(std::map<std::string, Tensor> tables)
    : tables_(std::move(tables)) {
  if (tables_.empty()) throw std::invalid_argument("precomputed text encoder: no tables");
  dim_ = tables_.begin()->second.cols();
  for (const auto& [name, t] : tables_) {
    if (t.cols() != dim_) {
      throw std::invalid_argument("precomputed text encoder: table '" + name +
                                  "' has inconsistent width");
    }
  }
}

PrecomputedTextEncoder PrecomputedTextEncoder::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open text embeddings: " + path);
  const auto j = nlohmann::json::parse(in);
  const std::size_t dim = j.at("d_c").get<std::size_t>();
  std::map<std::string, Tensor> tables;
  for (const auto& [name, rows] : j.at("categories").items()) {
    std::vector<double> data;
    std::size_t n = 0;
    for (const auto& row : rows) {
      if (row.size() != dim) throw std::runtime_error("text embedding row width != d_c");
      for (const auto& v : row) data.push_back(v.get<double>());
      ++n;
    }
    tables.emplace(name, Tensor({n, dim}, std::move(data)));
  }
  return PrecomputedTextEncoder(std::move(tables));
}

Var PrecomputedTextEncoder::encode(Tape& t, const Var&, const std::string& category,
                                   std::size_t prompt_index) const {
  auto it = tables_.find(category);
  if (it == tables_.end()) it = tables_.find("*");
  if (it == tables_.end()) {
    throw std::out_of_range("no pre-computed text embeddings for category '" + category + "'");
  }
  const Tensor& tab = it->second;
  if (prompt_index >= tab.rows()) throw std::out_of_range("prompt index beyond embedding table");
  const auto row = tab.row(prompt_index);
  return t.reshape(nc::constant(Tensor({1, dim_}, {row.begin(), row.end()})), {1, dim_});
}

Var encode_prompts(Tape& t, const PromptBank& bank, const TextEncoder& encoder,
                   const std::string& category, std::uint64_t class_seed,
                   std::size_t expected_dim) {
  if (encoder.out_dim() != expected_dim) {
    throw nc::ShapeError("text encoder output dim " + std::to_string(encoder.out_dim()) +
                         " != D_c " + std::to_string(expected_dim));
  }
  const Var cls = nc::constant(class_token(category, bank.d_tok(), class_seed));
  Var rows;
  for (std::size_t i = 0; i < bank.prompts(); ++i) {
    const Var tokens = t.concat(t.concat(bank.v_bg, bank.state(i), 0), cls, 0);
    const Var e = encoder.encode(t, tokens, category, i);
    if (e.value().size() != expected_dim) {
      throw nc::ShapeError("text encoder returned " + std::to_string(e.value().size()) +
                           " values, expected " + std::to_string(expected_dim));
    }
    rows = rows ? t.concat(rows, e, 0) : e;
  }
  return rows;
}

// ---------------------------------------------------------------- VAE

void VaeParams::collect(std::vector<Var>& out) const {
  enc_mu.collect(out);
  enc_logvar.collect(out);
  decoder.collect(out);
}

VaeParams make_vae(std::size_t d_clip, std::size_t d_z, std::size_t hidden, Rng& rng) {
  VaeParams p;
  p.enc_mu = make_mlp2(d_clip, hidden, d_z, Init::kScaledUniform, rng, "vae.enc_mu");
  p.enc_logvar = make_mlp2(d_clip, hidden, d_z, Init::kScaledUniform, rng, "vae.enc_logvar");
  p.decoder = make_mlp2(d_z, hidden, d_clip, Init::kScaledUniform, rng, "vae.decoder");
  return p;
}

LatentGaussian vae_encode(Tape& t, const Var& v_global, const VaeParams& p) {
  LatentGaussian q;
  q.mu = p.enc_mu.forward(t, v_global);
  q.logvar = t.clamp(p.enc_logvar.forward(t, v_global), -kLogvarClamp, kLogvarClamp);
  return q;
}

Var reparameterize(Tape& t, const Var& mu, const Var& logvar, const Tensor& eps) {
  if (mu.shape() != logvar.shape() || eps.size() != mu.value().size()) {
    throw nc::ShapeError("reparameterize: mu, logvar and eps must have equal shapes");
  }
  const Var sigma = t.exp(t.scale(logvar, 0.5));
  return t.add(mu, t.mul(nc::constant(eps.reshaped(mu.shape())), sigma));
}

VaeLoss vae_loss(Tape& t, const Var& v_global, const LatentGaussian& q, const VaeParams& p,
                 double beta) {
  VaeLoss out;
  const Var recon = p.decoder.forward(t, q.z);
  out.recon = t.sum(t.square(t.sub(v_global, recon)));
  // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
  const Var terms = t.sub(t.add(t.square(q.mu), t.exp(q.logvar)), t.add_scalar(q.logvar, 1.0));
  out.kl = t.scale(t.sum(terms), 0.5);
  out.total = t.add(out.recon, t.scale(out.kl, beta));
  return out;
}

// ---------------------------------------------------------------- injection

void InjectionParams::collect(std::vector<Var>& out) const {
  for (const Var* v : {&wq, &wk, &wv, &alpha, &ln_gain, &ln_bias}) out.push_back(*v);
}

InjectionParams make_injection(std::size_t d_clip, std::size_t d_z, std::size_t n_z,
                               std::size_t d_k, Rng& rng) {
  if (n_z == 0 || d_z % n_z != 0) {
    throw std::invalid_argument("latent size " + std::to_string(d_z) +
                                " is not divisible by the latent token count " +
                                std::to_string(n_z));
  }
  const std::size_t d_tok = d_z / n_z;
  InjectionParams p;
  p.wq = nc::parameter(init_tensor({d_clip, d_k}, d_clip, Init::kScaledUniform, rng), "inject.wq");
  p.wk = nc::parameter(init_tensor({d_tok, d_k}, d_tok, Init::kScaledUniform, rng), "inject.wk");
  p.wv = nc::parameter(init_tensor({d_tok, d_clip}, d_tok, Init::kScaledUniform, rng), "inject.wv");
  p.alpha = nc::parameter(Tensor({1}, 0.0), "inject.alpha");
  p.ln_gain = nc::parameter(Tensor({d_clip}, 1.0), "inject.ln.gain");
  p.ln_bias = nc::parameter(Tensor({d_clip}, 0.0), "inject.ln.bias");
  p.n_z = n_z;
  return p;
}

Var text_latent_attention(Tape& t, const Var& t_init, const Var& z, const InjectionParams& p) {
  const std::size_t d_z = z.value().size();
  if (p.n_z == 0 || d_z % p.n_z != 0) {
    throw nc::ShapeError("text_latent_attention: d_z=" + std::to_string(d_z) +
                         " not divisible by n_z=" + std::to_string(p.n_z));
  }
  const std::size_t d_tok = d_z / p.n_z;
  if (p.wk.shape()[0] != d_tok) {
    throw nc::ShapeError("text_latent_attention: latent token width does not match W_K");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p.wq.shape()[1]));
  const Var tokens = t.reshape(z, {p.n_z, d_tok});
  const Var q = t.matmul(t_init, p.wq);
  const Var k = t.matmul(tokens, p.wk);
  const Var v = t.matmul(tokens, p.wv);
  return t.matmul(t.softmax(t.scale(t.matmul_nt(q, k), inv_sqrt)), v);
}

Var gated_inject(Tape& t, const Var& t_init, const Var& delta, const Var& alpha,
                 const Var& ln_gain, const Var& ln_bias) {
  if (t_init.shape() != delta.shape()) {
    throw nc::ShapeError("gated_inject: t_init and delta shapes differ");
  }
  return t.layer_norm(t.add(t_init, t.mul_scalar(delta, alpha)), ln_gain, ln_bias);
}

MarginLoss margin_reg_loss(Tape& t, const Var& t_final, const Var& t_init, double xi) {
  if (t_final.shape() != t_init.shape()) {
    throw nc::ShapeError("margin_reg_loss: t_final and t_init shapes differ");
  }
  const Var anchor = t.stop_gradient(t_init);
  const std::size_t rows = t_final.value().rows();
  MarginLoss out;
  Var total;
  for (std::size_t r = 0; r < rows; ++r) {
    const Var c = t.cosine(t.slice_rows(t_final, r, r + 1), t.slice_rows(anchor, r, r + 1));
    out.cos.push_back(c.item());
    const Var hinge = t.relu(t.add_scalar(t.scale(c, -1.0), xi));
    total = total ? t.add(total, hinge) : hinge;
  }
  out.loss = t.scale(total, 1.0 / static_cast<double>(rows));
  return out;
}

}  // namespace ssvp
