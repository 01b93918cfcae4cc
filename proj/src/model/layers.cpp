#include "ssvp/layers.hpp"

#include <cmath>

namespace ssvp {

Rng seeded_stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return Rng(seq);
}

Tensor init_tensor(Shape shape, std::size_t fan_in, Init init, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  if (init == Init::kZero) return t;
  const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

Var Linear::forward(Tape& t, const Var& x) const { return t.add_row(t.matmul(x, weight), bias); }

void Linear::collect(std::vector<Var>& out) const {
  out.push_back(weight);
  out.push_back(bias);
}

Linear make_linear(std::size_t in, std::size_t out, Init init, Rng& rng, const std::string& name) {
  return Linear{nc::parameter(init_tensor({in, out}, in, init, rng), name + ".weight"),
                nc::parameter(Tensor({out}, 0.0), name + ".bias")};
}

Var Mlp2::forward(Tape& t, const Var& x) const { return fc2.forward(t, t.gelu(fc1.forward(t, x))); }

void Mlp2::collect(std::vector<Var>& out) const {
  fc1.collect(out);
  fc2.collect(out);
}

Mlp2 make_mlp2(std::size_t in, std::size_t hidden, std::size_t out, Init out_init, Rng& rng,
               const std::string& name) {
  Mlp2 m;
  m.fc1 = make_linear(in, hidden, Init::kScaledUniform, rng, name + ".fc1");
  m.fc2 = make_linear(hidden, out, out_init, rng, name + ".fc2");
  return m;
}

}  // namespace ssvp
