#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ssvp/numcore/tape.hpp"

namespace ssvp {

using nc::Shape;
using nc::Tape;
using nc::Tensor;
using nc::Var;

using Rng = std::mt19937_64;

/// Independent generator `id` derived from a run seed.
Rng seeded_stream(std::uint64_t seed, std::uint64_t id);

enum class Init {
  kScaledUniform,  // U(-a, a) with a = sqrt(3 / fan_in), i.e. variance 1/fan_in
  kZero,
};

Tensor init_tensor(Shape shape, std::size_t fan_in, Init init, Rng& rng);

/// y = x W + b with W [in x out].
struct Linear {
  Var weight;
  Var bias;

  Var forward(Tape& t, const Var& x) const;
  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
  void collect(std::vector<Var>& out) const;
};

Linear make_linear(std::size_t in, std::size_t out, Init init, Rng& rng, const std::string& name);

/// Two-layer perceptron with GELU between the layers.
struct Mlp2 {
  Linear fc1;
  Linear fc2;

  Var forward(Tape& t, const Var& x) const;
  std::size_t in_dim() const { return fc1.in_dim(); }
  std::size_t out_dim() const { return fc2.out_dim(); }
  void collect(std::vector<Var>& out) const;
};

Mlp2 make_mlp2(std::size_t in, std::size_t hidden, std::size_t out, Init out_init, Rng& rng,
               const std::string& name);

}  // namespace ssvp
