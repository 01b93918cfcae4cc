#include "ssvp/numcore/adam.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ssvp::nc {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hp) {
  if (!(hp.lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: params and grads differ in length");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match params");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
  }
}

double cosine_decay(double lr0, std::int64_t step, std::int64_t total) {
  if (total <= 0) return lr0;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double clip_grad_norm(std::span<Var> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.node()->grad->storage()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.node()->grad->storage()) g *= s;
    }
  }
  return norm;
}

Adam::Adam(std::vector<Group> groups, AdamHyper hp) : groups_(std::move(groups)), hp_(hp) {
  for (const auto& g : groups_) states_.emplace_back(g.params.size());
}

void Adam::step(double lr_scale) {
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    AdamHyper hp = hp_;
    hp.lr = groups_[gi].lr * lr_scale;
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Var& p = groups_[gi].params[pi];
      const Tensor g = p.grad();
      adam_step(p.mutable_value().data(), g.data(), states_[gi][pi], hp);
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_) {
    for (auto& p : g.params) p.zero_grad();
  }
}

}  // namespace ssvp::nc
