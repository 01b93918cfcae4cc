#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ssvp/numcore/tensor.hpp"

namespace ssvp {

/// 32-bit storage as read from or written to disk.
struct F32Tensor {
  nc::Shape shape;
  std::vector<float> data;

  nc::Tensor to_f64() const;
  static F32Tensor from_f64(const nc::Tensor& t);
  friend bool operator==(const F32Tensor&, const F32Tensor&) = default;
};

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t cells() const { return h * w; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// All features, labels and masks for one image, from two frozen encoders.
struct FeatureBundle {
  F32Tensor clip_global;               // [D_c]
  std::vector<F32Tensor> clip_locals;  // L x [N x D_c]
  F32Tensor dino_global;               // [D_d]
  std::vector<F32Tensor> dino_locals;  // L x [N x D_d]
  Grid grid;                           // N = h * w
  int label = 0;
  std::optional<F32Tensor> gt_mask;  // [H x W]; grid resolution or full resolution
  std::string category;
  std::string source_id;

  std::size_t layers() const { return clip_locals.size(); }
  std::size_t tokens() const { return grid.cells(); }
  std::size_t d_clip() const { return clip_global.data.size(); }
  std::size_t d_dino() const { return dino_global.data.size(); }

  /// Throws std::invalid_argument describing the first broken invariant.
  void validate() const;

  friend bool operator==(const FeatureBundle&, const FeatureBundle&) = default;
};

}  // namespace ssvp
