#include "ssvp/feature_bundle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssvp {

nc::Tensor F32Tensor::to_f64() const {
  return nc::Tensor(shape, std::vector<double>(data.begin(), data.end()));
}

F32Tensor F32Tensor::from_f64(const nc::Tensor& t) {
  F32Tensor out;
  out.shape = t.shape();
  out.data.reserve(t.size());
  for (double v : t.storage()) out.data.push_back(static_cast<float>(v));
  return out;
}

namespace {

void check_matrix(const F32Tensor& t, std::size_t rows, std::size_t cols, const std::string& what) {
  if (t.shape.size() != 2 || t.shape[0] != rows || t.shape[1] != cols ||
      t.data.size() != rows * cols) {
    throw std::invalid_argument(what + " must be " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + nc::shape_str(t.shape));
  }
}

void check_finite(const F32Tensor& t, const std::string& what) {
  if (!std::all_of(t.data.begin(), t.data.end(), [](float v) { return std::isfinite(v); })) {
    throw std::invalid_argument(what + " contains non-finite values");
  }
}

}  // namespace

void FeatureBundle::validate() const {
  if (grid.h == 0 || grid.w == 0) throw std::invalid_argument("grid must be non-empty");
  if (clip_locals.empty()) throw std::invalid_argument("bundle has no local layers");
  if (clip_locals.size() != dino_locals.size()) {
    throw std::invalid_argument("clip and dino layer counts differ");
  }
  const std::size_t dc = d_clip();
  const std::size_t dd = d_dino();
  if (dc == 0 || dd == 0) throw std::invalid_argument("global tokens must be non-empty");
  if (clip_global.shape != nc::Shape{dc} || dino_global.shape != nc::Shape{dd}) {
    throw std::invalid_argument("global tokens must be rank-1");
  }
  check_finite(clip_global, "clip_global");
  check_finite(dino_global, "dino_global");
  for (std::size_t l = 0; l < layers(); ++l) {
    check_matrix(clip_locals[l], tokens(), dc, "clip_local_" + std::to_string(l));
    check_matrix(dino_locals[l], tokens(), dd, "dino_local_" + std::to_string(l));
    check_finite(clip_locals[l], "clip_local_" + std::to_string(l));
    check_finite(dino_locals[l], "dino_local_" + std::to_string(l));
  }
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
  if (gt_mask) {
    if (gt_mask->shape.size() != 2 || gt_mask->shape[0] < grid.h || gt_mask->shape[1] < grid.w ||
        gt_mask->data.size() != gt_mask->shape[0] * gt_mask->shape[1]) {
      throw std::invalid_argument("gt_mask shape " + nc::shape_str(gt_mask->shape) +
                                  " incompatible with grid");
    }
    if (!std::all_of(gt_mask->data.begin(), gt_mask->data.end(),
                     [](float v) { return v == 0.0f || v == 1.0f; })) {
      throw std::invalid_argument("gt_mask must be binary");
    }
  }
}

}  // namespace ssvp
