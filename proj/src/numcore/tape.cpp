#include "ssvp/numcore/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ssvp::nc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap view(const Tensor& t) { return CMap(t.data().data(), t.rows(), t.cols()); }
MMap view(Tensor& t) { return MMap(t.data().data(), t.rows(), t.cols()); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_one(const char* op, const Tensor& s) {
  if (s.size() != 1) {
    throw ShapeError(std::string(op) + ": expected one-element tensor, got " +
                     shape_str(s.shape()));
  }
}

int resolve_axis(const char* op, int axis) {
  if (axis == -1) return 1;
  if (axis != 0 && axis != 1) {
    throw ShapeError(std::string(op) + ": axis must be 0, 1 or -1");
  }
  return axis;
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Selects rows (axis 1 reduction) or columns (axis 0 reduction) lengths.
struct AxisGeom {
  std::size_t outer;   // number of independent reductions
  std::size_t inner;   // length of each reduction
  std::size_t stride;  // distance between consecutive reduced elements
  std::size_t step;    // distance between consecutive reductions
};

AxisGeom geom(const Tensor& t, int axis) {
  if (axis == 1) return {t.rows(), t.cols(), 1, t.cols()};
  return {t.cols(), t.rows(), t.cols(), 1};
}

Shape reduced_shape(const Tensor& t, int axis) {
  return axis == 1 ? matrix_shape(t.rows(), 1) : matrix_shape(1, t.cols());
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (!g.all_finite()) throw NumericError("non-finite gradient");
  if (!grad) {
    grad = g;
    return;
  }
  auto& dst = grad->storage();
  const auto& src = g.storage();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor& Node::grad_ref() {
  if (!grad) grad = Tensor(value.shape(), 0.0);
  return *grad;
}

Tensor Var::grad() const {
  if (node_->grad) return *node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

Var parameter(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return Var(std::move(n));
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Tape::emit(const char* op, Tensor value, std::vector<Var> inputs,
               std::function<void(const Tensor&, Node&)> adjoint) {
  if (!value.all_finite()) {
    throw NumericError(std::string("op '") + op + "' produced a non-finite value");
  }
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  out->requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (out->requires_grad) {
    if (backward_done_) throw std::logic_error("tape already consumed by backward()");
    std::weak_ptr<Node> weak = out;
    records_.push_back({op, [weak, adjoint = std::move(adjoint)]() {
                          auto o = weak.lock();
                          if (!o || !o->grad) return;
                          adjoint(*o->grad, *o);
                        }});
  }
  return Var(std::move(out));
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(records_.size());
  for (const auto& r : records_) names.push_back(r.op);
  return names;
}

void Tape::reset() {
  records_.clear();
  backward_done_ = false;
}

void Tape::backward(const Var& loss) {
  if (backward_done_) throw std::logic_error("backward() called twice without reset()");
  if (loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::logic_error("loss does not depend on any parameter");
  backward_done_ = true;
  loss.node()->accumulate(Tensor(loss.shape(), 1.0));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    try {
      it->adjoint();
    } catch (const NumericError& e) {
      throw NumericError("backward of op '" + it->op + "': " + e.what());
    }
  }
  // Intermediates hold no further use; parameters keep their grads.
  records_.clear();
}

// ---------------------------------------------------------------- linear algebra

Var Tape::matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(A.shape()) + " * " +
                     shape_str(B.shape()));
  }
  Tensor C(matrix_shape(A.rows(), B.cols()));
  view(C).noalias() = view(A) * view(B);
  return emit("matmul", std::move(C), {a, b}, [a, b](const Tensor& g, Node&) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      view(ga).noalias() = view(g) * view(b.value()).transpose();
      a.node()->accumulate(ga);
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      view(gb).noalias() = view(a.value()).transpose() * view(g);
      b.node()->accumulate(gb);
    }
  });
}

Var Tape::matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(A.shape()) + " * " +
                     shape_str(B.shape()) + "^T");
  }
  Tensor C(matrix_shape(A.rows(), B.rows()));
  view(C).noalias() = view(A) * view(B).transpose();
  return emit("matmul_nt", std::move(C), {a, b}, [a, b](const Tensor& g, Node&) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      view(ga).noalias() = view(g) * view(b.value());
      a.node()->accumulate(ga);
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      view(gb).noalias() = view(g).transpose() * view(a.value());
      b.node()->accumulate(gb);
    }
  });
}

Var Tape::transpose(const Var& a) {
  const Tensor& A = a.value();
  Tensor T(matrix_shape(A.cols(), A.rows()));
  view(T) = view(A).transpose();
  return emit("transpose", std::move(T), {a}, [a](const Tensor& g, Node&) {
    Tensor ga(a.shape());
    view(ga) = view(g).transpose();
    a.node()->accumulate(ga);
  });
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return emit("add", std::move(out), {a, b}, [a, b](const Tensor& g, Node&) {
    if (a.requires_grad()) a.node()->accumulate(g);
    if (b.requires_grad()) b.node()->accumulate(g);
  });
}

Var Tape::sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return emit("sub", std::move(out), {a, b}, [a, b](const Tensor& g, Node&) {
    if (a.requires_grad()) a.node()->accumulate(g);
    if (b.requires_grad()) {
      Tensor gb = g;
      for (auto& v : gb.storage()) v = -v;
      b.node()->accumulate(gb);
    }
  });
}

Var Tape::mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return emit("mul", std::move(out), {a, b}, [a, b](const Tensor& g, Node&) {
    if (a.requires_grad()) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      a.node()->accumulate(ga);
    }
    if (b.requires_grad()) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      b.node()->accumulate(gb);
    }
  });
}

Var Tape::add_row(const Var& x, const Var& b) {
  const Tensor& X = x.value();
  if (b.value().size() != X.cols()) {
    throw ShapeError("add_row: bias of " + std::to_string(b.value().size()) +
                     " elements for rows of " + std::to_string(X.cols()));
  }
  Tensor out = X;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < X.cols(); ++c) row[c] += b.value()[c];
  }
  return emit("add_row", std::move(out), {x, b}, [x, b](const Tensor& g, Node&) {
    if (x.requires_grad()) x.node()->accumulate(g);
    if (b.requires_grad()) {
      Tensor gb(b.shape(), 0.0);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += row[c];
      }
      b.node()->accumulate(gb);
    }
  });
}

Var Tape::scale(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v *= s;
  return emit("scale", std::move(out), {x}, [x, s](const Tensor& g, Node&) {
    Tensor gx = g;
    for (auto& v : gx.storage()) v *= s;
    x.node()->accumulate(gx);
  });
}

Var Tape::add_scalar(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v += s;
  return emit("add_scalar", std::move(out), {x},
              [x](const Tensor& g, Node&) { x.node()->accumulate(g); });
}

Var Tape::mul_scalar(const Var& x, const Var& s) {
  require_one("mul_scalar", s.value());
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (auto& v : out.storage()) v *= sv;
  return emit("mul_scalar", std::move(out), {x, s}, [x, s](const Tensor& g, Node&) {
    const double sv = s.value()[0];
    if (x.requires_grad()) {
      Tensor gx = g;
      for (auto& v : gx.storage()) v *= sv;
      x.node()->accumulate(gx);
    }
    if (s.requires_grad()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.value()[i];
      s.node()->accumulate(Tensor(s.shape(), acc));
    }
  });
}

Var Tape::exp(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = std::exp(v);
  return emit("exp", std::move(out), {x}, [x](const Tensor& g, Node& o) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= o.value[i];
    x.node()->accumulate(gx);
  });
}

Var Tape::log(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = std::log(v);
  return emit("log", std::move(out), {x}, [x](const Tensor& g, Node&) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] /= x.value()[i];
    x.node()->accumulate(gx);
  });
}

Var Tape::pow(const Var& x, double p) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = std::pow(v, p);
  return emit("pow", std::move(out), {x}, [x, p](const Tensor& g, Node&) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] *= p == 0.0 ? 0.0 : p * std::pow(x.value()[i], p - 1.0);
    }
    x.node()->accumulate(gx);
  });
}

Var Tape::square(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = v * v;
  return emit("square", std::move(out), {x}, [x](const Tensor& g, Node&) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 2.0 * x.value()[i];
    x.node()->accumulate(gx);
  });
}

Var Tape::relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return emit("relu", std::move(out), {x}, [x](const Tensor& g, Node&) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (!(x.value()[i] > 0.0)) gx[i] = 0.0;
    }
    x.node()->accumulate(gx);
  });
}

Var Tape::clamp(const Var& x, double lo, double hi) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = std::clamp(v, lo, hi);
  return emit("clamp", std::move(out), {x}, [x, lo, hi](const Tensor& g, Node&) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = x.value()[i];
      if (v < lo || v > hi) gx[i] = 0.0;
    }
    x.node()->accumulate(gx);
  });
}

Var Tape::gelu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = gelu_value(v);
  return emit("gelu", std::move(out), {x}, [x](const Tensor& g, Node&) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= gelu_grad(x.value()[i]);
    x.node()->accumulate(gx);
  });
}

Var Tape::sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = sigmoid_value(v);
  return emit("sigmoid", std::move(out), {x}, [x](const Tensor& g, Node& o) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= o.value[i] * (1.0 - o.value[i]);
    x.node()->accumulate(gx);
  });
}

// ---------------------------------------------------------------- normalization

Var Tape::softmax(const Var& x, int axis) {
  axis = resolve_axis("softmax", axis);
  const Tensor& X = x.value();
  Tensor out(X.shape());
  const auto gm = geom(X, axis);
  for (std::size_t o = 0; o < gm.outer; ++o) {
    const std::size_t base = o * gm.step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < gm.inner; ++i) mx = std::max(mx, X[base + i * gm.stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < gm.inner; ++i) {
      const double e = std::exp(X[base + i * gm.stride] - mx);
      out[base + i * gm.stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < gm.inner; ++i) out[base + i * gm.stride] /= z;
  }
  return emit("softmax", std::move(out), {x}, [x, gm](const Tensor& g, Node& o) {
    Tensor gx(x.shape());
    const Tensor& y = o.value;
    for (std::size_t k = 0; k < gm.outer; ++k) {
      const std::size_t base = k * gm.step;
      double dot = 0.0;
      for (std::size_t i = 0; i < gm.inner; ++i) {
        const std::size_t idx = base + i * gm.stride;
        dot += g[idx] * y[idx];
      }
      for (std::size_t i = 0; i < gm.inner; ++i) {
        const std::size_t idx = base + i * gm.stride;
        gx[idx] = y[idx] * (g[idx] - dot);
      }
    }
    x.node()->accumulate(gx);
  });
}

Var Tape::layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  if (n < 2) throw ShapeError("layer_norm: normalized axis must have length >= 2");
  if (gain.value().size() != n || bias.value().size() != n) {
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(n) +
                     " elements");
  }
  Tensor out(X.shape());
  Tensor xhat(X.shape());
  std::vector<double> inv_std(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = X.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * inv_std[r];
      xhat.at(r, c) = h;
      out.at(r, c) = h * gain.value()[c] + bias.value()[c];
    }
  }
  return emit("layer_norm", std::move(out), {x, gain, bias},
              [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  const Tensor& g, Node&) {
                const std::size_t n = xhat.cols();
                if (gain.requires_grad() || bias.requires_grad()) {
                  Tensor gg(gain.shape(), 0.0);
                  Tensor gb(bias.shape(), 0.0);
                  for (std::size_t r = 0; r < xhat.rows(); ++r) {
                    for (std::size_t c = 0; c < n; ++c) {
                      gg[c] += g.at(r, c) * xhat.at(r, c);
                      gb[c] += g.at(r, c);
                    }
                  }
                  if (gain.requires_grad()) gain.node()->accumulate(gg);
                  if (bias.requires_grad()) bias.node()->accumulate(gb);
                }
                if (x.requires_grad()) {
                  Tensor gx(x.shape());
                  std::vector<double> dh(n);
                  for (std::size_t r = 0; r < xhat.rows(); ++r) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      dh[c] = g.at(r, c) * gain.value()[c];
                      mean_dh += dh[c];
                      mean_dh_h += dh[c] * xhat.at(r, c);
                    }
                    mean_dh /= static_cast<double>(n);
                    mean_dh_h /= static_cast<double>(n);
                    for (std::size_t c = 0; c < n; ++c) {
                      gx.at(r, c) = inv_std[r] * (dh[c] - mean_dh - xhat.at(r, c) * mean_dh_h);
                    }
                  }
                  x.node()->accumulate(gx);
                }
              });
}

// ---------------------------------------------------------------- shape

Var Tape::reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return emit("reshape", std::move(out), {x},
              [x](const Tensor& g, Node&) { x.node()->accumulate(g.reshaped(x.shape())); });
}

Var Tape::concat(const Var& a, const Var& b, int axis) {
  axis = resolve_axis("concat", axis);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (axis == 1) {
    if (A.rows() != B.rows()) throw ShapeError("concat: row counts differ");
    Tensor out(matrix_shape(A.rows(), A.cols() + B.cols()));
    for (std::size_t r = 0; r < A.rows(); ++r) {
      std::copy(A.row(r).begin(), A.row(r).end(), out.row(r).begin());
      std::copy(B.row(r).begin(), B.row(r).end(), out.row(r).begin() + A.cols());
    }
    return emit("concat", std::move(out), {a, b}, [a, b](const Tensor& g, Node&) {
      const std::size_t ca = a.value().cols();
      const std::size_t cb = b.value().cols();
      if (a.requires_grad()) {
        Tensor ga(a.shape());
        for (std::size_t r = 0; r < ga.rows(); ++r) {
          std::copy_n(g.row(r).begin(), ca, ga.row(r).begin());
        }
        a.node()->accumulate(ga);
      }
      if (b.requires_grad()) {
        Tensor gb(b.shape());
        for (std::size_t r = 0; r < gb.rows(); ++r) {
          std::copy_n(g.row(r).begin() + ca, cb, gb.row(r).begin());
        }
        b.node()->accumulate(gb);
      }
    });
  }
  if (A.cols() != B.cols()) throw ShapeError("concat: column counts differ");
  std::vector<double> data(A.storage());
  data.insert(data.end(), B.storage().begin(), B.storage().end());
  Tensor out(matrix_shape(A.rows() + B.rows(), A.cols()), std::move(data));
  return emit("concat", std::move(out), {a, b}, [a, b](const Tensor& g, Node&) {
    const std::size_t na = a.value().size();
    if (a.requires_grad()) {
      std::vector<double> d(g.storage().begin(), g.storage().begin() + na);
      a.node()->accumulate(Tensor(a.shape(), std::move(d)));
    }
    if (b.requires_grad()) {
      std::vector<double> d(g.storage().begin() + na, g.storage().end());
      b.node()->accumulate(Tensor(b.shape(), std::move(d)));
    }
  });
}

Var Tape::slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  if (begin >= end || end > X.rows()) throw ShapeError("slice_rows: bad range");
  const std::size_t c = X.cols();
  std::vector<double> d(X.storage().begin() + begin * c, X.storage().begin() + end * c);
  Tensor out(matrix_shape(end - begin, c), std::move(d));
  return emit("slice_rows", std::move(out), {x}, [x, begin](const Tensor& g, Node&) {
    Tensor gx(x.shape(), 0.0);
    std::copy(g.storage().begin(), g.storage().end(),
              gx.storage().begin() + begin * x.value().cols());
    x.node()->accumulate(gx);
  });
}

Var Tape::slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  if (begin >= end || end > X.cols()) throw ShapeError("slice_cols: bad range");
  Tensor out(matrix_shape(X.rows(), end - begin));
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::copy(X.row(r).begin() + begin, X.row(r).begin() + end, out.row(r).begin());
  }
  return emit("slice_cols", std::move(out), {x}, [x, begin](const Tensor& g, Node&) {
    Tensor gx(x.shape(), 0.0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      std::copy(g.row(r).begin(), g.row(r).end(), gx.row(r).begin() + begin);
    }
    x.node()->accumulate(gx);
  });
}

Var Tape::stop_gradient(const Var& x) {
  // Recorded so the tape reflects it, but the adjoint discards the gradient.
  return emit("stop_gradient", x.value(), {}, [](const Tensor&, Node&) {});
}

// ---------------------------------------------------------------- reductions

Var Tape::sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().storage()) s += v;
  return emit("sum", Tensor::scalar(s), {x}, [x](const Tensor& g, Node&) {
    x.node()->accumulate(Tensor(x.shape(), g[0]));
  });
}

Var Tape::mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().storage()) s += v;
  return emit("mean", Tensor::scalar(s / n), {x}, [x, n](const Tensor& g, Node&) {
    x.node()->accumulate(Tensor(x.shape(), g[0] / n));
  });
}

Var Tape::sum(const Var& x, int axis) {
  axis = resolve_axis("sum", axis);
  const Tensor& X = x.value();
  const auto gm = geom(X, axis);
  Tensor out(reduced_shape(X, axis), 0.0);
  for (std::size_t o = 0; o < gm.outer; ++o) {
    for (std::size_t i = 0; i < gm.inner; ++i) out[o] += X[o * gm.step + i * gm.stride];
  }
  return emit("sum_axis", std::move(out), {x}, [x, gm](const Tensor& g, Node&) {
    Tensor gx(x.shape());
    for (std::size_t o = 0; o < gm.outer; ++o) {
      for (std::size_t i = 0; i < gm.inner; ++i) gx[o * gm.step + i * gm.stride] = g[o];
    }
    x.node()->accumulate(gx);
  });
}

Var Tape::mean(const Var& x, int axis) {
  axis = resolve_axis("mean", axis);
  const auto gm = geom(x.value(), axis);
  return scale(sum(x, axis), 1.0 / static_cast<double>(gm.inner));
}

Var Tape::max(const Var& x, int axis) {
  axis = resolve_axis("max", axis);
  const Tensor& X = x.value();
  const auto gm = geom(X, axis);
  Tensor out(reduced_shape(X, axis));
  std::vector<std::size_t> arg(gm.outer);
  for (std::size_t o = 0; o < gm.outer; ++o) {
    std::size_t best = o * gm.step;
    for (std::size_t i = 1; i < gm.inner; ++i) {
      const std::size_t idx = o * gm.step + i * gm.stride;
      if (X[idx] > X[best]) best = idx;
    }
    arg[o] = best;
    out[o] = X[best];
  }
  return emit("max_axis", std::move(out), {x}, [x, arg = std::move(arg)](const Tensor& g, Node&) {
    Tensor gx(x.shape(), 0.0);
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += g[o];
    x.node()->accumulate(gx);
  });
}

Var Tape::topk_mean(const Var& x, std::size_t k) {
  const Tensor& X = x.value();
  if (k == 0 || k > X.size()) {
    throw ShapeError("topk_mean: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(X.size()) + "]");
  }
  std::vector<std::size_t> idx(X.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&X](std::size_t a, std::size_t b) { return X[a] > X[b]; });
  idx.resize(k);
  double s = 0.0;
  for (auto i : idx) s += X[i];
  const double kk = static_cast<double>(k);
  return emit("topk_mean", Tensor::scalar(s / kk), {x},
              [x, idx = std::move(idx), kk](const Tensor& g, Node&) {
                Tensor gx(x.shape(), 0.0);
                for (auto i : idx) gx[i] = g[0] / kk;
                x.node()->accumulate(gx);
              });
}

// ---------------------------------------------------------------- similarity / losses

Var Tape::cosine_rows(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) {
    throw ShapeError("cosine_rows: feature dims differ " + shape_str(A.shape()) + " vs " +
                     shape_str(B.shape()));
  }
  const std::size_t m = A.rows();
  const std::size_t n = B.rows();
  std::vector<double> na(m), nb(n);
  for (std::size_t i = 0; i < m; ++i) na[i] = std::max(view(A).row(i).norm(), kNormFloor);
  for (std::size_t j = 0; j < n; ++j) nb[j] = std::max(view(B).row(j).norm(), kNormFloor);
  Tensor out(matrix_shape(m, n));
  view(out).noalias() = view(A) * view(B).transpose();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= na[i] * nb[j];
  }
  return emit("cosine_rows", std::move(out), {a, b},
              [a, b, na = std::move(na), nb = std::move(nb)](const Tensor& g, Node& o) {
                const Tensor& A = a.value();
                const Tensor& B = b.value();
                const Tensor& C = o.value;
                // d c_ij / d a_i = b_j/(|a_i||b_j|) - c_ij a_i/|a_i|^2 (when above floor)
                Tensor gs(g.shape());  // g_ij / (|a_i||b_j|)
                for (std::size_t i = 0; i < C.rows(); ++i) {
                  for (std::size_t j = 0; j < C.cols(); ++j) gs.at(i, j) = g.at(i, j) / (na[i] * nb[j]);
                }
                if (a.requires_grad()) {
                  Tensor ga(a.shape());
                  view(ga).noalias() = view(gs) * view(B);
                  for (std::size_t i = 0; i < A.rows(); ++i) {
                    if (na[i] <= kNormFloor) continue;
                    double w = 0.0;
                    for (std::size_t j = 0; j < C.cols(); ++j) w += g.at(i, j) * C.at(i, j);
                    w /= na[i] * na[i];
                    for (std::size_t c = 0; c < A.cols(); ++c) ga.at(i, c) -= w * A.at(i, c);
                  }
                  a.node()->accumulate(ga);
                }
                if (b.requires_grad()) {
                  Tensor gb(b.shape());
                  view(gb).noalias() = view(gs).transpose() * view(A);
                  for (std::size_t j = 0; j < B.rows(); ++j) {
                    if (nb[j] <= kNormFloor) continue;
                    double w = 0.0;
                    for (std::size_t i = 0; i < C.rows(); ++i) w += g.at(i, j) * C.at(i, j);
                    w /= nb[j] * nb[j];
                    for (std::size_t c = 0; c < B.cols(); ++c) gb.at(j, c) -= w * B.at(j, c);
                  }
                  b.node()->accumulate(gb);
                }
              });
}

Var Tape::cosine(const Var& a, const Var& b) {
  if (a.value().size() != b.value().size()) throw ShapeError("cosine: lengths differ");
  const Shape flat{1, a.value().size()};
  return reshape(cosine_rows(reshape(a, flat), reshape(b, flat)), {1});
}

Var Tape::bce_with_logits(const Var& logit, double target) {
  require_one("bce_with_logits", logit.value());
  const double s = logit.value()[0];
  const double loss = std::max(s, 0.0) - s * target + std::log1p(std::exp(-std::abs(s)));
  return emit("bce_with_logits", Tensor(logit.shape(), loss), {logit},
              [logit, target](const Tensor& g, Node&) {
                const double p = sigmoid_value(logit.value()[0]);
                logit.node()->accumulate(Tensor(logit.shape(), g[0] * (p - target)));
              });
}

}  // namespace ssvp::nc
