#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gapfill/error.hpp"

namespace gapfill::nn {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class Activation { identity, sigmoid, tanh };

template <typename Scalar>
inline Scalar sigmoid(Scalar a) {
  // Split on sign so exp never overflows.
  if (a >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-a));
  const Scalar e = std::exp(a);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
inline Scalar activate(Scalar a, Activation act) {
  switch (act) {
    case Activation::sigmoid: return sigmoid(a);
    case Activation::tanh: return std::tanh(a);
    case Activation::identity: break;
  }
  return a;
}

/// Derivative of the activation expressed through its output y.
template <typename Scalar>
inline Scalar activation_slope(Scalar y, Activation act) {
  switch (act) {
    case Activation::sigmoid: return y * (Scalar(1) - y);
    case Activation::tanh: return Scalar(1) - y * y;
    case Activation::identity: break;
  }
  return Scalar(1);
}

/// activation(W x + b), elementwise.
template <typename DW, typename Db, typename Dx>
Vector<typename DW::Scalar> dense_forward(const Eigen::MatrixBase<DW>& W, const Eigen::MatrixBase<Db>& b,
                                          const Eigen::MatrixBase<Dx>& x, Activation act) {
  using Scalar = typename DW::Scalar;
  if (W.cols() != x.size() || W.rows() != b.size()) {
    throw ShapeError("dense_forward: W is " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) +
                     ", b has " + std::to_string(b.size()) + ", x has " + std::to_string(x.size()));
  }
  Vector<Scalar> y = W * x.derived().template cast<Scalar>();
  y += b.derived().template cast<Scalar>();
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = activate(y[i], act);
  return y;
}

template <typename Scalar>
struct DenseGrad {
  Matrix<Scalar> dW;
  Vector<Scalar> db;
  Vector<Scalar> dx;
};

/// Gradients of a dense layer given its input x, output y and upstream dy.
template <typename DW, typename Dx, typename Dy, typename Dg>
DenseGrad<typename DW::Scalar> dense_backward(const Eigen::MatrixBase<DW>& W, const Eigen::MatrixBase<Dx>& x,
                                              const Eigen::MatrixBase<Dy>& y, Activation act,
                                              const Eigen::MatrixBase<Dg>& dy) {
  using Scalar = typename DW::Scalar;
  if (W.cols() != x.size() || W.rows() != y.size() || y.size() != dy.size()) {
    throw ShapeError("dense_backward: record does not match layer shape");
  }
  Vector<Scalar> da(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) da[i] = dy[i] * activation_slope<Scalar>(y[i], act);
  return {da * x.transpose(), da, W.transpose() * da};
}

/// Named parameter blocks with a fixed flattening order.
class ParamStore {
 public:
  Eigen::MatrixXd& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  bool contains(const std::string& name) const { return index_.contains(name); }
  Eigen::MatrixXd& block(const std::string& name);
  const Eigen::MatrixXd& block(const std::string& name) const;
  Eigen::MatrixXd& block(std::size_t i) { return blocks_[i].second; }
  const Eigen::MatrixXd& block(std::size_t i) const { return blocks_[i].second; }
  const std::string& name(std::size_t i) const { return blocks_[i].first; }
  std::size_t block_count() const { return blocks_.size(); }

  /// Total number of scalars.
  Eigen::Index size() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat);
  ParamStore zeros_like() const;
  void set_zero();
  ParamStore& operator+=(const ParamStore& other);
  bool all_finite() const;
  bool same_layout(const ParamStore& other) const;

  /// Versioned JSON with row-major values written as shortest round-trip decimals.
  std::string to_json_text() const;
  static ParamStore from_json_text(const std::string& text);

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.blocks_ == b.blocks_;
  }

 private:
  std::vector<std::pair<std::string, Eigen::MatrixXd>> blocks_;
  std::map<std::string, std::size_t> index_;
};

struct BlockShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool bias = false;
};
using ShapePlan = std::vector<BlockShape>;

/// Weights ~ U(+-sqrt(6 / (fan_in + fan_out))) with fan_in = cols, fan_out = rows; biases zero.
ParamStore init_params(const ShapePlan& plan, std::uint64_t seed);

inline double glorot_bound(Eigen::Index rows, Eigen::Index cols) {
  return std::sqrt(6.0 / static_cast<double>(rows + cols));
}

// ---------------------------------------------------------------------------
// GRU
//
//   z  = sigmoid(Wz x + Uz h_prev + bz)
//   r  = sigmoid(Wr x + Ur h_prev + br)
//   hc = tanh(Wh x + Uh (r * h_prev) + bh)
//   h  = (1 - z) * h_prev + z * hc

/// Appends the nine blocks of one GRU cell under `prefix`.
void add_gru_shapes(ShapePlan& plan, const std::string& prefix, Eigen::Index input, Eigen::Index hidden);

/// Non-owning view of one GRU cell's blocks inside a ParamStore.
template <typename M>
struct BasicGruView {
  M* Wz;
  M* Wr;
  M* Wh;
  M* Uz;
  M* Ur;
  M* Uh;
  M* bz;
  M* br;
  M* bh;

  Eigen::Index input() const { return Wz->cols(); }
  Eigen::Index hidden() const { return Wz->rows(); }
};
using GruView = BasicGruView<const Eigen::MatrixXd>;
using GruGradView = BasicGruView<Eigen::MatrixXd>;

GruView gru_view(const ParamStore& store, const std::string& prefix);
GruGradView gru_grad_view(ParamStore& store, const std::string& prefix);

/// One GRU step.
Eigen::VectorXd gru_cell(const GruView& cell, const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::VectorXd>& h_prev);

/// Forward record of a GRU run over a sequence; everything backward needs.
struct GruTrace {
  Eigen::Index input = 0;
  Eigen::Index hidden = 0;
  Eigen::Index length = 0;
  bool reverse = false;
  Eigen::MatrixXd x;   // input x length
  Eigen::MatrixXd h;   // hidden x length, output state at each time index
  Eigen::MatrixXd z;   // gates, indexed by time
  Eigen::MatrixXd r;
  Eigen::MatrixXd hc;
};

/// Runs the cell over columns of `inputs` from a zero state. With reverse set
/// the scan goes from the last column to the first.
void gru_sequence_forward(const GruView& cell, const Eigen::Ref<const Eigen::MatrixXd>& inputs, bool reverse,
                          GruTrace& trace);

/// Backpropagation through time. `dh` holds dLoss/dh_t for every output column;
/// parameter gradients are accumulated into `grad`, input gradients written to `dx`.
void gru_sequence_backward(const GruView& cell, const GruTrace& trace,
                           const Eigen::Ref<const Eigen::MatrixXd>& dh, const GruGradView& grad,
                           Eigen::Ref<Eigen::MatrixXd> dx);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct BasicAdamState {
  Vector<Scalar> m;
  Vector<Scalar> v;
  std::int64_t step = 0;
};
using AdamState = BasicAdamState<double>;

/// Bias-corrected Adam update in place. Empty moment vectors start at zero.
template <typename Scalar>
void adam_step(Eigen::Ref<Vector<Scalar>> params, const Eigen::Ref<const Vector<Scalar>>& grads,
               BasicAdamState<Scalar>& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params and grads differ in length");
  if (state.m.size() == 0 && state.v.size() == 0) {
    state.m = Vector<Scalar>::Zero(params.size());
    state.v = Vector<Scalar>::Zero(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: state length differs from params");
  }
  ++state.step;
  const Scalar b1 = Scalar(cfg.beta1);
  const Scalar b2 = Scalar(cfg.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grads;
  state.v = b2 * state.v + (Scalar(1) - b2) * grads.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(state.step));
  const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(state.step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const Scalar m_hat = state.m[i] / c1;
    const Scalar v_hat = state.v[i] / c2;
    params[i] -= Scalar(cfg.lr) * m_hat / (std::sqrt(v_hat) + Scalar(cfg.eps));
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Loss at `params`; when `grad` is non-null it is filled with the analytic gradient.
using LossFn = std::function<double(const ParamStore& params, ParamStore* grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_block;
  Eigen::Index worst_index = -1;
  Eigen::Index coordinates = 0;
};

/// Central differences against the analytic gradient, every coordinate.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const LossFn& loss, const ParamStore& params, double h = 1e-5);

}  // namespace gapfill::nn
