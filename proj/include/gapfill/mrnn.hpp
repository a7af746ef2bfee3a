#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gapfill/data.hpp"
#include "gapfill/masking.hpp"
#include "gapfill/nncore.hpp"

namespace gapfill {

struct MrnnDims {
  Eigen::Index streams = 2;
  Eigen::Index hidden = 2;
  Eigen::Index layers = 2;
};

/// Per-timestep GRU input for one stream: (z, m, scaled delta).
inline constexpr Eigen::Index kMrnnInputWidth = 3;

/// Multi-directional recurrent imputer.
///
/// Interpolation block: for every stream a stack of GRU layers runs forward
/// and, separately, backward over that stream's (z, m, delta) inputs; weights
/// are shared across streams. The estimate at t reads the forward top state at
/// t-1 and the backward top state at t+1 (zero beyond the ends), so a value
/// never feeds its own estimate. A per-stream sigmoid map turns the two states
/// into x_tilde.
///
/// Imputation block: x_hat_t = sigmoid(W [z_t * m_t; m_t; x_tilde_t] + b), where
/// the diagonals of the blocks acting on z_t * m_t and on m_t are held at zero.
/// A scored training entry always has its own mask bit set, so that weight
/// would only learn an offset that vanishes when the entry is actually missing.
struct MrnnModel {
  MrnnDims dims;
  double delta_scale = 1.0;
  nn::ParamStore params;
  std::optional<std::vector<StreamRange>> norm;

  static nn::ShapePlan shape_plan(const MrnnDims& dims);
  static MrnnModel initialize(const MrnnDims& dims, double delta_scale, std::uint64_t seed);

  /// Re-zeroes the constrained diagonals and checks all parameters are finite.
  void enforce_constraints();

  std::string to_json_text() const;
  static MrnnModel from_json_text(const std::string& text);
};

/// 1 / (L * mean grid spacing) for the cohort's shared grid.
double default_delta_scale(const Cohort& cohort);

/// x_tilde, D x L, every entry in (0, 1).
Grid interpolate_block(const MrnnModel& model, const MaskedTriplet& triplet);

/// x_hat_t for one time step.
Eigen::VectorXd impute_block(const MrnnModel& model, const Eigen::Ref<const Eigen::VectorXd>& z_t,
                             const Eigen::Ref<const Eigen::VectorXd>& m_t,
                             const Eigen::Ref<const Eigen::VectorXd>& x_tilde_t);

/// Full forward pass; returns x_hat (D x L).
Grid mrnn_forward(const MrnnModel& model, const MaskedTriplet& triplet);

/// Masked loss of one segment, sum m (x_hat - z)^2 / sum m (0 when nothing is
/// observed). When `grad` is non-null the gradient is added into it.
double segment_loss(const MrnnModel& model, const MaskedTriplet& triplet, nn::ParamStore* grad);

/// Sum of segment losses over the given triplets.
double total_loss(const MrnnModel& model, std::span<const MaskedTriplet> triplets, nn::ParamStore* grad);

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 500;
  std::size_t batch = 32;
  int patience = 25;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  MrnnDims dims{};

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double grad_norm = 0.0;  // mean over the epoch's steps
};

struct TrainResult {
  MrnnModel model;
  std::vector<EpochStats> trace;
  double initial_train_loss = 0.0;
  int best_epoch = 0;
  bool stopped_early = false;
};

/// Trains both blocks jointly with Adam on a masked, normalized cohort and
/// returns the parameters with the best validation loss.
TrainResult train(const Cohort& cohort, const TrainConfig& config);

/// Single imputation: observed entries pass through, missing ones take x_hat.
Cohort impute(const MrnnModel& model, const Cohort& cohort);

std::vector<MaskedTriplet> build_triplets(const Cohort& cohort);

}  // namespace gapfill
