#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "gapfill/data.hpp"

namespace gapfill {

/// Fills missing entries of each stream over time: no observations -> 0.5,
/// one -> that value, two or three -> piecewise linear, four or more ->
/// natural cubic spline. No extrapolation past the first/last observation.
SegmentSeries spline_impute(const SegmentSeries& series);
Cohort spline_impute(const Cohort& cohort);

/// Segment x (stream, time) layout: row n, column d * L + t.
struct CohortMatrix {
  Eigen::MatrixXd values;  // 0 where missing
  Eigen::MatrixXd mask;    // 1 observed, 0 missing
};

CohortMatrix cohort_to_matrix(const Cohort& cohort);
/// Writes matrix entries into the cohort's missing cells; observed cells are kept.
Cohort fill_from_matrix(const Cohort& cohort, const Eigen::MatrixXd& completed);

struct SoftImputeConfig {
  /// Strictly descending, positive. Empty selects 10 log-spaced values from
  /// sigma_max / 2 down to sigma_max / 1000 of the observed-entry matrix.
  std::vector<double> lambdas;
  int max_iters = 200;
  double tolerance = 1e-5;
  /// 0 means min(rows, cols).
  Eigen::Index rank_cap = 0;
  /// Share of observed entries held back to choose lambda.
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SoftImputeStage {
  double lambda = 0.0;
  int iterations = 0;
  /// 0.5 ||P_obs(X - M)||_F^2 + lambda ||M||_* after each iteration.
  std::vector<double> objective;
  double holdout_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct SoftImputeResult {
  Eigen::MatrixXd completed;  // observed entries restored exactly
  Eigen::MatrixXd low_rank;   // final thresholded iterate
  double lambda = 0.0;
  std::vector<SoftImputeStage> selection_path;  // fit without the held-back entries
  std::vector<SoftImputeStage> final_path;      // refit on all observed entries
};

std::vector<double> default_lambda_schedule(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask);

/// Spectral-regularization matrix completion with warm starts along the
/// lambda path.
SoftImputeResult soft_impute(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
                             const SoftImputeConfig& config);

}  // namespace gapfill
