#include "gapfill/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <random>
#include <tuple>

#include <Eigen/SVD>

#include "gapfill/error.hpp"
#include "gapfill/random.hpp"
#include "gapfill/spline.hpp"

namespace gapfill {

SegmentSeries spline_impute(const SegmentSeries& series) {
  SegmentSeries out = series;
  const auto L = series.length();
  std::vector<double> x, y;
  for (Eigen::Index d = 0; d < series.streams(); ++d) {
    x.clear();
    y.clear();
    for (Eigen::Index t = 0; t < L; ++t) {
      if (!series.observed(d, t)) continue;
      x.push_back(static_cast<double>(series.timestamps[t]));
      y.push_back(series.values(d, t));
    }
    const std::size_t k = x.size();
    if (k == static_cast<std::size_t>(L)) continue;
    auto fill = [&](auto&& estimate) {
      for (Eigen::Index t = 0; t < L; ++t) {
        if (series.observed(d, t)) continue;
        out.values(d, t) = estimate(static_cast<double>(series.timestamps[t]));
        out.observed(d, t) = true;
      }
    };
    if (k == 0) {
      fill([](double) { return 0.5; });
    } else if (k == 1) {
      fill([&](double) { return y.front(); });
    } else if (k < 4) {
      fill([&](double q) { return linear_interpolate<double>(x, y, q); });
    } else {
      const NaturalCubicSpline<double> spline(x, y);
      fill([&](double q) { return spline(q); });
    }
  }
  return out;
}

Cohort spline_impute(const Cohort& cohort) {
  Cohort out = cohort;
  for (auto& s : out.segments) s = spline_impute(s);
  return out;
}

CohortMatrix cohort_to_matrix(const Cohort& cohort) {
  const auto N = static_cast<Eigen::Index>(cohort.size());
  const auto D = cohort.streams();
  const auto L = cohort.length();
  CohortMatrix cm{Eigen::MatrixXd::Zero(N, D * L), Eigen::MatrixXd::Zero(N, D * L)};
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto& s = cohort.segments[n];
    for (Eigen::Index d = 0; d < D; ++d) {
      for (Eigen::Index t = 0; t < L; ++t) {
        if (!s.observed(d, t)) continue;
        cm.values(n, d * L + t) = s.values(d, t);
        cm.mask(n, d * L + t) = 1.0;
      }
    }
  }
  return cm;
}

Cohort fill_from_matrix(const Cohort& cohort, const Eigen::MatrixXd& completed) {
  const auto D = cohort.streams();
  const auto L = cohort.length();
  if (completed.rows() != static_cast<Eigen::Index>(cohort.size()) || completed.cols() != D * L) {
    throw ShapeError("completed matrix does not match cohort layout");
  }
  Cohort out = cohort;
  for (Eigen::Index n = 0; n < completed.rows(); ++n) {
    auto& s = out.segments[n];
    for (Eigen::Index d = 0; d < D; ++d) {
      for (Eigen::Index t = 0; t < L; ++t) {
        if (s.observed(d, t)) continue;
        s.values(d, t) = completed(n, d * L + t);
        s.observed(d, t) = true;
      }
    }
  }
  return out;
}

void SoftImputeConfig::validate() const {
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0) || !std::isfinite(lambdas[i])) throw ConfigError("lambda schedule must be positive");
    if (i > 0 && !(lambdas[i] < lambdas[i - 1])) throw ConfigError("lambda schedule must be strictly descending");
  }
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be > 0");
  if (rank_cap < 0) throw ConfigError("rank_cap must be >= 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in [0, 1)");
}

namespace {

double top_singular_value(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD failed computing the lambda schedule");
  return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

struct PathRun {
  std::vector<SoftImputeStage> stages;
  Eigen::MatrixXd iterate;
};

// Runs the warm-started path over lambdas[0..count). When `holdout` is given,
// each stage records the RMSE of the iterate on those (row, col, value) cells.
PathRun run_path(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask, const std::vector<double>& lambdas,
                 std::size_t count, const SoftImputeConfig& cfg, Eigen::Index rank_cap,
                 const std::vector<std::tuple<Eigen::Index, Eigen::Index, double>>* holdout) {
  PathRun run;
  const Eigen::MatrixXd observed = values.cwiseProduct(mask);
  const Eigen::MatrixXd missing = Eigen::MatrixXd::Ones(mask.rows(), mask.cols()) - mask;
  run.iterate = Eigen::MatrixXd::Zero(values.rows(), values.cols());
  Eigen::BDCSVD<Eigen::MatrixXd> svd;
  for (std::size_t s = 0; s < count; ++s) {
    const double lambda = lambdas[s];
    SoftImputeStage stage{lambda, 0, {}, std::numeric_limits<double>::quiet_NaN()};
    for (int it = 0; it < cfg.max_iters; ++it) {
      const Eigen::MatrixXd filled = observed + missing.cwiseProduct(run.iterate);
      svd.compute(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
      if (svd.info() != Eigen::Success) {
        throw NumericalError("SVD did not converge at lambda stage " + std::to_string(s) + " (lambda " +
                             std::to_string(lambda) + ")");
      }
      const auto& sigma = svd.singularValues();
      Eigen::Index rank = 0;
      double nuclear = 0.0;
      Eigen::VectorXd shrunk = Eigen::VectorXd::Zero(sigma.size());
      for (Eigen::Index i = 0; i < sigma.size() && i < rank_cap; ++i) {
        const double v = std::max(sigma(i) - lambda, 0.0);
        if (v <= 0.0) break;
        shrunk(i) = v;
        nuclear += v;
        rank = i + 1;
      }
      Eigen::MatrixXd next = Eigen::MatrixXd::Zero(values.rows(), values.cols());
      if (rank > 0) {
        next.noalias() = svd.matrixU().leftCols(rank) * shrunk.head(rank).asDiagonal() *
                         svd.matrixV().leftCols(rank).transpose();
      }
      const double prev_norm = run.iterate.norm();
      const double change = (next - run.iterate).norm();
      run.iterate.swap(next);
      ++stage.iterations;
      stage.objective.push_back(0.5 * (observed - mask.cwiseProduct(run.iterate)).squaredNorm() + lambda * nuclear);
      const double rel = change == 0.0 ? 0.0 : change / std::max(prev_norm, 1e-12);
      if (rel < cfg.tolerance) break;
    }
    if (holdout != nullptr && !holdout->empty()) {
      double sq = 0.0;
      for (const auto& [r, c, v] : *holdout) sq += std::pow(run.iterate(r, c) - v, 2);
      stage.holdout_rmse = std::sqrt(sq / static_cast<double>(holdout->size()));
    }
    run.stages.push_back(std::move(stage));
  }
  return run;
}

}  // namespace

std::vector<double> default_lambda_schedule(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask) {
  const double sigma_max = top_singular_value(values.cwiseProduct(mask));
  std::vector<double> out;
  if (!(sigma_max > 0.0)) return out;
  const double hi = std::log(sigma_max / 2.0);
  const double lo = std::log(sigma_max / 1000.0);
  for (int i = 0; i < 10; ++i) out.push_back(std::exp(hi + (lo - hi) * i / 9.0));
  return out;
}

SoftImputeResult soft_impute(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
                             const SoftImputeConfig& config) {
  config.validate();
  if (values.rows() != mask.rows() || values.cols() != mask.cols()) throw ShapeError("values and mask differ in shape");
  if (!(mask.array() > 0.5).any()) throw PreconditionError("soft_impute needs at least one observed entry");
  if (!values.cwiseProduct(mask).allFinite()) throw NumericalError("observed entries must be finite");
  const Eigen::Index full_rank = std::min(values.rows(), values.cols());
  const Eigen::Index rank_cap = config.rank_cap == 0 ? full_rank : std::min(config.rank_cap, full_rank);

  std::vector<double> lambdas = config.lambdas.empty() ? default_lambda_schedule(values, mask) : config.lambdas;
  SoftImputeResult result;
  if (lambdas.empty()) {
    // All observed entries are zero: the zero matrix is the completion.
    result.low_rank = Eigen::MatrixXd::Zero(values.rows(), values.cols());
    result.completed = values.cwiseProduct(mask);
    return result;
  }

  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
      if (mask(r, c) > 0.5) cells.emplace_back(r, c);
    }
  }
  const auto n_hold = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(cells.size())));
  std::size_t chosen = lambdas.size();
  if (n_hold > 0 && lambdas.size() > 1) {
    Rng rng(derive_seed(config.seed, "holdout"));
    std::shuffle(cells.begin(), cells.end(), rng);
    Eigen::MatrixXd fit_mask = mask;
    std::vector<std::tuple<Eigen::Index, Eigen::Index, double>> holdout;
    for (std::size_t i = 0; i < n_hold; ++i) {
      const auto [r, c] = cells[i];
      fit_mask(r, c) = 0.0;
      holdout.emplace_back(r, c, values(r, c));
    }
    auto selection = run_path(values, fit_mask, lambdas, lambdas.size(), config, rank_cap, &holdout);
    std::size_t best = 0;
    for (std::size_t s = 1; s < selection.stages.size(); ++s) {
      if (selection.stages[s].holdout_rmse < selection.stages[best].holdout_rmse) best = s;
    }
    chosen = best + 1;
    result.selection_path = std::move(selection.stages);
  }
  auto fit = run_path(values, mask, lambdas, chosen, config, rank_cap, nullptr);
  result.lambda = lambdas[chosen - 1];
  result.final_path = std::move(fit.stages);
  result.low_rank = std::move(fit.iterate);
  const Eigen::MatrixXd missing = Eigen::MatrixXd::Ones(mask.rows(), mask.cols()) - mask;
  result.completed = values.cwiseProduct(mask) + missing.cwiseProduct(result.low_rank);
  return result;
}

}  // namespace gapfill
