#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gapfill/baselines.hpp"
#include "gapfill/data.hpp"
#include "gapfill/masking.hpp"
#include "gapfill/mrnn.hpp"

namespace gapfill {

/// Sum over segments of sum(m (x_hat - x)^2) / sum(m); segments with no
/// observed entries contribute nothing.
double training_loss(std::span<const Grid> x_hat, std::span<const Grid> x, std::span<const Grid> m);

/// Root mean squared error of the cohort's values at the ledger coordinates.
/// Both must be on the same scale.
double rmse(const Cohort& completed, const GroundTruthLedger& ledger);

/// Percentage improvement |a - b| / a * 100 of RMSE a over RMSE b.
double eta(double rmse_mrnn, double rmse_other);

struct FoldPlan {
  std::size_t k = 5;
  std::vector<std::size_t> assignment;  // segment index -> fold id
  std::uint64_t seed = 0;

  std::vector<std::size_t> members(std::size_t fold) const;
  std::vector<std::size_t> complement(std::size_t fold) const;
};

/// Seeded shuffle, then position i goes to fold i mod k.
FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed);

enum class Method { mrnn, spline, soft_impute };

const char* method_name(Method m);
Method parse_method(const std::string& name);

struct ReportRow {
  std::string method;
  std::string axis = "none";
  double axis_value = 0.0;
  std::size_t fold = 0;
  std::size_t n_segments = 0;
  std::size_t seq_length = 0;
  std::string tau;  // decimal probability, or "gaussian"
  double rmse = 0.0;
  double runtime_s = 0.0;
};

struct EtaRow {
  std::string method;
  std::string vs;
  double eta_pct = 0.0;
};

struct ComparisonReport {
  std::vector<ReportRow> rows;
  std::vector<EtaRow> etas;

  /// Orders rows by (method, axis value, fold).
  void sort_canonical();
  /// Mean RMSE of a method over its rows, optionally restricted to one axis value.
  double mean_rmse(const std::string& method) const;
  double mean_rmse(const std::string& method, double axis_value) const;
  std::vector<double> axis_values() const;
  std::vector<std::string> methods() const;
};

struct ExperimentConfig {
  /// Mask mechanism; its seed field is replaced by one derived from `seed`.
  MaskSpec mask{};
  std::vector<Method> methods{Method::mrnn, Method::spline, Method::soft_impute};
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  TrainConfig train{};
  SoftImputeConfig soft{};
  std::size_t workers = 1;
};

/// k-fold comparison on a complete cohort.
///
/// One eval mask is drawn for the whole cohort and the masked cohort is scaled
/// with ranges fitted on its observed entries. Per fold, M-RNN trains on the
/// other folds and imputes the held-out segments; spline runs on the held-out
/// segments directly; soft-impute completes the whole masked matrix once and
/// is scored on the held-out rows. RMSE is on the normalized scale.
ComparisonReport cross_validate(const Cohort& complete, const ExperimentConfig& config);

enum class SweepAxis { tau, length, segments };

const char* axis_name(SweepAxis axis);
SweepAxis parse_axis(const std::string& name);

/// One cross-validation per grid value. Point seeds derive from
/// (config.seed, axis, value); fold seeds from the point seed and fold.
ComparisonReport sweep(const Cohort& source, SweepAxis axis, const std::vector<double>& grid,
                       const ExperimentConfig& config);

/// CSV: method,axis,axis_value,fold,n_segments,seq_length,tau,rmse,runtime_s.
/// runtime_s is left empty unless `include_runtime` is set, which keeps the
/// file byte-identical across reruns.
void emit_report(const ComparisonReport& report, std::ostream& out, bool include_runtime = false);
void emit_report(const ComparisonReport& report, const std::string& path, bool include_runtime = false);

/// CSV: method,vs,eta_pct.
void emit_eta(const ComparisonReport& report, std::ostream& out);
void emit_eta(const ComparisonReport& report, const std::string& path);

/// 800x600 SVG line chart of mean RMSE per method over the axis values.
void emit_plot(const ComparisonReport& report, const std::string& axis_label, std::ostream& out);
void emit_plot(const ComparisonReport& report, const std::string& axis_label, const std::string& path);

}  // namespace gapfill
