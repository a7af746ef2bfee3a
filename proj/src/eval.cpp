#include "gapfill/eval.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "gapfill/error.hpp"
#include "gapfill/random.hpp"
#include "text.hpp"

namespace gapfill {

double training_loss(std::span<const Grid> x_hat, std::span<const Grid> x, std::span<const Grid> m) {
  if (x_hat.size() != x.size() || x.size() != m.size()) throw ShapeError("training_loss: segment counts differ");
  double total = 0.0;
  for (std::size_t n = 0; n < m.size(); ++n) {
    if (x_hat[n].rows() != x[n].rows() || x_hat[n].cols() != x[n].cols() || m[n].rows() != x[n].rows() ||
        m[n].cols() != x[n].cols()) {
      throw ShapeError("training_loss: grid shapes differ in segment " + std::to_string(n));
    }
    const double observed = m[n].sum();
    if (observed == 0.0) continue;
    total += (x_hat[n] - x[n]).cwiseAbs2().cwiseProduct(m[n]).sum() / observed;
  }
  return total;
}

double rmse(const Cohort& completed, const GroundTruthLedger& ledger) {
  if (ledger.empty()) throw PreconditionError("rmse: ledger is empty");
  double sq = 0.0;
  for (const auto& e : ledger.entries) {
    if (e.segment >= completed.size()) throw ShapeError("rmse: ledger segment out of range");
    const auto& s = completed.segments[e.segment];
    if (e.stream < 0 || e.stream >= s.streams() || e.time < 0 || e.time >= s.length()) {
      throw ShapeError("rmse: ledger coordinate out of range");
    }
    if (!s.observed(e.stream, e.time)) throw PreconditionError("rmse: ledger coordinate was not filled");
    const double err = s.values(e.stream, e.time) - e.value;
    sq += err * err;
  }
  return std::sqrt(sq / static_cast<double>(ledger.size()));
}

double eta(double rmse_mrnn, double rmse_other) {
  if (!(rmse_mrnn > 0.0)) throw PreconditionError("eta is undefined when the M-RNN RMSE is not positive");
  return std::abs(rmse_mrnn - rmse_other) / rmse_mrnn * 100.0;
}

std::vector<std::size_t> FoldPlan::members(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::complement(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) out.push_back(i);
  }
  return out;
}

FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be >= 2");
  if (n < k) throw PreconditionError("need at least as many segments (" + std::to_string(n) + ") as folds (" +
                                     std::to_string(k) + ")");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan{k, std::vector<std::size_t>(n), seed};
  for (std::size_t pos = 0; pos < n; ++pos) plan.assignment[order[pos]] = pos % k;
  return plan;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::mrnn: return "mrnn";
    case Method::spline: return "spline";
    case Method::soft_impute: return "softimpute";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "mrnn") return Method::mrnn;
  if (name == "spline") return Method::spline;
  if (name == "softimpute") return Method::soft_impute;
  throw ConfigError("unknown method '" + name + "'");
}

const char* axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::tau: return "tau";
    case SweepAxis::length: return "L";
    case SweepAxis::segments: return "N";
  }
  return "?";
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "tau") return SweepAxis::tau;
  if (name == "L") return SweepAxis::length;
  if (name == "N") return SweepAxis::segments;
  throw ConfigError("unknown sweep axis '" + name + "' (expected tau, L or N)");
}

void ComparisonReport::sort_canonical() {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.axis_value != b.axis_value) return a.axis_value < b.axis_value;
    return a.fold < b.fold;
  });
}

double ComparisonReport::mean_rmse(const std::string& method) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.method != method) continue;
    sum += r.rmse;
    ++n;
  }
  if (n == 0) throw PreconditionError("report has no rows for method '" + method + "'");
  return sum / static_cast<double>(n);
}

double ComparisonReport::mean_rmse(const std::string& method, double axis_value) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.method != method || r.axis_value != axis_value) continue;
    sum += r.rmse;
    ++n;
  }
  if (n == 0) throw PreconditionError("report has no rows for method '" + method + "' at that axis value");
  return sum / static_cast<double>(n);
}

std::vector<double> ComparisonReport::axis_values() const {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.axis_value);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::string> ComparisonReport::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.method);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs job(i) for i in [0, count) on up to `workers` threads. The first
// exception is rethrown after all threads finish.
template <typename Job>
void run_jobs(std::size_t count, std::size_t workers, Job&& job) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Ledger entries of the given segments, renumbered to positions in `members`.
GroundTruthLedger sub_ledger(const GroundTruthLedger& ledger, const std::vector<std::size_t>& members) {
  std::map<std::size_t, std::size_t> position;
  for (std::size_t i = 0; i < members.size(); ++i) position.emplace(members[i], i);
  GroundTruthLedger out;
  for (const auto& e : ledger.entries) {
    auto it = position.find(e.segment);
    if (it == position.end()) continue;
    LedgerEntry copy = e;
    copy.segment = it->second;
    out.entries.push_back(copy);
  }
  return out;
}

std::string tau_label(const MaskSpec& spec) {
  if (const auto* b = std::get_if<BernoulliMask>(&spec.mode)) return detail::format_double(b->tau);
  return "gaussian";
}

}  // namespace

ComparisonReport cross_validate(const Cohort& complete, const ExperimentConfig& config) {
  complete.validate();
  if (config.methods.empty()) throw ConfigError("no methods selected");
  const auto plan = make_folds(complete.size(), config.folds, derive_seed(config.seed, "folds"));

  MaskSpec spec = config.mask;
  spec.seed = derive_seed(config.seed, "mask");
  const auto masked = apply_mask(complete, spec);
  const Cohort scaled = normalize(masked.masked);
  const GroundTruthLedger truth = normalize_ledger(masked.ledger, *scaled.norm);

  const bool want =
      std::find(config.methods.begin(), config.methods.end(), Method::soft_impute) != config.methods.end();
  Cohort soft_completed;
  double soft_runtime = 0.0;
  if (want) {
    const auto start = Clock::now();
    const auto cm = cohort_to_matrix(scaled);
    SoftImputeConfig soft = config.soft;
    soft.seed = derive_seed(config.seed, "softimpute");
    const auto result = soft_impute(cm.values, cm.mask, soft);
    soft_completed = fill_from_matrix(scaled, result.completed);
    soft_runtime = seconds_since(start);
  }

  struct Job {
    Method method;
    std::size_t fold;
  };
  std::vector<Job> jobs;
  for (auto m : config.methods) {
    for (std::size_t f = 0; f < plan.k; ++f) jobs.push_back({m, f});
  }
  std::vector<ReportRow> rows(jobs.size());
  const std::string tau = tau_label(config.mask);

  run_jobs(jobs.size(), config.workers, [&](std::size_t j) {
    const auto [method, fold] = jobs[j];
    const auto held = plan.members(fold);
    const auto held_truth = sub_ledger(truth, held);
    const auto start = Clock::now();
    Cohort filled;
    switch (method) {
      case Method::spline:
        filled = spline_impute(subset(scaled, held));
        break;
      case Method::soft_impute:
        filled = subset(soft_completed, held);
        break;
      case Method::mrnn: {
        TrainConfig tc = config.train;
        tc.seed = derive_seed(derive_seed(config.seed, "train"), fold);
        tc.dims.streams = complete.streams();
        const auto trained = train(subset(scaled, plan.complement(fold)), tc);
        filled = impute(trained.model, subset(scaled, held));
        break;
      }
    }
    ReportRow row;
    row.method = method_name(method);
    row.fold = fold;
    row.n_segments = complete.size();
    row.seq_length = static_cast<std::size_t>(complete.length());
    row.tau = tau;
    row.rmse = rmse(filled, held_truth);
    row.runtime_s = seconds_since(start) + (method == Method::soft_impute ? soft_runtime : 0.0);
    rows[j] = std::move(row);
  });

  ComparisonReport report;
  report.rows = std::move(rows);
  report.sort_canonical();
  const bool has_mrnn =
      std::find(config.methods.begin(), config.methods.end(), Method::mrnn) != config.methods.end();
  if (has_mrnn) {
    const double base = report.mean_rmse("mrnn");
    for (const auto& m : report.methods()) {
      if (m == "mrnn") continue;
      report.etas.push_back({"mrnn", m, eta(base, report.mean_rmse(m))});
    }
  }
  return report;
}

ComparisonReport sweep(const Cohort& source, SweepAxis axis, const std::vector<double>& grid,
                       const ExperimentConfig& config) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  auto integral = [&](double v, double lo, double hi) {
    if (!(v == std::floor(v)) || v < lo || v > hi) {
      throw ConfigError(std::string("invalid ") + axis_name(axis) + " grid value " + detail::format_double(v) +
                        " (expected an integer in [" + detail::format_double(lo) + ", " + detail::format_double(hi) +
                        "])");
    }
  };
  for (double v : grid) {
    switch (axis) {
      case SweepAxis::tau:
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("invalid tau grid value " + detail::format_double(v));
        break;
      case SweepAxis::length:
        integral(v, 1.0, static_cast<double>(source.length()));
        break;
      case SweepAxis::segments:
        integral(v, static_cast<double>(config.folds), static_cast<double>(source.size()));
        break;
    }
  }

  ComparisonReport report;
  for (double v : grid) {
    ExperimentConfig point = config;
    point.seed = derive_seed(config.seed, hash_label(axis_name(axis)), std::bit_cast<std::uint64_t>(v));
    Cohort cohort;
    switch (axis) {
      case SweepAxis::tau:
        point.mask.mode = BernoulliMask{v};
        cohort = source;
        break;
      case SweepAxis::length:
        cohort = truncate_length(source, static_cast<std::size_t>(v));
        break;
      case SweepAxis::segments: {
        std::vector<std::size_t> idx(source.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(point.seed, "subsample"));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(v));
        std::sort(idx.begin(), idx.end());
        cohort = subset(source, idx);
        break;
      }
    }
    auto part = cross_validate(cohort, point);
    for (auto& row : part.rows) {
      row.axis = axis_name(axis);
      row.axis_value = v;
      report.rows.push_back(std::move(row));
    }
  }
  report.sort_canonical();
  return report;
}

}  // namespace gapfill
