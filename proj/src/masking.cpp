#include "gapfill/masking.hpp"

#include <cmath>
#include <random>

#include "gapfill/error.hpp"
#include "gapfill/random.hpp"

namespace gapfill {

void MaskSpec::validate() const {
  if (const auto* b = std::get_if<BernoulliMask>(&mode)) {
    if (!(b->tau >= 0.0 && b->tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  } else {
    const auto& g = std::get<GaussianPatternMask>(mode);
    if (!(g.sd > 0.0) || !std::isfinite(g.sd)) throw ConfigError("gaussian sd must be > 0");
    if (!std::isfinite(g.center)) throw ConfigError("gaussian center must be finite");
  }
}

namespace {

void mark_missing(Cohort& out, GroundTruthLedger& ledger, std::size_t n, Eigen::Index d, Eigen::Index t) {
  auto& s = out.segments[n];
  ledger.entries.push_back({n, d, t, s.values(d, t)});
  s.observed(d, t) = false;
  s.values(d, t) = 0.0;
}

}  // namespace

MaskResult apply_mask(const Cohort& complete, const MaskSpec& spec) {
  spec.validate();
  if (!complete.fully_observed()) throw PreconditionError("apply_mask needs a fully observed cohort");
  MaskResult result{complete, {}};
  Rng rng(spec.seed);
  const auto D = complete.streams();
  const auto L = complete.length();

  if (const auto* b = std::get_if<BernoulliMask>(&spec.mode)) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t n = 0; n < complete.size(); ++n) {
      for (Eigen::Index d = 0; d < D; ++d) {
        for (Eigen::Index t = 0; t < L; ++t) {
          if (unit(rng) < b->tau) mark_missing(result.masked, result.ledger, n, d, t);
        }
      }
    }
    return result;
  }

  const auto& g = std::get<GaussianPatternMask>(spec.mode);
  const auto count = std::min<Eigen::Index>(L, std::llround(static_cast<double>(L) / 4.0));
  std::vector<double> weights(static_cast<std::size_t>(L));
  Eigen::Index support = 0;
  for (Eigen::Index t = 0; t < L; ++t) {
    const double u = (static_cast<double>(t) - g.center) / g.sd;
    weights[t] = std::exp(-0.5 * u * u);
    if (weights[t] > 0.0) ++support;
  }
  if (support < count) {
    throw PreconditionError("gaussian pattern has fewer than round(L/4) reachable indices");
  }
  std::discrete_distribution<Eigen::Index> pick(weights.begin(), weights.end());
  const std::size_t max_draws = 1000000;
  for (std::size_t n = 0; n < complete.size(); ++n) {
    for (Eigen::Index d = 0; d < D; ++d) {
      std::vector<bool> taken(static_cast<std::size_t>(L), false);
      Eigen::Index chosen = 0;
      std::size_t draws = 0;
      while (chosen < count) {
        if (++draws > max_draws) throw NumericalError("gaussian pattern sampling did not terminate");
        const auto t = pick(rng);
        if (taken[t]) continue;  // resample duplicates
        taken[t] = true;
        ++chosen;
      }
      for (Eigen::Index t = 0; t < L; ++t) {
        if (taken[t]) mark_missing(result.masked, result.ledger, n, d, t);
      }
    }
  }
  return result;
}

GroundTruthLedger normalize_ledger(const GroundTruthLedger& ledger, const std::vector<StreamRange>& ranges) {
  GroundTruthLedger out = ledger;
  for (auto& e : out.entries) {
    if (e.stream < 0 || static_cast<std::size_t>(e.stream) >= ranges.size()) {
      throw ShapeError("ledger stream index out of range");
    }
    e.value = ranges[e.stream].to_unit(e.value);
  }
  return out;
}

MaskedTriplet build_triplet(const SegmentSeries& series) {
  const auto D = series.streams();
  const auto L = series.length();
  MaskedTriplet tri{Grid::Zero(D, L), series.observed.cast<double>(), Grid::Zero(D, L)};
  for (Eigen::Index d = 0; d < D; ++d) {
    for (Eigen::Index t = 0; t < L; ++t) {
      if (series.observed(d, t)) tri.z(d, t) = series.values(d, t);
      if (t == 0) continue;
      const double gap = static_cast<double>(series.timestamps[t] - series.timestamps[t - 1]);
      tri.delta(d, t) = gap + (tri.m(d, t - 1) == 0.0 ? tri.delta(d, t - 1) : 0.0);
    }
  }
  return tri;
}

}  // namespace gapfill
