#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "gapfill/data.hpp"

namespace gapfill {

/// Each entry goes missing independently with probability tau.
struct BernoulliMask {
  double tau = 0.2;
};

/// Per (segment, stream), round(L/4) distinct time indices drawn from a
/// discretized Gaussian over {0..L-1}.
struct GaussianPatternMask {
  double center = 0.0;
  double sd = 1.0;
};

enum class MaskScope { train, eval };

struct MaskSpec {
  std::variant<BernoulliMask, GaussianPatternMask> mode = BernoulliMask{};
  std::uint64_t seed = 0;
  MaskScope scope = MaskScope::eval;

  void validate() const;
};

struct LedgerEntry {
  std::size_t segment = 0;
  Eigen::Index stream = 0;
  Eigen::Index time = 0;
  double value = 0.0;

  friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

/// True values of artificially removed entries, in (segment, stream, time) order.
struct GroundTruthLedger {
  std::vector<LedgerEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct MaskResult {
  Cohort masked;
  GroundTruthLedger ledger;
};

MaskResult apply_mask(const Cohort& complete, const MaskSpec& spec);

/// Maps ledger values through per-stream ranges so they share the cohort's scale.
GroundTruthLedger normalize_ledger(const GroundTruthLedger& ledger, const std::vector<StreamRange>& ranges);

/// The (Z, M, Delta) arrays fed to the recurrent model.
struct MaskedTriplet {
  Grid z;
  Grid m;
  Grid delta;  // minutes since the previous observation of the same stream

  Eigen::Index streams() const { return z.rows(); }
  Eigen::Index length() const { return z.cols(); }
};

MaskedTriplet build_triplet(const SegmentSeries& series);

}  // namespace gapfill
