#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gapfill {

using Grid = Eigen::MatrixXd;
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Minutes = std::int64_t;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

struct RoadSegment {
  std::string id;
  GeoPoint start;
  GeoPoint end;
  double length_km = 1.0;

  /// Throws PreconditionError on non-positive length or out-of-range coordinates.
  void validate() const;
};

struct RawRecord {
  std::string segment_id;
  Minutes timestamp = 0;
  double speed_kmh = 0.0;
  double travel_time_s = 0.0;
  double confidence_pct = 100.0;
};

/// One segment's D x L measurement grid. Column t belongs to timestamps[t].
struct SegmentSeries {
  RoadSegment segment;
  std::vector<Minutes> timestamps;
  Grid values;
  BoolGrid observed;

  Eigen::Index streams() const { return values.rows(); }
  Eigen::Index length() const { return values.cols(); }
  bool fully_observed() const { return observed.all(); }
  void validate() const;
};

struct StreamRange {
  double min = 0.0;
  double max = 1.0;

  double to_unit(double x) const { return (x - min) / (max - min); }
  double from_unit(double u) const { return u * (max - min) + min; }
};

/// N segments on one shared timestamp grid.
struct Cohort {
  std::vector<SegmentSeries> segments;
  std::vector<std::string> stream_names;
  std::optional<std::vector<StreamRange>> norm;

  std::size_t size() const { return segments.size(); }
  Eigen::Index streams() const { return static_cast<Eigen::Index>(stream_names.size()); }
  Eigen::Index length() const { return segments.empty() ? 0 : segments.front().length(); }
  const std::vector<Minutes>& timestamps() const { return segments.front().timestamps; }
  bool fully_observed() const;
  std::size_t observed_count() const;

  /// Checks shared grid, shared D, N >= 1 and the unit-range property when normalized.
  void validate() const;
};

inline const std::vector<std::string>& traffic_stream_names() {
  static const std::vector<std::string> names{"speed_kmh", "travel_time_s"};
  return names;
}

struct IngestResult {
  std::vector<RawRecord> records;
  /// Geometry of every segment seen in a cleanly parsed row, in first-seen order.
  std::vector<RoadSegment> segments;
  std::size_t dropped = 0;
};

/// Parses the raw per-minute CSV, keeping rows with confidence >= min_confidence.
IngestResult ingest_csv(std::istream& in, double min_confidence);

/// Largest set of segments sharing a contiguous run of >= min_length minutes.
///
/// Ties between equally large sets prefer the longer shared run, then the
/// lexicographically smaller sorted id list. The returned grid is the longest
/// contiguous run inside the intersection of the chosen segments' timestamps.
Cohort select_cohort(const std::vector<RawRecord>& records,
                     const std::vector<RoadSegment>& segments, std::size_t min_length);

struct SynthSpec {
  std::size_t n_segments = 382;
  std::size_t n_streams = 2;
  std::size_t length = 85;
  double noise_sd = 0.05;
  std::uint64_t seed = 0;
};

/// Fully observed synthetic congestion cohort (speed dip plus reciprocal travel time).
Cohort synthesize_cohort(const SynthSpec& spec);

/// Per-stream min-max scaling of observed entries to [0, 1].
Cohort normalize(const Cohort& cohort);
/// Applies already-fitted ranges (used for held-out data and checkpoints).
Cohort normalize_with(const Cohort& cohort, const std::vector<StreamRange>& ranges);
Cohort denormalize(const Cohort& cohort);

/// Keeps the first `length` grid points of every segment.
Cohort truncate_length(const Cohort& cohort, std::size_t length);
Cohort subset(const Cohort& cohort, const std::vector<std::size_t>& indices);

}  // namespace gapfill
