#include "gapfill/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <string_view>
#include <unordered_map>

#include "gapfill/error.hpp"
#include "gapfill/random.hpp"
#include "text.hpp"

namespace gapfill {

namespace {

constexpr std::array<std::string_view, 10> kRawColumns{
    "segment_id", "start_lat",  "start_lon",     "end_lat",       "end_lon",
    "length_km",  "timestamp_min", "speed_kmh", "travel_time_s", "confidence_pct"};

// 16:30 local (EDT) on 8 Sep 2017, in minutes since the UNIX epoch.
constexpr Minutes kSynthStartMinute = 25081710;

bool in_range(const GeoPoint& p) {
  return p.lat >= -90.0 && p.lat <= 90.0 && p.lon >= -180.0 && p.lon <= 180.0;
}

// Maximal runs of consecutive minutes in a sorted, duplicate-free list.
std::vector<std::pair<Minutes, Minutes>> runs_of(const std::vector<Minutes>& ts) {
  std::vector<std::pair<Minutes, Minutes>> runs;
  for (Minutes t : ts) {
    if (!runs.empty() && runs.back().second + 1 == t) {
      runs.back().second = t;
    } else {
      runs.emplace_back(t, t);
    }
  }
  return runs;
}

std::pair<Minutes, Minutes> longest_run(const std::vector<Minutes>& ts) {
  std::pair<Minutes, Minutes> best{0, -1};
  for (const auto& r : runs_of(ts)) {
    if (r.second - r.first > best.second - best.first) best = r;
  }
  return best;
}

}  // namespace

void RoadSegment::validate() const {
  if (!(length_km > 0.0) || !std::isfinite(length_km)) {
    throw PreconditionError("segment '" + id + "': length_km must be positive");
  }
  if (!in_range(start) || !in_range(end)) {
    throw PreconditionError("segment '" + id + "': coordinates out of range");
  }
}

void SegmentSeries::validate() const {
  const auto L = static_cast<Eigen::Index>(timestamps.size());
  if (L < 1 || values.rows() < 1) throw PreconditionError("series must have D >= 1 and L >= 1");
  if (values.cols() != L || observed.rows() != values.rows() || observed.cols() != L) {
    throw ShapeError("series '" + segment.id + "': grid dimensions disagree with timestamps");
  }
  for (Eigen::Index t = 1; t < L; ++t) {
    if (timestamps[t] <= timestamps[t - 1]) {
      throw PreconditionError("series '" + segment.id + "': timestamps not strictly ascending");
    }
  }
  for (Eigen::Index d = 0; d < values.rows(); ++d) {
    for (Eigen::Index t = 0; t < L; ++t) {
      if (observed(d, t) && !std::isfinite(values(d, t))) {
        throw PreconditionError("series '" + segment.id + "': non-finite observed value");
      }
    }
  }
}

bool Cohort::fully_observed() const {
  return std::all_of(segments.begin(), segments.end(),
                     [](const SegmentSeries& s) { return s.fully_observed(); });
}

std::size_t Cohort::observed_count() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += static_cast<std::size_t>(s.observed.count());
  return n;
}

void Cohort::validate() const {
  if (segments.empty()) throw EmptyCohortError("cohort has no segments");
  if (stream_names.empty()) throw PreconditionError("cohort has no streams");
  const auto& grid = segments.front().timestamps;
  for (const auto& s : segments) {
    s.validate();
    if (s.streams() != streams()) throw ShapeError("segment '" + s.segment.id + "': stream count differs");
    if (s.timestamps != grid) throw ShapeError("segment '" + s.segment.id + "': timestamp grid differs");
  }
  if (norm) {
    if (static_cast<Eigen::Index>(norm->size()) != streams()) throw ShapeError("norm params per stream");
    for (const auto& s : segments) {
      for (Eigen::Index d = 0; d < s.streams(); ++d) {
        for (Eigen::Index t = 0; t < s.length(); ++t) {
          if (s.observed(d, t) && (s.values(d, t) < 0.0 || s.values(d, t) > 1.0)) {
            throw PreconditionError("normalized value outside [0, 1] in segment '" + s.segment.id + "'");
          }
        }
      }
    }
  }
}

IngestResult ingest_csv(std::istream& in, double min_confidence) {
  IngestResult result;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file: missing header");
  const auto header = detail::split_fields(detail::trim_cr(line));
  std::unordered_map<std::string_view, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);
  std::array<std::size_t, kRawColumns.size()> idx{};
  for (std::size_t c = 0; c < kRawColumns.size(); ++c) {
    auto it = column.find(kRawColumns[c]);
    if (it == column.end()) throw SchemaError("missing column '" + std::string(kRawColumns[c]) + "'");
    idx[c] = it->second;
  }

  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto fields = detail::split_fields(text);
    if (fields.size() != header.size()) {
      throw RowError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
    }
    auto real = [&](std::size_t c) {
      auto v = detail::parse_number<double>(fields[idx[c]]);
      if (!v || !std::isfinite(*v)) {
        throw RowError(line_no, "cannot parse " + std::string(kRawColumns[c]) + " '" +
                                    std::string(fields[idx[c]]) + "'");
      }
      return *v;
    };
    RoadSegment seg;
    seg.id = std::string(fields[idx[0]]);
    if (seg.id.empty()) throw RowError(line_no, "empty segment_id");
    seg.start = {real(1), real(2)};
    seg.end = {real(3), real(4)};
    seg.length_km = real(5);
    const auto ts = detail::parse_number<Minutes>(fields[idx[6]]);
    if (!ts) throw RowError(line_no, "cannot parse timestamp_min '" + std::string(fields[idx[6]]) + "'");
    RawRecord rec{seg.id, *ts, real(7), real(8), real(9)};
    if (rec.speed_kmh < 0.0 || rec.travel_time_s < 0.0) throw RowError(line_no, "negative measurement");
    if (rec.confidence_pct < 0.0 || rec.confidence_pct > 100.0) {
      throw RowError(line_no, "confidence_pct outside [0, 100]");
    }
    try {
      seg.validate();
    } catch (const PreconditionError& e) {
      throw RowError(line_no, e.what());
    }
    if (!seen.contains(seg.id)) {
      seen.emplace(seg.id, result.segments.size());
      result.segments.push_back(seg);
    }
    if (rec.confidence_pct < min_confidence) {
      ++result.dropped;
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

Cohort select_cohort(const std::vector<RawRecord>& records, const std::vector<RoadSegment>& segments,
                     std::size_t min_length) {
  if (min_length < 1) throw PreconditionError("min_length must be >= 1");
  const std::size_t S = segments.size();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < S; ++i) index.emplace(segments[i].id, i);

  // First record per (segment, minute) wins.
  std::vector<std::map<Minutes, const RawRecord*>> by_time(S);
  for (const auto& r : records) {
    auto it = index.find(r.segment_id);
    if (it == index.end()) continue;
    by_time[it->second].emplace(r.timestamp, &r);
  }
  std::vector<std::vector<Minutes>> stamps(S);
  std::vector<std::vector<std::pair<Minutes, Minutes>>> runs(S);
  std::set<Minutes> starts;
  for (std::size_t i = 0; i < S; ++i) {
    for (const auto& [t, _] : by_time[i]) stamps[i].push_back(t);
    runs[i] = runs_of(stamps[i]);
    starts.insert(stamps[i].begin(), stamps[i].end());
  }

  const auto span = static_cast<Minutes>(min_length) - 1;
  auto covers = [&](std::size_t i, Minutes a) {
    const auto& rs = runs[i];
    auto it = std::upper_bound(rs.begin(), rs.end(), a,
                               [](Minutes v, const auto& run) { return v < run.first; });
    if (it == rs.begin()) return false;
    --it;
    return it->first <= a && a + span <= it->second;
  };

  // Every feasible set is contained in the set of segments covering some window start.
  std::set<std::vector<std::size_t>> candidates;
  for (Minutes a : starts) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < S; ++i) {
      if (covers(i, a)) members.push_back(i);
    }
    if (!members.empty()) candidates.insert(std::move(members));
  }
  if (candidates.empty()) {
    throw EmptyCohortError("no segment set shares " + std::to_string(min_length) + " contiguous minutes");
  }

  struct Choice {
    std::vector<std::size_t> members;
    std::pair<Minutes, Minutes> run;
    std::vector<std::string> ids;
  };
  std::optional<Choice> best;
  for (const auto& members : candidates) {
    std::vector<Minutes> common = stamps[members.front()];
    for (std::size_t k = 1; k < members.size(); ++k) {
      std::vector<Minutes> next;
      std::set_intersection(common.begin(), common.end(), stamps[members[k]].begin(),
                            stamps[members[k]].end(), std::back_inserter(next));
      common = std::move(next);
    }
    Choice c{members, longest_run(common), {}};
    for (auto m : members) c.ids.push_back(segments[m].id);
    std::sort(c.ids.begin(), c.ids.end());
    if (!best) {
      best = std::move(c);
      continue;
    }
    const auto len = c.run.second - c.run.first;
    const auto best_len = best->run.second - best->run.first;
    if (c.members.size() != best->members.size()) {
      if (c.members.size() > best->members.size()) best = std::move(c);
    } else if (len != best_len) {
      if (len > best_len) best = std::move(c);
    } else if (c.ids < best->ids) {
      best = std::move(c);
    }
  }

  Cohort cohort;
  cohort.stream_names = traffic_stream_names();
  const auto L = static_cast<Eigen::Index>(best->run.second - best->run.first + 1);
  std::vector<Minutes> grid(static_cast<std::size_t>(L));
  for (Eigen::Index t = 0; t < L; ++t) grid[t] = best->run.first + t;
  for (auto m : best->members) {
    SegmentSeries s;
    s.segment = segments[m];
    s.timestamps = grid;
    s.values.resize(2, L);
    s.observed = BoolGrid::Constant(2, L, true);
    for (Eigen::Index t = 0; t < L; ++t) {
      const RawRecord* r = by_time[m].at(grid[t]);
      s.values(0, t) = r->speed_kmh;
      s.values(1, t) = r->travel_time_s;
    }
    cohort.segments.push_back(std::move(s));
  }
  return cohort;
}

Cohort synthesize_cohort(const SynthSpec& spec) {
  if (spec.n_segments < 1 || spec.length < 1) throw PreconditionError("n_segments and length must be >= 1");
  if (spec.n_streams < 1 || spec.n_streams > 2) throw PreconditionError("synthetic cohorts have 1 or 2 streams");
  if (!(spec.noise_sd >= 0.0) || !std::isfinite(spec.noise_sd)) throw PreconditionError("noise_sd must be >= 0");

  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double phase_center = two_pi * unit(rng);
  const double phase_depth = two_pi * unit(rng);
  const double phase_width = two_pi * unit(rng);

  const auto L = static_cast<Eigen::Index>(spec.length);
  const auto D = static_cast<Eigen::Index>(spec.n_streams);
  Cohort cohort;
  cohort.stream_names.assign(traffic_stream_names().begin(), traffic_stream_names().begin() + D);
  std::vector<Minutes> grid(spec.length);
  for (std::size_t t = 0; t < spec.length; ++t) grid[t] = kSynthStartMinute + static_cast<Minutes>(t);

  for (std::size_t i = 0; i < spec.n_segments; ++i) {
    const double k = static_cast<double>(i);
    SegmentSeries s;
    s.segment.id = "seg" + std::to_string(100000 + i).substr(1);
    s.segment.length_km = 0.85 + 0.3 * unit(rng);
    const double row = static_cast<double>((i / 50) % 100);
    const double col = static_cast<double>(i % 50);
    s.segment.start = {43.60 + 0.0095 * col, -79.60 + 0.013 * row};
    s.segment.end = {s.segment.start.lat + s.segment.length_km / 111.2, s.segment.start.lon};

    // Congestion trough parameters drift smoothly along the corridor.
    const double Lf = static_cast<double>(spec.length);
    const double center = Lf * (0.5 + 0.3 * std::sin(two_pi * k / 37.0 + phase_center));
    const double depth = 60.0 + 20.0 * std::sin(two_pi * k / 23.0 + phase_depth);
    const double width = Lf * (0.12 + 0.04 * std::sin(two_pi * k / 29.0 + phase_width));

    s.timestamps = grid;
    s.values.resize(D, L);
    s.observed = BoolGrid::Constant(D, L, true);
    for (Eigen::Index t = 0; t < L; ++t) {
      const double u = (static_cast<double>(t) - center) / width;
      const double speed = std::max(5.0, 100.0 - depth * std::exp(-0.5 * u * u));
      const double travel = 3600.0 * s.segment.length_km / speed;
      // Noise draws are consumed in a fixed order even when noise_sd is 0.
      const double e_speed = gauss(rng);
      const double e_travel = gauss(rng);
      s.values(0, t) = std::max(0.0, speed * (1.0 + spec.noise_sd * e_speed));
      if (D > 1) s.values(1, t) = std::max(0.0, travel * (1.0 + spec.noise_sd * e_travel));
    }
    cohort.segments.push_back(std::move(s));
  }
  return cohort;
}

namespace {

Cohort apply_ranges(const Cohort& cohort, const std::vector<StreamRange>& ranges) {
  Cohort out = cohort;
  for (auto& s : out.segments) {
    for (Eigen::Index d = 0; d < s.streams(); ++d) {
      for (Eigen::Index t = 0; t < s.length(); ++t) {
        if (s.observed(d, t)) s.values(d, t) = ranges[d].to_unit(s.values(d, t));
      }
    }
  }
  out.norm = ranges;
  return out;
}

}  // namespace

Cohort normalize(const Cohort& cohort) {
  if (cohort.norm) throw PreconditionError("cohort is already normalized");
  const auto D = cohort.streams();
  std::vector<StreamRange> ranges;
  for (Eigen::Index d = 0; d < D; ++d) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& s : cohort.segments) {
      for (Eigen::Index t = 0; t < s.length(); ++t) {
        if (!s.observed(d, t)) continue;
        lo = std::min(lo, s.values(d, t));
        hi = std::max(hi, s.values(d, t));
      }
    }
    if (!(hi > lo)) throw DegenerateStreamError(cohort.stream_names[d]);
    ranges.push_back({lo, hi});
  }
  return apply_ranges(cohort, ranges);
}

Cohort normalize_with(const Cohort& cohort, const std::vector<StreamRange>& ranges) {
  if (cohort.norm) throw PreconditionError("cohort is already normalized");
  if (static_cast<Eigen::Index>(ranges.size()) != cohort.streams()) {
    throw ShapeError("normalization ranges do not match stream count");
  }
  for (std::size_t d = 0; d < ranges.size(); ++d) {
    if (!(ranges[d].max > ranges[d].min)) throw DegenerateStreamError(cohort.stream_names[d]);
  }
  return apply_ranges(cohort, ranges);
}

Cohort denormalize(const Cohort& cohort) {
  if (!cohort.norm) throw PreconditionError("cohort is not normalized");
  Cohort out = cohort;
  const auto& ranges = *cohort.norm;
  for (auto& s : out.segments) {
    for (Eigen::Index d = 0; d < s.streams(); ++d) {
      for (Eigen::Index t = 0; t < s.length(); ++t) {
        if (s.observed(d, t)) s.values(d, t) = ranges[d].from_unit(s.values(d, t));
      }
    }
  }
  out.norm.reset();
  return out;
}

Cohort truncate_length(const Cohort& cohort, std::size_t length) {
  if (length < 1 || static_cast<Eigen::Index>(length) > cohort.length()) {
    throw ConfigError("length " + std::to_string(length) + " outside [1, " +
                      std::to_string(cohort.length()) + "]");
  }
  const auto L = static_cast<Eigen::Index>(length);
  Cohort out;
  out.stream_names = cohort.stream_names;
  out.norm = cohort.norm;
  for (const auto& s : cohort.segments) {
    SegmentSeries c;
    c.segment = s.segment;
    c.timestamps.assign(s.timestamps.begin(), s.timestamps.begin() + L);
    c.values = s.values.leftCols(L);
    c.observed = s.observed.leftCols(L);
    out.segments.push_back(std::move(c));
  }
  return out;
}

Cohort subset(const Cohort& cohort, const std::vector<std::size_t>& indices) {
  Cohort out;
  out.stream_names = cohort.stream_names;
  out.norm = cohort.norm;
  for (auto i : indices) {
    if (i >= cohort.size()) throw ConfigError("segment index " + std::to_string(i) + " out of range");
    out.segments.push_back(cohort.segments[i]);
  }
  return out;
}

}  // namespace gapfill
