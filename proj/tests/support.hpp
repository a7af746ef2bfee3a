#pragma once

// Small builders shared by the test binaries.

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gapfill/data.hpp"

namespace gapfill::testing {

inline SegmentSeries make_series(const std::string& id, const Grid& values, Minutes start = 0) {
  SegmentSeries s;
  s.segment.id = id;
  s.segment.length_km = 1.0;
  s.values = values;
  s.observed = BoolGrid::Constant(values.rows(), values.cols(), true);
  for (Eigen::Index t = 0; t < values.cols(); ++t) s.timestamps.push_back(start + t);
  return s;
}

inline Cohort make_cohort(const std::vector<Grid>& grids, std::vector<std::string> names = {}) {
  Cohort c;
  for (std::size_t i = 0; i < grids.size(); ++i) c.segments.push_back(make_series("s" + std::to_string(i), grids[i]));
  if (names.empty()) {
    for (Eigen::Index d = 0; d < grids.front().rows(); ++d) names.push_back("x" + std::to_string(d));
  }
  c.stream_names = std::move(names);
  return c;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline std::string raw_header() {
  return "segment_id,start_lat,start_lon,end_lat,end_lon,length_km,timestamp_min,speed_kmh,travel_time_s,"
         "confidence_pct\n";
}

inline std::string raw_row(const std::string& id, Minutes t, double speed = 50.0, double conf = 100.0) {
  std::ostringstream os;
  os << id << ",43.6,-79.4,43.61,-79.4,1.1," << t << ',' << speed << ',' << 3600.0 * 1.1 / speed << ',' << conf
     << '\n';
  return os.str();
}

}  // namespace gapfill::testing
