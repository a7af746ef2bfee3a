#include "gapfill/cohort_io.hpp"

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>

#include "gapfill/error.hpp"
#include "text.hpp"

namespace gapfill {

namespace {

constexpr std::string_view kRawHeader =
    "segment_id,start_lat,start_lon,end_lat,end_lon,length_km,timestamp_min,speed_kmh,travel_time_s,"
    "confidence_pct";
constexpr std::string_view kLedgerHeader = "segment_idx,stream_idx,time_idx,true_value";

void require_traffic_streams(const Cohort& cohort) {
  if (cohort.stream_names != traffic_stream_names()) {
    throw PreconditionError("CSV export needs the two traffic streams (speed_kmh, travel_time_s)");
  }
  if (cohort.norm) throw PreconditionError("CSV export expects a denormalized cohort");
}

void write_rows(const Cohort& cohort, std::ostream& out, bool with_observed) {
  using detail::format_double;
  for (const auto& s : cohort.segments) {
    const auto& g = s.segment;
    const std::string prefix = g.id + ',' + format_double(g.start.lat) + ',' + format_double(g.start.lon) + ',' +
                               format_double(g.end.lat) + ',' + format_double(g.end.lon) + ',' +
                               format_double(g.length_km) + ',';
    for (Eigen::Index t = 0; t < s.length(); ++t) {
      out << prefix << s.timestamps[t];
      for (Eigen::Index d = 0; d < 2; ++d) out << ',' << format_double(s.observed(d, t) ? s.values(d, t) : 0.0);
      out << ",100";
      if (with_observed) out << ',' << (s.observed(0, t) ? '1' : '0') << (s.observed(1, t) ? '1' : '0');
      out << '\n';
    }
  }
}

}  // namespace

void write_raw_csv(const Cohort& cohort, std::ostream& out) {
  require_traffic_streams(cohort);
  if (!cohort.fully_observed()) throw PreconditionError("raw CSV cannot represent missing entries");
  out << kRawHeader << '\n';
  write_rows(cohort, out, false);
}

void write_cohort_csv(const Cohort& cohort, std::ostream& out) {
  require_traffic_streams(cohort);
  out << kRawHeader << ",observed\n";
  write_rows(cohort, out, true);
}

Cohort read_cohort_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file: missing header");
  const auto header = detail::split_fields(detail::trim_cr(line));
  const auto raw = detail::split_fields(kRawHeader);
  bool has_observed = false;
  if (header.size() == raw.size() + 1 && header.back() == "observed") {
    has_observed = true;
  } else if (header.size() != raw.size()) {
    throw SchemaError("unexpected cohort header");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (header[i] != raw[i]) throw SchemaError("missing column '" + std::string(raw[i]) + "'");
  }

  Cohort cohort;
  cohort.stream_names = traffic_stream_names();
  struct Pending {
    RoadSegment segment;
    std::vector<Minutes> ts;
    std::vector<std::array<double, 2>> vals;
    std::vector<std::array<bool, 2>> obs;
  };
  std::vector<Pending> pending;
  std::unordered_map<std::string, std::size_t> where;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto f = detail::split_fields(text);
    if (f.size() != header.size()) throw RowError(line_no, "wrong field count");
    auto real = [&](std::size_t c) {
      auto v = detail::parse_number<double>(f[c]);
      if (!v || !std::isfinite(*v)) throw RowError(line_no, "cannot parse " + std::string(raw[c]));
      return *v;
    };
    const std::string id(f[0]);
    auto [it, inserted] = where.emplace(id, pending.size());
    if (inserted) {
      Pending p;
      p.segment = {id, {real(1), real(2)}, {real(3), real(4)}, real(5)};
      try {
        p.segment.validate();
      } catch (const PreconditionError& e) {
        throw RowError(line_no, e.what());
      }
      pending.push_back(std::move(p));
    }
    auto& p = pending[it->second];
    const auto ts = detail::parse_number<Minutes>(f[6]);
    if (!ts) throw RowError(line_no, "cannot parse timestamp_min");
    std::array<bool, 2> obs{true, true};
    if (has_observed) {
      const auto flag = f[10];
      if (flag.size() != 2 || (flag[0] != '0' && flag[0] != '1') || (flag[1] != '0' && flag[1] != '1')) {
        throw RowError(line_no, "observed must be two 0/1 digits");
      }
      obs = {flag[0] == '1', flag[1] == '1'};
    }
    p.ts.push_back(*ts);
    p.vals.push_back({real(7), real(8)});
    p.obs.push_back(obs);
  }
  if (pending.empty()) throw EmptyCohortError("cohort file has no rows");

  for (auto& p : pending) {
    const auto L = static_cast<Eigen::Index>(p.ts.size());
    SegmentSeries s;
    s.segment = p.segment;
    s.timestamps = p.ts;
    s.values.resize(2, L);
    s.observed.resize(2, L);
    for (Eigen::Index t = 0; t < L; ++t) {
      for (Eigen::Index d = 0; d < 2; ++d) {
        s.observed(d, t) = p.obs[t][d];
        s.values(d, t) = p.obs[t][d] ? p.vals[t][d] : 0.0;
      }
    }
    cohort.segments.push_back(std::move(s));
  }
  cohort.validate();
  return cohort;
}

void write_ledger_csv(const GroundTruthLedger& ledger, std::ostream& out) {
  out << kLedgerHeader << '\n';
  for (const auto& e : ledger.entries) {
    out << e.segment << ',' << e.stream << ',' << e.time << ',' << detail::format_double(e.value) << '\n';
  }
}

GroundTruthLedger read_ledger_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty ledger file");
  if (detail::trim_cr(line) != kLedgerHeader) throw SchemaError("unexpected ledger header");
  GroundTruthLedger ledger;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto f = detail::split_fields(text);
    if (f.size() != 4) throw RowError(line_no, "wrong field count");
    const auto n = detail::parse_number<std::size_t>(f[0]);
    const auto d = detail::parse_number<Eigen::Index>(f[1]);
    const auto t = detail::parse_number<Eigen::Index>(f[2]);
    const auto v = detail::parse_number<double>(f[3]);
    if (!n || !d || !t || !v) throw RowError(line_no, "cannot parse ledger row");
    ledger.entries.push_back({*n, *d, *t, *v});
  }
  return ledger;
}

}  // namespace gapfill
