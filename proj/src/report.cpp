#include <fstream>
#include <ostream>
#include <sstream>

#include "gapfill/error.hpp"
#include "gapfill/eval.hpp"
#include "text.hpp"

namespace gapfill {

namespace {

template <typename Writer>
void write_file(const std::string& path, Writer&& writer) {
  std::ostringstream buffer;
  writer(buffer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << buffer.str();
  if (!out.flush()) throw IoError("failed writing '" + path + "'");
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void emit_report(const ComparisonReport& report, std::ostream& out, bool include_runtime) {
  if (report.rows.empty()) throw PreconditionError("report has no rows");
  out << "method,axis,axis_value,fold,n_segments,seq_length,tau,rmse,runtime_s\n";
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.axis << ',' << detail::format_double(r.axis_value) << ',' << r.fold << ','
        << r.n_segments << ',' << r.seq_length << ',' << r.tau << ',' << detail::format_double(r.rmse) << ',';
    if (include_runtime) out << detail::format_fixed(r.runtime_s, 3);
    out << '\n';
  }
}

void emit_report(const ComparisonReport& report, const std::string& path, bool include_runtime) {
  if (report.rows.empty()) throw PreconditionError("report has no rows");
  write_file(path, [&](std::ostream& o) { emit_report(report, o, include_runtime); });
}

void emit_eta(const ComparisonReport& report, std::ostream& out) {
  out << "method,vs,eta_pct\n";
  for (const auto& e : report.etas) out << e.method << ',' << e.vs << ',' << detail::format_fixed(e.eta_pct, 4) << '\n';
}

void emit_eta(const ComparisonReport& report, const std::string& path) {
  write_file(path, [&](std::ostream& o) { emit_eta(report, o); });
}

void emit_plot(const ComparisonReport& report, const std::string& axis_label, std::ostream& out) {
  if (report.rows.empty()) throw PreconditionError("report has no rows to plot");
  const auto xs = report.axis_values();
  const auto methods = report.methods();

  std::vector<std::vector<double>> ys;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& m : methods) {
    std::vector<double> series;
    for (double x : xs) {
      const double y = report.mean_rmse(m, x);
      series.push_back(y);
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    ys.push_back(std::move(series));
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5 * std::max(std::abs(lo), 1e-3);
    hi += 0.5 * std::max(std::abs(hi), 1e-3);
  }
  const double pad = 0.05 * (hi - lo);
  lo = std::max(0.0, lo - pad);
  hi += pad;

  constexpr double left = 90, right = 620, top = 50, bottom = 520;
  const double x0 = xs.front();
  const double x1 = xs.size() > 1 ? xs.back() : xs.front() + 1.0;
  auto px = [&](double x) { return xs.size() > 1 ? left + (x - x0) / (x1 - x0) * (right - left) : (left + right) / 2; };
  auto py = [&](double y) { return bottom - (y - lo) / (hi - lo) * (bottom - top); };
  auto f2 = [](double v) { return detail::format_fixed(v, 2); };

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"800\" height=\"600\" "
         "viewBox=\"0 0 800 600\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n"
      << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(bottom) << "\" x2=\"" << f2(right) << "\" y2=\"" << f2(bottom)
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(top) << "\" x2=\"" << f2(left) << "\" y2=\"" << f2(bottom)
      << "\" stroke=\"black\"/>\n";
  for (double x : xs) {
    out << "<line x1=\"" << f2(px(x)) << "\" y1=\"" << f2(bottom) << "\" x2=\"" << f2(px(x)) << "\" y2=\""
        << f2(bottom + 6) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << f2(px(x)) << "\" y=\"" << f2(bottom + 22)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << detail::format_double(x)
        << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double y = lo + (hi - lo) * i / 4.0;
    out << "<line x1=\"" << f2(left - 6) << "\" y1=\"" << f2(py(y)) << "\" x2=\"" << f2(left) << "\" y2=\""
        << f2(py(y)) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << f2(left - 10) << "\" y=\"" << f2(py(y) + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" << detail::format_fixed(y, 4)
        << "</text>\n";
  }
  out << "<text x=\"" << f2((left + right) / 2) << "\" y=\"" << f2(bottom + 50)
      << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">" << escape_xml(axis_label)
      << "</text>\n"
      << "<text x=\"24\" y=\"" << f2((top + bottom) / 2) << "\" font-family=\"sans-serif\" font-size=\"14\" "
      << "text-anchor=\"middle\" transform=\"rotate(-90 24 " << f2((top + bottom) / 2) << ")\">RMSE</text>\n";

  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* color = kPalette[m % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) out << ' ';
      out << f2(px(xs[i])) << ',' << f2(py(ys[m][i]));
    }
    out << "\"/>\n";
    const double ly = top + 20.0 * static_cast<double>(m);
    out << "<line x1=\"640\" y1=\"" << f2(ly) << "\" x2=\"670\" y2=\"" << f2(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"678\" y=\"" << f2(ly + 4) << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << escape_xml(methods[m]) << "</text>\n";
  }
  out << "</svg>\n";
}

void emit_plot(const ComparisonReport& report, const std::string& axis_label, const std::string& path) {
  if (report.rows.empty()) throw PreconditionError("report has no rows to plot");
  write_file(path, [&](std::ostream& o) { emit_plot(report, axis_label, o); });
}

}  // namespace gapfill
