#include "mmsn/report.hpp"

#include <cstdio>
#include <sstream>

#include "mmsn/common.hpp"

namespace mmsn {

std::string delta_arrow(double value, double reference) {
  const double pts = (value - reference) * 100.0;
  if (pts > 1.5) return "↑↑";
  if (pts >= 0.5) return "↑";
  if (pts < -1.5) return "↓↓";
  if (pts <= -0.5) return "↓";
  return "-";
}

namespace {

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string cell(double value, const std::pair<double, double>& ci, double reference,
                 bool is_reference) {
  std::string s = fmt3(value) + " (" + fmt3(ci.first) + ", " + fmt3(ci.second) + ")";
  if (!is_reference) s += " " + delta_arrow(value, reference);
  return s;
}

}  // namespace

std::string render_report_table(const std::vector<ReportRow>& rows, int reference_index) {
  require(!rows.empty(), "InvalidArgument", "no reports to render");
  require(reference_index >= 0 && reference_index < static_cast<int>(rows.size()),
          "InvalidArgument", "reference index out of range");
  const MetricReport& ref = rows[static_cast<std::size_t>(reference_index)].report;

  std::ostringstream out;
  out << "| Model | AUROC (CI) | AUPRC (CI) |\n";
  out << "|---|---|---|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const bool is_ref = static_cast<int>(i) == reference_index;
    const MetricReport& r = rows[i].report;
    out << "| " << rows[i].name << (is_ref ? " (reference)" : "") << " | "
        << cell(r.auroc, r.auroc_ci, ref.auroc, is_ref) << " | "
        << cell(r.auprc, r.auprc_ci, ref.auprc, is_ref) << " |";
    if (r.p_value_vs_reference) {
      out << " p=" << fmt3(*r.p_value_vs_reference) << " vs reference";
    }
    out << "\n";
  }
  out << "\nArrows: - |delta| < 0.5 points; single arrow 0.5-1.5; double arrow > 1.5.\n";
  return out.str();
}

}  // namespace mmsn
