#pragma once

#include <string>
#include <vector>

#include "mmsn/metrics.hpp"

namespace mmsn {

/// One table row: a model name plus its report.
struct ReportRow {
  std::string name;
  MetricReport report;
};

/// Markdown table with point estimates, 95% CIs and difference arrows
/// against the reference row: "-" for |delta| < 0.5 points, one arrow for
/// 0.5-1.5, a double arrow beyond 1.5.
std::string render_report_table(const std::vector<ReportRow>& rows, int reference_index = 0);

std::string delta_arrow(double value, double reference);

}  // namespace mmsn
