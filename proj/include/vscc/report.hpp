#pragma once

#include <string>
#include <vector>

#include "vscc/evaluator.hpp"

namespace vscc {

// A plottable curve: points over the test-SNR axis plus an optional
// min/max band.
struct PlotSeries {
  std::string label;
  std::string color;
  std::string marker;  // "circle" | "star" | "none"
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band_low;
  std::vector<double> band_high;
};

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series,
                          const std::string& metadata = "");

struct ReportOptions {
  std::string out_dir = "report";
  bool allow_mixed_fingerprints = false;
};

// Reads results CSVs and emits per-figure SVG plots (resampling-mode
// comparison, CMC comparison, method comparison), a summary table and a
// best-CMC-per-SNR table. Refuses to mix config fingerprints unless
// explicitly allowed. Returns the emitted file paths.
std::vector<std::string> generate_report(const std::vector<std::string>& results_paths,
                                         const ReportOptions& options);

}  // namespace vscc
