#include "vscc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vscc/version.hpp"

namespace fs = std::filesystem;

namespace vscc {

namespace {

constexpr double kPlotPsnrCap = 100.0;  // infinite PSNR is capped for plotting only

double cap(double v) { return std::isinf(v) ? kPlotPsnrCap : v; }

std::string fmt(double v) {
  char buf[32];
  snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct AxisRange {
  double lo = 0.0, hi = 1.0;
  void include(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

std::string svg_marker(const std::string& marker, double x, double y, const std::string& color) {
  std::ostringstream os;
  if (marker == "circle") {
    os << "<circle cx='" << x << "' cy='" << y << "' r='3.5' fill='none' stroke='" << color
       << "' stroke-width='1.5'/>";
  } else if (marker == "star") {
    os << "<path d='M" << x - 4 << " " << y << " L" << x + 4 << " " << y << " M" << x << " "
       << y - 4 << " L" << x << " " << y + 4 << " M" << x - 3 << " " << y - 3 << " L" << x + 3
       << " " << y + 3 << " M" << x - 3 << " " << y + 3 << " L" << x + 3 << " " << y - 3
       << "' stroke='" << color << "' stroke-width='1.2'/>";
  }
  return os.str();
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series, const std::string& metadata) {
  const double width = 640, height = 460;
  const double ml = 62, mr = 20, mt = 40, mb = 48;
  const double pw = width - ml - mr, ph = height - mt - mb;

  AxisRange xr{1e300, -1e300}, yr{1e300, -1e300};
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      xr.include(s.x[i]);
      yr.include(cap(s.y[i]));
      if (!s.band_low.empty()) {
        yr.include(cap(s.band_low[i]));
        yr.include(cap(s.band_high[i]));
      }
    }
  }
  if (xr.lo > xr.hi) { xr = {0, 1}; yr = {0, 1}; }
  if (xr.hi == xr.lo) xr.hi = xr.lo + 1;
  if (yr.hi == yr.lo) yr.hi = yr.lo + 1;
  const double ypad = 0.05 * (yr.hi - yr.lo);
  yr.lo -= ypad;
  yr.hi += ypad;

  auto px = [&](double v) { return ml + (v - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double v) { return mt + ph - (cap(v) - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_line_chart_svg: cannot open " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
    << "' font-family='sans-serif' font-size='12'>\n";
  if (!metadata.empty()) f << "<!-- " << metadata << " -->\n";
  f << "<rect width='100%' height='100%' fill='white'/>\n";
  f << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
    << "</text>\n";

  // Axes and ticks.
  f << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='" << mt + ph
    << "' stroke='black'/>\n";
  f << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + ph
    << "' stroke='black'/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double xv = xr.lo + (xr.hi - xr.lo) * t / 5.0;
    const double yv = yr.lo + (yr.hi - yr.lo) * t / 5.0;
    f << "<line x1='" << px(xv) << "' y1='" << mt + ph << "' x2='" << px(xv) << "' y2='"
      << mt + ph + 4 << "' stroke='black'/>\n";
    f << "<text x='" << px(xv) << "' y='" << mt + ph + 18 << "' text-anchor='middle'>" << fmt(xv)
      << "</text>\n";
    f << "<line x1='" << ml - 4 << "' y1='" << py(yv) << "' x2='" << ml << "' y2='" << py(yv)
      << "' stroke='black'/>\n";
    f << "<text x='" << ml - 8 << "' y='" << py(yv) + 4 << "' text-anchor='end'>" << fmt(yv)
      << "</text>\n";
  }
  f << "<text x='" << ml + pw / 2 << "' y='" << height - 10 << "' text-anchor='middle'>"
    << x_label << "</text>\n";
  f << "<text x='16' y='" << mt + ph / 2 << "' text-anchor='middle' transform='rotate(-90 16 "
    << mt + ph / 2 << ")'>" << y_label << "</text>\n";

  // Bands first so lines sit on top.
  for (const auto& s : series) {
    if (s.band_low.empty()) continue;
    f << "<polygon fill='" << s.color << "' fill-opacity='0.15' stroke='none' points='";
    for (size_t i = 0; i < s.x.size(); ++i) f << px(s.x[i]) << "," << py(s.band_high[i]) << " ";
    for (size_t i = s.x.size(); i-- > 0;) f << px(s.x[i]) << "," << py(s.band_low[i]) << " ";
    f << "'/>\n";
  }
  for (const auto& s : series) {
    f << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.8' points='";
    for (size_t i = 0; i < s.x.size(); ++i) f << px(s.x[i]) << "," << py(s.y[i]) << " ";
    f << "'/>\n";
    for (size_t i = 0; i < s.x.size(); ++i)
      f << svg_marker(s.marker, px(s.x[i]), py(s.y[i]), s.color) << "\n";
  }

  // Legend.
  double ly = mt + 8;
  for (const auto& s : series) {
    const double lx = ml + pw - 150;
    f << "<line x1='" << lx << "' y1='" << ly << "' x2='" << lx + 24 << "' y2='" << ly
      << "' stroke='" << s.color << "' stroke-width='1.8'/>\n";
    f << svg_marker(s.marker, lx + 12, ly, s.color) << "\n";
    f << "<text x='" << lx + 30 << "' y='" << ly + 4 << "'>" << s.label << "</text>\n";
    ly += 16;
  }
  f << "</svg>\n";
}

namespace {

struct LoadedResult {
  EvalResult result;
  std::string path;
};

struct Curve {
  std::vector<double> x, y, lo, hi;
};

// Mean curve plus the mean-of-extremes band over the test-SNR axis.
// Noiseless (infinite SNR) rows stay in the tables but have no finite
// x position, so they are left out of the curves.
Curve curve_from(const EvalResult& r, bool use_ssim) {
  std::map<double, std::vector<const PerImageRecord*>> by_snr;
  for (const auto& rec : r.records) {
    if (!std::isfinite(rec.test_snr_db)) continue;
    by_snr[rec.test_snr_db].push_back(&rec);
  }
  Curve c;
  for (const auto& [snr, recs] : by_snr) {
    double mean = 0, lo = 0, hi = 0;
    for (const auto* rec : recs) {
      const ResampleStats& s = use_ssim ? rec->ssim : rec->psnr;
      mean += cap(s.mean);
      lo += cap(s.min);
      hi += cap(s.max);
    }
    const double n = static_cast<double>(recs.size());
    c.x.push_back(snr);
    c.y.push_back(mean / n);
    c.lo.push_back(lo / n);
    c.hi.push_back(hi / n);
  }
  return c;
}

PlotSeries make_series(const EvalResult& r, bool use_ssim, std::string label, std::string color,
                       std::string marker, bool with_band) {
  const Curve c = curve_from(r, use_ssim);
  PlotSeries s;
  s.label = std::move(label);
  s.color = std::move(color);
  s.marker = std::move(marker);
  s.x = c.x;
  s.y = c.y;
  if (with_band) {
    s.band_low = c.lo;
    s.band_high = c.hi;
  }
  return s;
}

std::string snr_tag(double v) {
  char buf[32];
  snprintf(buf, sizeof buf, "%g", v);
  std::string s = buf;
  for (auto& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

const char* cmc_color(double cmc) {
  if (cmc <= 1) return "green";
  if (cmc <= 2) return "goldenrod";
  if (cmc <= 5) return "red";
  if (cmc <= 10) return "blue";
  return "purple";
}

}  // namespace

std::vector<std::string> generate_report(const std::vector<std::string>& results_paths,
                                         const ReportOptions& options) {
  std::vector<std::string> emitted;
  if (results_paths.empty()) {
    std::cerr << "report: no results files given, nothing to do\n";
    return emitted;
  }
  std::vector<LoadedResult> results;
  for (const auto& p : results_paths) {
    if (!is_eval_csv(p)) {
      std::cerr << "report: skipping " << p << " (not a results file)\n";
      continue;
    }
    results.push_back({read_eval_csv(p), p});
  }
  if (results.empty()) {
    std::cerr << "report: no usable results files, nothing to do\n";
    return emitted;
  }

  std::set<std::string> fingerprints;
  for (const auto& r : results)
    if (!r.result.config_fingerprint.empty()) fingerprints.insert(r.result.config_fingerprint);
  if (fingerprints.size() > 1 && !options.allow_mixed_fingerprints) {
    throw std::runtime_error(
        "report: results come from different config fingerprints; pass --mix-fingerprints to "
        "combine them anyway");
  }

  fs::create_directories(options.out_dir);
  auto out_path = [&](const std::string& name) {
    return (fs::path(options.out_dir) / name).string();
  };
  std::string plot_metadata = std::string("code_version=") + kCodeVersion;
  if (!fingerprints.empty()) plot_metadata += " config_fingerprint=" + *fingerprints.begin();

  // Resampling-mode comparison per VSCC checkpoint (transmission vs fixed).
  std::map<std::pair<double, double>, std::map<std::string, const EvalResult*>> vscc_by_cell;
  for (const auto& r : results)
    if (r.result.checkpoint_method == "vscc")
      vscc_by_cell[{r.result.checkpoint_train_snr_db, r.result.checkpoint_cmc}][r.result.mode] =
          &r.result;
  for (const auto& [cell, modes] : vscc_by_cell) {
    const auto tv = modes.find("transmission");
    const auto fv = modes.find("fixed");
    if (tv == modes.end() || fv == modes.end()) continue;
    for (const bool use_ssim : {false, true}) {
      const std::string metric = use_ssim ? "ssim" : "psnr";
      const std::string name = "mode_comparison_trainsnr" + snr_tag(cell.first) + "_cmc" +
                               snr_tag(cell.second) + "_" + metric + ".svg";
      write_line_chart_svg(
          out_path(name),
          "VSCC train SNR " + fmt(cell.first) + " dB, CMC " + fmt(cell.second),
          "test SNR (dB)", metric == "psnr" ? "PSNR (dB)" : "SSIM",
          {make_series(*tv->second, use_ssim, "transmission variance", "red", "circle", true),
           make_series(*fv->second, use_ssim, "fixed variance", "blue", "star", true)},
          plot_metadata);
      emitted.push_back(out_path(name));
    }
  }

  // CMC comparison: one line per CMC per train SNR (fixed-variance results).
  std::map<double, std::map<double, const EvalResult*>> by_snr_cmc;
  for (const auto& r : results)
    if (r.result.checkpoint_method == "vscc" && r.result.mode == "fixed")
      by_snr_cmc[r.result.checkpoint_train_snr_db][r.result.checkpoint_cmc] = &r.result;
  for (const auto& [snr, cmcs] : by_snr_cmc) {
    if (cmcs.size() < 2) continue;
    for (const bool use_ssim : {false, true}) {
      const std::string metric = use_ssim ? "ssim" : "psnr";
      std::vector<PlotSeries> series;
      for (const auto& [cmc, res] : cmcs)
        series.push_back(
            make_series(*res, use_ssim, "CMC " + fmt(cmc), cmc_color(cmc), "none", false));
      const std::string name = "cmc_comparison_trainsnr" + snr_tag(snr) + "_" + metric + ".svg";
      write_line_chart_svg(out_path(name), "VSCC train SNR " + fmt(snr) + " dB, CMC sweep",
                           "test SNR (dB)", metric == "psnr" ? "PSNR (dB)" : "SSIM", series,
                           plot_metadata);
      emitted.push_back(out_path(name));
    }
  }

  // Method comparison per train SNR: VSCC vs VAE (fixed) vs AE (direct).
  std::map<double, std::map<std::string, const EvalResult*>> by_snr_method;
  for (const auto& r : results) {
    const std::string m = r.result.checkpoint_method;
    if ((m == "vscc" || m == "vae") && r.result.mode == "fixed")
      by_snr_method[r.result.checkpoint_train_snr_db][m] = &r.result;
    if (m == "ae" && r.result.mode == "ae")
      by_snr_method[r.result.checkpoint_train_snr_db][m] = &r.result;
  }
  for (const auto& [snr, methods] : by_snr_method) {
    if (methods.size() < 2) continue;
    for (const bool use_ssim : {false, true}) {
      const std::string metric = use_ssim ? "ssim" : "psnr";
      std::vector<PlotSeries> series;
      if (methods.count("vscc"))
        series.push_back(make_series(*methods.at("vscc"), use_ssim, "VSCC", "blue", "circle", true));
      if (methods.count("vae"))
        series.push_back(make_series(*methods.at("vae"), use_ssim, "VAE", "red", "star", true));
      if (methods.count("ae"))
        series.push_back(make_series(*methods.at("ae"), use_ssim, "AE", "green", "none", false));
      const std::string name = "method_comparison_trainsnr" + snr_tag(snr) + "_" + metric + ".svg";
      write_line_chart_svg(out_path(name), "Methods at train SNR " + fmt(snr) + " dB",
                           "test SNR (dB)", metric == "psnr" ? "PSNR (dB)" : "SSIM", series,
                           plot_metadata);
      emitted.push_back(out_path(name));
    }
  }

  // Summary table.
  {
    const std::string name = out_path("summary.csv");
    std::ofstream f(name, std::ios::trunc);
    if (!fingerprints.empty()) f << "# config_fingerprint=" << *fingerprints.begin() << "\n";
    f << "method,train_snr_db,cmc,mode,test_snr_db,psnr_mean,ssim_mean\n";
    for (const auto& r : results) {
      for (const auto& a : r.result.aggregates()) {
        char line[256];
        snprintf(line, sizeof line, "%s,%g,%g,%s,%g,%.6g,%.6g\n",
                 r.result.checkpoint_method.c_str(), r.result.checkpoint_train_snr_db,
                 r.result.checkpoint_cmc, r.result.mode.c_str(), a.test_snr_db, a.psnr_mean,
                 a.ssim_mean);
        f << line;
      }
    }
    emitted.push_back(name);
  }

  // Best CMC per train SNR, observed at test SNR == train SNR.
  {
    const std::string name = out_path("best_cmc.csv");
    std::ofstream f(name, std::ios::trunc);
    f << "train_snr_db,best_cmc_psnr,psnr_mean,best_cmc_ssim,ssim_mean\n";
    for (const auto& [snr, cmcs] : by_snr_cmc) {
      double best_psnr = -1e300, best_ssim = -1e300, cmc_psnr = 0, cmc_ssim = 0;
      for (const auto& [cmc, res] : cmcs) {
        for (const auto& a : res->aggregates()) {
          if (a.test_snr_db != snr) continue;
          if (a.psnr_mean > best_psnr) { best_psnr = a.psnr_mean; cmc_psnr = cmc; }
          if (a.ssim_mean > best_ssim) { best_ssim = a.ssim_mean; cmc_ssim = cmc; }
        }
      }
      if (best_psnr > -1e300) {
        char line[160];
        snprintf(line, sizeof line, "%g,%g,%.6g,%g,%.6g\n", snr, cmc_psnr, best_psnr, cmc_ssim,
                 best_ssim);
        f << line;
      }
    }
    emitted.push_back(name);
  }
  return emitted;
}

}  // namespace vscc
