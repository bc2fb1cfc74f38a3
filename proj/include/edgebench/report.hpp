#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "edgebench/domain.hpp"
#include "edgebench/harness.hpp"
#include "edgebench/mmlu.hpp"
#include "edgebench/teaching.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

inline constexpr const char* kDefaultQuantisation = "Q4_K_M";
inline constexpr double kUsabilityTpsLine = 1.0;
inline constexpr double kMmluRandomBaselinePct = 25.0;
inline constexpr double kMmluStrongPct = 50.0;

struct ModelReportRow {
  std::string model;
  std::optional<double> params_billions;
  std::optional<double> disk_gb;
  std::string quantisation;
  std::map<std::string, double> tps_by_platform;   // means
  std::map<std::string, double> ttft_by_platform;  // means, seconds
  std::map<std::string, double> tpj_by_platform;   // means
  std::optional<double> mmlu_pct;
  std::optional<double> mmlu_min_pct;
  std::optional<double> mmlu_max_pct;
  std::optional<double> teach_mean;
  bool mmlu_excluded = false;        // format-violation exclusion
  bool degenerate_responses = false; // some zero/one-chunk responses
  bool non_default_quantisation = false;

  std::optional<double> tps_on(const std::string& platform) const {
    auto it = tps_by_platform.find(platform);
    if (it == tps_by_platform.end()) return std::nullopt;
    return it->second;
  }
};

struct Report {
  std::vector<ModelReportRow> rows;
  std::vector<std::string> platforms;  // sorted
  std::string primary_platform;        // rows sort by TPS on this platform
};

// One row per model, sorted by descending TPS on the primary platform
// (rows without bench data follow, by name). Missing dimensions stay absent.
inline Report build_report(const CanonicalDataset& ds, const std::vector<MmluSummary>& mmlu,
                           const std::vector<TeachingSummary>& teach,
                           const std::vector<ModelSpec>& specs = {},
                           const std::string& primary_platform = {}) {
  if (ds.records.empty() && mmlu.empty() && teach.empty())
    throw Error("build_report: every data source is empty");

  std::map<std::string, ModelReportRow> rows;
  std::set<std::string> platforms;

  if (!ds.records.empty()) {
    for (const auto& summary : aggregate(ds)) {
      auto& row = rows[summary.model];
      row.model = summary.model;
      platforms.insert(summary.platform);
      if (summary.mean_tps) row.tps_by_platform[summary.platform] = *summary.mean_tps;
      if (summary.mean_ttft_s) row.ttft_by_platform[summary.platform] = *summary.mean_ttft_s;
      if (summary.mean_tpj) row.tpj_by_platform[summary.platform] = *summary.mean_tpj;
      if (summary.n_degenerate > 0) row.degenerate_responses = true;
    }
  }
  for (const auto& s : mmlu) {
    auto& row = rows[s.model];
    row.model = s.model;
    row.mmlu_pct = s.aggregate_pct();
    auto [lo, hi] = s.category_range();
    row.mmlu_min_pct = lo;
    row.mmlu_max_pct = hi;
    row.mmlu_excluded = s.excluded_from_aggregate;
  }
  for (const auto& s : teach) {
    auto& row = rows[s.model];
    row.model = s.model;
    if (auto m = s.mean()) row.teach_mean = *m;
  }
  for (const auto& spec : specs) {
    auto it = rows.find(spec.name);
    if (it == rows.end()) continue;
    it->second.params_billions = spec.params_billions;
    it->second.disk_gb = spec.disk_gb;
    it->second.quantisation = spec.quantisation;
    it->second.non_default_quantisation =
        !spec.quantisation.empty() && spec.quantisation != kDefaultQuantisation;
  }

  Report report;
  report.platforms.assign(platforms.begin(), platforms.end());
  report.primary_platform = !primary_platform.empty()
                                ? primary_platform
                                : (report.platforms.empty() ? "" : report.platforms.front());
  for (auto& [_, row] : rows) report.rows.push_back(std::move(row));
  std::sort(report.rows.begin(), report.rows.end(),
            [&](const ModelReportRow& a, const ModelReportRow& b) {
              auto ta = a.tps_on(report.primary_platform);
              auto tb = b.tps_on(report.primary_platform);
              if (ta.has_value() != tb.has_value()) return ta.has_value();
              if (ta && tb && *ta != *tb) return *ta > *tb;
              return a.model < b.model;
            });
  return report;
}

// --- markdown / csv -----------------------------------------------------------

namespace detail {

inline std::string opt_fixed(const std::optional<double>& v, int prec) {
  return v ? fmt_fixed(*v, prec) : std::string("-");
}

}  // namespace detail

inline std::string render_markdown(const Report& report) {
  std::string out;
  out += "# Model benchmark report\n\n";
  out += "TPS/TTFT/TPJ are per-platform single-run means over the battery; energy-derived\n";
  out += "figures carry a +/-20% model uncertainty. MMLU is the six-category aggregate.\n\n";

  out += "| Model | Params (B) | Disk (GB) | Quant |";
  for (const auto& p : report.platforms) out += " TPS " + p + " |";
  out += " TPJ | MMLU (%) | MMLU range | Teach (/10) | Flags |\n";
  out += "|---|---|---|---|";
  for (size_t i = 0; i < report.platforms.size(); ++i) out += "---|";
  out += "---|---|---|---|---|\n";

  for (const auto& row : report.rows) {
    out += "| " + row.model + " | " + detail::opt_fixed(row.params_billions, 2) + " | " +
           detail::opt_fixed(row.disk_gb, 1) + " | " +
           (row.quantisation.empty() ? "-" : row.quantisation) + " |";
    for (const auto& p : report.platforms) out += " " + detail::opt_fixed(row.tps_on(p), 2) + " |";
    std::optional<double> tpj;
    if (auto it = row.tpj_by_platform.find(report.primary_platform);
        it != row.tpj_by_platform.end())
      tpj = it->second;
    out += " " + detail::opt_fixed(tpj, 2) + " |";
    out += " " + detail::opt_fixed(row.mmlu_pct, 1) + " |";
    if (row.mmlu_min_pct && row.mmlu_max_pct)
      out += " " + fmt_fixed(*row.mmlu_min_pct, 0) + "-" + fmt_fixed(*row.mmlu_max_pct, 0) + " |";
    else
      out += " - |";
    out += " " + detail::opt_fixed(row.teach_mean, 1) + " |";
    std::string flags;
    if (row.mmlu_excluded) flags += "format-violation ";
    if (row.degenerate_responses) flags += "degenerate-responses ";
    if (row.non_default_quantisation) flags += "non-default-quantisation ";
    out += " " + (flags.empty() ? std::string("-") : trim(flags)) + " |\n";
  }

  // aggregate MMLU mean over non-excluded models
  double mmlu_sum = 0;
  size_t mmlu_n = 0;
  for (const auto& row : report.rows)
    if (row.mmlu_pct && !row.mmlu_excluded) {
      mmlu_sum += *row.mmlu_pct;
      ++mmlu_n;
    }
  if (mmlu_n > 0)
    out += "\nMMLU mean across " + std::to_string(mmlu_n) +
           " models (format-violation rows excluded): " + fmt_fixed(mmlu_sum / mmlu_n, 1) + "%\n";
  return out;
}

inline std::string render_csv(const Report& report) {
  std::string out = "model,params_billions,disk_gb,quantisation";
  for (const auto& p : report.platforms) out += ",tps_" + p + ",ttft_s_" + p + ",tpj_" + p;
  out += ",mmlu_pct,mmlu_min_pct,mmlu_max_pct,teach_mean";
  out += ",mmlu_excluded,degenerate_responses,non_default_quantisation\n";

  auto opt_cell = [](const std::optional<double>& v, int prec) {
    return v ? fmt_fixed(*v, prec) : std::string{};
  };
  for (const auto& row : report.rows) {
    out += csv_escape(row.model);
    out += "," + opt_cell(row.params_billions, 3) + "," + opt_cell(row.disk_gb, 2) + "," +
           csv_escape(row.quantisation);
    for (const auto& p : report.platforms) {
      auto find = [&](const std::map<std::string, double>& m) -> std::optional<double> {
        auto it = m.find(p);
        if (it == m.end()) return std::nullopt;
        return it->second;
      };
      out += "," + opt_cell(find(row.tps_by_platform), 4);
      out += "," + opt_cell(find(row.ttft_by_platform), 4);
      out += "," + opt_cell(find(row.tpj_by_platform), 4);
    }
    out += "," + opt_cell(row.mmlu_pct, 2) + "," + opt_cell(row.mmlu_min_pct, 2) + "," +
           opt_cell(row.mmlu_max_pct, 2) + "," + opt_cell(row.teach_mean, 3);
    out += std::string(",") + (row.mmlu_excluded ? "true" : "false");
    out += std::string(",") + (row.degenerate_responses ? "true" : "false");
    out += std::string(",") + (row.non_default_quantisation ? "true" : "false");
    out += "\n";
  }
  return out;
}

// --- svg panels ----------------------------------------------------------------

enum class ScatterPanel { throughput, mmlu };

namespace svgdetail {

struct Layout {
  double width = 860, height = 420;
  double left = 64, right = 24, top = 28, bottom = 96;
  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
};

inline std::string rgb(int r, int g, int b) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string lerp_rgb(double t, int r0, int g0, int b0, int r1, int g1, int b1) {
  t = std::clamp(t, 0.0, 1.0);
  return rgb(static_cast<int>(std::lround(r0 + (r1 - r0) * t)),
             static_cast<int>(std::lround(g0 + (g1 - g0) * t)),
             static_cast<int>(std::lround(b0 + (b1 - b0) * t)));
}

// sequential viridis-like ramp for teach scores (1..10)
inline std::string teach_color(double score) {
  double t = std::clamp((score - 1.0) / 9.0, 0.0, 1.0);
  struct Stop {
    double t;
    int r, g, b;
  };
  static constexpr Stop stops[] = {
      {0.0, 68, 1, 84}, {0.25, 59, 82, 139}, {0.5, 33, 145, 140}, {0.75, 94, 201, 98},
      {1.0, 253, 231, 37}};
  for (size_t i = 1; i < std::size(stops); ++i) {
    if (t <= stops[i].t) {
      double local = (t - stops[i - 1].t) / (stops[i].t - stops[i - 1].t);
      return lerp_rgb(local, stops[i - 1].r, stops[i - 1].g, stops[i - 1].b, stops[i].r,
                      stops[i].g, stops[i].b);
    }
  }
  return rgb(253, 231, 37);
}

// diverging palette for TTFT, centred at 5 s (blue fast, red slow)
inline std::string ttft_color(std::optional<double> ttft_s) {
  if (!ttft_s) return rgb(120, 120, 120);
  double t = std::clamp((*ttft_s - 5.0) / 5.0, -1.0, 1.0);
  if (t < 0) return lerp_rgb(-t, 247, 247, 247, 33, 102, 172);
  return lerp_rgb(t, 247, 247, 247, 178, 24, 43);
}

// marker radius in four disk-footprint tiers
inline double marker_radius(std::optional<double> disk_gb) {
  if (!disk_gb) return 4.5;
  if (*disk_gb < 1.0) return 3.0;
  if (*disk_gb < 2.0) return 4.5;
  if (*disk_gb < 3.5) return 6.0;
  return 7.5;
}

}  // namespace svgdetail

// y pixel for a value on a log10 scale spanning [lo, hi] over [y_bottom, y_top]
inline double svg_y_log(double v, double lo, double hi, double y_bottom, double y_top) {
  double t = (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo));
  return y_bottom + (y_top - y_bottom) * t;
}

inline double svg_y_linear(double v, double lo, double hi, double y_bottom, double y_top) {
  double t = (v - lo) / (hi - lo);
  return y_bottom + (y_top - y_bottom) * t;
}

// Deterministic SVG scatter: same rows, same bytes. The throughput panel is
// log-scale TPS with the 1-TPS usability line and per-platform means; the
// mmlu panel carries the 25%/50% reference lines and per-category min-max
// bars, hue-coded by teach score.
inline std::string emit_scatter(const Report& report, ScatterPanel panel) {
  if (report.rows.empty()) throw Error("emit_scatter: no rows");
  using namespace svgdetail;
  Layout L;
  const double x0 = L.left, y_bottom = L.height - L.bottom, y_top = L.top;
  const size_t n = report.rows.size();
  auto x_of = [&](size_t i) {
    return x0 + L.plot_w() * (n == 1 ? 0.5 : (0.08 + 0.84 * static_cast<double>(i) /
                                                         static_cast<double>(n - 1)));
  };
  auto F = [](double v) { return fmt_fixed(v, 2); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + F(L.width) + "\" height=\"" +
       F(L.height) + "\" viewBox=\"0 0 " + F(L.width) + " " + F(L.height) + "\">\n";
  s += "<rect width=\"" + F(L.width) + "\" height=\"" + F(L.height) + "\" fill=\"#ffffff\"/>\n";

  auto line = [&](double x1, double y1, double x2, double y2, const std::string& cls,
                  const std::string& stroke, const std::string& dash) {
    s += "<line class=\"" + cls + "\" x1=\"" + F(x1) + "\" y1=\"" + F(y1) + "\" x2=\"" + F(x2) +
         "\" y2=\"" + F(y2) + "\" stroke=\"" + stroke + "\"";
    if (!dash.empty()) s += " stroke-dasharray=\"" + dash + "\"";
    s += " stroke-width=\"1.00\"/>\n";
  };
  auto text = [&](double x, double y, const std::string& t, const std::string& anchor,
                  const std::string& extra = {}) {
    s += "<text x=\"" + F(x) + "\" y=\"" + F(y) + "\" font-family=\"sans-serif\" font-size=\"10\"" +
         " text-anchor=\"" + anchor + "\"" + extra + ">" + t + "</text>\n";
  };

  // axes
  line(x0, y_bottom, x0 + L.plot_w(), y_bottom, "axis-x", "#000000", "");
  line(x0, y_bottom, x0, y_top, "axis-y", "#000000", "");

  if (panel == ScatterPanel::throughput) {
    double max_tps = kUsabilityTpsLine, min_tps = kUsabilityTpsLine;
    for (const auto& row : report.rows)
      for (const auto& [_, v] : row.tps_by_platform) {
        max_tps = std::max(max_tps, v);
        min_tps = std::min(min_tps, v);
      }
    const double lo = std::pow(10.0, std::floor(std::log10(std::max(1e-3, min_tps))));
    const double hi = std::pow(10.0, std::ceil(std::log10(max_tps * 1.0001)));
    auto y_of = [&](double v) { return svg_y_log(v, lo, hi, y_bottom, y_top); };

    for (double decade = lo; decade <= hi * 1.0001; decade *= 10.0) {
      line(x0 - 3, y_of(decade), x0, y_of(decade), "tick", "#000000", "");
      text(x0 - 6, y_of(decade) + 3, fmt_fixed(decade, decade < 1 ? 1 : 0), "end");
    }
    text(14, (y_top + y_bottom) / 2, "TPS (log)", "middle",
         " transform=\"rotate(-90 14.00 " + F((y_top + y_bottom) / 2) + ")\"");

    // per-platform dashed mean lines
    for (size_t pi = 0; pi < report.platforms.size(); ++pi) {
      const auto& plat = report.platforms[pi];
      double sum = 0;
      size_t cnt = 0;
      for (const auto& row : report.rows)
        if (auto v = row.tps_on(plat)) {
          sum += *v;
          ++cnt;
        }
      if (cnt == 0) continue;
      double mean = sum / static_cast<double>(cnt);
      line(x0, y_of(mean), x0 + L.plot_w(), y_of(mean), "mean-" + plat, "#999999", "6,3");
      text(x0 + L.plot_w() - 2, y_of(mean) - 3, plat + " mean " + fmt_fixed(mean, 2), "end");
    }

    // usability threshold
    line(x0, y_of(kUsabilityTpsLine), x0 + L.plot_w(), y_of(kUsabilityTpsLine), "ref-1tps",
         "#444444", "2,3");
    text(x0 + 4, y_of(kUsabilityTpsLine) - 4, "1 TPS usability", "start");

    for (size_t i = 0; i < n; ++i) {
      const auto& row = report.rows[i];
      double x = x_of(i);
      for (size_t pi = 0; pi < report.platforms.size(); ++pi) {
        const auto& plat = report.platforms[pi];
        auto v = row.tps_on(plat);
        if (!v) continue;
        std::optional<double> ttft;
        if (auto it = row.ttft_by_platform.find(plat); it != row.ttft_by_platform.end())
          ttft = it->second;
        double y = y_of(*v);
        double r = marker_radius(row.disk_gb);
        std::string fill = ttft_color(ttft);
        std::string common = " fill=\"" + fill + "\" stroke=\"#333333\" stroke-width=\"0.50\"";
        if (pi % 3 == 0) {
          s += "<circle class=\"pt-" + plat + "\" cx=\"" + F(x) + "\" cy=\"" + F(y) + "\" r=\"" +
               F(r) + "\"" + common + "/>\n";
        } else if (pi % 3 == 1) {
          s += "<rect class=\"pt-" + plat + "\" x=\"" + F(x - r) + "\" y=\"" + F(y - r) +
               "\" width=\"" + F(2 * r) + "\" height=\"" + F(2 * r) + "\"" + common + "/>\n";
        } else {
          s += "<path class=\"pt-" + plat + "\" d=\"M " + F(x) + " " + F(y - r) + " L " +
               F(x - r) + " " + F(y + r) + " L " + F(x + r) + " " + F(y + r) + " Z\"" + common +
               "/>\n";
        }
      }
      text(x, y_bottom + 12, row.model, "end",
           " transform=\"rotate(-40 " + F(x) + " " + F(y_bottom + 12) + ")\"");
    }
  } else {
    const double lo = 0.0, hi = 100.0;
    auto y_of = [&](double v) { return svg_y_linear(v, lo, hi, y_bottom, y_top); };
    for (double tick = 0; tick <= 100.0; tick += 25.0) {
      line(x0 - 3, y_of(tick), x0, y_of(tick), "tick", "#000000", "");
      text(x0 - 6, y_of(tick) + 3, fmt_fixed(tick, 0), "end");
    }
    text(14, (y_top + y_bottom) / 2, "MMLU accuracy (%)", "middle",
         " transform=\"rotate(-90 14.00 " + F((y_top + y_bottom) / 2) + ")\"");

    // random baseline and strong-performance reference lines
    line(x0, y_of(kMmluRandomBaselinePct), x0 + L.plot_w(), y_of(kMmluRandomBaselinePct), "ref-25",
         "#cc2222", "6,3");
    text(x0 + 4, y_of(kMmluRandomBaselinePct) - 4, "random 25%", "start");
    line(x0, y_of(kMmluStrongPct), x0 + L.plot_w(), y_of(kMmluStrongPct), "ref-50", "#22aa44",
         "6,3");
    text(x0 + 4, y_of(kMmluStrongPct) - 4, "strong 50%", "start");

    for (size_t i = 0; i < n; ++i) {
      const auto& row = report.rows[i];
      if (!row.mmlu_pct) continue;
      double x = x_of(i);
      if (row.mmlu_min_pct && row.mmlu_max_pct && *row.mmlu_max_pct > *row.mmlu_min_pct)
        line(x, y_of(*row.mmlu_min_pct), x, y_of(*row.mmlu_max_pct), "range", "#aaaaaa", "");
      double r = marker_radius(row.disk_gb);
      std::string fill = row.teach_mean ? svgdetail::teach_color(*row.teach_mean) : "#888888";
      s += "<circle class=\"pt-mmlu\" cx=\"" + F(x) + "\" cy=\"" + F(y_of(*row.mmlu_pct)) +
           "\" r=\"" + F(r) + "\" fill=\"" + fill +
           "\" stroke=\"#333333\" stroke-width=\"0.50\"/>\n";
    }
    for (size_t i = 0; i < n; ++i) {
      double x = x_of(i);
      text(x, y_bottom + 12, report.rows[i].model, "end",
           " transform=\"rotate(-40 " + F(x) + " " + F(y_bottom + 12) + ")\"");
    }
  }
  s += "</svg>\n";
  return s;
}

// Writes models.md, models.csv, throughput.svg and mmlu.svg under `dir`.
inline std::vector<std::filesystem::path> write_report_artifacts(
    const std::filesystem::path& dir, const Report& report) {
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    auto path = dir / name;
    write_file(path, content);
    written.push_back(path);
  };
  emit("models.md", render_markdown(report));
  emit("models.csv", render_csv(report));
  emit("throughput.svg", emit_scatter(report, ScatterPanel::throughput));
  bool any_mmlu = std::any_of(report.rows.begin(), report.rows.end(),
                              [](const ModelReportRow& r) { return r.mmlu_pct.has_value(); });
  if (any_mmlu) emit("mmlu.svg", emit_scatter(report, ScatterPanel::mmlu));
  return written;
}

}  // namespace edgebench
