#include <catch2/catch_amalgamated.hpp>

#include "edgebench/report.hpp"

using namespace edgebench;

namespace {

QueryRecord rec(const std::string& m, const std::string& p, const std::string& q, double tps) {
  QueryRecord r;
  r.model = m;
  r.platform = p;
  r.question_id = q;
  r.session_id = "s1";
  r.session_started_at = "2026-01-01T00:00:00Z";
  r.started_at = 1.0;
  r.first_chunk_at = 1.2;
  r.finished_at = 3.0;
  r.chunk_count = static_cast<std::uint64_t>(tps * 2.0);
  r.ttft_s = 0.2;
  r.tps = tps;
  return r;
}

MmluSummary mmlu_for(const std::string& model, size_t correct, size_t total,
                     size_t violations = 0) {
  MmluSummary s;
  s.model = model;
  s.total = total;
  s.correct = correct;
  s.violations = violations;
  s.per_category["Formal Logic"] = {total / 2, correct / 4, violations / 2};
  s.per_category["Marketing"] = {total - total / 2, correct - correct / 4,
                                 violations - violations / 2};
  s.excluded_from_aggregate = s.violation_rate() > 0.5;
  return s;
}

TeachingSummary teach_for(const std::string& model, double composite) {
  TeachingSummary s;
  s.model = model;
  s.scored_count = 1;
  TeachingQuestionResult q;
  q.question_id = 1;
  q.response = "r";
  JudgeScore sc;
  for (const char* c : kTeachingCriteria) sc.criteria[c] = 5;
  sc.composite = composite;
  q.score = sc;
  s.per_question.push_back(q);
  return s;
}

Report sample_report() {
  CanonicalDataset ds = consolidate(std::vector<std::vector<QueryRecord>>{{
      rec("fast", "rpi4", "q1", 8.0),
      rec("fast", "rpi4", "q2", 9.0),
      rec("fast", "rpi5", "q1", 18.0),
      rec("slow", "rpi4", "q1", 0.5),
  }});
  std::vector<ModelSpec> specs = {{"fast", 0.6, 0.5, "Q4_K_M", "fast"},
                                  {"slow", 7.0, 4.4, "Q8_0", "slow"}};
  return build_report(ds, {mmlu_for("fast", 60, 100), mmlu_for("slow", 20, 100, 80)},
                      {teach_for("fast", 7.5), teach_for("slow", 8.0)}, specs, "rpi4");
}

}  // namespace

TEST_CASE("rows sort by descending primary tps", "[report]") {
  auto report = sample_report();
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].model == "fast");
  CHECK(report.rows[1].model == "slow");
  CHECK(report.primary_platform == "rpi4");
  CHECK(*report.rows[0].tps_on("rpi4") == Catch::Approx(8.5));
  CHECK(*report.rows[0].tps_on("rpi5") == Catch::Approx(18.0));
}

TEST_CASE("missing dimensions stay absent, never zero", "[report]") {
  MmluSummary only_mmlu = mmlu_for("knowledge-only", 50, 100);
  auto report = build_report(CanonicalDataset{}, {only_mmlu}, {});
  REQUIRE(report.rows.size() == 1);
  CHECK_FALSE(report.rows[0].tps_on("rpi4"));
  CHECK(report.rows[0].tps_by_platform.empty());
  REQUIRE(report.rows[0].mmlu_pct);
  CHECK_FALSE(report.rows[0].teach_mean);
  CHECK_THROWS_AS(build_report(CanonicalDataset{}, {}, {}), Error);
}

TEST_CASE("violation-flagged model stays in the table but not the mmlu mean", "[report]") {
  auto report = sample_report();
  const auto* slow = &report.rows[1];
  CHECK(slow->mmlu_excluded);
  auto md = render_markdown(report);
  CHECK(md.find("| slow |") != std::string::npos);
  CHECK(md.find("format-violation") != std::string::npos);
  // mean over non-excluded models only: just "fast" at 60%
  CHECK(md.find("MMLU mean across 1 models") != std::string::npos);
  CHECK(md.find("60.0%") != std::string::npos);
}

TEST_CASE("report range invariant holds", "[report]") {
  auto report = sample_report();
  for (const auto& row : report.rows) {
    if (!row.mmlu_pct) continue;
    REQUIRE(row.mmlu_min_pct);
    REQUIRE(row.mmlu_max_pct);
    CHECK(*row.mmlu_min_pct <= *row.mmlu_pct);
    CHECK(*row.mmlu_pct <= *row.mmlu_max_pct);
  }
}

TEST_CASE("markdown and csv are deterministic", "[report]") {
  auto r1 = sample_report();
  auto r2 = sample_report();
  CHECK(render_markdown(r1) == render_markdown(r2));
  CHECK(render_csv(r1) == render_csv(r2));
  CHECK(emit_scatter(r1, ScatterPanel::throughput) == emit_scatter(r2, ScatterPanel::throughput));
  CHECK(emit_scatter(r1, ScatterPanel::mmlu) == emit_scatter(r2, ScatterPanel::mmlu));
}

TEST_CASE("csv exposes machine-readable flags and per-platform columns", "[report]") {
  auto csv = render_csv(sample_report());
  auto lines = split(csv, '\n');
  REQUIRE(lines.size() >= 3);
  CHECK(lines[0].find("tps_rpi4") != std::string::npos);
  CHECK(lines[0].find("tps_rpi5") != std::string::npos);
  CHECK(lines[0].find("mmlu_excluded") != std::string::npos);
  CHECK(lines[1].find("fast") == 0);
  CHECK(lines[2].find("slow") == 0);
  CHECK(lines[2].find("true") != std::string::npos);  // excluded flag
  CHECK(lines[2].find("non_default") == std::string::npos);
}

TEST_CASE("throughput panel carries reference and mean lines", "[report]") {
  auto svg = emit_scatter(sample_report(), ScatterPanel::throughput);
  CHECK(svg.find("class=\"ref-1tps\"") != std::string::npos);
  CHECK(svg.find("class=\"mean-rpi4\"") != std::string::npos);
  CHECK(svg.find("class=\"mean-rpi5\"") != std::string::npos);
  CHECK(svg.find("<svg xmlns") == 0);
}

TEST_CASE("mmlu panel carries the 25 and 50 percent reference lines", "[report]") {
  auto svg = emit_scatter(sample_report(), ScatterPanel::mmlu);
  CHECK(svg.find("class=\"ref-25\"") != std::string::npos);
  CHECK(svg.find("class=\"ref-50\"") != std::string::npos);
  CHECK(svg.find("class=\"range\"") != std::string::npos);
}

TEST_CASE("single-row render stays valid", "[report]") {
  CanonicalDataset ds =
      consolidate(std::vector<std::vector<QueryRecord>>{{rec("only", "rpi4", "q1", 2.0)}});
  auto report = build_report(ds, {}, {});
  auto svg = emit_scatter(report, ScatterPanel::throughput);
  CHECK(svg.find("class=\"ref-1tps\"") != std::string::npos);
  CHECK(svg.find("class=\"pt-rpi4\"") != std::string::npos);
}

TEST_CASE("sub-threshold tps lands below the 1-tps line", "[report]") {
  // svg y grows downward: smaller tps means larger y than the reference line
  double lo = 0.1, hi = 100.0, y_bottom = 324.0, y_top = 28.0;
  double y_ref = svg_y_log(1.0, lo, hi, y_bottom, y_top);
  double y_slow = svg_y_log(0.5, lo, hi, y_bottom, y_top);
  double y_fast = svg_y_log(2.0, lo, hi, y_bottom, y_top);
  CHECK(y_slow > y_ref);
  CHECK(y_fast < y_ref);
  // and the emitted document places the slow marker accordingly
  CanonicalDataset ds =
      consolidate(std::vector<std::vector<QueryRecord>>{{rec("slowpoke", "rpi4", "q1", 0.5)}});
  auto svg = emit_scatter(build_report(ds, {}, {}), ScatterPanel::throughput);
  auto cy_pos = svg.find("class=\"pt-rpi4\" cx=");
  REQUIRE(cy_pos != std::string::npos);
  auto ref_pos = svg.find("class=\"ref-1tps\"");
  REQUIRE(ref_pos != std::string::npos);
  auto num_after = [&](size_t pos, const std::string& key) {
    auto k = svg.find(key, pos);
    REQUIRE(k != std::string::npos);
    return std::stod(svg.substr(k + key.size()));
  };
  double marker_y = num_after(cy_pos, "cy=\"");
  double ref_y = num_after(ref_pos, "y1=\"");
  CHECK(marker_y > ref_y);
}

TEST_CASE("artifacts land on disk", "[report]") {
  auto dir = std::filesystem::temp_directory_path() / "edgebench-test-report";
  std::filesystem::remove_all(dir);
  auto written = write_report_artifacts(dir, sample_report());
  CHECK(written.size() == 4);
  CHECK(std::filesystem::exists(dir / "models.md"));
  CHECK(std::filesystem::exists(dir / "models.csv"));
  CHECK(std::filesystem::exists(dir / "throughput.svg"));
  CHECK(std::filesystem::exists(dir / "mmlu.svg"));
  std::filesystem::remove_all(dir);
}
