// edgebench: benchmark local language models on edge hardware, validate judge
// scores against human raters, and serve the tiered semantic-cache router.

#include <csignal>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "edgebench/config.hpp"
#include "edgebench/harness.hpp"
#include "edgebench/mmlu.hpp"
#include "edgebench/report.hpp"
#include "edgebench/router.hpp"
#include "edgebench/stats.hpp"
#include "edgebench/teaching.hpp"

namespace eb = edgebench;
using eb::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOperational = 1;
constexpr int kExitUsage = 2;

// "1-10" / "1,3,5" / "2" -> question id list
std::vector<int> parse_question_selector(const std::string& selector) {
  std::vector<int> ids;
  for (const auto& part : eb::split(selector, ',')) {
    std::string p = eb::trim(part);
    if (p.empty()) continue;
    size_t dash = p.find('-');
    if (dash != std::string::npos && dash > 0) {
      int lo = std::stoi(p.substr(0, dash));
      int hi = std::stoi(p.substr(dash + 1));
      for (int i = lo; i <= hi; ++i) ids.push_back(i);
    } else {
      ids.push_back(std::stoi(p));
    }
  }
  return ids;
}

std::vector<eb::ModelSpec> select_models(const eb::Config& cfg, const std::string& csv) {
  if (csv.empty()) return cfg.models;
  std::vector<eb::ModelSpec> out;
  for (const auto& name : eb::split(csv, ',')) {
    std::string n = eb::trim(name);
    const auto* m = eb::find_model(cfg, n);
    if (!m) throw eb::Error("model not in config: " + n);
    out.push_back(*m);
  }
  return out;
}

std::shared_ptr<eb::LoadVoltageSource> make_energy_source(const std::string& spec,
                                                          const eb::Platform& platform) {
  if (spec == "none") return nullptr;
  if (spec == "os") {
    double nominal =
        platform.energy_model ? platform.energy_model->nominal_voltage_v : 5.0;
    return std::make_shared<eb::OsCountersSource>(nominal);
  }
  if (spec == "synthetic")
    return std::make_shared<eb::SyntheticSource>(eb::SyntheticSource::constant(
        0.5, platform.energy_model ? platform.energy_model->nominal_voltage_v : 5.0));
  if (spec.rfind("file:", 0) == 0)
    return std::make_shared<eb::FileReplaySource>(spec.substr(5));
  throw eb::Error("unknown energy source '" + spec + "' (use os|none|synthetic|file:<csv>)");
}

std::string generate_joined(const eb::OllamaClient& client, const std::string& model_tag,
                            const std::string& prompt, double temperature = 0.1) {
  eb::GenerationRequest req;
  req.model_tag = model_tag;
  req.prompt = prompt;
  req.temperature = temperature;
  std::string out;
  for (const auto& ev : client.generate_stream(req)) {
    if (ev.kind == eb::StreamEventKind::chunk) out += ev.text;
    if (ev.kind == eb::StreamEventKind::error)
      throw eb::Error("generation failed (" + ev.error_cause + ")");
  }
  return out;
}

int cmd_bench(const std::string& config_path, const std::string& platform_name,
              const std::string& models_csv, const std::string& questions, bool warmup,
              std::string session_id, const std::string& energy_spec,
              const std::string& runs_dir_flag) {
  auto cfg = eb::load_config(config_path);
  const auto* platform = eb::find_platform(cfg, platform_name);
  if (!platform) throw eb::Error("platform not in config: " + platform_name);

  auto battery = eb::load_battery(cfg.battery_path);
  if (!questions.empty()) {
    auto ids = parse_question_selector(questions);
    std::vector<eb::BatteryQuestion> subset;
    for (int id : ids) {
      auto it = std::find_if(battery.begin(), battery.end(),
                             [&](const eb::BatteryQuestion& q) { return q.id == id; });
      if (it == battery.end()) throw eb::Error("question id not in battery: " + std::to_string(id));
      subset.push_back(*it);
    }
    battery = subset;
  }

  eb::SessionManifest manifest;
  manifest.session_id = session_id.empty() ? eb::make_session_id() : std::move(session_id);
  manifest.platform = *platform;
  manifest.models = select_models(cfg, models_csv);
  for (const auto& q : battery) manifest.question_ids.push_back(eb::battery_question_id(q));
  manifest.started_at = eb::now_wall_iso8601();
  manifest.config_digest = eb::config_digest(cfg);

  eb::SessionOptions opts;
  opts.warmup = warmup;
  opts.cooldown_s = cfg.cooldown_s;
  opts.sample_interval_ms = cfg.sample_interval_ms;
  opts.max_tokens = cfg.teach_max_tokens;
  std::string energy = energy_spec;
  if (energy.empty()) energy = platform->energy_model ? "os" : "none";
  opts.energy_source = make_energy_source(energy, *platform);

  eb::OllamaClient client(cfg.server_url, cfg.request_timeout_s);
  std::string runs_dir = runs_dir_flag.empty() ? cfg.runs_dir : runs_dir_flag;
  auto records = eb::run_session(manifest, battery, client, runs_dir, opts);

  size_t aborted = 0;
  for (const auto& r : records) aborted += r.aborted ? 1 : 0;
  std::cout << "session " << manifest.session_id << ": " << records.size() << " records ("
            << aborted << " aborted)\n";
  std::cout << "records: " << (std::filesystem::path(runs_dir) / manifest.session_id /
                               "records.jsonl").string() << "\n";
  std::cout << "manifest: " << (std::filesystem::path(runs_dir) / manifest.session_id /
                                "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_mmlu(const std::string& config_path, const std::string& model_name,
             const std::string& data_dir_flag, const std::string& out_dir_flag,
             const std::string& categories_csv) {
  auto cfg = eb::load_config(config_path);
  const auto* model = eb::find_model(cfg, model_name);
  if (!model) throw eb::Error("model not in config: " + model_name);

  std::string data_dir = data_dir_flag.empty() ? cfg.mmlu_data_dir : data_dir_flag;
  std::vector<std::string> cats;
  for (const auto& c : eb::split(categories_csv, ','))
    if (!eb::trim(c).empty()) cats.push_back(eb::trim(c));
  auto ds = eb::load_mmlu_dir(data_dir, cats);

  eb::MmluOptions opts;
  opts.temperature = cfg.mcq_temperature;
  opts.max_tokens = cfg.mcq_max_tokens;
  opts.concurrency = cfg.mmlu_concurrency;
  eb::OllamaClient client(cfg.server_url, cfg.request_timeout_s);
  auto run = eb::run_mmlu(*model, ds.test_items, ds.exemplar_pool, client, opts);

  std::string out_dir = out_dir_flag.empty() ? cfg.mmlu_out_dir : out_dir_flag;
  auto path = std::filesystem::path(out_dir) / (eb::sanitize_filename(model->name) + ".json");
  eb::write_file(path, eb::mmlu_summary_to_json(run.summary).dump(2) + "\n");

  std::cout << model->name << ": mmlu " << eb::fmt_fixed(run.summary.aggregate_pct(), 1)
            << "% over " << run.summary.total << " items, violation rate "
            << eb::fmt_fixed(100.0 * run.summary.violation_rate(), 1) << "%"
            << (run.summary.excluded_from_aggregate ? " [excluded from aggregate]" : "") << "\n";
  std::cout << "summary: " << path.string() << "\n";
  return kExitOk;
}

int cmd_teach(const std::string& config_path, const std::string& model_name,
              const std::string& out_dir_flag) {
  auto cfg = eb::load_config(config_path);
  const auto* model = eb::find_model(cfg, model_name);
  if (!model) throw eb::Error("model not in config: " + model_name);
  if (cfg.judge.url.empty())
    throw eb::Error("no judge endpoint configured (judge.url or EDGEBENCH_JUDGE_URL)");

  auto battery = eb::load_battery(cfg.battery_path);
  eb::OllamaClient client(cfg.server_url, cfg.request_timeout_s);
  eb::JudgeClient judge(cfg.judge.url, cfg.judge.model, cfg.judge.api_key);
  eb::TeachingOptions opts;
  opts.max_tokens = cfg.teach_max_tokens;
  auto summary = eb::run_teaching_battery(*model, battery, client, judge, opts);

  std::string out_dir = out_dir_flag.empty() ? cfg.teach_out_dir : out_dir_flag;
  auto path = std::filesystem::path(out_dir) / (eb::sanitize_filename(model->name) + ".json");
  eb::write_file(path, eb::teaching_summary_to_json(summary).dump(2) + "\n");

  std::cout << model->name << ": teach ";
  if (auto m = summary.mean())
    std::cout << eb::fmt_fixed(*m, 2) << "/10 over " << summary.scored_count << " of "
              << summary.per_question.size() << " questions";
  else
    std::cout << "unscored";
  std::cout << " (" << eb::to_string(summary.regime) << " prompts)\n";
  std::cout << "summary: " << path.string() << "\n";
  return kExitOk;
}

int cmd_stats(const std::string& ratings_path, const std::string& paired_path, bool bias_flag,
              bool by_criterion, const std::string& out_path) {
  if (ratings_path.empty() && paired_path.empty())
    throw CLI::ValidationError("stats", "provide --ratings and/or --paired");

  json report = json::object();
  if (!ratings_path.empty()) {
    auto rows = eb::parse_ratings_csv(eb::read_file(ratings_path));
    auto matrix = eb::build_rating_matrix(rows);
    report["krippendorff_alpha"] = eb::krippendorff_alpha_interval(matrix);
    try {
      auto icc = eb::icc_consistency(matrix);
      if (icc.defined()) {
        report["icc"] = {{"icc_c1", *icc.icc1},
                         {"icc_ck", *icc.icck},
                         {"n_items", icc.n_items},
                         {"k_raters", icc.k_raters}};
        if (icc.icck_ci_low && icc.icck_ci_high)
          report["icc"]["icck_ci95"] = json::array({*icc.icck_ci_low, *icc.icck_ci_high});
        report["icc"]["spearman_brown_check"] = eb::spearman_brown(*icc.icc1, icc.k_raters);
      } else {
        report["icc"] = nullptr;  // degenerate variance
      }
    } catch (const eb::Error& e) {
      report["icc"] = nullptr;
      report["icc_note"] = e.what();
    }
    if (bias_flag) {
      auto corrected = eb::bias_correct(matrix);
      report["alpha_bias_corrected"] = eb::krippendorff_alpha_interval(corrected);
    }
    if (by_criterion) {
      report["per_criterion"] = json::object();
      for (const auto& criterion : eb::criteria_in(rows)) {
        auto m = eb::build_rating_matrix(rows, criterion);
        try {
          report["per_criterion"][criterion] = eb::krippendorff_alpha_interval(m);
        } catch (const eb::Error&) {
          report["per_criterion"][criterion] = nullptr;
        }
      }
    }
  }
  if (!paired_path.empty()) {
    auto series = eb::parse_paired_csv(eb::read_file(paired_path));
    auto pr = eb::pearson(series);
    auto mad = eb::mean_absolute_difference(series);
    report["paired"] = {{"n", pr.n},
                        {"pearson_r", pr.r},
                        {"p_value", pr.p_value},
                        {"mad", mad.mad},
                        {"signed_mean_x_minus_y", mad.signed_mean}};
  }

  std::string text = report.dump(2) + "\n";
  if (!out_path.empty()) eb::write_file(out_path, text);
  std::cout << text;
  return kExitOk;
}

int cmd_consolidate(const std::string& config_path, const std::string& runs_flag,
                    const std::string& out_flag) {
  std::string runs_dir = runs_flag;
  std::string out_path = out_flag;
  if (!config_path.empty()) {
    auto cfg = eb::load_config(config_path);
    if (runs_dir.empty()) runs_dir = cfg.runs_dir;
    if (out_path.empty()) out_path = cfg.canonical_path;
  }
  if (runs_dir.empty()) runs_dir = "runs";
  if (out_path.empty()) out_path = "canonical/dataset.jsonl";

  auto stores = eb::load_session_stores(runs_dir);
  if (stores.empty()) throw eb::Error("no session stores under " + runs_dir);
  auto ds = eb::consolidate(stores);
  eb::write_canonical(out_path, ds);
  std::cout << "consolidated " << stores.size() << " sessions into " << ds.records.size()
            << " canonical records\n";
  std::cout << "canonical: " << out_path << "\n";
  return kExitOk;
}

std::vector<eb::MmluSummary> read_mmlu_dir(const std::string& dir) {
  std::vector<eb::MmluSummary> out;
  if (dir.empty() || !std::filesystem::exists(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    out.push_back(eb::mmlu_summary_from_json(json::parse(eb::read_file(f))));
  return out;
}

std::vector<eb::TeachingSummary> read_teach_dir(const std::string& dir) {
  std::vector<eb::TeachingSummary> out;
  if (dir.empty() || !std::filesystem::exists(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    out.push_back(eb::teaching_summary_from_json(json::parse(eb::read_file(f))));
  return out;
}

int cmd_report(const std::string& config_path, const std::string& canonical_flag,
               const std::string& mmlu_dir_flag, const std::string& teach_dir_flag,
               const std::string& out_flag, const std::string& primary_platform) {
  std::string canonical = canonical_flag;
  std::string mmlu_dir = mmlu_dir_flag;
  std::string teach_dir = teach_dir_flag;
  std::string out_dir = out_flag;
  std::vector<eb::ModelSpec> specs;
  if (!config_path.empty()) {
    auto cfg = eb::load_config(config_path);
    specs = cfg.models;
    if (canonical.empty()) canonical = cfg.canonical_path;
    if (mmlu_dir.empty()) mmlu_dir = cfg.mmlu_out_dir;
    if (teach_dir.empty()) teach_dir = cfg.teach_out_dir;
    if (out_dir.empty()) out_dir = cfg.reports_dir;
  }
  if (canonical.empty()) canonical = "canonical/dataset.jsonl";
  if (out_dir.empty()) out_dir = "reports";

  eb::CanonicalDataset ds;
  if (std::filesystem::exists(canonical)) ds = eb::read_canonical(canonical);
  auto report =
      eb::build_report(ds, read_mmlu_dir(mmlu_dir), read_teach_dir(teach_dir), specs,
                       primary_platform);
  auto written = eb::write_report_artifacts(out_dir, report);
  std::cout << report.rows.size() << " model rows\n";
  for (const auto& p : written) std::cout << p.string() << "\n";
  return kExitOk;
}

int cmd_serve(const std::string& config_path, int port) {
  auto cfg = eb::load_config(config_path);
  auto router_cfg = cfg.router.to_router_config();
  if (router_cfg.small_model.empty() || router_cfg.large_model.empty())
    throw eb::Error("router.small_model and router.large_model must be configured");

  auto cache_dir = std::filesystem::path(cfg.router.cache_dir);
  eb::VectorStore store;
  if (std::filesystem::exists(cache_dir / "meta.json")) {
    store = eb::VectorStore::load(cache_dir);
    std::cout << "loaded cache: " << store.size() << " entries\n";
  }
  if (cfg.router.max_entries) store.set_max_entries(cfg.router.max_entries);

  eb::OllamaClient client(cfg.server_url, cfg.request_timeout_s);
  eb::ClientEmbeddingProvider embedder(client, router_cfg.embed_model);
  std::unique_ptr<eb::LlmPointwiseScorer> scorer;
  if (router_cfg.rerank == eb::RerankMode::llm_pointwise)
    scorer = std::make_unique<eb::LlmPointwiseScorer>(client, router_cfg.small_model);

  eb::RouterDeps deps;
  deps.embedder = &embedder;
  deps.scorer = scorer.get();
  deps.generate = [&client](const std::string& tag, const std::string& prompt) {
    return generate_joined(client, tag, prompt);
  };

  eb::RouterServer server(store, router_cfg, deps);
  server.set_on_route([&store, cache_dir](const eb::RouteDecision&) {
    std::filesystem::create_directories(cache_dir);
    store.save(cache_dir);  // snapshot after every write-back
  });
  int bound = server.start(port);
  std::cout << "serving on port " << bound << " (POST /v1/route, GET /v1/cache/stats)\n";
  server.wait();
  return kExitOk;
}

int cmd_ingest(const std::string& config_path, const std::vector<std::string>& files,
               size_t max_chars, size_t overlap) {
  auto cfg = eb::load_config(config_path);
  auto cache_dir = std::filesystem::path(cfg.router.cache_dir);
  eb::VectorStore store;
  if (std::filesystem::exists(cache_dir / "meta.json")) store = eb::VectorStore::load(cache_dir);

  std::vector<std::string> texts;
  for (const auto& f : files) texts.push_back(eb::read_file(f));

  eb::OllamaClient client(cfg.server_url, cfg.request_timeout_s);
  eb::ClientEmbeddingProvider embedder(client, cfg.router.embed_model);
  size_t added = eb::ingest_documents(texts, {max_chars, overlap}, embedder, store);
  std::filesystem::create_directories(cache_dir);
  store.save(cache_dir);
  std::cout << "ingested " << added << " chunks from " << files.size() << " files into "
            << cache_dir.string() << " (" << store.size() << " entries total)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edgebench: edge LM benchmark, judge validation and tiered inference router"};
  app.require_subcommand(1);

  // bench
  std::string b_config, b_platform, b_models, b_questions, b_session, b_energy, b_runs;
  bool b_warmup = false;
  auto* bench = app.add_subcommand("bench", "run a benchmark session over the battery");
  bench->add_option("--config", b_config, "config file")->required();
  bench->add_option("--platform", b_platform, "platform name from config")->required();
  bench->add_option("--models", b_models, "comma-separated model subset");
  bench->add_option("--questions", b_questions, "question ids, e.g. 1-10 or 2,5");
  bench->add_flag("--warmup", b_warmup, "one marked warm-up request per model");
  bench->add_option("--session-id", b_session, "session id (generated when absent)");
  bench->add_option("--energy-source", b_energy, "os|none|synthetic|file:<csv>");
  bench->add_option("--runs-dir", b_runs, "session store root");

  // mmlu
  std::string m_config, m_model, m_data, m_out, m_cats;
  auto* mmlu = app.add_subcommand("mmlu", "run the six-category knowledge subset");
  mmlu->add_option("--config", m_config, "config file")->required();
  mmlu->add_option("--model", m_model, "model name or tag from config")->required();
  mmlu->add_option("--data", m_data, "directory of <category>_{test,dev}.csv files");
  mmlu->add_option("--out", m_out, "summary output directory");
  mmlu->add_option("--categories", m_cats, "comma-separated category subset");

  // teach
  std::string t_config, t_model, t_out;
  auto* teach = app.add_subcommand("teach", "run the teaching battery with the LLM judge");
  teach->add_option("--config", t_config, "config file")->required();
  teach->add_option("--model", t_model, "model name or tag from config")->required();
  teach->add_option("--out", t_out, "summary output directory");

  // stats
  std::string s_config, s_ratings, s_paired, s_out;
  bool s_bias = false, s_by_criterion = false;
  auto* stats = app.add_subcommand("stats", "inter-rater reliability and agreement statistics");
  stats->add_option("--config", s_config, "config file (unused, accepted for uniformity)");
  stats->add_option("--ratings", s_ratings, "long-format CSV: rater,item,criterion,score");
  stats->add_option("--paired", s_paired, "two-column CSV of paired series");
  stats->add_flag("--bias-correct", s_bias, "also report alpha after rater-offset removal");
  stats->add_flag("--by-criterion", s_by_criterion, "also report per-criterion alpha");
  stats->add_option("--out", s_out, "write the JSON report here as well");

  // consolidate
  std::string c_config, c_runs, c_out;
  auto* consolidate = app.add_subcommand("consolidate", "dedup sessions into the canonical dataset");
  consolidate->add_option("--config", c_config, "config file");
  consolidate->add_option("--runs", c_runs, "session store root");
  consolidate->add_option("--out", c_out, "canonical dataset path");

  // report
  std::string r_config, r_canonical, r_mmlu, r_teach, r_out, r_primary;
  auto* report = app.add_subcommand("report", "emit the model table and scatter panels");
  report->add_option("--config", r_config, "config file");
  report->add_option("--canonical", r_canonical, "canonical dataset path");
  report->add_option("--mmlu-dir", r_mmlu, "directory of mmlu summaries");
  report->add_option("--teach-dir", r_teach, "directory of teach summaries");
  report->add_option("--out", r_out, "report output directory");
  report->add_option("--primary-platform", r_primary, "platform used for row ordering");

  // serve
  std::string sv_config;
  int sv_port = 8080;
  auto* serve = app.add_subcommand("serve", "serve the three-tier semantic-cache router");
  serve->add_option("--config", sv_config, "config file")->required();
  serve->add_option("--port", sv_port, "listen port");

  // ingest
  std::string i_config;
  std::vector<std::string> i_files;
  size_t i_max_chars = 800, i_overlap = 100;
  auto* ingest = app.add_subcommand("ingest", "chunk and embed documents into the cache");
  ingest->add_option("--config", i_config, "config file")->required();
  ingest->add_option("--files", i_files, "document files")->required()->expected(-1);
  ingest->add_option("--max-chars", i_max_chars, "chunk size");
  ingest->add_option("--overlap", i_overlap, "chunk overlap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (bench->parsed())
      return cmd_bench(b_config, b_platform, b_models, b_questions, b_warmup, b_session, b_energy,
                       b_runs);
    if (mmlu->parsed()) return cmd_mmlu(m_config, m_model, m_data, m_out, m_cats);
    if (teach->parsed()) return cmd_teach(t_config, t_model, t_out);
    if (stats->parsed()) return cmd_stats(s_ratings, s_paired, s_bias, s_by_criterion, s_out);
    if (consolidate->parsed()) return cmd_consolidate(c_config, c_runs, c_out);
    if (report->parsed())
      return cmd_report(r_config, r_canonical, r_mmlu, r_teach, r_out, r_primary);
    if (serve->parsed()) return cmd_serve(sv_config, sv_port);
    if (ingest->parsed()) return cmd_ingest(i_config, i_files, i_max_chars, i_overlap);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOperational;
  }
  return kExitUsage;
}
