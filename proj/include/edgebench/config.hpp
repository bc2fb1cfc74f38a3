#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "edgebench/domain.hpp"
#include "edgebench/router.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

struct JudgeConfig {
  std::string url;
  std::string api_key;
  std::string model = "gpt-4o-mini";
};

struct RouterSettings {
  double theta1 = 0.92;  // provisional defaults; calibration is a user concern
  double theta2 = 0.60;
  size_t top_k = 4;
  std::string small_model;
  std::string large_model;
  std::string embed_model = "nomic-embed-text";
  std::string rerank = "none";
  std::optional<size_t> max_entries;
  std::string cache_dir = "cache";

  RouterConfig to_router_config() const {
    RouterConfig cfg;
    cfg.theta1 = theta1;
    cfg.theta2 = theta2;
    cfg.top_k = top_k;
    cfg.small_model = small_model;
    cfg.large_model = large_model;
    cfg.embed_model = embed_model;
    cfg.rerank = rerank_mode_from_string(rerank);
    cfg.check();
    return cfg;
  }
};

struct Config {
  std::string server_url = "http://127.0.0.1:11434";
  JudgeConfig judge;
  std::vector<ModelSpec> models;
  std::vector<Platform> platforms;
  std::string battery_path = "battery/v1.toml";
  std::string runs_dir = "runs";
  std::string canonical_path = "canonical/dataset.jsonl";
  std::string mmlu_data_dir = "data/mmlu";
  std::string mmlu_out_dir = "mmlu";
  std::string teach_out_dir = "teach";
  std::string reports_dir = "reports";
  double cooldown_s = 0;
  int sample_interval_ms = kDefaultSampleIntervalMs;
  int request_timeout_s = kDefaultRequestTimeoutS;
  double mcq_temperature = 0.1;
  int mcq_max_tokens = 64;
  int mmlu_concurrency = 1;
  std::optional<int> teach_max_tokens;
  RouterSettings router;
};

inline json config_to_json(const Config& c) {
  json j;
  j["server_url"] = c.server_url;
  j["judge"] = {{"url", c.judge.url}, {"model", c.judge.model}};
  if (!c.judge.api_key.empty()) j["judge"]["api_key"] = c.judge.api_key;
  j["models"] = json::array();
  for (const auto& m : c.models) j["models"].push_back(model_spec_to_json(m));
  j["platforms"] = json::array();
  for (const auto& p : c.platforms) j["platforms"].push_back(platform_to_json(p));
  j["battery_path"] = c.battery_path;
  j["runs_dir"] = c.runs_dir;
  j["canonical_path"] = c.canonical_path;
  j["mmlu_data_dir"] = c.mmlu_data_dir;
  j["mmlu_out_dir"] = c.mmlu_out_dir;
  j["teach_out_dir"] = c.teach_out_dir;
  j["reports_dir"] = c.reports_dir;
  j["cooldown_s"] = c.cooldown_s;
  j["sample_interval_ms"] = c.sample_interval_ms;
  j["request_timeout_s"] = c.request_timeout_s;
  j["mcq"] = {{"temperature", c.mcq_temperature},
              {"max_tokens", c.mcq_max_tokens},
              {"concurrency", c.mmlu_concurrency}};
  j["teach"] = json::object();
  if (c.teach_max_tokens) j["teach"]["max_tokens"] = *c.teach_max_tokens;
  j["router"] = {{"theta1", c.router.theta1},
                 {"theta2", c.router.theta2},
                 {"top_k", c.router.top_k},
                 {"small_model", c.router.small_model},
                 {"large_model", c.router.large_model},
                 {"embed_model", c.router.embed_model},
                 {"rerank", c.router.rerank},
                 {"cache_dir", c.router.cache_dir}};
  if (c.router.max_entries) j["router"]["max_entries"] = *c.router.max_entries;
  return j;
}

inline Config config_from_json(const json& j) {
  Config c;
  c.server_url = j.value("server_url", c.server_url);
  if (j.contains("judge")) {
    const auto& jj = j.at("judge");
    c.judge.url = jj.value("url", std::string{});
    c.judge.api_key = jj.value("api_key", std::string{});
    c.judge.model = jj.value("model", c.judge.model);
  }
  if (j.contains("models"))
    for (const auto& mj : j.at("models")) c.models.push_back(model_spec_from_json(mj));
  if (j.contains("platforms"))
    for (const auto& pj : j.at("platforms")) c.platforms.push_back(platform_from_json(pj));
  c.battery_path = j.value("battery_path", c.battery_path);
  c.runs_dir = j.value("runs_dir", c.runs_dir);
  c.canonical_path = j.value("canonical_path", c.canonical_path);
  c.mmlu_data_dir = j.value("mmlu_data_dir", c.mmlu_data_dir);
  c.mmlu_out_dir = j.value("mmlu_out_dir", c.mmlu_out_dir);
  c.teach_out_dir = j.value("teach_out_dir", c.teach_out_dir);
  c.reports_dir = j.value("reports_dir", c.reports_dir);
  c.cooldown_s = j.value("cooldown_s", c.cooldown_s);
  c.sample_interval_ms = j.value("sample_interval_ms", c.sample_interval_ms);
  c.request_timeout_s = j.value("request_timeout_s", c.request_timeout_s);
  if (j.contains("mcq")) {
    const auto& m = j.at("mcq");
    c.mcq_temperature = m.value("temperature", c.mcq_temperature);
    c.mcq_max_tokens = m.value("max_tokens", c.mcq_max_tokens);
    c.mmlu_concurrency = m.value("concurrency", c.mmlu_concurrency);
  }
  if (j.contains("teach") && j.at("teach").contains("max_tokens"))
    c.teach_max_tokens = j.at("teach").at("max_tokens").get<int>();
  if (j.contains("router")) {
    const auto& r = j.at("router");
    c.router.theta1 = r.value("theta1", c.router.theta1);
    c.router.theta2 = r.value("theta2", c.router.theta2);
    c.router.top_k = r.value("top_k", c.router.top_k);
    c.router.small_model = r.value("small_model", std::string{});
    c.router.large_model = r.value("large_model", std::string{});
    c.router.embed_model = r.value("embed_model", c.router.embed_model);
    c.router.rerank = r.value("rerank", c.router.rerank);
    c.router.cache_dir = r.value("cache_dir", c.router.cache_dir);
    if (r.contains("max_entries")) c.router.max_entries = r.at("max_entries").get<size_t>();
  }
  return c;
}

// Environment overrides, applied after the file: EDGEBENCH_SERVER_URL,
// EDGEBENCH_JUDGE_URL, EDGEBENCH_JUDGE_KEY.
inline void apply_env_overrides(Config& c) {
  if (const char* v = std::getenv("EDGEBENCH_SERVER_URL")) c.server_url = v;
  if (const char* v = std::getenv("EDGEBENCH_JUDGE_URL")) c.judge.url = v;
  if (const char* v = std::getenv("EDGEBENCH_JUDGE_KEY")) c.judge.api_key = v;
}

inline Config load_config(const std::filesystem::path& path, bool with_env = true) {
  Config c = config_from_json(json::parse(read_file(path)));
  if (with_env) apply_env_overrides(c);
  return c;
}

// Content hash of the effective configuration; reproducible from the stored
// canonical serialization.
inline std::string config_digest(const Config& c) { return fnv1a64_hex(config_to_json(c).dump()); }

inline const ModelSpec* find_model(const Config& c, const std::string& name_or_tag) {
  for (const auto& m : c.models)
    if (m.name == name_or_tag || m.served_endpoint == name_or_tag) return &m;
  return nullptr;
}

inline const Platform* find_platform(const Config& c, const std::string& name) {
  for (const auto& p : c.platforms)
    if (p.name == name) return &p;
  return nullptr;
}

}  // namespace edgebench
