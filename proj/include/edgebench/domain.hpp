#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "edgebench/util.hpp"

namespace edgebench {

using json = nlohmann::ordered_json;

enum class PromptRegime { minimal, structured };

inline std::string to_string(PromptRegime r) {
  return r == PromptRegime::minimal ? "minimal" : "structured";
}

// Parameter-count boundary between the minimal and structured prompt regimes,
// in billions. Strictly-less-than comparison.
inline constexpr double kPromptRegimeBoundaryBillions = 1.4;

struct ModelSpec {
  std::string name;             // display name, e.g. "Qwen3 0.6B"
  double params_billions = 0;   // > 0
  double disk_gb = 0;           // > 0
  std::string quantisation;     // e.g. "Q4_K_M"
  std::string served_endpoint;  // inference-server model tag, e.g. "qwen3:0.6b"
  bool reasoning = false;       // emits chain-of-thought chunks in the stream

  bool valid() const { return !name.empty() && params_billions > 0 && disk_gb > 0; }
};

inline PromptRegime derive_prompt_regime(const ModelSpec& spec) {
  if (!spec.valid()) throw Error("invalid ModelSpec: " + spec.name);
  return spec.params_billions < kPromptRegimeBoundaryBillions ? PromptRegime::minimal
                                                              : PromptRegime::structured;
}

struct EnergyModelParams {
  double idle_current_a = 0.6;
  double full_load_current_a = 3.0;
  double nominal_voltage_v = 5.0;

  bool valid() const {
    return idle_current_a > 0 && full_load_current_a > idle_current_a && nominal_voltage_v > 0;
  }
};

struct Platform {
  std::string name;  // e.g. "rpi4"
  std::optional<EnergyModelParams> energy_model;

  bool valid() const { return !name.empty() && (!energy_model || energy_model->valid()); }
};

// One measured (model, platform, question) inference.
// Timestamps are monotonic-clock seconds; wall_started_at is provenance only.
struct QueryRecord {
  std::string model;     // ModelSpec.name
  std::string platform;  // Platform.name
  std::string question_id;
  std::string session_id;
  std::string session_started_at;  // wall-clock ISO-8601 of the owning session
  double started_at = 0;
  std::optional<double> first_chunk_at;
  double finished_at = 0;
  std::uint64_t chunk_count = 0;
  std::string response_text;
  std::optional<double> ttft_s;
  std::optional<double> tps;
  std::optional<double> energy_j;
  std::optional<double> tpj;
  // Server-reported token count, when present. Stored for comparison only;
  // TPS always derives from chunk_count.
  std::optional<std::int64_t> server_token_count;
  std::optional<std::string> voltage_source;  // "measured" | "nominal"
  bool aborted = false;
  std::optional<std::string> error;  // cause, when aborted
  bool warmup = false;
  std::string wall_started_at;

  bool operator==(const QueryRecord&) const = default;
};

struct RecordKey {
  std::string model;
  std::string platform;
  std::string question_id;

  auto operator<=>(const RecordKey&) const = default;
};

inline RecordKey key_of(const QueryRecord& r) { return {r.model, r.platform, r.question_id}; }

inline std::string to_string(const RecordKey& k) {
  return k.model + "|" + k.platform + "|" + k.question_id;
}

// Exactly one record per (model, platform, question_id) key after consolidation.
struct CanonicalDataset {
  std::map<RecordKey, QueryRecord> records;
  std::map<RecordKey, std::string> provenance;  // key -> winning session_id
};

// Returns the violated invariants by name; empty means the record is valid.
// Violations are data, not faults.
inline std::vector<std::string> validate_record(const QueryRecord& r) {
  std::vector<std::string> v;
  const bool has_chunks = r.chunk_count > 0;
  if (r.finished_at < r.started_at) v.push_back("time-order");
  else if (has_chunks && r.first_chunk_at &&
           (*r.first_chunk_at < r.started_at || r.finished_at < *r.first_chunk_at))
    v.push_back("time-order");
  if (has_chunks && !r.first_chunk_at && !r.aborted) v.push_back("first-chunk-missing");
  if (r.ttft_s && r.first_chunk_at &&
      std::abs(*r.ttft_s - (*r.first_chunk_at - r.started_at)) > 1e-9)
    v.push_back("ttft-mismatch");
  if (r.ttft_s && !r.first_chunk_at) v.push_back("ttft-without-first-chunk");
  const double duration = r.finished_at - r.started_at;
  if (r.tps) {
    if (!has_chunks) v.push_back("tps-without-chunks");
    else if (duration <= 0) v.push_back("tps-without-duration");
    else if (std::abs(*r.tps - static_cast<double>(r.chunk_count) / duration) > 1e-9)
      v.push_back("tps-mismatch");
  }
  if (r.tpj) {
    if (!r.energy_j || *r.energy_j <= 0) v.push_back("tpj-without-positive-energy");
    else if (std::abs(*r.tpj - static_cast<double>(r.chunk_count) / *r.energy_j) > 1e-9)
      v.push_back("tpj-mismatch");
  } else if (r.energy_j && *r.energy_j > 0) {
    v.push_back("tpj-missing");
  }
  if (r.model.empty()) v.push_back("empty-model");
  if (r.platform.empty()) v.push_back("empty-platform");
  if (r.question_id.empty()) v.push_back("empty-question");
  return v;
}

inline json model_spec_to_json(const ModelSpec& m) {
  json j;
  j["name"] = m.name;
  j["params_billions"] = m.params_billions;
  j["disk_gb"] = m.disk_gb;
  j["quantisation"] = m.quantisation;
  j["served_endpoint"] = m.served_endpoint;
  if (m.reasoning) j["reasoning"] = true;
  return j;
}

inline ModelSpec model_spec_from_json(const json& j) {
  ModelSpec m;
  m.name = j.at("name").get<std::string>();
  m.params_billions = j.at("params_billions").get<double>();
  m.disk_gb = j.at("disk_gb").get<double>();
  m.quantisation = j.value("quantisation", std::string{});
  m.served_endpoint = j.value("served_endpoint", m.name);
  m.reasoning = j.value("reasoning", false);
  if (!m.valid()) throw Error("invalid model spec: " + m.name);
  return m;
}

inline json platform_to_json(const Platform& p) {
  json j;
  j["name"] = p.name;
  if (p.energy_model) {
    j["energy_model"] = {{"idle_current_a", p.energy_model->idle_current_a},
                         {"full_load_current_a", p.energy_model->full_load_current_a},
                         {"nominal_voltage_v", p.energy_model->nominal_voltage_v}};
  }
  return j;
}

inline Platform platform_from_json(const json& j) {
  Platform p;
  p.name = j.at("name").get<std::string>();
  if (j.contains("energy_model")) {
    const auto& e = j.at("energy_model");
    p.energy_model = EnergyModelParams{e.at("idle_current_a").get<double>(),
                                       e.at("full_load_current_a").get<double>(),
                                       e.at("nominal_voltage_v").get<double>()};
  }
  if (!p.valid()) throw Error("invalid platform: " + p.name);
  return p;
}

// JSONL schema. Field names match the type definition; optional fields are
// omitted when absent so records round-trip exactly.
inline json record_to_json(const QueryRecord& r) {
  json j;
  j["model"] = r.model;
  j["platform"] = r.platform;
  j["question_id"] = r.question_id;
  j["session_id"] = r.session_id;
  if (!r.session_started_at.empty()) j["session_started_at"] = r.session_started_at;
  j["started_at"] = r.started_at;
  if (r.first_chunk_at) j["first_chunk_at"] = *r.first_chunk_at;
  j["finished_at"] = r.finished_at;
  j["chunk_count"] = r.chunk_count;
  j["response_text"] = r.response_text;
  if (r.ttft_s) j["ttft_s"] = *r.ttft_s;
  if (r.tps) j["tps"] = *r.tps;
  if (r.energy_j) j["energy_j"] = *r.energy_j;
  if (r.tpj) j["tpj"] = *r.tpj;
  if (r.server_token_count) j["server_token_count"] = *r.server_token_count;
  if (r.voltage_source) j["voltage_source"] = *r.voltage_source;
  if (r.aborted) j["aborted"] = true;
  if (r.error) j["error"] = *r.error;
  if (r.warmup) j["warmup"] = true;
  if (!r.wall_started_at.empty()) j["wall_started_at"] = r.wall_started_at;
  return j;
}

inline QueryRecord record_from_json(const json& j) {
  QueryRecord r;
  r.model = j.at("model").get<std::string>();
  r.platform = j.at("platform").get<std::string>();
  r.question_id = j.at("question_id").get<std::string>();
  r.session_id = j.value("session_id", std::string{});
  r.session_started_at = j.value("session_started_at", std::string{});
  r.started_at = j.at("started_at").get<double>();
  if (j.contains("first_chunk_at")) r.first_chunk_at = j.at("first_chunk_at").get<double>();
  r.finished_at = j.at("finished_at").get<double>();
  r.chunk_count = j.at("chunk_count").get<std::uint64_t>();
  r.response_text = j.value("response_text", std::string{});
  if (j.contains("ttft_s")) r.ttft_s = j.at("ttft_s").get<double>();
  if (j.contains("tps")) r.tps = j.at("tps").get<double>();
  if (j.contains("energy_j")) r.energy_j = j.at("energy_j").get<double>();
  if (j.contains("tpj")) r.tpj = j.at("tpj").get<double>();
  if (j.contains("server_token_count"))
    r.server_token_count = j.at("server_token_count").get<std::int64_t>();
  if (j.contains("voltage_source")) r.voltage_source = j.at("voltage_source").get<std::string>();
  r.aborted = j.value("aborted", false);
  if (j.contains("error")) r.error = j.at("error").get<std::string>();
  r.warmup = j.value("warmup", false);
  r.wall_started_at = j.value("wall_started_at", std::string{});
  return r;
}

inline std::string record_to_jsonl_line(const QueryRecord& r) { return record_to_json(r).dump(); }

inline QueryRecord record_from_jsonl_line(const std::string& line) {
  return record_from_json(json::parse(line));
}

inline std::vector<QueryRecord> read_records_jsonl(const std::filesystem::path& path) {
  std::vector<QueryRecord> out;
  std::string text = read_file(path);
  for (const auto& line : split(text, '\n')) {
    std::string t = trim(line);
    if (t.empty()) continue;
    out.push_back(record_from_jsonl_line(t));
  }
  return out;
}

inline void write_records_jsonl(const std::filesystem::path& path,
                                const std::vector<QueryRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_jsonl_line(r);
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace edgebench
