#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "edgebench/client.hpp"
#include "edgebench/domain.hpp"
#include "edgebench/energy.hpp"
#include "edgebench/teaching.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

class IntegrityError : public Error {
 public:
  using Error::Error;
};

struct SessionManifest {
  std::string session_id;
  Platform platform;
  std::vector<ModelSpec> models;
  std::vector<std::string> question_ids;  // battery order
  std::string started_at;                 // wall-clock ISO-8601
  std::string config_digest;
};

inline std::string make_session_id() {
  std::random_device rd;
  char suffix[8];
  std::snprintf(suffix, sizeof(suffix), "%04x", rd() & 0xffff);
  std::string stamp = now_wall_iso8601();  // 2026-01-02T03:04:05Z
  std::string compact;
  for (char c : stamp)
    if (std::isalnum(static_cast<unsigned char>(c))) compact += c;
  return compact + "-" + suffix;
}

inline json manifest_to_json(const SessionManifest& m) {
  json j;
  j["session_id"] = m.session_id;
  j["platform"] = platform_to_json(m.platform);
  j["models"] = json::array();
  for (const auto& model : m.models) j["models"].push_back(model_spec_to_json(model));
  j["questions"] = m.question_ids;
  j["started_at"] = m.started_at;
  j["config_digest"] = m.config_digest;
  return j;
}

inline SessionManifest manifest_from_json(const json& j) {
  SessionManifest m;
  m.session_id = j.at("session_id").get<std::string>();
  m.platform = platform_from_json(j.at("platform"));
  for (const auto& mj : j.at("models")) m.models.push_back(model_spec_from_json(mj));
  m.question_ids = j.at("questions").get<std::vector<std::string>>();
  m.started_at = j.at("started_at").get<std::string>();
  m.config_digest = j.value("config_digest", std::string{});
  return m;
}

inline std::string battery_question_id(const BatteryQuestion& q) {
  return "q" + std::to_string(q.id);
}

struct SessionOptions {
  bool warmup = false;
  double cooldown_s = 0;
  std::shared_ptr<LoadVoltageSource> energy_source;  // optional
  int sample_interval_ms = kDefaultSampleIntervalMs;
  double temperature = 0.1;
  std::optional<int> max_tokens;
};

inline void append_record_jsonl(const std::filesystem::path& path, const QueryRecord& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  out << record_to_jsonl_line(r) << '\n';
}

// Runs one benchmark session: every (model, question) pair in manifest order,
// strictly sequential, one record each, appended to
// <store_root>/<session_id>/records.jsonl as it lands. A connect failure
// aborts the session with everything so far persisted; a missing model only
// aborts that model's own records.
inline std::vector<QueryRecord> run_session(const SessionManifest& manifest,
                                            const std::vector<BatteryQuestion>& battery,
                                            const OllamaClient& client,
                                            const std::filesystem::path& store_root,
                                            const SessionOptions& opts = {}) {
  if (manifest.models.empty()) throw Error("session manifest without models");
  if (battery.empty()) throw Error("session manifest without questions");

  auto session_dir = store_root / manifest.session_id;
  std::filesystem::create_directories(session_dir);
  write_file(session_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
  auto records_path = session_dir / "records.jsonl";

  std::vector<QueryRecord> records;
  auto measure = [&](const ModelSpec& model, const BatteryQuestion& q, bool warmup) {
    GenerationRequest req;
    req.model_tag = model.served_endpoint;
    req.prompt = build_teaching_prompt(q, derive_prompt_regime(model));
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;

    QueryMeta meta{model.name,        manifest.platform.name, battery_question_id(q),
                   manifest.session_id, manifest.started_at,  warmup};

    std::optional<EnergySampler> sampler;
    if (opts.energy_source && manifest.platform.energy_model)
      sampler.emplace(opts.energy_source, *manifest.platform.energy_model,
                      opts.sample_interval_ms);

    QueryRecord rec = client.measure_query(req, meta, sampler ? &*sampler : nullptr);
    append_record_jsonl(records_path, rec);
    records.push_back(rec);
    return rec;
  };

  for (const auto& model : manifest.models) {
    if (opts.warmup) {
      auto rec = measure(model, battery.front(), /*warmup=*/true);
      if (rec.error && *rec.error == "connect-failure") return records;
    }
    for (const auto& q : battery) {
      auto rec = measure(model, q, /*warmup=*/false);
      if (rec.error && *rec.error == "connect-failure") return records;  // abort session
      if (opts.cooldown_s > 0)
        std::this_thread::sleep_for(std::chrono::duration<double>(opts.cooldown_s));
    }
  }
  return records;
}

namespace detail {

// Dedup policy: prefer complete over aborted, then the earlier-started
// session, then lexicographic session id. Total order over records from
// distinct sessions, so consolidation is order-insensitive.
inline bool record_wins(const QueryRecord& a, const QueryRecord& b) {
  if (a.aborted != b.aborted) return !a.aborted;
  std::string a_start = a.session_started_at.empty() ? "~" : a.session_started_at;
  std::string b_start = b.session_started_at.empty() ? "~" : b.session_started_at;
  if (a_start != b_start) return a_start < b_start;
  return a.session_id < b.session_id;
}

}  // namespace detail

// Deduplicates record streams into one record per (model, platform, question)
// key. Warmup-marked records never enter the canonical set. Records sharing
// key and session id must be byte-identical; anything else is corruption.
inline CanonicalDataset consolidate(const std::vector<std::vector<QueryRecord>>& stores) {
  CanonicalDataset ds;
  for (const auto& store : stores) {
    for (const auto& rec : store) {
      if (rec.warmup) continue;
      RecordKey key = key_of(rec);
      auto it = ds.records.find(key);
      if (it == ds.records.end()) {
        ds.records.emplace(key, rec);
        ds.provenance[key] = rec.session_id;
        continue;
      }
      if (it->second.session_id == rec.session_id) {
        if (!(it->second == rec))
          throw IntegrityError("conflicting records for key " + to_string(key) + " in session " +
                               rec.session_id);
        continue;  // exact duplicate
      }
      if (detail::record_wins(rec, it->second)) {
        it->second = rec;
        ds.provenance[key] = rec.session_id;
      }
    }
  }
  return ds;
}

inline CanonicalDataset consolidate(const CanonicalDataset& ds) {
  std::vector<QueryRecord> flat;
  flat.reserve(ds.records.size());
  for (const auto& [_, rec] : ds.records) flat.push_back(rec);
  return consolidate(std::vector<std::vector<QueryRecord>>{flat});
}

inline void write_canonical(const std::filesystem::path& path, const CanonicalDataset& ds) {
  std::vector<QueryRecord> flat;
  flat.reserve(ds.records.size());
  for (const auto& [_, rec] : ds.records) flat.push_back(rec);
  write_records_jsonl(path, flat);
}

inline CanonicalDataset read_canonical(const std::filesystem::path& path) {
  return consolidate({read_records_jsonl(path)});
}

// Loads every runs/<session_id>/records.jsonl under a root, one store per
// session directory.
inline std::vector<std::vector<QueryRecord>> load_session_stores(
    const std::filesystem::path& runs_root) {
  std::vector<std::vector<QueryRecord>> stores;
  if (!std::filesystem::exists(runs_root)) return stores;
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(runs_root))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "records.jsonl"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) stores.push_back(read_records_jsonl(dir / "records.jsonl"));
  return stores;
}

// --- aggregation -------------------------------------------------------------

struct QuestionCell {
  std::string question_id;
  std::optional<double> tps;
  std::optional<double> ttft_s;
  std::optional<double> tpj;
  std::uint64_t chunk_count = 0;
  bool aborted = false;
};

struct ModelPlatformSummary {
  std::string model;
  std::string platform;
  size_t n_records = 0;
  size_t n_aborted = 0;
  size_t n_degenerate = 0;  // zero- or one-chunk responses
  std::optional<double> mean_tps;
  std::optional<double> mean_ttft_s;
  std::optional<double> mean_tpj;
  std::vector<QuestionCell> per_question;
};

// Per-(model, platform) unfiltered means over the completed records.
// Degenerate responses stay in the means whenever the metric exists; records
// without energy are excluded from the TPJ mean only; aborted records are
// counted but contribute no samples.
inline std::vector<ModelPlatformSummary> aggregate(const CanonicalDataset& ds) {
  if (ds.records.empty()) throw Error("aggregate: empty dataset");
  std::map<std::pair<std::string, std::string>, ModelPlatformSummary> groups;
  for (const auto& [key, rec] : ds.records) {
    auto& g = groups[{key.model, key.platform}];
    g.model = key.model;
    g.platform = key.platform;
    ++g.n_records;
    QuestionCell cell;
    cell.question_id = key.question_id;
    cell.chunk_count = rec.chunk_count;
    cell.aborted = rec.aborted;
    if (rec.aborted) {
      ++g.n_aborted;
    } else {
      if (rec.chunk_count <= 1) ++g.n_degenerate;
      cell.tps = rec.tps;
      cell.ttft_s = rec.ttft_s;
      cell.tpj = rec.tpj;
    }
    g.per_question.push_back(cell);
  }

  std::vector<ModelPlatformSummary> out;
  for (auto& [_, g] : groups) {
    std::sort(g.per_question.begin(), g.per_question.end(),
              [](const QuestionCell& a, const QuestionCell& b) {
                return a.question_id < b.question_id;
              });
    auto mean_of = [](const std::vector<QuestionCell>& cells, auto getter) {
      double sum = 0;
      size_t n = 0;
      for (const auto& c : cells)
        if (auto v = getter(c)) {
          sum += *v;
          ++n;
        }
      return n == 0 ? std::optional<double>{} : std::optional<double>{sum / static_cast<double>(n)};
    };
    g.mean_tps = mean_of(g.per_question, [](const QuestionCell& c) { return c.tps; });
    g.mean_ttft_s = mean_of(g.per_question, [](const QuestionCell& c) { return c.ttft_s; });
    g.mean_tpj = mean_of(g.per_question, [](const QuestionCell& c) { return c.tpj; });
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace edgebench
