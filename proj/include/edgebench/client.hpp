#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "edgebench/domain.hpp"
#include "edgebench/energy.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

inline constexpr int kDefaultRequestTimeoutS = 600;

struct GenerationRequest {
  std::string model_tag;
  std::string prompt;
  double temperature = 0.1;
  std::optional<int> max_tokens;
  bool stream = true;  // benchmarking always streams

  void check() const {
    if (model_tag.empty()) throw std::invalid_argument("generation request: empty model tag");
    if (prompt.empty()) throw std::invalid_argument("generation request: empty prompt");
    if (temperature < 0.0 || temperature > 2.0)
      throw std::invalid_argument("generation request: temperature out of [0,2]");
    if (max_tokens && *max_tokens <= 0)
      throw std::invalid_argument("generation request: max_tokens must be positive");
  }
};

enum class StreamEventKind { chunk, done, error };

struct StreamEvent {
  StreamEventKind kind = StreamEventKind::chunk;
  std::string text;  // chunk only
  double at = 0;     // monotonic receipt time, stamped at the HTTP-read boundary
  std::string error_cause;  // error only: connect-failure | unknown-model | stream-interrupted | ...
  std::optional<std::int64_t> server_token_count;  // done only, when the server reports one
};

struct EmbeddingVector {
  std::vector<double> values;
  std::string model_tag;

  size_t dim() const { return values.size(); }
};

struct QueryMeta {
  std::string model;
  std::string platform;
  std::string question_id;
  std::string session_id;
  std::string session_started_at;
  bool warmup = false;
};

namespace detail {

// Splits buffered NDJSON into complete lines; keeps the unterminated tail.
inline std::vector<std::string> cut_lines(std::string& buffer) {
  std::vector<std::string> lines;
  size_t pos = 0;
  for (;;) {
    size_t nl = buffer.find('\n', pos);
    if (nl == std::string::npos) break;
    lines.emplace_back(buffer.substr(pos, nl - pos));
    pos = nl + 1;
  }
  buffer.erase(0, pos);
  return lines;
}

}  // namespace detail

// Streaming client for an Ollama-compatible inference server. Each call uses
// its own connection, so one client instance may serve concurrent requests;
// a single stream is consumed by one consumer.
class OllamaClient {
 public:
  explicit OllamaClient(std::string base_url, int timeout_s = kDefaultRequestTimeoutS)
      : base_url_(std::move(base_url)), timeout_s_(timeout_s) {}

  const std::string& base_url() const { return base_url_; }

  // POST /api/generate with streaming enabled. Yields >= 0 chunk events and
  // exactly one terminal event. Chunks are timestamped on receipt, before
  // JSON parsing.
  std::vector<StreamEvent> generate_stream(const GenerationRequest& req) const {
    req.check();
    json body;
    body["model"] = req.model_tag;
    body["prompt"] = req.prompt;
    body["stream"] = true;
    body["options"]["temperature"] = req.temperature;
    if (req.max_tokens) body["options"]["num_predict"] = *req.max_tokens;
    return stream_request("/api/generate", body, [](const json& line) {
      return line.value("response", std::string{});
    });
  }

  // POST /api/chat with streaming enabled; messages are (role, content) pairs.
  std::vector<StreamEvent> chat_stream(
      const std::string& model_tag,
      const std::vector<std::pair<std::string, std::string>>& messages, double temperature = 0.1,
      std::optional<int> max_tokens = std::nullopt) const {
    if (model_tag.empty()) throw std::invalid_argument("chat: empty model tag");
    if (messages.empty()) throw std::invalid_argument("chat: no messages");
    json body;
    body["model"] = model_tag;
    body["messages"] = json::array();
    for (const auto& [role, content] : messages)
      body["messages"].push_back({{"role", role}, {"content", content}});
    body["stream"] = true;
    body["options"]["temperature"] = temperature;
    if (max_tokens) body["options"]["num_predict"] = *max_tokens;
    return stream_request("/api/chat", body, [](const json& line) {
      return line.contains("message") ? line["message"].value("content", std::string{})
                                      : std::string{};
    });
  }

  // POST /api/embeddings. Repeated calls with identical input return identical
  // vectors (server contract). Dimensionality is pinned per model tag on first
  // use; a change signals server misconfiguration.
  EmbeddingVector embed(const std::string& text, const std::string& model_tag) {
    if (text.empty()) throw std::invalid_argument("embed: empty text");
    if (model_tag.empty()) throw std::invalid_argument("embed: empty model tag");
    json body;
    body["model"] = model_tag;
    body["prompt"] = text;

    httplib::Client cli(base_url_);
    cli.set_connection_timeout(connect_timeout_s_);
    cli.set_read_timeout(timeout_s_);
    auto res = cli.Post("/api/embeddings", body.dump(), "application/json");
    if (!res) throw Error("connect-failure: " + httplib::to_string(res.error()));
    if (res->status == 404) throw Error("unknown-model: " + model_tag);
    if (res->status != 200)
      throw Error("embed failed: http-" + std::to_string(res->status));
    json reply = json::parse(res->body);
    EmbeddingVector v;
    v.model_tag = model_tag;
    v.values = reply.at("embedding").get<std::vector<double>>();
    for (double x : v.values)
      if (!std::isfinite(x)) throw Error("embed returned non-finite value");
    {
      std::lock_guard<std::mutex> lock(dims_mutex_);
      auto [it, inserted] = embed_dims_.try_emplace(model_tag, v.dim());
      if (!inserted && it->second != v.dim())
        throw Error("dim-mismatch: model " + model_tag + " returned dim " +
                    std::to_string(v.dim()) + ", expected " + std::to_string(it->second));
    }
    return v;
  }

  // Runs one measured generation. The sampler, when given, is started before
  // the request and stopped after the terminal event; energy fields are
  // filled from its integrated trace. Stream errors still yield a persisted
  // record carrying partial metrics and the aborted flag.
  QueryRecord measure_query(const GenerationRequest& req, const QueryMeta& meta,
                            EnergySampler* sampler = nullptr) const {
    req.check();
    QueryRecord rec;
    rec.model = meta.model;
    rec.platform = meta.platform;
    rec.question_id = meta.question_id;
    rec.session_id = meta.session_id;
    rec.session_started_at = meta.session_started_at;
    rec.warmup = meta.warmup;
    rec.wall_started_at = now_wall_iso8601();

    if (sampler) sampler->start();
    rec.started_at = now_monotonic();
    auto events = generate_stream(req);
    EnergyTrace trace;
    if (sampler) trace = sampler->stop();

    rec.finished_at = rec.started_at;
    for (const auto& ev : events) {
      switch (ev.kind) {
        case StreamEventKind::chunk:
          if (rec.chunk_count == 0) rec.first_chunk_at = ev.at;
          ++rec.chunk_count;
          rec.response_text += ev.text;
          rec.finished_at = ev.at;
          break;
        case StreamEventKind::done:
          rec.finished_at = ev.at;
          rec.server_token_count = ev.server_token_count;
          break;
        case StreamEventKind::error:
          rec.finished_at = ev.at;
          rec.aborted = true;
          rec.error = ev.error_cause;
          break;
      }
    }
    if (rec.first_chunk_at) rec.ttft_s = *rec.first_chunk_at - rec.started_at;
    const double duration = rec.finished_at - rec.started_at;
    if (rec.chunk_count > 0 && duration > 0)
      rec.tps = static_cast<double>(rec.chunk_count) / duration;

    if (trace.samples.size() >= 2) {
      double joules = integrate_energy(trace);
      if (joules > 0) {
        rec.energy_j = joules;
        rec.tpj = tokens_per_joule(rec.chunk_count, joules);
        rec.voltage_source = trace.voltage_measured ? "measured" : "nominal";
      }
    }
    return rec;
  }

 private:
  template <typename ChunkTextFn>
  std::vector<StreamEvent> stream_request(const std::string& path, const json& body,
                                          ChunkTextFn chunk_text) const {
    std::vector<StreamEvent> events;
    std::string buffer;
    bool got_terminal = false;
    bool got_bytes = false;

    auto handle_line = [&](const std::string& line, double at) {
      std::string t = trim(line);
      if (t.empty() || got_terminal) return;
      json j = json::parse(t, nullptr, false);
      if (j.is_discarded()) return;  // tolerate noise lines
      if (j.contains("error")) {
        std::string msg = j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
        std::string cause = msg.find("not found") != std::string::npos ? "unknown-model"
                                                                       : "server-error";
        events.push_back({StreamEventKind::error, msg, at, cause, std::nullopt});
        got_terminal = true;
        return;
      }
      if (j.value("done", false)) {
        StreamEvent ev{StreamEventKind::done, "", at, "", std::nullopt};
        if (j.contains("eval_count")) ev.server_token_count = j["eval_count"].get<std::int64_t>();
        events.push_back(ev);
        got_terminal = true;
        return;
      }
      events.push_back({StreamEventKind::chunk, chunk_text(j), at, "", std::nullopt});
    };

    httplib::Client cli(base_url_);
    cli.set_connection_timeout(connect_timeout_s_);
    cli.set_read_timeout(timeout_s_);

    httplib::Request req;
    req.method = "POST";
    req.path = path;
    req.body = body.dump();
    req.set_header("Content-Type", "application/json");
    req.content_receiver = [&](const char* data, size_t len, std::uint64_t, std::uint64_t) {
      const double at = now_monotonic();  // stamp at the read boundary
      got_bytes = true;
      buffer.append(data, len);
      for (const auto& line : detail::cut_lines(buffer)) handle_line(line, at);
      return true;
    };

    auto result = cli.send(req);
    const double at_end = now_monotonic();
    if (!result) {
      events.push_back({StreamEventKind::error, httplib::to_string(result.error()), at_end,
                        got_bytes ? "stream-interrupted" : "connect-failure", std::nullopt});
      return events;
    }
    if (!buffer.empty()) handle_line(buffer, at_end);
    if (!got_terminal) {
      if (result->status == 404) {
        events.push_back({StreamEventKind::error, "model not found", at_end, "unknown-model",
                          std::nullopt});
      } else if (result->status != 200) {
        events.push_back({StreamEventKind::error, "http status " + std::to_string(result->status),
                          at_end, "http-" + std::to_string(result->status), std::nullopt});
      } else {
        // 200 but the stream ended without a done line
        events.push_back(
            {StreamEventKind::error, "missing terminal line", at_end, "stream-interrupted",
             std::nullopt});
      }
    }
    return events;
  }

  std::string base_url_;
  int timeout_s_;
  int connect_timeout_s_ = 5;
  mutable std::mutex dims_mutex_;
  mutable std::map<std::string, size_t> embed_dims_;
};

}  // namespace edgebench
