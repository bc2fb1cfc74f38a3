#pragma once

#include <array>
#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "edgebench/domain.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

// Scripted behaviour for one mock model tag.
struct MockModelScript {
  enum class Mode { fixed, gold_echo, random_letter, no_letter };

  Mode mode = Mode::fixed;
  std::vector<std::string> chunks;  // fixed mode
  int first_chunk_delay_ms = 0;
  int inter_chunk_delay_ms = 0;
  unsigned rng_seed = 1;                           // random_letter
  std::optional<std::int64_t> report_eval_count;   // eval_count in the done line
  std::optional<size_t> abort_after_chunks;        // drop connection mid-stream

  static MockModelScript fixed(std::vector<std::string> chunks, int first_delay_ms = 0,
                               int inter_delay_ms = 0) {
    MockModelScript s;
    s.chunks = std::move(chunks);
    s.first_chunk_delay_ms = first_delay_ms;
    s.inter_chunk_delay_ms = inter_delay_ms;
    return s;
  }
};

// Ollama-protocol mock on a local port: /api/generate, /api/chat,
// /api/embeddings. Deterministic given its scripts; used by tests and the
// end-to-end smoke path.
class MockOllamaServer {
 public:
  MockOllamaServer() : server_(std::make_unique<httplib::Server>()) { setup_routes(); }

  ~MockOllamaServer() { stop(); }

  void add_model(const std::string& tag, MockModelScript script) {
    std::lock_guard<std::mutex> lock(mutex_);
    scripts_[tag] = std::move(script);
  }

  void set_embedding_dim(size_t dim) { embedding_dim_ = dim; }

  // Embedding contract: unit basis vector selected by keyed hash of the text.
  static std::vector<double> scripted_embedding(const std::string& text, size_t dim) {
    std::vector<double> v(dim, 0.0);
    v[fnv1a64(text) % dim] = 1.0;
    return v;
  }

  void start() {
    port_ = server_->bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw Error("mock server: no free port");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  void stop() {
    if (server_ && server_->is_running()) server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  int generation_calls(const std::string& tag) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = gen_calls_.find(tag);
    return it == gen_calls_.end() ? 0 : it->second;
  }
  int embedding_calls() const { return embed_calls_.load(); }

 private:
  void setup_routes() {
    server_->Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) {
      handle_generate(req, res, /*chat=*/false);
    });
    server_->Post("/api/chat", [this](const httplib::Request& req, httplib::Response& res) {
      handle_generate(req, res, /*chat=*/true);
    });
    server_->Post("/api/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      ++embed_calls_;
      json body = json::parse(req.body, nullptr, false);
      std::string text = body.is_discarded() ? "" : body.value("prompt", std::string{});
      json reply;
      reply["embedding"] = scripted_embedding(text, embedding_dim_);
      res.set_content(reply.dump(), "application/json");
    });
  }

  void handle_generate(const httplib::Request& req, httplib::Response& res, bool chat) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
      res.status = 400;
      res.set_content(R"({"error":"invalid json"})", "application/json");
      return;
    }
    const std::string tag = body.value("model", std::string{});
    std::string prompt;
    if (chat) {
      if (body.contains("messages"))
        for (const auto& m : body["messages"]) prompt += m.value("content", std::string{});
    } else {
      prompt = body.value("prompt", std::string{});
    }

    MockModelScript script;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = scripts_.find(tag);
      if (it == scripts_.end()) {
        res.status = 404;
        res.set_content("{\"error\":\"model '" + tag + "' not found\"}", "application/json");
        return;
      }
      script = it->second;
      ++gen_calls_[tag];
    }

    std::vector<std::string> chunks = chunks_for(tag, script, prompt);
    auto eval_count = script.report_eval_count;
    auto abort_after = script.abort_after_chunks;
    int first_delay = script.first_chunk_delay_ms;
    int inter_delay = script.inter_chunk_delay_ms;

    res.set_chunked_content_provider(
        "application/x-ndjson",
        [tag, chat, chunks, eval_count, abort_after, first_delay,
         inter_delay](size_t, httplib::DataSink& sink) {
          for (size_t i = 0; i < chunks.size(); ++i) {
            int delay = i == 0 ? first_delay : inter_delay;
            if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            json line;
            line["model"] = tag;
            if (chat)
              line["message"] = {{"role", "assistant"}, {"content", chunks[i]}};
            else
              line["response"] = chunks[i];
            line["done"] = false;
            std::string out = line.dump() + "\n";
            if (!sink.write(out.data(), out.size())) return false;
            if (abort_after && i + 1 >= *abort_after) return false;  // scripted disconnect
          }
          json done;
          done["model"] = tag;
          if (chat)
            done["message"] = {{"role", "assistant"}, {"content", ""}};
          else
            done["response"] = "";
          done["done"] = true;
          if (eval_count) done["eval_count"] = *eval_count;
          std::string out = done.dump() + "\n";
          if (!sink.write(out.data(), out.size())) return false;
          sink.done();
          return true;
        });
  }

  std::vector<std::string> chunks_for(const std::string& tag, const MockModelScript& script,
                                      const std::string& prompt) {
    switch (script.mode) {
      case MockModelScript::Mode::fixed:
        return script.chunks;
      case MockModelScript::Mode::gold_echo: {
        // answers with the letter of the last "[gold X]" marker in the prompt
        size_t pos = prompt.rfind("[gold ");
        if (pos != std::string::npos && pos + 6 < prompt.size())
          return {std::string(1, prompt[pos + 6])};
        return {"?"};
      }
      case MockModelScript::Mode::random_letter: {
        std::lock_guard<std::mutex> lock(mutex_);
        auto [it, inserted] = rngs_.try_emplace(tag, script.rng_seed);
        std::uniform_int_distribution<int> d(0, 3);
        return {std::string(1, static_cast<char>('A' + d(it->second)))};
      }
      case MockModelScript::Mode::no_letter:
        return {"the question cannot be settled here; ",
                "more context would be needed before choosing between the offered options."};
    }
    return {};
  }

  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
  size_t embedding_dim_ = 16;
  mutable std::mutex mutex_;
  std::map<std::string, MockModelScript> scripts_;
  std::map<std::string, int> gen_calls_;
  std::map<std::string, std::mt19937> rngs_;
  std::atomic<int> embed_calls_{0};
};

// OpenAI-compatible chat-completions mock for judge tests: every call returns
// a scripted rubric block, optionally garbling the first N replies to
// exercise the parse-and-retry path.
class MockJudgeServer {
 public:
  MockJudgeServer() : server_(std::make_unique<httplib::Server>()) {
    scores_.fill(8);
    server_->Post("/v1/chat/completions",
                  [this](const httplib::Request& req, httplib::Response& res) {
                    handle(req, res);
                  });
  }

  ~MockJudgeServer() { stop(); }

  void start() {
    port_ = server_->bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw Error("mock judge: no free port");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  void stop() {
    if (server_ && server_->is_running()) server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  void set_scores(const std::array<int, 8>& scores) {
    std::lock_guard<std::mutex> lock(mutex_);
    scores_ = scores;
  }

  // Derives scores from the judged payload instead of a fixed array.
  void set_score_fn(std::function<std::array<int, 8>(const std::string& prompt)> fn) {
    std::lock_guard<std::mutex> lock(mutex_);
    score_fn_ = std::move(fn);
  }

  void fail_first(int n) { fail_remaining_ = n; }

  int calls() const { return calls_.load(); }

  static constexpr std::array<const char*, 8> kCriteria = {
      "Clarity",      "Accuracy",          "Engagement",         "Structure",
      "Completeness", "Appropriate Level", "Examples/Analogies", "Actionable"};

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    ++calls_;
    std::string content;
    if (fail_remaining_.fetch_sub(1) > 0) {
      content = "I would rather describe the answer qualitatively than give numbers.";
    } else {
      fail_remaining_.store(0);
      std::array<int, 8> scores;
      {
        std::lock_guard<std::mutex> lock(mutex_);
        if (score_fn_) {
          json body = json::parse(req.body, nullptr, false);
          std::string prompt;
          if (!body.is_discarded() && body.contains("messages"))
            for (const auto& m : body["messages"]) prompt += m.value("content", std::string{});
          scores = score_fn_(prompt);
        } else {
          scores = scores_;
        }
      }
      content = "```\n";
      for (size_t i = 0; i < kCriteria.size(); ++i)
        content += std::string(kCriteria[i]) + ": " + std::to_string(scores[i]) + "\n";
      content += "Rationale: scripted rating\n```\n";
    }
    json reply;
    reply["id"] = "mock-judge";
    reply["object"] = "chat.completion";
    reply["choices"] = json::array();
    reply["choices"].push_back(
        {{"index", 0},
         {"message", {{"role", "assistant"}, {"content", content}}},
         {"finish_reason", "stop"}});
    res.set_content(reply.dump(), "application/json");
  }

  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
  mutable std::mutex mutex_;
  std::array<int, 8> scores_;
  std::function<std::array<int, 8>(const std::string&)> score_fn_;
  std::atomic<int> fail_remaining_{0};
  std::atomic<int> calls_{0};
};

}  // namespace edgebench
