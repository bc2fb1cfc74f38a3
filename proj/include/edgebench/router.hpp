#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "edgebench/client.hpp"
#include "edgebench/domain.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

enum class CacheKind { qa_pair, doc_chunk };
enum class SourceTier { ingest, tier2, tier3 };

inline std::string to_string(CacheKind k) {
  return k == CacheKind::qa_pair ? "qa_pair" : "doc_chunk";
}
inline std::string to_string(SourceTier t) {
  switch (t) {
    case SourceTier::ingest: return "ingest";
    case SourceTier::tier2: return "2";
    case SourceTier::tier3: return "3";
  }
  return "ingest";
}

struct CacheEntry {
  std::string id;
  CacheKind kind = CacheKind::qa_pair;
  std::string text;                   // question (qa_pair) or chunk (doc_chunk)
  std::optional<std::string> answer;  // qa_pair only
  std::vector<double> embedding;
  double created_at = 0;
  std::uint64_t hits = 0;
  SourceTier source_tier = SourceTier::ingest;

  void check() const {
    if (kind == CacheKind::qa_pair && !answer)
      throw Error("qa_pair cache entry needs an answer: " + id);
    if (kind == CacheKind::doc_chunk && answer)
      throw Error("doc_chunk cache entry cannot carry an answer: " + id);
    if (embedding.empty()) throw Error("cache entry without embedding: " + id);
  }
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error("dim-mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct ScoredEntry {
  CacheEntry entry;  // snapshot copy
  double score = 0;
};

// Exact in-memory vector store with JSONL persistence. Many concurrent
// readers, serialized writers; searches copy matched entries so a concurrent
// write-back cannot mutate a decision mid-flight.
class VectorStore {
 public:
  VectorStore() = default;
  VectorStore(size_t dim, std::string embed_model_tag)
      : dim_(dim), embed_model_tag_(std::move(embed_model_tag)) {}

  VectorStore(VectorStore&& other) noexcept {
    std::unique_lock lock(other.mutex_);
    entries_ = std::move(other.entries_);
    dim_ = other.dim_;
    embed_model_tag_ = std::move(other.embed_model_tag_);
    max_entries_ = other.max_entries_;
    next_id_ = other.next_id_;
  }
  VectorStore& operator=(VectorStore&& other) noexcept {
    if (this == &other) return *this;
    std::scoped_lock locks(mutex_, other.mutex_);
    entries_ = std::move(other.entries_);
    dim_ = other.dim_;
    embed_model_tag_ = std::move(other.embed_model_tag_);
    max_entries_ = other.max_entries_;
    next_id_ = other.next_id_;
    return *this;
  }

  size_t dim() const {
    std::shared_lock lock(mutex_);
    return dim_;
  }
  const std::string& embed_model_tag() const { return embed_model_tag_; }

  size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }
  size_t count(CacheKind kind) const {
    std::shared_lock lock(mutex_);
    size_t n = 0;
    for (const auto& e : entries_)
      if (e.kind == kind) ++n;
    return n;
  }

  void set_max_entries(std::optional<size_t> cap) {
    std::unique_lock lock(mutex_);
    max_entries_ = cap;
    evict_locked();
  }

  std::string add(CacheEntry entry) {
    std::unique_lock lock(mutex_);
    if (dim_ == 0) dim_ = entry.embedding.size();
    if (entry.embedding.size() != dim_)
      throw Error("dim-mismatch: entry dim " + std::to_string(entry.embedding.size()) +
                  ", store dim " + std::to_string(dim_));
    if (entry.id.empty()) entry.id = "e" + std::to_string(next_id_++);
    entry.check();
    entries_.push_back(std::move(entry));
    evict_locked();
    return entries_.empty() ? std::string{} : entries_.back().id;
  }

  // Top-k by cosine similarity, descending; ties broken by older created_at,
  // then id. Exact scan over the (optionally kind-filtered) store.
  std::vector<ScoredEntry> similarity_search(const std::vector<double>& query, size_t top_k,
                                             std::optional<CacheKind> filter = std::nullopt) const {
    std::shared_lock lock(mutex_);
    if (entries_.empty() || top_k == 0) return {};
    if (query.size() != dim_)
      throw Error("dim-mismatch: query dim " + std::to_string(query.size()) + ", store dim " +
                  std::to_string(dim_));
    std::vector<ScoredEntry> scored;
    scored.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (filter && e.kind != *filter) continue;
      scored.push_back({e, cosine_similarity(query, e.embedding)});
    }
    auto better = [](const ScoredEntry& a, const ScoredEntry& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.entry.created_at != b.entry.created_at) return a.entry.created_at < b.entry.created_at;
      return a.entry.id < b.entry.id;
    };
    size_t k = std::min(top_k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), better);
    scored.resize(k);
    return scored;
  }

  void record_hit(const std::string& id) {
    std::unique_lock lock(mutex_);
    for (auto& e : entries_)
      if (e.id == id) {
        ++e.hits;
        return;
      }
  }

  std::vector<CacheEntry> snapshot() const {
    std::shared_lock lock(mutex_);
    return entries_;
  }

  void save(const std::filesystem::path& dir) const {
    std::shared_lock lock(mutex_);
    json meta;
    meta["dim"] = dim_;
    meta["embed_model"] = embed_model_tag_;
    meta["next_id"] = next_id_;
    write_file(dir / "meta.json", meta.dump(2) + "\n");
    std::string lines;
    for (const auto& e : entries_) {
      json j;
      j["id"] = e.id;
      j["kind"] = to_string(e.kind);
      j["text"] = e.text;
      if (e.answer) j["answer"] = *e.answer;
      j["embedding"] = e.embedding;
      j["created_at"] = e.created_at;
      j["hits"] = e.hits;
      j["source_tier"] = to_string(e.source_tier);
      lines += j.dump();
      lines += '\n';
    }
    write_file(dir / "store.jsonl", lines);
  }

  static VectorStore load(const std::filesystem::path& dir) {
    json meta = json::parse(read_file(dir / "meta.json"));
    VectorStore store(meta.at("dim").get<size_t>(), meta.value("embed_model", std::string{}));
    store.next_id_ = meta.value("next_id", std::uint64_t{1});
    for (const auto& line : split(read_file(dir / "store.jsonl"), '\n')) {
      std::string t = trim(line);
      if (t.empty()) continue;
      json j = json::parse(t);
      CacheEntry e;
      e.id = j.at("id").get<std::string>();
      e.kind = j.at("kind").get<std::string>() == "qa_pair" ? CacheKind::qa_pair
                                                            : CacheKind::doc_chunk;
      e.text = j.at("text").get<std::string>();
      if (j.contains("answer")) e.answer = j.at("answer").get<std::string>();
      e.embedding = j.at("embedding").get<std::vector<double>>();
      e.created_at = j.at("created_at").get<double>();
      e.hits = j.value("hits", std::uint64_t{0});
      std::string tier = j.value("source_tier", std::string{"ingest"});
      e.source_tier = tier == "2" ? SourceTier::tier2
                                  : tier == "3" ? SourceTier::tier3 : SourceTier::ingest;
      store.add(std::move(e));
    }
    return store;
  }

 private:
  // Oldest-first eviction when over the optional cap.
  void evict_locked() {
    if (!max_entries_) return;
    while (entries_.size() > *max_entries_) {
      auto oldest = std::min_element(entries_.begin(), entries_.end(),
                                     [](const CacheEntry& a, const CacheEntry& b) {
                                       if (a.created_at != b.created_at)
                                         return a.created_at < b.created_at;
                                       return a.id < b.id;
                                     });
      entries_.erase(oldest);
    }
  }

  mutable std::shared_mutex mutex_;
  std::vector<CacheEntry> entries_;
  size_t dim_ = 0;
  std::string embed_model_tag_;
  std::optional<size_t> max_entries_;
  std::uint64_t next_id_ = 1;
};

// --- reranking ---------------------------------------------------------------

enum class RerankMode { none, llm_pointwise };

inline RerankMode rerank_mode_from_string(const std::string& s) {
  if (s == "none") return RerankMode::none;
  if (s == "llm_pointwise") return RerankMode::llm_pointwise;
  throw Error("unknown rerank mode: " + s);
}

class RelevanceScorer {
 public:
  virtual ~RelevanceScorer() = default;
  // relevance of `text` to `query` in [0, 1]
  virtual double score(const std::string& query, const std::string& text) = 0;
};

// Pointwise relevance via a generation model: asks for an integer 0-100 and
// maps it onto [0, 1]. Stands in for the cross-encoder, which Ollama-class
// servers do not serve.
class LlmPointwiseScorer : public RelevanceScorer {
 public:
  LlmPointwiseScorer(OllamaClient& client, std::string model_tag)
      : client_(client), model_tag_(std::move(model_tag)) {}

  double score(const std::string& query, const std::string& text) override {
    GenerationRequest req;
    req.model_tag = model_tag_;
    req.prompt =
        "Rate how relevant the passage is to the question on an integer scale "
        "from 0 (unrelated) to 100 (directly answers it). Reply with the "
        "number only.\n\nQuestion: " +
        query + "\n\nPassage: " + text + "\n\nScore:";
    req.temperature = 0.0;
    req.max_tokens = 8;
    auto events = client_.generate_stream(req);
    std::string out;
    for (const auto& ev : events) {
      if (ev.kind == StreamEventKind::chunk) out += ev.text;
      if (ev.kind == StreamEventKind::error) throw Error("scorer-unreachable: " + ev.error_cause);
    }
    try {
      double v = std::stod(trim(out));
      return std::clamp(v / 100.0, 0.0, 1.0);
    } catch (const std::exception&) {
      return 0.0;  // unscorable reply ranks last
    }
  }

 private:
  OllamaClient& client_;
  std::string model_tag_;
};

// Refines candidate scores. mode=none passes cosine scores through; llm
// pointwise re-scores into [0,1] and re-sorts (stable, so upstream order
// breaks ties). A failing scorer falls back to pass-through with a warning:
// for an interactive robot, availability beats ranking precision.
inline std::vector<ScoredEntry> rerank(
    const std::string& query, const std::vector<ScoredEntry>& candidates, RerankMode mode,
    RelevanceScorer* scorer = nullptr,
    const std::function<void(const std::string&)>& warn = [](const std::string& msg) {
      std::cerr << "[edgebench] " << msg << "\n";
    }) {
  if (mode == RerankMode::none || candidates.empty()) return candidates;
  if (!scorer) throw Error("llm_pointwise rerank needs a scorer");
  std::vector<ScoredEntry> out;
  out.reserve(candidates.size());
  try {
    for (const auto& c : candidates) out.push_back({c.entry, scorer->score(query, c.entry.text)});
  } catch (const Error& e) {
    warn(std::string("reranker unavailable, passing cosine scores through: ") + e.what());
    return candidates;
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredEntry& a, const ScoredEntry& b) { return a.score > b.score; });
  return out;
}

// --- routing ------------------------------------------------------------------

struct RouterConfig {
  double theta1 = 0.92;  // cache-answer threshold
  double theta2 = 0.60;  // retrieval threshold
  std::string small_model;
  std::string large_model;
  std::string embed_model = "nomic-embed-text";
  RerankMode rerank = RerankMode::none;
  size_t top_k = 4;

  void check() const {
    if (!(theta1 > 0.0 && theta1 <= 1.0)) throw Error("theta1 out of (0,1]");
    if (!(theta2 >= 0.0 && theta2 < 1.0)) throw Error("theta2 out of [0,1)");
    if (!(theta1 > theta2)) throw Error("router config requires theta1 > theta2");
    if (top_k == 0) throw Error("top_k must be positive");
  }
};

struct RouteDecision {
  int tier = 3;
  std::optional<double> best_score;  // absent on an empty cache
  std::optional<std::string> matched_entry_id;
  std::vector<std::string> context_ids;    // tier 2 only
  std::vector<std::string> context_texts;  // texts included in the tier-2 prompt
  std::string answer;
  double latency_s = 0;
  std::string model_used;  // "cache", small tag, or large tag
  std::optional<std::string> error;
};

// Pure threshold rule: absent score means an unanswerable lookup.
inline int decide_tier(std::optional<double> best_score, double theta1, double theta2) {
  if (!best_score) return 3;
  if (*best_score >= theta1) return 1;
  if (*best_score >= theta2) return 2;
  return 3;
}

struct EmbeddingProvider {
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed(const std::string& text) = 0;
};

class ClientEmbeddingProvider : public EmbeddingProvider {
 public:
  ClientEmbeddingProvider(OllamaClient& client, std::string model_tag)
      : client_(client), model_tag_(std::move(model_tag)) {}
  std::vector<double> embed(const std::string& text) override {
    return client_.embed(text, model_tag_).values;
  }

 private:
  OllamaClient& client_;
  std::string model_tag_;
};

class ScriptedEmbedder : public EmbeddingProvider {
 public:
  explicit ScriptedEmbedder(std::function<std::vector<double>(const std::string&)> fn)
      : fn_(std::move(fn)) {}
  std::vector<double> embed(const std::string& text) override { return fn_(text); }

 private:
  std::function<std::vector<double>(const std::string&)> fn_;
};

struct RouterDeps {
  EmbeddingProvider* embedder = nullptr;
  // generate(model_tag, prompt) -> answer text; throws on failure
  std::function<std::string(const std::string&, const std::string&)> generate;
  RelevanceScorer* scorer = nullptr;  // llm_pointwise only
};

inline std::string build_tier2_prompt(const std::string& query,
                                      const std::vector<std::string>& context_texts) {
  std::string p = "Use the context to answer the question.\n\nContext:\n";
  for (const auto& t : context_texts) {
    p += "- ";
    p += t;
    p += '\n';
  }
  p += "\nQuestion: " + query + "\nAnswer:";
  return p;
}

// One routed query. The routing score comes from qa_pair candidates only
// (doc chunks never answer tier 1); tier-2 context draws from both kinds,
// including the near-miss qa_pair that triggered the branch. Tiers 2 and 3
// write their answer back as a fresh qa_pair.
inline RouteDecision route(const std::string& query, const RouterConfig& cfg, VectorStore& store,
                           const RouterDeps& deps) {
  cfg.check();
  if (query.empty()) throw Error("route: empty query");
  if (!deps.embedder) throw Error("route: missing embedder");

  RouteDecision decision;
  const double t0 = now_monotonic();

  std::vector<double> qvec;
  bool embedded = false;
  try {
    qvec = deps.embedder->embed(query);
    embedded = true;
  } catch (const std::exception& e) {
    // degrade: no lookup possible, answer directly on the large model
    decision.tier = 3;
    decision.model_used = cfg.large_model;
    try {
      decision.answer = deps.generate(cfg.large_model, query);
    } catch (const std::exception& gen_err) {
      decision.error = std::string("generation-failure: ") + gen_err.what();
    }
    decision.latency_s = now_monotonic() - t0;
    (void)e;
    return decision;
  }

  std::vector<ScoredEntry> qa_candidates;
  std::vector<ScoredEntry> context_candidates;
  if (store.size() > 0) {
    qa_candidates = store.similarity_search(qvec, cfg.top_k, CacheKind::qa_pair);
    context_candidates = store.similarity_search(qvec, cfg.top_k);
    qa_candidates = rerank(query, qa_candidates, cfg.rerank, deps.scorer);
    context_candidates = rerank(query, context_candidates, cfg.rerank, deps.scorer);
  }
  if (!qa_candidates.empty()) decision.best_score = qa_candidates.front().score;

  decision.tier = decide_tier(decision.best_score, cfg.theta1, cfg.theta2);

  if (decision.tier == 1) {
    const auto& hit = qa_candidates.front();
    decision.matched_entry_id = hit.entry.id;
    decision.answer = *hit.entry.answer;
    decision.model_used = "cache";
    store.record_hit(hit.entry.id);
    decision.latency_s = now_monotonic() - t0;
    return decision;
  }

  const bool tier2 = decision.tier == 2;
  std::string model_tag = tier2 ? cfg.small_model : cfg.large_model;
  decision.model_used = model_tag;
  std::string prompt = query;
  if (tier2) {
    for (const auto& c : context_candidates) {
      decision.context_ids.push_back(c.entry.id);
      decision.context_texts.push_back(c.entry.text);
    }
    prompt = build_tier2_prompt(query, decision.context_texts);
  }

  try {
    decision.answer = deps.generate(model_tag, prompt);
  } catch (const std::exception& e) {
    decision.error = std::string("generation-failure: ") + e.what();
    decision.latency_s = now_monotonic() - t0;
    return decision;
  }

  if (embedded) {
    CacheEntry written;
    written.kind = CacheKind::qa_pair;
    written.text = query;
    written.answer = decision.answer;
    written.embedding = qvec;
    written.created_at = now_monotonic();
    written.source_tier = tier2 ? SourceTier::tier2 : SourceTier::tier3;
    store.add(std::move(written));
  }
  decision.latency_s = now_monotonic() - t0;
  return decision;
}

inline json route_decision_to_json(const RouteDecision& d) {
  json j;
  j["tier"] = d.tier;
  if (d.best_score) j["best_score"] = *d.best_score;
  else j["best_score"] = nullptr;
  if (d.matched_entry_id) j["matched_entry_id"] = *d.matched_entry_id;
  j["context_ids"] = d.context_ids;
  j["answer"] = d.answer;
  j["latency_s"] = d.latency_s;
  j["model_used"] = d.model_used;
  if (d.error) j["error"] = *d.error;
  return j;
}

// Serving mode: POST /v1/route {"query": ...} -> RouteDecision JSON,
// GET /v1/cache/stats -> store counters.
class RouterServer {
 public:
  RouterServer(VectorStore& store, RouterConfig cfg, RouterDeps deps)
      : store_(store), cfg_(std::move(cfg)), deps_(std::move(deps)),
        server_(std::make_unique<httplib::Server>()) {
    cfg_.check();
    server_->Post("/v1/route", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.contains("query") || !body["query"].is_string() ||
          body["query"].get<std::string>().empty()) {
        res.status = 400;
        res.set_content(R"({"error":"body must be {\"query\": \"...\"}"})", "application/json");
        return;
      }
      try {
        auto decision = route(body["query"].get<std::string>(), cfg_, store_, deps_);
        res.set_content(route_decision_to_json(decision).dump(), "application/json");
        if (on_route_) on_route_(decision);
      } catch (const std::exception& e) {
        res.status = 500;
        json err;
        err["error"] = e.what();
        res.set_content(err.dump(), "application/json");
      }
    });
    server_->Get("/v1/cache/stats", [this](const httplib::Request&, httplib::Response& res) {
      json stats;
      stats["entries"] = store_.size();
      stats["qa_pairs"] = store_.count(CacheKind::qa_pair);
      stats["doc_chunks"] = store_.count(CacheKind::doc_chunk);
      stats["dim"] = store_.dim();
      stats["embed_model"] = cfg_.embed_model;
      stats["theta1"] = cfg_.theta1;
      stats["theta2"] = cfg_.theta2;
      res.set_content(stats.dump(), "application/json");
    });
  }

  ~RouterServer() { stop(); }

  void set_on_route(std::function<void(const RouteDecision&)> cb) { on_route_ = std::move(cb); }

  // Binds the given port (or any free port when 0) and serves on a
  // background thread until stop().
  int start(int port = 0) {
    if (port == 0) {
      port_ = server_->bind_to_any_port("0.0.0.0");
    } else {
      if (!server_->bind_to_port("0.0.0.0", port))
        throw Error("cannot bind port " + std::to_string(port));
      port_ = port;
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
  }

  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  void stop() {
    if (server_ && server_->is_running()) server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  VectorStore& store_;
  RouterConfig cfg_;
  RouterDeps deps_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::function<void(const RouteDecision&)> on_route_;
  int port_ = -1;
};

// --- document ingestion -------------------------------------------------------

struct ChunkingConfig {
  size_t max_chars = 800;
  size_t overlap = 100;

  void check() const {
    if (max_chars == 0) throw Error("chunking: max_chars must be positive");
    if (overlap >= max_chars) throw Error("chunking: overlap must be smaller than max_chars");
  }
};

// Paragraph split on blank lines, then hard wrap: windows of max_chars
// advancing by (max_chars - overlap) until the text is covered.
inline std::vector<std::string> chunk_text(const std::string& text, const ChunkingConfig& cfg) {
  cfg.check();
  std::vector<std::string> chunks;
  size_t start = 0;
  auto push_wrapped = [&](const std::string& para) {
    if (para.empty()) return;
    if (para.size() <= cfg.max_chars) {
      chunks.push_back(para);
      return;
    }
    const size_t stride = cfg.max_chars - cfg.overlap;
    for (size_t p = 0;; p += stride) {
      if (p + cfg.max_chars >= para.size()) {
        chunks.push_back(para.substr(p));
        break;
      }
      chunks.push_back(para.substr(p, cfg.max_chars));
    }
  };
  while (start <= text.size()) {
    size_t brk = text.find("\n\n", start);
    if (brk == std::string::npos) {
      push_wrapped(trim(text.substr(start)));
      break;
    }
    push_wrapped(trim(text.substr(start, brk - start)));
    start = brk + 2;
  }
  return chunks;
}

// Chunks, embeds and stores documents. All embeddings are computed before the
// first store mutation, so an embedding failure leaves the store untouched.
inline size_t ingest_documents(const std::vector<std::string>& texts, const ChunkingConfig& cfg,
                               EmbeddingProvider& embedder, VectorStore& store) {
  cfg.check();
  std::vector<CacheEntry> staged;
  for (const auto& text : texts) {
    for (auto& chunk : chunk_text(text, cfg)) {
      CacheEntry e;
      e.kind = CacheKind::doc_chunk;
      e.text = chunk;
      e.embedding = embedder.embed(chunk);  // may throw: nothing staged is stored
      e.created_at = now_monotonic();
      e.source_tier = SourceTier::ingest;
      staged.push_back(std::move(e));
    }
  }
  for (auto& e : staged) store.add(std::move(e));
  return staged.size();
}

}  // namespace edgebench
