#pragma once

#include <array>
#include <atomic>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "edgebench/client.hpp"
#include "edgebench/domain.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

// The six-category subset: display name and data-file slug.
inline constexpr std::array<std::pair<const char*, const char*>, 6> kMmluCategories = {{
    {"Formal Logic", "formal_logic"},
    {"Global Facts", "global_facts"},
    {"College Computer Science", "college_computer_science"},
    {"College Mathematics", "college_mathematics"},
    {"Marketing", "marketing"},
    {"High School Macroeconomics", "high_school_macroeconomics"},
}};

inline constexpr int kFewShotCount = 3;
inline constexpr double kMcqTemperature = 0.1;
inline constexpr int kMcqMaxTokens = 64;
// Above this violation rate a model's aggregate is flagged unusable.
inline constexpr double kViolationExclusionRate = 0.5;

struct McqItem {
  std::string category;
  std::string question;
  std::array<std::string, 4> choices;
  char answer = 'A';  // gold letter

  void check() const {
    if (answer < 'A' || answer > 'D') throw Error("mcq answer out of A-D range");
    for (const auto& c : choices)
      if (c.empty()) throw Error("mcq item with empty choice");
  }
};

struct McqResult {
  size_t item_index = 0;
  std::string raw_response;
  std::optional<char> extracted;
  bool correct = false;
  bool format_violation = false;
};

// Deterministic 3-shot prompt: each exemplar rendered as question, lettered
// choices and a filled answer line; the target ends with a bare "Answer:".
inline std::string build_fewshot_prompt(const McqItem& item,
                                        const std::vector<McqItem>& exemplars) {
  if (exemplars.size() != kFewShotCount)
    throw Error("expected " + std::to_string(kFewShotCount) + " exemplars, got " +
                std::to_string(exemplars.size()));
  for (const auto& ex : exemplars) {
    if (ex.category != item.category)
      throw Error("exemplar category mismatch: " + ex.category + " vs " + item.category);
    if (ex.question == item.question) throw Error("exemplar duplicates the target item");
  }
  std::string out;
  auto render = [&](const McqItem& q) {
    out += q.question;
    out += '\n';
    for (size_t i = 0; i < 4; ++i) {
      out += static_cast<char>('A' + i);
      out += ". ";
      out += q.choices[i];
      out += '\n';
    }
  };
  for (const auto& ex : exemplars) {
    render(ex);
    out += "Answer: ";
    out += ex.answer;
    out += "\n\n";
  }
  render(item);
  out += "Answer:";
  return out;
}

namespace detail {

// Strips wrapping punctuation from a token: "(C)" -> "C", "B." -> "B".
inline std::string strip_token(std::string_view tok) {
  size_t b = 0, e = tok.size();
  auto is_wrap = [](char c) {
    return c == '(' || c == ')' || c == '[' || c == ']' || c == '.' || c == ',' || c == ':' ||
           c == ';' || c == '*' || c == '"' || c == '\'' || c == '>' || c == '<';
  };
  while (b < e && is_wrap(tok[b])) ++b;
  while (e > b && is_wrap(tok[e - 1])) --e;
  return std::string(tok.substr(b, e - b));
}

inline std::vector<std::string> tokens_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

// Letter extraction, first matching rule wins:
//   1. leading standalone letter A-D (case-insensitive),
//   2. "answer is X" / "Answer: X", case-insensitive,
//   3. unique uppercase letter A-D appearing as a standalone token.
// Rule 3 requires uppercase so the article "a" in free prose does not match.
// Total and deterministic; never throws.
inline std::optional<char> extract_answer(const std::string& raw) {
  auto tokens = detail::tokens_of(raw);

  if (!tokens.empty()) {
    std::string first = detail::strip_token(tokens.front());
    if (first.size() == 1) {
      char c = static_cast<char>(std::toupper(static_cast<unsigned char>(first[0])));
      if (c >= 'A' && c <= 'D') return c;
    }
  }

  std::string lower = to_lower(raw);
  for (const char* pat : {"answer is", "answer:"}) {
    size_t pos = lower.find(pat);
    while (pos != std::string::npos) {
      size_t i = pos + std::string_view(pat).size();
      while (i < raw.size() &&
             (std::isspace(static_cast<unsigned char>(raw[i])) || raw[i] == '(' ||
              raw[i] == '[' || raw[i] == '*' || raw[i] == '"' || raw[i] == '\''))
        ++i;
      if (i < raw.size()) {
        char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw[i])));
        bool next_is_word =
            i + 1 < raw.size() && std::isalnum(static_cast<unsigned char>(raw[i + 1]));
        if (c >= 'A' && c <= 'D' && !next_is_word) return c;
      }
      pos = lower.find(pat, pos + 1);
    }
  }

  std::optional<char> unique;
  for (const auto& tok : tokens) {
    std::string stripped = detail::strip_token(tok);
    if (stripped.size() == 1 && stripped[0] >= 'A' && stripped[0] <= 'D') {
      if (unique && *unique != stripped[0]) return std::nullopt;  // ambiguous
      unique = stripped[0];
    }
  }
  return unique;
}

struct McqCategoryStats {
  size_t total = 0;
  size_t correct = 0;
  size_t violations = 0;

  double accuracy_pct() const {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  }
};

struct MmluSummary {
  std::string model;
  std::map<std::string, McqCategoryStats> per_category;
  size_t total = 0;
  size_t correct = 0;
  size_t violations = 0;
  bool excluded_from_aggregate = false;

  double aggregate_pct() const {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  }
  double violation_rate() const {
    return total == 0 ? 0.0 : static_cast<double>(violations) / static_cast<double>(total);
  }
  std::pair<double, double> category_range() const {
    double lo = 100.0, hi = 0.0;
    for (const auto& [_, st] : per_category) {
      lo = std::min(lo, st.accuracy_pct());
      hi = std::max(hi, st.accuracy_pct());
    }
    if (per_category.empty()) return {0.0, 0.0};
    return {lo, hi};
  }
};

struct MmluRun {
  std::vector<McqResult> results;
  MmluSummary summary;
};

struct MmluOptions {
  double temperature = kMcqTemperature;
  int max_tokens = kMcqMaxTokens;
  int concurrency = 1;
};

// Runs the battery of MCQ items against a served model. Format violations
// count as incorrect; client errors mark the item as a violation rather than
// aborting the run. Results are independent of item evaluation order.
inline MmluRun run_mmlu(const ModelSpec& model, const std::vector<McqItem>& items,
                        const std::map<std::string, std::vector<McqItem>>& exemplar_pool,
                        const OllamaClient& client, const MmluOptions& opts = {}) {
  if (items.empty()) throw Error("run_mmlu: no items");
  for (const auto& item : items) {
    auto it = exemplar_pool.find(item.category);
    if (it == exemplar_pool.end() || it->second.size() < kFewShotCount)
      throw Error("exemplar pool missing category: " + item.category);
  }

  MmluRun run;
  run.results.resize(items.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      const auto& item = items[i];
      std::vector<McqItem> shots(exemplar_pool.at(item.category).begin(),
                                 exemplar_pool.at(item.category).begin() + kFewShotCount);
      GenerationRequest req;
      req.model_tag = model.served_endpoint;
      req.prompt = build_fewshot_prompt(item, shots);
      req.temperature = opts.temperature;
      req.max_tokens = opts.max_tokens;

      McqResult res;
      res.item_index = i;
      auto events = client.generate_stream(req);
      bool errored = false;
      for (const auto& ev : events) {
        if (ev.kind == StreamEventKind::chunk) res.raw_response += ev.text;
        if (ev.kind == StreamEventKind::error) errored = true;
      }
      if (!errored) res.extracted = extract_answer(res.raw_response);
      res.format_violation = !res.extracted.has_value();
      res.correct = res.extracted && *res.extracted == item.answer;
      run.results[i] = res;
    }
  };

  int n_threads = std::max(1, opts.concurrency);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  auto& s = run.summary;
  s.model = model.name;
  for (size_t i = 0; i < items.size(); ++i) {
    auto& cat = s.per_category[items[i].category];
    ++cat.total;
    ++s.total;
    if (run.results[i].correct) {
      ++cat.correct;
      ++s.correct;
    }
    if (run.results[i].format_violation) {
      ++cat.violations;
      ++s.violations;
    }
  }
  s.excluded_from_aggregate = s.violation_rate() > kViolationExclusionRate;
  return run;
}

// Standard MMLU CSV row: question, four choices, answer letter. No header.
inline std::vector<McqItem> load_mmlu_csv(const std::filesystem::path& path,
                                          const std::string& category) {
  std::vector<McqItem> out;
  for (const auto& row : read_csv_file(path)) {
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    if (row.size() < 6) throw Error("mmlu csv row with <6 columns in " + path.string());
    McqItem item;
    item.category = category;
    item.question = row[0];
    for (size_t i = 0; i < 4; ++i) item.choices[i] = row[i + 1];
    std::string ans = trim(row[5]);
    if (ans.size() != 1 || ans[0] < 'A' || ans[0] > 'D')
      throw Error("mmlu csv answer not in A-D in " + path.string());
    item.answer = ans[0];
    item.check();
    out.push_back(std::move(item));
  }
  return out;
}

struct MmluDataset {
  std::vector<McqItem> test_items;
  std::map<std::string, std::vector<McqItem>> exemplar_pool;  // first 3 dev rows per category
};

// Loads <slug>_test.csv and <slug>_dev.csv per category from a directory.
// Exemplars are the first three dev rows, fixed for reproducibility.
inline MmluDataset load_mmlu_dir(const std::filesystem::path& dir,
                                 const std::vector<std::string>& only_categories = {}) {
  MmluDataset ds;
  for (const auto& [display, slug] : kMmluCategories) {
    if (!only_categories.empty() &&
        std::find(only_categories.begin(), only_categories.end(), display) ==
            only_categories.end() &&
        std::find(only_categories.begin(), only_categories.end(), slug) == only_categories.end())
      continue;
    auto test_path = dir / (std::string(slug) + "_test.csv");
    auto dev_path = dir / (std::string(slug) + "_dev.csv");
    if (!std::filesystem::exists(test_path))
      throw Error("missing mmlu data file: " + test_path.string());
    if (!std::filesystem::exists(dev_path))
      throw Error("missing mmlu data file: " + dev_path.string());
    auto test = load_mmlu_csv(test_path, display);
    auto dev = load_mmlu_csv(dev_path, display);
    if (dev.size() < kFewShotCount)
      throw Error("dev split needs >= 3 rows for category " + std::string(display));
    ds.exemplar_pool[display] = {dev.begin(), dev.begin() + kFewShotCount};
    ds.test_items.insert(ds.test_items.end(), test.begin(), test.end());
  }
  if (ds.test_items.empty()) throw Error("no mmlu items loaded from " + dir.string());
  return ds;
}

inline json mmlu_summary_to_json(const MmluSummary& s) {
  json j;
  j["model"] = s.model;
  j["aggregate_pct"] = s.aggregate_pct();
  j["violation_rate"] = s.violation_rate();
  j["excluded_from_aggregate"] = s.excluded_from_aggregate;
  j["total"] = s.total;
  j["correct"] = s.correct;
  j["violations"] = s.violations;
  auto [lo, hi] = s.category_range();
  j["category_min_pct"] = lo;
  j["category_max_pct"] = hi;
  j["per_category"] = json::object();
  for (const auto& [name, st] : s.per_category) {
    j["per_category"][name] = {{"total", st.total},
                               {"correct", st.correct},
                               {"violations", st.violations},
                               {"accuracy_pct", st.accuracy_pct()}};
  }
  return j;
}

inline MmluSummary mmlu_summary_from_json(const json& j) {
  MmluSummary s;
  s.model = j.at("model").get<std::string>();
  s.total = j.at("total").get<size_t>();
  s.correct = j.at("correct").get<size_t>();
  s.violations = j.at("violations").get<size_t>();
  s.excluded_from_aggregate = j.value("excluded_from_aggregate", false);
  if (j.contains("per_category"))
    for (const auto& [name, st] : j.at("per_category").items())
      s.per_category[name] = {st.at("total").get<size_t>(), st.at("correct").get<size_t>(),
                              st.at("violations").get<size_t>()};
  return s;
}

}  // namespace edgebench
