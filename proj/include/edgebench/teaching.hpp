#pragma once

#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "edgebench/client.hpp"
#include "edgebench/domain.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

struct BatteryQuestion {
  int id = 0;
  std::string text;
  std::string use_tag;  // pedagogical function label
};

inline constexpr size_t kBatterySize = 10;

// The eight judged criteria, in canonical order.
inline constexpr std::array<const char*, 8> kTeachingCriteria = {
    "Clarity",      "Accuracy",          "Engagement",         "Structure",
    "Completeness", "Appropriate Level", "Examples/Analogies", "Actionable"};

// Structured prompt for models above the size boundary. Versioned constant:
// changing the wording means bumping the version, not editing in place.
inline constexpr const char* kTeachingPreambleV1 =
    "You are a study companion robot that helps a university student learn. "
    "Answer the student's question below as a supportive tutor. Keep the "
    "explanation clear and well organised, match the level implied by the "
    "question, use a short example or analogy where it helps, and end with "
    "one practical next step the student can take.\n\n";

inline std::string build_teaching_prompt(const BatteryQuestion& q, PromptRegime regime) {
  if (q.text.empty()) throw Error("battery question with empty text");
  if (regime == PromptRegime::minimal) return q.text;
  return std::string(kTeachingPreambleV1) + q.text;
}

// --- battery file ----------------------------------------------------------
//
// The battery ships as a small TOML-style document: `version = N` followed by
// [[question]] blocks with integer `id` and quoted `text` / `use` strings.
// Only that subset is accepted.

namespace detail {

inline std::string parse_toml_string(const std::string& raw, int line_no) {
  std::string v = trim(raw);
  if (v.size() < 2 || v.front() != '"' || v.back() != '"')
    throw Error("battery parse: expected quoted string at line " + std::to_string(line_no));
  std::string out;
  for (size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] == '\\' && i + 2 < v.size()) {
      ++i;
      switch (v[i]) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: out += v[i];
      }
    } else {
      out += v[i];
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<BatteryQuestion> parse_battery(const std::string& text) {
  std::vector<BatteryQuestion> out;
  BatteryQuestion current;
  bool in_question = false;
  int line_no = 0;
  auto flush = [&] {
    if (!in_question) return;
    if (current.id == 0 || current.text.empty())
      throw Error("battery parse: question block missing id or text");
    out.push_back(current);
    current = {};
  };
  for (const auto& raw_line : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw_line);
    if (line.empty() || line[0] == '#') continue;
    if (line == "[[question]]") {
      flush();
      in_question = true;
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("battery parse: expected key = value at line " + std::to_string(line_no));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!in_question) {
      if (key == "version") continue;  // accepted, informational
      throw Error("battery parse: unexpected top-level key '" + key + "'");
    }
    if (key == "id") current.id = std::stoi(value);
    else if (key == "text") current.text = detail::parse_toml_string(value, line_no);
    else if (key == "use") current.use_tag = detail::parse_toml_string(value, line_no);
    else throw Error("battery parse: unknown key '" + key + "'");
  }
  flush();

  std::set<int> ids;
  for (const auto& q : out)
    if (!ids.insert(q.id).second) throw Error("battery parse: duplicate id " + std::to_string(q.id));
  return out;
}

inline std::vector<BatteryQuestion> load_battery(const std::filesystem::path& path,
                                                 bool require_canonical = true) {
  auto battery = parse_battery(read_file(path));
  if (require_canonical) {
    if (battery.size() != kBatterySize)
      throw Error("canonical battery must hold exactly " + std::to_string(kBatterySize) +
                  " questions, found " + std::to_string(battery.size()));
    for (const auto& q : battery)
      if (q.id < 1 || q.id > static_cast<int>(kBatterySize))
        throw Error("canonical battery id out of range: " + std::to_string(q.id));
  }
  return battery;
}

// --- judge ------------------------------------------------------------------

struct JudgeScore {
  std::map<std::string, int> criteria;  // all 8, each 1..10
  double composite = 0;                 // arithmetic mean of the eight
  std::string rationale;
};

class JudgeError : public Error {
 public:
  using Error::Error;
};

inline std::string build_judge_prompt(const BatteryQuestion& question,
                                      const std::string& response) {
  std::string p;
  p += "Rate the following response on a scale of 1-10 based on its ability to "
       "teach effectively. Score each criterion independently:\n";
  p += "1. Clarity: Is the explanation clear and easy to understand?\n";
  p += "2. Accuracy: Is the information correct?\n";
  p += "3. Engagement: Does it engage the learner?\n";
  p += "4. Structure: Is it well-organised?\n";
  p += "5. Completeness: Does it adequately address the question?\n";
  p += "6. Appropriate Level: Is the language suitable for the intended audience?\n";
  p += "7. Examples/Analogies: Are helpful examples provided?\n";
  p += "8. Actionable: Does it provide practical next steps or ways to apply the knowledge?\n";
  p += "\nQuestion:\n" + question.text + "\n";
  p += "\nResponse:\n" + response + "\n";
  p += "\nReply with exactly this fenced block, one line per criterion:\n";
  p += "```\n";
  for (const char* c : kTeachingCriteria) p += std::string(c) + ": <integer 1-10>\n";
  p += "Rationale: <one or two sentences>\n```\n";
  return p;
}

// Parses the judge's reply: a block of "<Criterion>: <int>" lines (fenced or
// not, any order) plus an optional rationale. Returns nothing if any of the
// eight criteria is missing or out of range.
inline std::optional<JudgeScore> parse_judge_scores(const std::string& content) {
  std::string body = content;
  size_t fence = content.find("```");
  if (fence != std::string::npos) {
    size_t start = content.find('\n', fence);
    size_t end = content.find("```", fence + 3);
    if (start != std::string::npos && end != std::string::npos && start < end)
      body = content.substr(start + 1, end - start - 1);
  }

  JudgeScore score;
  for (const auto& raw_line : split(body, '\n')) {
    std::string line = trim(raw_line);
    size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = trim(line.substr(0, colon));
    std::string value = trim(line.substr(colon + 1));
    if (to_lower(key) == "rationale") {
      score.rationale = value;
      continue;
    }
    for (const char* criterion : kTeachingCriteria) {
      if (to_lower(key) == to_lower(criterion)) {
        try {
          int v = std::stoi(value);
          if (v < 1 || v > 10) return std::nullopt;
          score.criteria[criterion] = v;
        } catch (const std::exception&) {
          return std::nullopt;
        }
        break;
      }
    }
  }
  if (score.criteria.size() != kTeachingCriteria.size()) return std::nullopt;
  double sum = 0;
  for (const auto& [_, v] : score.criteria) sum += v;
  score.composite = sum / static_cast<double>(kTeachingCriteria.size());
  return score;
}

// OpenAI-compatible chat-completions client used for judging. Temperature is
// pinned to 0.
class JudgeClient {
 public:
  JudgeClient(std::string base_url, std::string model, std::string api_key = {},
              int timeout_s = 120)
      : base_url_(std::move(base_url)),
        model_(std::move(model)),
        api_key_(std::move(api_key)),
        timeout_s_(timeout_s) {}

  virtual ~JudgeClient() = default;

  virtual std::string complete(const std::string& prompt) const {
    httplib::Client cli(base_url_);
    cli.set_connection_timeout(5);
    cli.set_read_timeout(timeout_s_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    json body;
    body["model"] = model_;
    body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = 0.0;
    auto res = cli.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw JudgeError("judge-unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw JudgeError("judge returned http-" + std::to_string(res->status));
    json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  }

  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
  std::string model_;
  std::string api_key_;
  int timeout_s_;
};

inline constexpr int kJudgeParseRetries = 3;  // retries after the first attempt

// Scores one response against the rubric. Empty responses score composite 1.0
// without a judge call. Unparseable replies are retried, then raised.
inline JudgeScore judge_response(const BatteryQuestion& question, const std::string& response,
                                 const JudgeClient& judge) {
  if (trim(response).empty()) {
    JudgeScore floor;
    for (const char* c : kTeachingCriteria) floor.criteria[c] = 1;
    floor.composite = 1.0;
    floor.rationale = "empty response";
    return floor;
  }
  std::string prompt = build_judge_prompt(question, response);
  for (int attempt = 0; attempt <= kJudgeParseRetries; ++attempt) {
    std::string content = judge.complete(prompt);
    if (auto score = parse_judge_scores(content)) return *score;
  }
  throw JudgeError("unparseable-after-retries");
}

// --- battery run ------------------------------------------------------------

struct TeachingQuestionResult {
  int question_id = 0;
  std::string response;  // verbatim
  std::optional<JudgeScore> score;
  bool generation_aborted = false;
  std::optional<std::string> judge_error;
};

struct TeachingSummary {
  std::string model;
  PromptRegime regime = PromptRegime::structured;
  std::vector<TeachingQuestionResult> per_question;
  size_t scored_count = 0;

  // mean over scored questions; disclosed together with scored_count
  std::optional<double> mean() const {
    if (scored_count == 0) return std::nullopt;
    double sum = 0;
    for (const auto& q : per_question)
      if (q.score) sum += q.score->composite;
    return sum / static_cast<double>(scored_count);
  }
};

struct TeachingOptions {
  std::optional<int> max_tokens;  // server default unless set
  double temperature = 0.1;
};

// Generates one answer per battery question under the model's prompt regime,
// then judges each answer. Per-question judge failures leave that question
// unscored and flagged; generation stays strictly sequential.
inline TeachingSummary run_teaching_battery(const ModelSpec& model,
                                            const std::vector<BatteryQuestion>& battery,
                                            const OllamaClient& client, const JudgeClient& judge,
                                            const TeachingOptions& opts = {}) {
  if (battery.empty()) throw Error("empty battery");
  TeachingSummary summary;
  summary.model = model.name;
  summary.regime = derive_prompt_regime(model);

  for (const auto& q : battery) {
    TeachingQuestionResult result;
    result.question_id = q.id;

    GenerationRequest req;
    req.model_tag = model.served_endpoint;
    req.prompt = build_teaching_prompt(q, summary.regime);
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    auto events = client.generate_stream(req);
    for (const auto& ev : events) {
      if (ev.kind == StreamEventKind::chunk) result.response += ev.text;
      if (ev.kind == StreamEventKind::error) result.generation_aborted = true;
    }

    try {
      result.score = judge_response(q, result.response, judge);
      ++summary.scored_count;
    } catch (const JudgeError& e) {
      result.judge_error = e.what();
    }
    summary.per_question.push_back(std::move(result));
  }
  return summary;
}

inline json teaching_summary_to_json(const TeachingSummary& s) {
  json j;
  j["model"] = s.model;
  j["prompt_regime"] = to_string(s.regime);
  j["scored_count"] = s.scored_count;
  j["question_count"] = s.per_question.size();
  if (auto m = s.mean()) j["mean"] = *m;
  j["per_question"] = json::array();
  for (const auto& q : s.per_question) {
    json qj;
    qj["id"] = q.question_id;
    qj["response"] = q.response;
    if (q.generation_aborted) qj["generation_aborted"] = true;
    if (q.judge_error) qj["judge_error"] = *q.judge_error;
    if (q.score) {
      qj["composite"] = q.score->composite;
      qj["criteria"] = q.score->criteria;
      qj["rationale"] = q.score->rationale;
    }
    j["per_question"].push_back(qj);
  }
  return j;
}

inline TeachingSummary teaching_summary_from_json(const json& j) {
  TeachingSummary s;
  s.model = j.at("model").get<std::string>();
  s.regime = j.value("prompt_regime", "structured") == "minimal" ? PromptRegime::minimal
                                                                 : PromptRegime::structured;
  s.scored_count = j.at("scored_count").get<size_t>();
  for (const auto& qj : j.at("per_question")) {
    TeachingQuestionResult q;
    q.question_id = qj.at("id").get<int>();
    q.response = qj.value("response", std::string{});
    q.generation_aborted = qj.value("generation_aborted", false);
    if (qj.contains("judge_error")) q.judge_error = qj.at("judge_error").get<std::string>();
    if (qj.contains("composite")) {
      JudgeScore score;
      score.composite = qj.at("composite").get<double>();
      if (qj.contains("criteria"))
        score.criteria = qj.at("criteria").get<std::map<std::string, int>>();
      score.rationale = qj.value("rationale", std::string{});
      q.score = score;
    }
    s.per_question.push_back(std::move(q));
  }
  return s;
}

}  // namespace edgebench
