#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "edgebench/mmlu.hpp"
#include "edgebench/mock_server.hpp"

using namespace edgebench;

namespace {

McqItem item(const std::string& cat, const std::string& q, char gold) {
  McqItem it;
  it.category = cat;
  it.question = q;
  it.choices = {"alpha", "beta", "gamma", "delta"};
  it.answer = gold;
  return it;
}

// Synthetic items carry their gold letter in the question text so the
// gold-echo mock can answer without outside knowledge.
std::vector<McqItem> synthetic_items(const std::string& cat, size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> d(0, 3);
  std::vector<McqItem> out;
  for (size_t i = 0; i < n; ++i) {
    char gold = static_cast<char>('A' + d(rng));
    out.push_back(item(cat, "synthetic question " + std::to_string(i) + " [gold " +
                                std::string(1, gold) + "]",
                       gold));
  }
  return out;
}

std::map<std::string, std::vector<McqItem>> pool_for(const std::vector<std::string>& cats) {
  std::map<std::string, std::vector<McqItem>> pool;
  for (const auto& cat : cats)
    pool[cat] = {item(cat, "exemplar one " + cat, 'A'), item(cat, "exemplar two " + cat, 'B'),
                 item(cat, "exemplar three " + cat, 'C')};
  return pool;
}

ModelSpec mock_model(const std::string& tag) { return {tag, 1.0, 0.5, "Q4_K_M", tag}; }

}  // namespace

TEST_CASE("fewshot prompt has three filled answers and a trailing stub", "[mmlu]") {
  auto pool = pool_for({"Formal Logic"});
  auto target = item("Formal Logic", "the target question", 'D');
  std::string prompt = build_fewshot_prompt(target, pool["Formal Logic"]);

  size_t filled = 0, pos = 0;
  while ((pos = prompt.find("Answer: ", pos)) != std::string::npos) {
    ++filled;
    pos += 8;
  }
  CHECK(filled == 3);
  CHECK(prompt.ends_with("Answer:"));
  CHECK(prompt.find("the target question") != std::string::npos);
  // deterministic
  CHECK(prompt == build_fewshot_prompt(target, pool["Formal Logic"]));
}

TEST_CASE("fewshot prompt rejects mixed categories and wrong counts", "[mmlu]") {
  auto pool = pool_for({"Formal Logic", "Marketing"});
  auto target = item("Formal Logic", "q", 'A');
  auto mixed = pool["Formal Logic"];
  mixed[1] = pool["Marketing"][1];
  CHECK_THROWS_AS(build_fewshot_prompt(target, mixed), Error);
  auto two = std::vector<McqItem>{pool["Formal Logic"][0], pool["Formal Logic"][1]};
  CHECK_THROWS_AS(build_fewshot_prompt(target, two), Error);
}

TEST_CASE("answer extraction rules", "[mmlu]") {
  CHECK(extract_answer("B") == 'B');
  CHECK(extract_answer("  b.") == 'B');
  CHECK(extract_answer("(C)") == 'C');
  CHECK(extract_answer("The answer is (C) because of logic") == 'C');
  CHECK(extract_answer("the ANSWER IS d") == 'D');
  CHECK(extract_answer("Answer: A") == 'A');
  CHECK(extract_answer("I think both A and B") == std::nullopt);
  CHECK(extract_answer("after consideration the best option is C") == 'C');
  CHECK(extract_answer("no letters at all here") == std::nullopt);
  CHECK(extract_answer("") == std::nullopt);
  // the lowercase article does not trigger the unique-token rule
  CHECK(extract_answer("such a case gives nothing") == std::nullopt);
  // extraction is total; arbitrary bytes do not throw
  CHECK_NOTHROW(extract_answer(std::string("\x01\xff weird \n\t bytes")));
}

TEST_CASE("extraction is deterministic", "[mmlu]") {
  std::mt19937 rng(99);
  std::uniform_int_distribution<int> len(0, 40);
  std::uniform_int_distribution<int> ch(32, 126);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    int n = len(rng);
    for (int k = 0; k < n; ++k) s += static_cast<char>(ch(rng));
    CHECK(extract_answer(s) == extract_answer(s));
  }
}

TEST_CASE("gold-scripted mock scores 100 percent", "[mmlu]") {
  MockOllamaServer server;
  MockModelScript gold;
  gold.mode = MockModelScript::Mode::gold_echo;
  server.add_model("gold", gold);
  server.start();
  OllamaClient client(server.base_url(), 10);

  auto items = synthetic_items("Formal Logic", 40, 7);
  auto run = run_mmlu(mock_model("gold"), items, pool_for({"Formal Logic"}), client);
  CHECK(run.summary.aggregate_pct() == 100.0);
  CHECK(run.summary.violation_rate() == 0.0);
  CHECK_FALSE(run.summary.excluded_from_aggregate);
}

TEST_CASE("no-letter mock is a full format violation", "[mmlu]") {
  MockOllamaServer server;
  MockModelScript prose;
  prose.mode = MockModelScript::Mode::no_letter;
  server.add_model("prose", prose);
  server.start();
  OllamaClient client(server.base_url(), 10);

  auto items = synthetic_items("Marketing", 30, 11);
  auto run = run_mmlu(mock_model("prose"), items, pool_for({"Marketing"}), client);
  CHECK(run.summary.violation_rate() == 1.0);
  CHECK(run.summary.aggregate_pct() == 0.0);
  CHECK(run.summary.excluded_from_aggregate);
}

TEST_CASE("aggregate equals question-weighted mean of categories", "[mmlu]") {
  MockOllamaServer server;
  MockModelScript gold;
  gold.mode = MockModelScript::Mode::gold_echo;
  server.add_model("gold", gold);
  server.start();
  OllamaClient client(server.base_url(), 10);

  auto items = synthetic_items("Formal Logic", 20, 3);
  auto more = synthetic_items("Marketing", 10, 5);
  items.insert(items.end(), more.begin(), more.end());
  auto run = run_mmlu(mock_model("gold"), items, pool_for({"Formal Logic", "Marketing"}), client);

  double weighted = 0;
  size_t total = 0;
  for (const auto& [cat, st] : run.summary.per_category) {
    weighted += st.accuracy_pct() * static_cast<double>(st.total);
    total += st.total;
  }
  CHECK(total == items.size());
  CHECK(run.summary.aggregate_pct() == Catch::Approx(weighted / static_cast<double>(total)));
  auto [lo, hi] = run.summary.category_range();
  CHECK(lo <= run.summary.aggregate_pct());
  CHECK(hi >= run.summary.aggregate_pct());
}

TEST_CASE("accuracy invariant under item permutation", "[mmlu]") {
  MockOllamaServer server;
  MockModelScript gold;
  gold.mode = MockModelScript::Mode::gold_echo;
  server.add_model("gold", gold);
  server.start();
  OllamaClient client(server.base_url(), 10);

  auto items = synthetic_items("Global Facts", 25, 13);
  auto run1 = run_mmlu(mock_model("gold"), items, pool_for({"Global Facts"}), client);
  std::mt19937 rng(17);
  std::shuffle(items.begin(), items.end(), rng);
  auto run2 = run_mmlu(mock_model("gold"), items, pool_for({"Global Facts"}), client);
  CHECK(run1.summary.aggregate_pct() == run2.summary.aggregate_pct());
}

TEST_CASE("client errors mark items as violations without aborting", "[mmlu]") {
  MockOllamaServer server;
  server.start();  // no models registered: every generate is a 404
  OllamaClient client(server.base_url(), 10);
  auto items = synthetic_items("Marketing", 5, 19);
  auto run = run_mmlu(mock_model("missing"), items, pool_for({"Marketing"}), client);
  CHECK(run.summary.violation_rate() == 1.0);
}

TEST_CASE("mmlu csv loading and dir layout", "[mmlu]") {
  auto dir = std::filesystem::temp_directory_path() / "edgebench-test-mmlu";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::string test_csv =
      "\"What is 2+2, really?\",1,2,3,4,D\n"
      "pick beta,alpha,beta,gamma,delta,B\n";
  std::string dev_csv =
      "dev one,a,b,c,d,A\n"
      "dev two,a,b,c,d,B\n"
      "dev three,a,b,c,d,C\n";
  for (const auto& [display, slug] : kMmluCategories) {
    write_file(dir / (std::string(slug) + "_test.csv"), test_csv);
    write_file(dir / (std::string(slug) + "_dev.csv"), dev_csv);
  }
  auto ds = load_mmlu_dir(dir);
  CHECK(ds.test_items.size() == 12);  // 2 per category
  CHECK(ds.exemplar_pool.size() == 6);
  CHECK(ds.test_items[0].question == "What is 2+2, really?");
  CHECK(ds.test_items[0].answer == 'D');

  auto sub = load_mmlu_dir(dir, {"Marketing"});
  CHECK(sub.test_items.size() == 2);

  write_file(dir / "formal_logic_test.csv", "bad row,only,three\n");
  CHECK_THROWS_AS(load_mmlu_dir(dir), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("mmlu summary json round-trip", "[mmlu]") {
  MmluSummary s;
  s.model = "m";
  s.total = 100;
  s.correct = 40;
  s.violations = 5;
  s.per_category["Formal Logic"] = {50, 20, 2};
  s.per_category["Marketing"] = {50, 20, 3};
  auto back = mmlu_summary_from_json(mmlu_summary_to_json(s));
  CHECK(back.model == s.model);
  CHECK(back.total == s.total);
  CHECK(back.aggregate_pct() == s.aggregate_pct());
  CHECK(back.per_category.at("Marketing").violations == 3);
}
