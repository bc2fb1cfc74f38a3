#include <catch2/catch_amalgamated.hpp>

#include <csignal>
#include <cstdio>
#include <sys/wait.h>
#include <unistd.h>

#include "edgebench/config.hpp"
#include "edgebench/mock_server.hpp"
#include "edgebench/router.hpp"

using namespace edgebench;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  std::string cmd = std::string(EDGEBENCH_CLI_PATH) + " " + args + " 2>&1";
  std::FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult result;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, n);
  int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("stats subcommand reports ratings statistics", "[cli]") {
  TempDir tmp("edgebench-test-cli-stats");
  std::string csv = "rater,item,criterion,score\n";
  // three raters differing only by constant offsets
  for (int item = 1; item <= 5; ++item) {
    for (const char* criterion : {"Clarity", "Accuracy"}) {
      int base = 4 + item % 3;
      csv += "r1,i" + std::to_string(item) + "," + criterion + "," + std::to_string(base) + "\n";
      csv += "r2,i" + std::to_string(item) + "," + criterion + "," + std::to_string(base + 1) + "\n";
      csv += "r3,i" + std::to_string(item) + "," + criterion + "," + std::to_string(base + 2) + "\n";
    }
  }
  write_file(tmp.path / "ratings.csv", csv);

  auto res = run_cli("stats --ratings " + (tmp.path / "ratings.csv").string() +
                     " --bias-correct --by-criterion");
  REQUIRE(res.exit_code == 0);
  auto j = json::parse(res.output);
  REQUIRE(j.contains("krippendorff_alpha"));
  REQUIRE(j.contains("alpha_bias_corrected"));
  // offsets removed: corrected alpha is perfect agreement
  CHECK(j["alpha_bias_corrected"].get<double>() == Catch::Approx(1.0).margin(1e-9));
  CHECK(j["alpha_bias_corrected"].get<double>() > j["krippendorff_alpha"].get<double>());
  REQUIRE(j.contains("icc"));
  CHECK(j["icc"]["icc_c1"].get<double>() == Catch::Approx(1.0).margin(1e-9));  // consistency
  REQUIRE(j.contains("per_criterion"));
  CHECK(j["per_criterion"].contains("Clarity"));
  CHECK(j["per_criterion"].contains("Accuracy"));
}

TEST_CASE("ingest subcommand chunks into the cache store", "[cli]") {
  TempDir tmp("edgebench-test-cli-ingest");
  MockOllamaServer server;
  server.set_embedding_dim(16);
  server.start();

  json cfg;
  cfg["server_url"] = server.base_url();
  cfg["router"] = {{"cache_dir", (tmp.path / "cache").string()},
                   {"small_model", "s"},
                   {"large_model", "l"}};
  write_file(tmp.path / "config.json", cfg.dump());
  write_file(tmp.path / "doc.txt", std::string(1000, 'x'));

  auto res = run_cli("ingest --config " + (tmp.path / "config.json").string() + " --files " +
                     (tmp.path / "doc.txt").string() + " --max-chars 400 --overlap 50");
  REQUIRE(res.exit_code == 0);
  CHECK(res.output.find("ingested 3 chunks") != std::string::npos);
  auto store = VectorStore::load(tmp.path / "cache");
  CHECK(store.count(CacheKind::doc_chunk) == 3);
  CHECK(store.dim() == 16);

  // second ingest extends the persisted store
  auto res2 = run_cli("ingest --config " + (tmp.path / "config.json").string() + " --files " +
                      (tmp.path / "doc.txt").string() + " --max-chars 400 --overlap 50");
  REQUIRE(res2.exit_code == 0);
  CHECK(VectorStore::load(tmp.path / "cache").size() == 6);
}

TEST_CASE("serve subcommand exposes route and stats endpoints", "[cli]") {
  TempDir tmp("edgebench-test-cli-serve");
  MockOllamaServer server;
  server.set_embedding_dim(16);
  server.add_model("small:latest", MockModelScript::fixed({"small says hi"}));
  server.add_model("large:latest", MockModelScript::fixed({"large says hi"}));
  server.start();

  json cfg;
  cfg["server_url"] = server.base_url();
  cfg["router"] = {{"cache_dir", (tmp.path / "cache").string()},
                   {"small_model", "small:latest"},
                   {"large_model", "large:latest"},
                   {"theta1", 0.9},
                   {"theta2", 0.6}};
  write_file(tmp.path / "config.json", cfg.dump());

  // pick a free port by binding and releasing one
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }

  pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    std::string config_arg = (tmp.path / "config.json").string();
    std::string port_arg = std::to_string(port);
    execl(EDGEBENCH_CLI_PATH, "edgebench", "serve", "--config", config_arg.c_str(), "--port",
          port_arg.c_str(), (char*)nullptr);
    _exit(127);
  }

  httplib::Client cli("http://127.0.0.1:" + std::to_string(port));
  cli.set_connection_timeout(1);
  bool up = false;
  for (int i = 0; i < 50 && !up; ++i) {
    auto ping = cli.Get("/v1/cache/stats");
    if (ping && ping->status == 200) up = true;
    else std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  REQUIRE(up);

  auto res = cli.Post("/v1/route", R"({"query":"how do magnets work"})", "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  auto body = json::parse(res->body);
  CHECK(body["tier"] == 3);  // empty cache
  CHECK(body["answer"] == "large says hi");

  auto res2 = cli.Post("/v1/route", R"({"query":"how do magnets work"})", "application/json");
  REQUIRE(res2);
  CHECK(json::parse(res2->body)["tier"] == 1);  // write-back made it an exact hit

  auto stats = cli.Get("/v1/cache/stats");
  REQUIRE(stats);
  CHECK(json::parse(stats->body)["qa_pairs"] == 1);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  // the write-back was persisted before shutdown
  CHECK(VectorStore::load(tmp.path / "cache").count(CacheKind::qa_pair) == 1);
}
