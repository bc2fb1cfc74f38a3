#include <catch2/catch_amalgamated.hpp>

#include "edgebench/client.hpp"
#include "edgebench/mock_server.hpp"

using namespace edgebench;

namespace {

struct ServerFixture {
  MockOllamaServer server;
  ServerFixture() { server.start(); }
  OllamaClient client() { return OllamaClient(server.base_url(), 10); }
};

std::vector<std::string> repeated_chunks(size_t n, const std::string& text = "tok ") {
  return std::vector<std::string>(n, text);
}

}  // namespace

TEST_CASE("scripted stream yields chunks then done", "[client]") {
  ServerFixture fx;
  fx.server.add_model("fast", MockModelScript::fixed(repeated_chunks(10), 0, 100));
  auto events = fx.client().generate_stream({"fast", "hello"});
  REQUIRE(events.size() == 11);
  for (size_t i = 0; i < 10; ++i) CHECK(events[i].kind == StreamEventKind::chunk);
  CHECK(events.back().kind == StreamEventKind::done);
  // 10 chunks, 100 ms between consecutive ones => ~0.9 s first-to-last
  double spread = events[9].at - events[0].at;
  CHECK(spread > 0.7);
  CHECK(spread < 1.3);
  for (size_t i = 1; i < events.size(); ++i) CHECK(events[i].at >= events[i - 1].at);
}

TEST_CASE("empty prompt is rejected before any request", "[client]") {
  ServerFixture fx;
  fx.server.add_model("fast", MockModelScript::fixed(repeated_chunks(2)));
  CHECK_THROWS_AS(fx.client().generate_stream({"fast", ""}), std::invalid_argument);
  CHECK(fx.server.generation_calls("fast") == 0);
  CHECK_THROWS_AS(fx.client().generate_stream({"", "hi"}), std::invalid_argument);
}

TEST_CASE("unknown model surfaces as error terminal event", "[client]") {
  ServerFixture fx;
  auto events = fx.client().generate_stream({"nope", "hi"});
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == StreamEventKind::error);
  CHECK(events[0].error_cause == "unknown-model");
}

TEST_CASE("server down surfaces as connect failure", "[client]") {
  OllamaClient client("http://127.0.0.1:9", 2);  // discard port, nothing listens
  auto events = client.generate_stream({"m", "hi"});
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == StreamEventKind::error);
  CHECK(events[0].error_cause == "connect-failure");
}

TEST_CASE("mid-stream disconnect is reported with partial chunks", "[client]") {
  ServerFixture fx;
  auto script = MockModelScript::fixed(repeated_chunks(10));
  script.abort_after_chunks = 3;
  fx.server.add_model("flaky", script);
  auto events = fx.client().generate_stream({"flaky", "hi"});
  REQUIRE(events.size() >= 2);
  size_t chunk_count = 0;
  for (const auto& ev : events)
    if (ev.kind == StreamEventKind::chunk) ++chunk_count;
  CHECK(chunk_count == 3);
  CHECK(events.back().kind == StreamEventKind::error);
  CHECK(events.back().error_cause == "stream-interrupted");
}

TEST_CASE("embedding is deterministic and keyed by text", "[client]") {
  ServerFixture fx;
  fx.server.set_embedding_dim(16);
  auto client = fx.client();
  auto a1 = client.embed("gravity pulls things down", "embed-model");
  auto a2 = client.embed("gravity pulls things down", "embed-model");
  CHECK(a1.values == a2.values);
  CHECK(a1.dim() == 16);
  CHECK(a1.values == MockOllamaServer::scripted_embedding("gravity pulls things down", 16));

  // pick a second text whose keyed-hash basis index differs
  std::string other = "how do planes fly";
  REQUIRE(MockOllamaServer::scripted_embedding(other, 16) !=
          MockOllamaServer::scripted_embedding("gravity pulls things down", 16));
  auto b = client.embed(other, "embed-model");
  CHECK(b.values != a1.values);
}

TEST_CASE("embed rejects empty text and reports dim mismatch", "[client]") {
  ServerFixture fx;
  auto client = fx.client();
  CHECK_THROWS_AS(client.embed("", "embed-model"), std::invalid_argument);
  fx.server.set_embedding_dim(16);
  client.embed("first call pins dim", "embed-model");
  fx.server.set_embedding_dim(8);  // simulate misconfigured server
  CHECK_THROWS_WITH(client.embed("second call sees new dim", "embed-model"),
                    Catch::Matchers::ContainsSubstring("dim-mismatch"));
}

TEST_CASE("measure_query computes ttft and tps from the stream", "[client]") {
  ServerFixture fx;
  auto script = MockModelScript::fixed(repeated_chunks(20), 100, 20);
  script.report_eval_count = 21;
  fx.server.add_model("timed", script);
  auto rec = fx.client().measure_query({"timed", "q"}, {"m", "p", "q1", "s1", "", false});

  CHECK(rec.chunk_count == 20);
  CHECK_FALSE(rec.aborted);
  REQUIRE(rec.ttft_s);
  REQUIRE(rec.tps);
  CHECK(*rec.ttft_s == Catch::Approx(0.1).margin(0.05));
  const double duration = rec.finished_at - rec.started_at;
  CHECK(*rec.tps == static_cast<double>(rec.chunk_count) / duration);  // exact arithmetic
  // scripted rate: 20 chunks over ~0.1 + 19*0.02 s, done follows immediately
  CHECK(*rec.tps == Catch::Approx(20.0 / 0.48).epsilon(0.10));
  CHECK(*rec.ttft_s <= duration);
  REQUIRE(rec.server_token_count);
  CHECK(*rec.server_token_count == 21);  // stored, never used for tps
  CHECK(validate_record(rec).empty());
}

TEST_CASE("zero-chunk response yields a degenerate but valid record", "[client]") {
  ServerFixture fx;
  fx.server.add_model("mute", MockModelScript::fixed({}));
  auto rec = fx.client().measure_query({"mute", "q"}, {"m", "p", "q1", "s1", "", false});
  CHECK(rec.chunk_count == 0);
  CHECK_FALSE(rec.tps);
  CHECK_FALSE(rec.ttft_s);
  CHECK_FALSE(rec.first_chunk_at);
  CHECK(validate_record(rec).empty());
}

TEST_CASE("aborted stream still yields a record with partial metrics", "[client]") {
  ServerFixture fx;
  auto script = MockModelScript::fixed(repeated_chunks(6), 0, 10);
  script.abort_after_chunks = 2;
  fx.server.add_model("flaky", script);
  auto rec = fx.client().measure_query({"flaky", "q"}, {"m", "p", "q1", "s1", "", false});
  CHECK(rec.aborted);
  REQUIRE(rec.error);
  CHECK(rec.chunk_count == 2);
  CHECK(rec.first_chunk_at);
}

TEST_CASE("measure_query integrates sampler energy into the record", "[client]") {
  ServerFixture fx;
  fx.server.add_model("timed", MockModelScript::fixed(repeated_chunks(12), 50, 40));
  EnergyModelParams params{0.6, 3.0, 5.0};
  auto source = std::make_shared<SyntheticSource>(SyntheticSource::constant(0.5, 5.0));
  EnergySampler sampler(source, params, 50);
  auto rec =
      fx.client().measure_query({"timed", "q"}, {"m", "p", "q1", "s1", "", false}, &sampler);
  REQUIRE(rec.energy_j);
  REQUIRE(rec.tpj);
  CHECK(*rec.tpj == static_cast<double>(rec.chunk_count) / *rec.energy_j);
  // constant half load at 5 V is 9 W; sampled window ~ the generation window
  const double duration = rec.finished_at - rec.started_at;
  CHECK(*rec.energy_j == Catch::Approx(9.0 * duration).epsilon(0.5));
  REQUIRE(rec.voltage_source);
  CHECK(*rec.voltage_source == "nominal");
  CHECK(validate_record(rec).empty());
}

TEST_CASE("chat stream mirrors generate semantics", "[client]") {
  ServerFixture fx;
  fx.server.add_model("chatty", MockModelScript::fixed({"hel", "lo"}));
  auto events = fx.client().chat_stream("chatty", {{"user", "hi"}});
  REQUIRE(events.size() == 3);
  CHECK(events[0].text == "hel");
  CHECK(events[1].text == "lo");
  CHECK(events.back().kind == StreamEventKind::done);
}
