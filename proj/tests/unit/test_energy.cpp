#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <numeric>
#include <random>
#include <thread>

#include "edgebench/energy.hpp"

using namespace edgebench;

namespace {

const EnergyModelParams kRpi4{0.6, 3.0, 5.0};

// Independent trapezoid oracle: builds the power series first, then sums
// interval areas. Kept separate from the implementation path on purpose.
double oracle_energy(const EnergyTrace& tr) {
  std::vector<double> power;
  std::vector<double> at;
  for (const auto& s : tr.samples) {
    if (!at.empty() && s.at == at.back()) continue;
    double current = tr.params.idle_current_a +
                     (tr.params.full_load_current_a - tr.params.idle_current_a) * s.cpu_load;
    power.push_back(s.voltage_v * current);
    at.push_back(s.at);
  }
  double e = 0;
  for (size_t i = 1; i < power.size(); ++i)
    e += (power[i] + power[i - 1]) / 2.0 * (at[i] - at[i - 1]);
  return e;
}

EnergyTrace random_trace(std::mt19937& rng, size_t n_samples) {
  std::uniform_real_distribution<double> load(0.0, 1.0);
  std::uniform_real_distribution<double> gap(0.01, 2.0);
  EnergyTrace tr;
  tr.params = kRpi4;
  double t = 0;
  for (size_t i = 0; i < n_samples; ++i) {
    t += gap(rng);
    tr.samples.push_back({t, load(rng), 5.0});
  }
  return tr;
}

}  // namespace

TEST_CASE("current model endpoints match calibration", "[energy]") {
  CHECK(current_from_load(0.0, kRpi4) == 0.6);
  CHECK(current_from_load(1.0, kRpi4) == 3.0);
  CHECK(current_from_load(0.5, kRpi4) == Catch::Approx(1.8).epsilon(1e-12));
}

TEST_CASE("current model is affine in load", "[energy]") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    double x = u(rng), y = u(rng), a = u(rng);
    double lhs = current_from_load(a * x + (1 - a) * y, kRpi4);
    double rhs = a * current_from_load(x, kRpi4) + (1 - a) * current_from_load(y, kRpi4);
    CHECK(lhs == Catch::Approx(rhs).margin(1e-12));
  }
  CHECK_THROWS_AS(current_from_load(-0.01, kRpi4), Error);
  CHECK_THROWS_AS(current_from_load(1.01, kRpi4), Error);
}

TEST_CASE("constant half load integrates to 90 J over 10 s", "[energy]") {
  EnergyTrace tr{{{0.0, 0.5, 5.0}, {10.0, 0.5, 5.0}}, kRpi4};
  CHECK(integrate_energy(tr) == Catch::Approx(90.0).margin(1e-9));
}

TEST_CASE("idle energy is 30 J over 10 s", "[energy]") {
  EnergyTrace tr{{{0.0, 0.0, 5.0}, {10.0, 0.0, 5.0}}, kRpi4};
  CHECK(integrate_energy(tr) == Catch::Approx(30.0).margin(1e-9));
}

TEST_CASE("equal timestamps collapse, leaving too few samples", "[energy]") {
  EnergyTrace tr{{{1.0, 0.5, 5.0}, {1.0, 0.7, 5.0}}, kRpi4};
  CHECK_THROWS_WITH(integrate_energy(tr), Catch::Matchers::ContainsSubstring("too-few-samples"));
  EnergyTrace unordered{{{2.0, 0.5, 5.0}, {1.0, 0.5, 5.0}}, kRpi4};
  CHECK_THROWS_AS(integrate_energy(unordered), Error);
}

TEST_CASE("integration matches independent trapezoid oracle", "[energy]") {
  std::mt19937 rng(23);
  for (int i = 0; i < 50; ++i) {
    auto tr = random_trace(rng, 2 + i % 40);
    CHECK(integrate_energy(tr) == Catch::Approx(oracle_energy(tr)).epsilon(1e-12));
  }
}

TEST_CASE("energy bounded by idle and full-load power", "[energy]") {
  std::mt19937 rng(31);
  for (int i = 0; i < 30; ++i) {
    auto tr = random_trace(rng, 5 + i);
    double duration = tr.samples.back().at - tr.samples.front().at;
    double e = integrate_energy(tr);
    CHECK(e >= 0.6 * 5.0 * duration - 1e-9);
    CHECK(e <= 3.0 * 5.0 * duration + 1e-9);
  }
}

TEST_CASE("split at interior sample is additive", "[energy]") {
  std::mt19937 rng(47);
  std::uniform_int_distribution<size_t> cut_d(1, 8);
  for (int i = 0; i < 30; ++i) {
    auto tr = random_trace(rng, 10);
    size_t cut = cut_d(rng);
    EnergyTrace left{std::vector<EnergySample>(tr.samples.begin(), tr.samples.begin() + cut + 1),
                     tr.params};
    EnergyTrace right{std::vector<EnergySample>(tr.samples.begin() + cut, tr.samples.end()),
                      tr.params};
    double whole = integrate_energy(tr);
    double parts = integrate_energy(left) + integrate_energy(right);
    CHECK(std::abs(whole - parts) <= 1e-9 * std::max(1.0, std::abs(whole)));
  }
}

TEST_CASE("tokens per joule", "[energy]") {
  CHECK(tokens_per_joule(90, 100.0) == Catch::Approx(0.9));
  CHECK(tokens_per_joule(0, 50.0) == 0.0);
  CHECK_THROWS_AS(tokens_per_joule(10, 0.0), Error);
  CHECK_THROWS_AS(tokens_per_joule(10, -5.0), Error);
}

TEST_CASE("tpj ranking invariant under current-model scaling", "[energy]") {
  std::mt19937 rng(59);
  std::vector<EnergyTrace> traces;
  std::vector<std::uint64_t> chunks;
  std::uniform_int_distribution<std::uint64_t> c(10, 400);
  for (int i = 0; i < 12; ++i) {
    traces.push_back(random_trace(rng, 8));
    chunks.push_back(c(rng));
  }
  const double scale = 2.7;
  EnergyModelParams scaled{kRpi4.idle_current_a * scale, kRpi4.full_load_current_a * scale,
                           kRpi4.nominal_voltage_v};
  auto rank = [&](const EnergyModelParams& params) {
    std::vector<double> tpj;
    for (size_t i = 0; i < traces.size(); ++i) {
      EnergyTrace tr = traces[i];
      tr.params = params;
      tpj.push_back(tokens_per_joule(chunks[i], integrate_energy(tr)));
    }
    std::vector<size_t> order(tpj.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return tpj[a] > tpj[b]; });
    return order;
  };
  CHECK(rank(kRpi4) == rank(scaled));
}

TEST_CASE("synthetic ramp matches closed form within 2 percent", "[energy]") {
  // load(t) = t/T over [0, T]: E = V * (idle*T + (full-idle)*T/2) = 90 J
  const double T = 10.0;
  SyntheticSource src([T](double t) { return t / T; }, [](double) { return 5.0; });
  auto tr = src.trace(T, 0.25, kRpi4);
  double e = integrate_energy(tr);
  CHECK(e == Catch::Approx(90.0).epsilon(0.02));
  CHECK(e == Catch::Approx(oracle_energy(tr)).epsilon(1e-12));
}

TEST_CASE("sampler interval precondition", "[energy]") {
  auto src = std::make_shared<SyntheticSource>(SyntheticSource::constant(0.5, 5.0));
  CHECK_THROWS_AS(EnergySampler(src, kRpi4, 10), Error);
}

TEST_CASE("sampler collects an increasing trace", "[energy]") {
  auto src = std::make_shared<SyntheticSource>(SyntheticSource::constant(0.5, 5.0));
  EnergySampler sampler(src, kRpi4, 50);
  sampler.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(180));
  auto tr = sampler.stop();
  REQUIRE(tr.samples.size() >= 2);
  for (size_t i = 1; i < tr.samples.size(); ++i)
    CHECK(tr.samples[i].at > tr.samples[i - 1].at);
  double e = integrate_energy(tr);
  double duration = tr.samples.back().at - tr.samples.front().at;
  CHECK(e == Catch::Approx(9.0 * duration).epsilon(1e-6));
}

TEST_CASE("unavailable source degrades to empty trace", "[energy]") {
  struct Unavailable : LoadVoltageSource {
    bool available() override { return false; }
    std::optional<EnergySample> read() override { return std::nullopt; }
  };
  EnergySampler sampler(std::make_shared<Unavailable>(), kRpi4, 50);
  sampler.start();
  auto tr = sampler.stop();
  CHECK(tr.samples.empty());
}

TEST_CASE("file replay source reproduces csv rows", "[energy]") {
  auto dir = std::filesystem::temp_directory_path() / "edgebench-test-energy";
  std::filesystem::create_directories(dir);
  auto path = dir / "trace.csv";
  write_file(path, "at,cpu_load,voltage_v\n0.0,0.5,5.0\n10.0,0.5,5.0\n");
  FileReplaySource src(path);
  auto tr = src.full_trace(kRpi4);
  REQUIRE(tr.samples.size() == 2);
  CHECK(integrate_energy(tr) == Catch::Approx(90.0));
  CHECK(src.read().has_value());
  CHECK(src.read().has_value());
  CHECK_FALSE(src.read().has_value());
  std::filesystem::remove_all(dir);
}
