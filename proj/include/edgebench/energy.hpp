#pragma once

#include <atomic>
#include <cstdio>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "edgebench/domain.hpp"
#include "edgebench/util.hpp"

namespace edgebench {

struct EnergySample {
  double at = 0;        // monotonic seconds
  double cpu_load = 0;  // [0, 1]
  double voltage_v = 0;
};

struct EnergyTrace {
  std::vector<EnergySample> samples;  // time-ordered
  EnergyModelParams params;
  bool voltage_measured = false;  // false: nominal voltage was used throughout
};

// Linear current model: I = idle + (full - idle) * load.
inline double current_from_load(double load, const EnergyModelParams& params) {
  if (!(load >= 0.0 && load <= 1.0)) throw Error("cpu load out of [0,1]: " + std::to_string(load));
  if (!params.valid()) throw Error("invalid energy model params");
  return params.idle_current_a + (params.full_load_current_a - params.idle_current_a) * load;
}

// Trapezoidal integration of P(t) = V(t) * I(load(t)) over the sampled interval.
// Samples sharing a timestamp are collapsed to the first; at least two distinct
// timestamps are required.
inline double integrate_energy(const EnergyTrace& trace) {
  std::vector<const EnergySample*> pts;
  pts.reserve(trace.samples.size());
  for (const auto& s : trace.samples) {
    if (!pts.empty() && s.at == pts.back()->at) continue;
    if (!pts.empty() && s.at < pts.back()->at) throw Error("energy trace not time-ordered");
    pts.push_back(&s);
  }
  if (pts.size() < 2) throw Error("too-few-samples: energy integration needs >= 2 samples");
  double joules = 0;
  for (size_t i = 1; i < pts.size(); ++i) {
    const auto& a = *pts[i - 1];
    const auto& b = *pts[i];
    double pa = a.voltage_v * current_from_load(a.cpu_load, trace.params);
    double pb = b.voltage_v * current_from_load(b.cpu_load, trace.params);
    joules += 0.5 * (pa + pb) * (b.at - a.at);
  }
  return joules;
}

inline double tokens_per_joule(std::uint64_t chunk_count, double energy_j) {
  if (!(energy_j > 0)) throw Error("tokens_per_joule requires positive energy");
  return static_cast<double>(chunk_count) / energy_j;
}

// Relative uncertainty attached to every reported energy/TPJ figure.
inline constexpr double kEnergyUncertaintyFraction = 0.20;

// A source of instantaneous (load, voltage) readings. Sources timestamp their
// own samples: live sources use the monotonic clock, replay sources use the
// recorded timestamps.
class LoadVoltageSource {
 public:
  virtual ~LoadVoltageSource() = default;
  virtual bool available() = 0;
  virtual std::optional<EnergySample> read() = 0;
  virtual bool voltage_measured() const { return false; }
};

// Whole-system CPU load from /proc/stat deltas (1 - idle fraction over all
// cores between consecutive reads). Voltage from a vcgencmd-style probe when
// it works, else the nominal value.
class OsCountersSource : public LoadVoltageSource {
 public:
  explicit OsCountersSource(double nominal_voltage_v,
                            std::string voltage_probe_cmd = "vcgencmd measure_volts core")
      : nominal_voltage_v_(nominal_voltage_v), voltage_probe_cmd_(std::move(voltage_probe_cmd)) {
    read_counters(prev_total_, prev_idle_);
  }

  bool available() override {
    unsigned long long t = 0, i = 0;
    return read_counters(t, i);
  }

  std::optional<EnergySample> read() override {
    unsigned long long total = 0, idle = 0;
    if (!read_counters(total, idle)) return std::nullopt;
    double load = 0;
    if (total > prev_total_) {
      double didle = static_cast<double>(idle - prev_idle_);
      double dtotal = static_cast<double>(total - prev_total_);
      load = std::clamp(1.0 - didle / dtotal, 0.0, 1.0);
    }
    prev_total_ = total;
    prev_idle_ = idle;
    double v = probe_voltage();
    return EnergySample{now_monotonic(), load, v};
  }

  bool voltage_measured() const override { return voltage_probe_works_; }

 private:
  static bool read_counters(unsigned long long& total, unsigned long long& idle) {
    std::FILE* f = std::fopen("/proc/stat", "r");
    if (!f) return false;
    char tag[8];
    unsigned long long user = 0, nice = 0, system = 0, idl = 0, iowait = 0, irq = 0, softirq = 0,
                       steal = 0;
    int n = std::fscanf(f, "%7s %llu %llu %llu %llu %llu %llu %llu %llu", tag, &user, &nice,
                        &system, &idl, &iowait, &irq, &softirq, &steal);
    std::fclose(f);
    if (n < 5) return false;
    idle = idl + iowait;
    total = user + nice + system + idl + iowait + irq + softirq + steal;
    return true;
  }

  double probe_voltage() {
    if (!probe_attempted_) {
      probe_attempted_ = true;
      std::FILE* p = ::popen((voltage_probe_cmd_ + " 2>/dev/null").c_str(), "r");
      if (p) {
        char buf[64] = {0};
        if (std::fgets(buf, sizeof(buf), p)) {
          // vcgencmd prints "volt=0.8563V"
          double v = 0;
          if (std::sscanf(buf, "volt=%lfV", &v) == 1 && v > 0) {
            voltage_probe_works_ = true;
            last_voltage_ = v;
          }
        }
        ::pclose(p);
      }
    } else if (voltage_probe_works_) {
      std::FILE* p = ::popen((voltage_probe_cmd_ + " 2>/dev/null").c_str(), "r");
      if (p) {
        char buf[64] = {0};
        double v = 0;
        if (std::fgets(buf, sizeof(buf), p) && std::sscanf(buf, "volt=%lfV", &v) == 1 && v > 0)
          last_voltage_ = v;
        ::pclose(p);
      }
    }
    return voltage_probe_works_ ? last_voltage_ : nominal_voltage_v_;
  }

  double nominal_voltage_v_;
  std::string voltage_probe_cmd_;
  unsigned long long prev_total_ = 0, prev_idle_ = 0;
  bool probe_attempted_ = false;
  bool voltage_probe_works_ = false;
  double last_voltage_ = 0;
};

// Scripted load/voltage as functions of elapsed seconds. Used for tests and
// the end-to-end smoke path; also generates virtual-time traces directly.
class SyntheticSource : public LoadVoltageSource {
 public:
  SyntheticSource(std::function<double(double)> load_fn, std::function<double(double)> voltage_fn)
      : load_fn_(std::move(load_fn)), voltage_fn_(std::move(voltage_fn)) {}

  static SyntheticSource constant(double load, double voltage) {
    return SyntheticSource([load](double) { return load; }, [voltage](double) { return voltage; });
  }

  bool available() override { return true; }

  std::optional<EnergySample> read() override {
    double now = now_monotonic();
    if (t0_ < 0) t0_ = now;
    double t = now - t0_;
    return EnergySample{now, std::clamp(load_fn_(t), 0.0, 1.0), voltage_fn_(t)};
  }

  // Samples the script on a virtual time grid [0, duration] at `interval_s`
  // without sleeping. The final sample lands exactly on `duration`.
  EnergyTrace trace(double duration_s, double interval_s, const EnergyModelParams& params) const {
    EnergyTrace tr;
    tr.params = params;
    for (double t = 0;; t += interval_s) {
      if (t >= duration_s) {
        tr.samples.push_back({duration_s, std::clamp(load_fn_(duration_s), 0.0, 1.0),
                              voltage_fn_(duration_s)});
        break;
      }
      tr.samples.push_back({t, std::clamp(load_fn_(t), 0.0, 1.0), voltage_fn_(t)});
    }
    return tr;
  }

 private:
  std::function<double(double)> load_fn_;
  std::function<double(double)> voltage_fn_;
  double t0_ = -1;
};

// Replays a CSV of `at,cpu_load,voltage_v` rows. Sample timestamps come from
// the file, not the clock.
class FileReplaySource : public LoadVoltageSource {
 public:
  explicit FileReplaySource(const std::filesystem::path& csv_path) {
    auto rows = read_csv_file(csv_path);
    for (const auto& row : rows) {
      if (row.size() < 3) continue;
      if (row[0] == "at") continue;  // header
      rows_.push_back({std::stod(row[0]), std::stod(row[1]), std::stod(row[2])});
    }
  }

  bool available() override { return next_ < rows_.size(); }

  std::optional<EnergySample> read() override {
    if (next_ >= rows_.size()) return std::nullopt;
    return rows_[next_++];
  }

  bool voltage_measured() const override { return true; }

  EnergyTrace full_trace(const EnergyModelParams& params) const {
    return EnergyTrace{rows_, params, true};
  }

 private:
  std::vector<EnergySample> rows_;
  size_t next_ = 0;
};

inline constexpr int kMinSampleIntervalMs = 50;
inline constexpr int kDefaultSampleIntervalMs = 250;

// Collects samples from a source at ~interval on a background thread. The
// sampler owns the buffer during collection; callers read the trace only
// after stop(). An unavailable source degrades to an empty trace.
class EnergySampler {
 public:
  EnergySampler(std::shared_ptr<LoadVoltageSource> source, EnergyModelParams params,
                int interval_ms = kDefaultSampleIntervalMs)
      : source_(std::move(source)), params_(params), interval_ms_(interval_ms) {
    if (interval_ms_ < kMinSampleIntervalMs)
      throw Error("sampling interval below " + std::to_string(kMinSampleIntervalMs) + " ms");
  }

  ~EnergySampler() {
    if (running_.load()) stop();
  }

  void start() {
    if (running_.load()) throw Error("sampler already running");
    trace_ = EnergyTrace{{}, params_, false};
    if (!source_ || !source_->available()) return;  // degrade: no energy data
    running_.store(true);
    thread_ = std::thread([this] { loop(); });
  }

  EnergyTrace stop() {
    if (running_.load()) {
      running_.store(false);
      if (thread_.joinable()) thread_.join();
      // one final sample so short generations still bracket the interval
      append_sample();
    }
    trace_.voltage_measured = source_ && source_->voltage_measured();
    return trace_;
  }

 private:
  void loop() {
    append_sample();
    const auto slice = std::chrono::milliseconds(10);  // responsive stop
    auto next = std::chrono::steady_clock::now() + std::chrono::milliseconds(interval_ms_);
    while (running_.load()) {
      auto now = std::chrono::steady_clock::now();
      if (now >= next) {
        append_sample();
        next += std::chrono::milliseconds(interval_ms_);
        continue;
      }
      auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(next - now);
      std::this_thread::sleep_for(std::min(slice, wait));
    }
  }

  void append_sample() {
    auto s = source_->read();
    if (!s) return;
    if (!trace_.samples.empty() && s->at <= trace_.samples.back().at) return;
    trace_.samples.push_back(*s);
  }

  std::shared_ptr<LoadVoltageSource> source_;
  EnergyModelParams params_;
  int interval_ms_;
  std::atomic<bool> running_{false};
  std::thread thread_;
  EnergyTrace trace_;
};

}  // namespace edgebench
