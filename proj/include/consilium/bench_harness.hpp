#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "consilium/inference_backend.hpp"

namespace consilium {

class EgressGuard;

enum class NetworkState { Airplane, Stable };
std::string_view to_string(NetworkState state);
std::optional<NetworkState> parse_network_state(std::string_view text);

inline constexpr int kMinRepeats = 5;
inline constexpr int kMaxRepeats = 10;
inline constexpr std::size_t kMinPromptsPerCategory = 5;
inline constexpr int kMinRunsPerCell = 5;
inline constexpr std::chrono::milliseconds kSchedulingAllowance{50};

/// Quantile by linear interpolation between closest ranks: h = (n-1)p,
/// q = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]) over sorted x.
double quantile(std::span<const double> values, double p);

struct SampleStatistics {
    std::size_t count = 0;
    double median_ttfvr_s = 0.0;
    double q1_ttfvr_s = 0.0;
    double q3_ttfvr_s = 0.0;
    double iqr_ttfvr_s = 0.0;
    double median_throughput_tps = 0.0;
    double median_completion_s = 0.0;
    std::int64_t peak_memory_bytes = 0;
};

/// Throws EmptySamples. Samples without a first token are excluded from the TTFVR
/// statistics but still count toward throughput and completion time.
SampleStatistics aggregate(std::span<const TtfvrSample> samples);

/// tokens / (t_done - t0) in tokens per second; 0 when no time elapsed.
double throughput_tps(const TtfvrSample& sample);

struct PromptItem {
    std::string prompt_id;
    std::string text;
};

struct BenchConfig {
    std::vector<std::string> models;
    std::map<std::string, std::vector<PromptItem>> corpus;  // category -> prompts
    int repeats = kMinRepeats;
    NetworkState network_state = NetworkState::Airplane;
    int max_tokens = 256;
};

struct ReferenceBand {
    std::string label;
    double low_s = 0.0;
    double high_s = 0.0;
};

struct BenchCell {
    std::string model_id;
    std::string category;
    BackendKind backend_kind = BackendKind::Mock;
    SampleStatistics stats;
    int runs = 0;
    int failed_runs = 0;
    bool insufficient = false;
    std::optional<ReferenceBand> reference;
    std::optional<bool> in_reference_band;
};

struct BenchReport {
    std::vector<BenchCell> cells;
    std::string device_descriptor;
    NetworkState network_state = NetworkState::Airplane;
    std::vector<TtfvrSample> samples;
};

/// Samples process resident memory at a fixed rate on a background thread.
class MemorySampler {
  public:
    explicit MemorySampler(std::chrono::milliseconds period = std::chrono::milliseconds(100));
    ~MemorySampler();
    MemorySampler(const MemorySampler&) = delete;
    MemorySampler& operator=(const MemorySampler&) = delete;

    [[nodiscard]] std::int64_t peak_bytes() const;
    void reset();

  private:
    struct State;
    std::unique_ptr<State> state_;
};

std::int64_t current_rss_bytes();
std::string describe_device();

/// Runs every (model, prompt) pair `repeats` times. On-device rows require the
/// airplane state, which installs the private policy on `guard` for the run;
/// network rows require the stable state.
BenchReport run_benchmark(const BenchConfig& config, BackendHub& hub, EgressGuard& guard);

/// Non-normative annotation with the demo-observed reference bands.
BenchReport compare_against_reference(BenchReport report);

std::string report_to_json(const BenchReport& report);
std::string report_to_table(const BenchReport& report);

}  // namespace consilium
