#include "consilium/bench_harness.hpp"

#include <sys/utsname.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "consilium/egress_guard.hpp"
#include "consilium/error.hpp"

namespace consilium {

namespace {

double ns_to_s(MonotonicNs ns) { return static_cast<double>(ns) / 1e9; }

double median_of(std::vector<double> v) { return quantile(v, 0.5); }

// Restores the broker policy that was active before an airplane-state run.
class PolicyScope {
  public:
    PolicyScope(EgressGuard& guard, Mode mode) : guard_(guard), saved_(guard.policy()) { guard_.install_policy(mode); }
    ~PolicyScope() { guard_.install_policy(saved_); }
    PolicyScope(const PolicyScope&) = delete;
    PolicyScope& operator=(const PolicyScope&) = delete;

  private:
    EgressGuard& guard_;
    EgressPolicy saved_;
};

}  // namespace

std::string_view to_string(NetworkState state) { return state == NetworkState::Airplane ? "airplane" : "stable"; }

std::optional<NetworkState> parse_network_state(std::string_view text) {
    if (text == "airplane") return NetworkState::Airplane;
    if (text == "stable") return NetworkState::Stable;
    return std::nullopt;
}

double quantile(std::span<const double> values, double p) {
    if (values.empty()) throw Error(ErrorCode::EmptySamples, "quantile of an empty sample");
    std::vector<double> x(values.begin(), values.end());
    std::sort(x.begin(), x.end());
    p = std::clamp(p, 0.0, 1.0);
    const double h = static_cast<double>(x.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= x.size()) return x[lo];
    return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

double throughput_tps(const TtfvrSample& s) {
    const auto elapsed = s.t_done - s.t0;
    if (elapsed <= 0) return 0.0;
    return static_cast<double>(s.token_count) / ns_to_s(elapsed);
}

SampleStatistics aggregate(std::span<const TtfvrSample> samples) {
    if (samples.empty()) throw Error(ErrorCode::EmptySamples, "no samples to aggregate");
    SampleStatistics st;
    st.count = samples.size();
    std::vector<double> ttfvr, tps, completion;
    for (const auto& s : samples) {
        if (s.has_first_token) ttfvr.push_back(ns_to_s(s.ttfvr_ns()));
        tps.push_back(throughput_tps(s));
        completion.push_back(ns_to_s(s.t_done - s.t0));
        st.peak_memory_bytes = std::max(st.peak_memory_bytes, s.peak_memory_bytes);
    }
    if (!ttfvr.empty()) {
        st.median_ttfvr_s = quantile(ttfvr, 0.5);
        st.q1_ttfvr_s = quantile(ttfvr, 0.25);
        st.q3_ttfvr_s = quantile(ttfvr, 0.75);
        st.iqr_ttfvr_s = st.q3_ttfvr_s - st.q1_ttfvr_s;
    }
    st.median_throughput_tps = median_of(tps);
    st.median_completion_s = median_of(completion);
    return st;
}

std::int64_t current_rss_bytes() {
    std::ifstream in("/proc/self/statm");
    long pages_total = 0, pages_resident = 0;
    if (!(in >> pages_total >> pages_resident)) return 0;
    return static_cast<std::int64_t>(pages_resident) * sysconf(_SC_PAGESIZE);
}

std::string describe_device() {
    std::string cpu = "unknown cpu";
    std::ifstream info("/proc/cpuinfo");
    for (std::string line; std::getline(info, line);) {
        if (line.rfind("model name", 0) == 0) {
            cpu = line.substr(line.find(':') + 2);
            break;
        }
    }
    std::string mem = "unknown memory";
    std::ifstream meminfo("/proc/meminfo");
    for (std::string line; std::getline(meminfo, line);) {
        if (line.rfind("MemTotal:", 0) == 0) {
            std::istringstream ss(line.substr(9));
            long kb = 0;
            ss >> kb;
            std::ostringstream out;
            out << std::fixed << std::setprecision(1) << static_cast<double>(kb) / (1024.0 * 1024.0) << " GiB";
            mem = out.str();
            break;
        }
    }
    utsname u{};
    std::string os = "unknown os";
    if (uname(&u) == 0) os = std::string(u.sysname) + " " + u.release + " " + u.machine;
    return cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " threads; " + mem + "; " + os;
}

struct MemorySampler::State {
    std::mutex mutex;
    std::condition_variable cv;
    bool stop = false;
    std::atomic<std::int64_t> peak{0};
    std::thread worker;
};

MemorySampler::MemorySampler(std::chrono::milliseconds period) : state_(std::make_unique<State>()) {
    state_->peak = current_rss_bytes();
    state_->worker = std::thread([s = state_.get(), period] {
        std::unique_lock lock(s->mutex);
        while (!s->stop) {
            const auto rss = current_rss_bytes();
            auto prev = s->peak.load();
            while (rss > prev && !s->peak.compare_exchange_weak(prev, rss)) {
            }
            s->cv.wait_for(lock, period, [s] { return s->stop; });
        }
    });
}

MemorySampler::~MemorySampler() {
    {
        std::lock_guard lock(state_->mutex);
        state_->stop = true;
    }
    state_->cv.notify_all();
    state_->worker.join();
}

std::int64_t MemorySampler::peak_bytes() const {
    return std::max(state_->peak.load(), current_rss_bytes());
}

void MemorySampler::reset() { state_->peak = current_rss_bytes(); }

BenchReport run_benchmark(const BenchConfig& config, BackendHub& hub, EgressGuard& guard) {
    if (config.repeats < kMinRepeats || config.repeats > kMaxRepeats)
        throw Error(ErrorCode::InvalidRepeats, "repeats must be between " + std::to_string(kMinRepeats) + " and " +
                                                   std::to_string(kMaxRepeats) + ", got " + std::to_string(config.repeats));
    if (config.corpus.empty()) throw Error(ErrorCode::CorpusTooSmall, "the prompt corpus is empty");
    for (const auto& [category, prompts] : config.corpus)
        if (prompts.size() < kMinPromptsPerCategory)
            throw Error(ErrorCode::CorpusTooSmall, "category '" + category + "' has " + std::to_string(prompts.size()) +
                                                       " prompts, at least " + std::to_string(kMinPromptsPerCategory) +
                                                       " are required");
    if (config.models.empty()) throw Error(ErrorCode::EmptyEnsemble, "no models to benchmark");

    bool any_local = false, any_network = false;
    for (const auto& id : config.models) {
        if (!hub.contains(id)) throw Error(ErrorCode::UnknownModel, "model '" + id + "' is not bound");
        (hub.get(id)->descriptor().requires_network ? any_network : any_local) = true;
    }
    if (any_local && config.network_state != NetworkState::Airplane)
        throw Error(ErrorCode::NetworkStateViolation, "on-device rows must run in the airplane state");
    if (any_network && config.network_state != NetworkState::Stable)
        throw Error(ErrorCode::NetworkStateViolation, "network rows must run in the stable state");

    std::optional<PolicyScope> airplane;
    if (config.network_state == NetworkState::Airplane) airplane.emplace(guard, Mode::PrivateAi);

    BenchReport report;
    report.device_descriptor = describe_device();
    report.network_state = config.network_state;
    MemorySampler sampler;
    for (const auto& model : config.models) {
        auto backend = hub.get(model);
        for (const auto& [category, prompts] : config.corpus) {
            BenchCell cell;
            cell.model_id = model;
            cell.category = category;
            cell.backend_kind = backend->descriptor().backend_kind;
            std::vector<TtfvrSample> samples;
            for (const auto& prompt : prompts) {
                for (int run = 0; run < config.repeats; ++run) {
                    InferenceRequest req;
                    req.model_id = model;
                    req.prompt_text = prompt.text;
                    req.max_tokens = config.max_tokens;
                    req.request_id = "bench/" + model + "/" + prompt.prompt_id + "/" + std::to_string(run);
                    sampler.reset();
                    try {
                        auto stream = backend->generate_stream(req);
                        auto s = sample_from_stream(stream, model, prompt.prompt_id, run);
                        s.peak_memory_bytes = sampler.peak_bytes();
                        samples.push_back(s);
                    } catch (const Error&) {
                        ++cell.failed_runs;
                    }
                }
            }
            cell.runs = static_cast<int>(samples.size());
            cell.insufficient = cell.runs < kMinRunsPerCell;
            if (!samples.empty()) cell.stats = aggregate(samples);
            report.samples.insert(report.samples.end(), samples.begin(), samples.end());
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

BenchReport compare_against_reference(BenchReport report) {
    for (auto& cell : report.cells) {
        std::optional<ReferenceBand> band;
        if (cell.model_id == "gemma-fast")
            band = ReferenceBand{"gemma-fast on-device demo (non-normative)", 7.5, 8.0};
        else if (cell.backend_kind == BackendKind::CloudStub)
            band = ReferenceBand{"cloud baseline demo (non-normative)", 2.5, 3.0};
        if (!band) continue;
        cell.reference = band;
        cell.in_reference_band = cell.insufficient ? std::nullopt
                                                   : std::optional<bool>(cell.stats.median_ttfvr_s >= band->low_s &&
                                                                         cell.stats.median_ttfvr_s <= band->high_s);
    }
    return report;
}

std::string report_to_json(const BenchReport& report) {
    nlohmann::ordered_json j;
    j["device"] = report.device_descriptor;
    j["network_state"] = to_string(report.network_state);
    j["quantile_rule"] = "linear interpolation between closest ranks, h = (n-1)p";
    auto& cells = j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : report.cells) {
        nlohmann::ordered_json cj;
        cj["model_id"] = c.model_id;
        cj["category"] = c.category;
        cj["backend_kind"] = to_string(c.backend_kind);
        cj["runs"] = c.runs;
        cj["failed_runs"] = c.failed_runs;
        cj["insufficient"] = c.insufficient;
        cj["median_ttfvr_s"] = c.stats.median_ttfvr_s;
        cj["q1_ttfvr_s"] = c.stats.q1_ttfvr_s;
        cj["q3_ttfvr_s"] = c.stats.q3_ttfvr_s;
        cj["iqr_ttfvr_s"] = c.stats.iqr_ttfvr_s;
        cj["median_throughput_tps"] = c.stats.median_throughput_tps;
        cj["median_completion_s"] = c.stats.median_completion_s;
        cj["peak_memory_bytes"] = c.stats.peak_memory_bytes;
        if (c.reference) {
            cj["reference"] = {{"label", c.reference->label}, {"low_s", c.reference->low_s}, {"high_s", c.reference->high_s}};
            cj["in_reference_band"] = c.in_reference_band ? nlohmann::ordered_json(*c.in_reference_band) : nullptr;
        }
        cells.push_back(std::move(cj));
    }
    return j.dump(2);
}

std::string report_to_table(const BenchReport& report) {
    std::ostringstream out;
    out << "device: " << report.device_descriptor << "\n";
    out << "network state: " << to_string(report.network_state) << "\n\n";
    out << std::left << std::setw(16) << "model" << std::setw(14) << "category" << std::right << std::setw(6) << "runs"
        << std::setw(12) << "ttfvr_med" << std::setw(10) << "iqr" << std::setw(10) << "tok/s" << std::setw(12)
        << "complete_s" << std::setw(12) << "peak_MiB" << "  reference\n";
    out << std::fixed << std::setprecision(3);
    for (const auto& c : report.cells) {
        out << std::left << std::setw(16) << c.model_id << std::setw(14) << c.category << std::right << std::setw(6)
            << c.runs << std::setw(12) << c.stats.median_ttfvr_s << std::setw(10) << c.stats.iqr_ttfvr_s
            << std::setw(10) << std::setprecision(1) << c.stats.median_throughput_tps << std::setprecision(3)
            << std::setw(12) << c.stats.median_completion_s << std::setw(12) << std::setprecision(1)
            << static_cast<double>(c.stats.peak_memory_bytes) / (1024.0 * 1024.0) << std::setprecision(3);
        if (c.insufficient) out << "  insufficient runs";
        if (c.reference) {
            out << "  " << c.reference->low_s << "-" << c.reference->high_s << " s ";
            if (c.in_reference_band) out << (*c.in_reference_band ? "in band" : "out of band");
            out << " (non-normative)";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace consilium
