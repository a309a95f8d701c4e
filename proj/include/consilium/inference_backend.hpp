#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "consilium/model_registry.hpp"

namespace consilium {

class EgressGuard;

using MonotonicNs = std::int64_t;

/// Monotonic clock reading in nanoseconds; the time base of every stream timestamp.
MonotonicNs monotonic_now_ns();

inline constexpr std::chrono::seconds kDefaultGenerationTimeout{120};

struct InferenceRequest {
    std::string model_id;
    std::string prompt_text;
    int max_tokens = 1024;
    double temperature = 0.0;
    std::vector<std::string> stop_sequences;
    std::string request_id;
    std::chrono::milliseconds timeout = kDefaultGenerationTimeout;
};

/// Throws InvalidRequest on empty prompt, non-positive max_tokens or negative temperature.
void validate_request(const InferenceRequest& request);

enum class StreamEventKind { FirstToken, Token, Done, BackendError };
std::string_view to_string(StreamEventKind kind);

struct StreamEvent {
    StreamEventKind kind = StreamEventKind::Done;
    std::string token_text;
    MonotonicNs timestamp = 0;
};

/// A completed stream. `dispatched_at` is T0, taken at generate_stream entry.
struct StreamResult {
    MonotonicNs dispatched_at = 0;
    std::vector<StreamEvent> events;

    [[nodiscard]] std::string text() const;
    [[nodiscard]] std::optional<MonotonicNs> first_token_at() const;
    [[nodiscard]] std::optional<MonotonicNs> done_at() const;
    [[nodiscard]] std::size_t token_count() const;
};

/// One timed inference run.
struct TtfvrSample {
    std::string model_id;
    std::string prompt_id;
    int run_index = 0;
    MonotonicNs t0 = 0;
    MonotonicNs t1 = 0;
    MonotonicNs t_done = 0;
    std::int64_t token_count = 0;
    std::int64_t peak_memory_bytes = 0;
    bool has_first_token = false;

    [[nodiscard]] MonotonicNs ttfvr_ns() const { return t1 - t0; }
};

TtfvrSample sample_from_stream(const StreamResult& stream, std::string model_id,
                               std::string prompt_id = {}, int run_index = 0);

/// Checks first_token-before-token, done-terminal and monotone timestamps.
bool stream_is_well_ordered(const StreamResult& stream);

enum class BackendKind { LocalGgufRuntime, LocalOnnxRuntime, Mock, CloudStub, ByokStub };
std::string_view to_string(BackendKind kind);

struct BackendDescriptor {
    BackendKind backend_kind = BackendKind::Mock;
    bool supports_parallel_slots = true;
    bool requires_network = false;
};

using StreamSink = std::function<void(const StreamEvent&)>;

/// Streaming inference over one model runtime. Implementations emit
/// first_token ... done on success, or end with backend_error and throw.
class InferenceBackend {
  public:
    virtual ~InferenceBackend() = default;
    [[nodiscard]] virtual BackendDescriptor descriptor() const = 0;
    virtual StreamResult generate_stream(const InferenceRequest& request,
                                         const StreamSink& sink = {}) = 0;
};

/// One scripted reply of the mock backend.
struct MockScriptEntry {
    std::string prompt_matcher;  // substring of the prompt; empty matches anything
    std::string response_text;
    std::chrono::milliseconds first_token_delay{0};
    bool malformed = false;
    std::chrono::milliseconds inter_token_delay{0};
    int max_uses = 0;          // 0 = unlimited; otherwise the entry retires after this many matches
    bool unavailable = false;  // throw BackendUnavailable instead of replying
};

using MockScript = std::vector<MockScriptEntry>;

/// Text the mock emits for a malformed entry: never contains a JSON object.
std::string malformed_rendering(std::string_view response_text);

/// Splits text into stream tokens: each token is a run of non-space characters
/// plus the whitespace that follows it. Concatenation reproduces the input.
std::vector<std::string> split_stream_tokens(std::string_view text);

/// Deterministic scripted backend. Safe for concurrent generate_stream calls.
class MockBackend final : public InferenceBackend {
  public:
    explicit MockBackend(MockScript script = {}, bool supports_parallel_slots = true);

    [[nodiscard]] BackendDescriptor descriptor() const override;
    StreamResult generate_stream(const InferenceRequest& request,
                                 const StreamSink& sink = {}) override;

    void set_script(MockScript script);
    [[nodiscard]] int invocation_count() const;

  private:
    mutable std::mutex mutex_;
    MockScript script_;
    std::vector<int> uses_;
    int invocations_ = 0;
    bool parallel_;
};

/// Runtime adapter seam for on-device engines (llama.cpp, ONNX Runtime, ...).
/// Without an attached engine every call reports BackendUnavailable.
class LocalRuntimeBackend final : public InferenceBackend {
  public:
    struct Config {
        BackendKind kind = BackendKind::LocalGgufRuntime;
        std::filesystem::path weight_path;
        int thread_count = 4;
        int context_window = 4096;
        bool supports_parallel_slots = false;
    };
    /// Token callback returns false to stop generation early.
    using Engine = std::function<void(const InferenceRequest&, const Config&,
                                      const std::function<bool(std::string_view)>& on_token)>;

    explicit LocalRuntimeBackend(Config config, Engine engine = {});

    [[nodiscard]] BackendDescriptor descriptor() const override;
    StreamResult generate_stream(const InferenceRequest& request,
                                 const StreamSink& sink = {}) override;

  private:
    Config config_;
    Engine engine_;
};

/// Cloud / BYOK adapter. Every call is brokered through the egress guard first;
/// a denial surfaces as EgressDenied. The stub never opens a socket: a granted
/// call replays a canned response after a simulated delay.
class RemoteStubBackend final : public InferenceBackend {
  public:
    struct Config {
        BackendKind kind = BackendKind::CloudStub;
        std::string requester = "cloud_stub";
        std::string destination;
        std::chrono::milliseconds min_delay{2500};
        std::chrono::milliseconds max_delay{3000};
        std::string canned_response;
        std::uint64_t seed = 0;
    };

    RemoteStubBackend(Config config, EgressGuard& guard);

    [[nodiscard]] BackendDescriptor descriptor() const override;
    StreamResult generate_stream(const InferenceRequest& request,
                                 const StreamSink& sink = {}) override;

  private:
    Config config_;
    EgressGuard& guard_;
    std::mutex rng_mutex_;
    std::uint64_t rng_state_;
};

/// Answers model_id -> family for prompt rendering.
class ModelDirectory {
  public:
    virtual ~ModelDirectory() = default;
    [[nodiscard]] virtual std::optional<ModelFamily> family_of(std::string_view model_id) const = 0;
};

/// Binds model ids to backend instances.
class BackendHub final : public ModelDirectory {
  public:
    void bind(std::string model_id, ModelFamily family, std::shared_ptr<InferenceBackend> backend);

    [[nodiscard]] std::shared_ptr<InferenceBackend> get(std::string_view model_id) const;
    [[nodiscard]] bool contains(std::string_view model_id) const;
    [[nodiscard]] std::vector<std::string> model_ids() const;  // bind order
    [[nodiscard]] std::optional<ModelFamily> family_of(std::string_view model_id) const override;

    /// Replaces the script of a mock-bound model. Throws NotAMockBackend otherwise.
    void configure_mock(std::string_view model_id, MockScript script);

    /// Convenience: registers mock backends for every mock-backed manifest.
    void bind_mocks_for(const ModelRegistry& registry);

  private:
    struct Binding {
        ModelFamily family;
        std::shared_ptr<InferenceBackend> backend;
    };
    mutable std::shared_mutex mutex_;
    std::map<std::string, Binding, std::less<>> bindings_;
    std::vector<std::string> order_;
};

/// Parses the mock-script fixture format: {"scripts": [{"model_id", "entries": [...]}]}.
std::map<std::string, MockScript> parse_mock_scripts(std::string_view json_text);

}  // namespace consilium
