#include "consilium/inference_backend.hpp"

#include <algorithm>
#include <mutex>
#include <random>
#include <thread>

#include "json.hpp"

#include "consilium/egress_guard.hpp"
#include "consilium/error.hpp"

namespace consilium {

MonotonicNs monotonic_now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

namespace {

using SteadyTime = std::chrono::steady_clock::time_point;

SteadyTime to_steady(MonotonicNs ns) { return SteadyTime(std::chrono::nanoseconds(ns)); }

/// Builds a stream while forwarding each event to the sink as it happens.
class StreamWriter {
  public:
    StreamWriter(StreamResult& result, const StreamSink& sink) : result_(result), sink_(sink) {}

    void emit(StreamEventKind kind, std::string text = {}) {
        StreamEvent ev{kind, std::move(text), monotonic_now_ns()};
        if (!result_.events.empty()) ev.timestamp = std::max(ev.timestamp, result_.events.back().timestamp);
        if (sink_) sink_(ev);
        result_.events.push_back(std::move(ev));
    }

    void token(std::string text) {
        emit(seen_first_ ? StreamEventKind::Token : StreamEventKind::FirstToken, std::move(text));
        seen_first_ = true;
    }

  private:
    StreamResult& result_;
    const StreamSink& sink_;
    bool seen_first_ = false;
};

/// Cuts text at the first stop sequence.
std::string apply_stops(std::string text, const std::vector<std::string>& stops) {
    std::size_t cut = text.size();
    for (const auto& s : stops) {
        if (s.empty()) continue;
        auto pos = text.find(s);
        if (pos != std::string::npos) cut = std::min(cut, pos);
    }
    text.resize(cut);
    return text;
}

[[noreturn]] void fail_stream(StreamWriter& writer, ErrorCode code, const std::string& message) {
    writer.emit(StreamEventKind::BackendError, message);
    throw Error(code, message);
}

}  // namespace

void validate_request(const InferenceRequest& request) {
    if (request.prompt_text.empty()) throw Error(ErrorCode::InvalidRequest, "prompt_text is empty");
    if (request.max_tokens <= 0) throw Error(ErrorCode::InvalidRequest, "max_tokens must be positive");
    if (request.temperature < 0.0) throw Error(ErrorCode::InvalidRequest, "temperature must be >= 0");
}

std::string_view to_string(StreamEventKind kind) {
    switch (kind) {
        case StreamEventKind::FirstToken: return "first_token";
        case StreamEventKind::Token: return "token";
        case StreamEventKind::Done: return "done";
        case StreamEventKind::BackendError: return "backend_error";
    }
    return "done";
}

std::string_view to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::LocalGgufRuntime: return "local_gguf_runtime";
        case BackendKind::LocalOnnxRuntime: return "local_onnx_runtime";
        case BackendKind::Mock: return "mock";
        case BackendKind::CloudStub: return "cloud_stub";
        case BackendKind::ByokStub: return "byok_stub";
    }
    return "mock";
}

std::string StreamResult::text() const {
    std::string out;
    for (const auto& ev : events)
        if (ev.kind == StreamEventKind::FirstToken || ev.kind == StreamEventKind::Token) out += ev.token_text;
    return out;
}

std::optional<MonotonicNs> StreamResult::first_token_at() const {
    for (const auto& ev : events)
        if (ev.kind == StreamEventKind::FirstToken) return ev.timestamp;
    return std::nullopt;
}

std::optional<MonotonicNs> StreamResult::done_at() const {
    if (!events.empty() && events.back().kind == StreamEventKind::Done) return events.back().timestamp;
    return std::nullopt;
}

std::size_t StreamResult::token_count() const {
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [](const StreamEvent& ev) {
        return ev.kind == StreamEventKind::FirstToken || ev.kind == StreamEventKind::Token;
    }));
}

TtfvrSample sample_from_stream(const StreamResult& stream, std::string model_id, std::string prompt_id,
                               int run_index) {
    TtfvrSample s;
    s.model_id = std::move(model_id);
    s.prompt_id = std::move(prompt_id);
    s.run_index = run_index;
    s.t0 = stream.dispatched_at;
    const auto done = stream.done_at();
    s.t_done = done ? *done : (stream.events.empty() ? s.t0 : stream.events.back().timestamp);
    if (auto first = stream.first_token_at()) {
        s.t1 = *first;
        s.has_first_token = true;
    } else {
        s.t1 = s.t_done;
    }
    s.token_count = static_cast<std::int64_t>(stream.token_count());
    return s;
}

bool stream_is_well_ordered(const StreamResult& stream) {
    bool seen_first = false;
    bool terminal = false;
    MonotonicNs last = stream.dispatched_at;
    for (const auto& ev : stream.events) {
        if (terminal) return false;
        if (ev.timestamp < last) return false;
        last = ev.timestamp;
        switch (ev.kind) {
            case StreamEventKind::FirstToken:
                if (seen_first) return false;
                seen_first = true;
                break;
            case StreamEventKind::Token:
                if (!seen_first) return false;
                break;
            case StreamEventKind::Done:
            case StreamEventKind::BackendError: terminal = true; break;
        }
    }
    return true;
}

std::string malformed_rendering(std::string_view response_text) {
    std::string out = "I am not able to follow the requested format. ";
    for (char c : response_text)
        if (c != '{' && c != '}') out.push_back(c);
    return out;
}

std::vector<std::string> split_stream_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = i;
        while (j < text.size() && (text[j] == ' ' || text[j] == '\n' || text[j] == '\t')) ++j;
        while (j < text.size() && text[j] != ' ' && text[j] != '\n' && text[j] != '\t') ++j;
        while (j < text.size() && (text[j] == ' ' || text[j] == '\n' || text[j] == '\t')) ++j;
        tokens.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return tokens;
}

// MockBackend ---------------------------------------------------------------

MockBackend::MockBackend(MockScript script, bool supports_parallel_slots)
    : script_(std::move(script)), uses_(script_.size(), 0), parallel_(supports_parallel_slots) {}

BackendDescriptor MockBackend::descriptor() const {
    return {BackendKind::Mock, parallel_, false};
}

void MockBackend::set_script(MockScript script) {
    std::lock_guard lock(mutex_);
    script_ = std::move(script);
    uses_.assign(script_.size(), 0);
}

int MockBackend::invocation_count() const {
    std::lock_guard lock(mutex_);
    return invocations_;
}

StreamResult MockBackend::generate_stream(const InferenceRequest& request, const StreamSink& sink) {
    StreamResult result;
    result.dispatched_at = monotonic_now_ns();
    StreamWriter writer(result, sink);
    validate_request(request);

    std::optional<MockScriptEntry> entry;
    {
        std::lock_guard lock(mutex_);
        ++invocations_;
        for (std::size_t i = 0; i < script_.size(); ++i) {
            const auto& e = script_[i];
            if (e.max_uses > 0 && uses_[i] >= e.max_uses) continue;
            if (!e.prompt_matcher.empty() && request.prompt_text.find(e.prompt_matcher) == std::string::npos)
                continue;
            ++uses_[i];
            entry = e;
            break;
        }
    }
    if (!entry) fail_stream(writer, ErrorCode::NoScriptMatch, "mock " + request.model_id + ": no script entry matches");
    if (entry->unavailable)
        fail_stream(writer, ErrorCode::BackendUnavailable, "mock " + request.model_id + ": scripted unavailable");

    std::string text = entry->malformed ? malformed_rendering(entry->response_text) : entry->response_text;
    text = apply_stops(std::move(text), request.stop_sequences);
    auto tokens = split_stream_tokens(text);
    if (tokens.size() > static_cast<std::size_t>(request.max_tokens))
        tokens.resize(static_cast<std::size_t>(request.max_tokens));

    const auto start = to_steady(result.dispatched_at);
    const auto deadline = start + request.timeout;
    auto wait_until = [&](SteadyTime when) {
        if (when > deadline) {
            std::this_thread::sleep_until(deadline);
            fail_stream(writer, ErrorCode::GenerationTimeout, "mock " + request.model_id + ": generation timed out");
        }
        std::this_thread::sleep_until(when);
    };

    auto next = start + entry->first_token_delay;
    wait_until(next);
    for (auto& tok : tokens) {
        writer.token(std::move(tok));
        next += entry->inter_token_delay;
        if (entry->inter_token_delay.count() > 0) wait_until(next);
    }
    writer.emit(StreamEventKind::Done);
    return result;
}

// LocalRuntimeBackend -------------------------------------------------------

LocalRuntimeBackend::LocalRuntimeBackend(Config config, Engine engine)
    : config_(std::move(config)), engine_(std::move(engine)) {}

BackendDescriptor LocalRuntimeBackend::descriptor() const {
    return {config_.kind, config_.supports_parallel_slots, false};
}

StreamResult LocalRuntimeBackend::generate_stream(const InferenceRequest& request, const StreamSink& sink) {
    StreamResult result;
    result.dispatched_at = monotonic_now_ns();
    StreamWriter writer(result, sink);
    validate_request(request);
    if (!engine_)
        fail_stream(writer, ErrorCode::BackendUnavailable,
                    std::string(to_string(config_.kind)) + ": no native runtime linked into this build");

    const auto deadline = to_steady(result.dispatched_at) + request.timeout;
    int emitted = 0;
    std::string produced;
    bool timed_out = false;
    engine_(request, config_, [&](std::string_view piece) {
        if (std::chrono::steady_clock::now() > deadline) {
            timed_out = true;
            return false;
        }
        produced.append(piece);
        for (const auto& stop : request.stop_sequences)
            if (!stop.empty() && produced.find(stop) != std::string::npos) return false;
        writer.token(std::string(piece));
        return ++emitted < request.max_tokens;
    });
    if (timed_out) fail_stream(writer, ErrorCode::GenerationTimeout, request.model_id + ": generation timed out");
    writer.emit(StreamEventKind::Done);
    return result;
}

// RemoteStubBackend ---------------------------------------------------------

RemoteStubBackend::RemoteStubBackend(Config config, EgressGuard& guard)
    : config_(std::move(config)), guard_(guard), rng_state_(config_.seed) {}

BackendDescriptor RemoteStubBackend::descriptor() const {
    return {config_.kind, true, true};
}

StreamResult RemoteStubBackend::generate_stream(const InferenceRequest& request, const StreamSink& sink) {
    StreamResult result;
    result.dispatched_at = monotonic_now_ns();
    StreamWriter writer(result, sink);
    validate_request(request);

    // Throws EgressDenied; the broker has already audited the denial.
    guard_.request_egress(config_.requester, config_.destination, request.prompt_text.size());

    std::chrono::milliseconds delay = config_.min_delay;
    if (config_.max_delay > config_.min_delay) {
        std::lock_guard lock(rng_mutex_);
        std::mt19937_64 rng(rng_state_++);
        const auto span = static_cast<std::uint64_t>((config_.max_delay - config_.min_delay).count());
        delay += std::chrono::milliseconds(static_cast<std::int64_t>(rng() % (span + 1)));
    }
    const auto start = to_steady(result.dispatched_at);
    if (start + delay > start + request.timeout) {
        std::this_thread::sleep_until(start + request.timeout);
        fail_stream(writer, ErrorCode::GenerationTimeout, "remote stub: simulated timeout");
    }
    std::this_thread::sleep_until(start + delay);
    auto tokens = split_stream_tokens(apply_stops(config_.canned_response, request.stop_sequences));
    if (tokens.size() > static_cast<std::size_t>(request.max_tokens))
        tokens.resize(static_cast<std::size_t>(request.max_tokens));
    for (auto& tok : tokens) writer.token(std::move(tok));
    writer.emit(StreamEventKind::Done);
    return result;
}

// BackendHub ----------------------------------------------------------------

void BackendHub::bind(std::string model_id, ModelFamily family, std::shared_ptr<InferenceBackend> backend) {
    std::unique_lock lock(mutex_);
    if (bindings_.find(model_id) == bindings_.end()) order_.push_back(model_id);
    bindings_[std::move(model_id)] = Binding{family, std::move(backend)};
}

std::shared_ptr<InferenceBackend> BackendHub::get(std::string_view model_id) const {
    std::shared_lock lock(mutex_);
    auto it = bindings_.find(model_id);
    if (it == bindings_.end()) throw Error(ErrorCode::UnknownModel, "no backend bound for " + std::string(model_id));
    return it->second.backend;
}

bool BackendHub::contains(std::string_view model_id) const {
    std::shared_lock lock(mutex_);
    return bindings_.find(model_id) != bindings_.end();
}

std::vector<std::string> BackendHub::model_ids() const {
    std::shared_lock lock(mutex_);
    return order_;
}

std::optional<ModelFamily> BackendHub::family_of(std::string_view model_id) const {
    std::shared_lock lock(mutex_);
    auto it = bindings_.find(model_id);
    if (it == bindings_.end()) return std::nullopt;
    return it->second.family;
}

void BackendHub::configure_mock(std::string_view model_id, MockScript script) {
    auto backend = get(model_id);
    auto* mock = dynamic_cast<MockBackend*>(backend.get());
    if (mock == nullptr)
        throw Error(ErrorCode::NotAMockBackend, std::string(model_id) + " is not bound to a mock backend");
    mock->set_script(std::move(script));
}

void BackendHub::bind_mocks_for(const ModelRegistry& registry) {
    for (const auto& m : registry.all())
        if (m.mock_backed) bind(m.model_id, m.family, std::make_shared<MockBackend>());
}

std::map<std::string, MockScript> parse_mock_scripts(std::string_view json_text) {
    std::map<std::string, MockScript> out;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("mock script file: ") + e.what());
    }
    if (!doc.contains("scripts") || !doc["scripts"].is_array())
        throw Error(ErrorCode::ParseError, "mock script file: missing 'scripts' array");
    for (const auto& s : doc["scripts"]) {
        auto& script = out[s.at("model_id").get<std::string>()];
        for (const auto& e : s.at("entries")) {
            MockScriptEntry entry;
            entry.prompt_matcher = e.value("match", std::string{});
            entry.response_text = e.value("response", std::string{});
            entry.first_token_delay = std::chrono::milliseconds(e.value("first_token_delay_ms", 0));
            entry.inter_token_delay = std::chrono::milliseconds(e.value("inter_token_delay_ms", 0));
            entry.malformed = e.value("malformed", false);
            entry.max_uses = e.value("max_uses", 0);
            entry.unavailable = e.value("unavailable", false);
            script.push_back(std::move(entry));
        }
    }
    return out;
}

}  // namespace consilium
