#include <atomic>
#include <thread>

#include "doctest.h"
#include "test_support.hpp"

#include "consilium/bundled_data.hpp"
#include "consilium/egress_guard.hpp"
#include "consilium/error.hpp"
#include "consilium/inference_backend.hpp"

using namespace consilium;
using namespace std::chrono_literals;

namespace {

InferenceRequest request(const std::string& prompt, const std::string& model = "m") {
    InferenceRequest r;
    r.model_id = model;
    r.prompt_text = prompt;
    return r;
}

}  // namespace

TEST_CASE("request validation") {
    auto r = request("hi");
    CHECK_NOTHROW(validate_request(r));
    r.max_tokens = 0;
    CHECK_THROWS_AS(validate_request(r), Error);
    r = request("");
    CHECK_THROWS_AS(validate_request(r), Error);
    r = request("hi");
    r.temperature = -0.1;
    CHECK_THROWS_AS(validate_request(r), Error);
}

TEST_CASE("stream tokens concatenate to the input") {
    const std::string text = "  alpha beta\n gamma  ";
    auto tokens = split_stream_tokens(text);
    std::string joined;
    for (const auto& t : tokens) joined += t;
    CHECK(joined == text);
    CHECK(split_stream_tokens("").empty());
    CHECK(split_stream_tokens("a b c").size() == 3);
}

TEST_CASE("mock stream is well ordered and honours the first token delay") {
    MockScriptEntry e;
    e.response_text = "one two three";
    e.first_token_delay = 120ms;
    MockBackend mock({e});
    std::vector<StreamEvent> seen;
    auto result = mock.generate_stream(request("prompt"), [&](const StreamEvent& ev) { seen.push_back(ev); });
    CHECK(stream_is_well_ordered(result));
    CHECK(result.text() == "one two three");
    CHECK(result.token_count() == 3);
    CHECK(seen.size() == result.events.size());
    REQUIRE(result.first_token_at().has_value());
    const auto ttfvr = *result.first_token_at() - result.dispatched_at;
    CHECK(ttfvr >= 120'000'000);
    CHECK(ttfvr < 200'000'000);
    CHECK(result.events.front().kind == StreamEventKind::FirstToken);
    CHECK(result.events.back().kind == StreamEventKind::Done);

    auto sample = sample_from_stream(result, "m", "p1", 2);
    CHECK(sample.has_first_token);
    CHECK(sample.ttfvr_ns() == ttfvr);
    CHECK(sample.token_count == 3);
    CHECK(sample.run_index == 2);
    CHECK(mock.invocation_count() == 1);
}

TEST_CASE("mock script matching, retirement and malformed rendering") {
    MockScriptEntry a;
    a.prompt_matcher = "SOAP";
    a.response_text = "soap note";
    MockScriptEntry once;
    once.response_text = R"({"x": 1})";
    once.malformed = true;
    once.max_uses = 1;
    MockScriptEntry fallback;
    fallback.response_text = "fallback";
    MockBackend mock({a, once, fallback});

    CHECK(mock.generate_stream(request("write a SOAP note")).text() == "soap note");
    auto bad = mock.generate_stream(request("other")).text();
    CHECK(bad.find('{') == std::string::npos);
    CHECK(bad.find('}') == std::string::npos);
    CHECK(mock.generate_stream(request("other")).text() == "fallback");
    CHECK(malformed_rendering("{a}").find('{') == std::string::npos);
}

TEST_CASE("mock failures end the stream with backend_error") {
    MockScriptEntry only;
    only.prompt_matcher = "needle";
    only.response_text = "x";
    MockBackend mock({only});
    std::vector<StreamEvent> seen;
    try {
        mock.generate_stream(request("haystack"), [&](const StreamEvent& ev) { seen.push_back(ev); });
        FAIL("expected NoScriptMatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoScriptMatch);
    }
    REQUIRE_FALSE(seen.empty());
    CHECK(seen.back().kind == StreamEventKind::BackendError);

    MockScriptEntry down;
    down.unavailable = true;
    MockBackend unavailable({down});
    try {
        unavailable.generate_stream(request("x"));
        FAIL("expected BackendUnavailable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BackendUnavailable);
    }

    MockScriptEntry slow;
    slow.response_text = "late";
    slow.first_token_delay = 500ms;
    MockBackend timeout({slow});
    auto r = request("x");
    r.timeout = 50ms;
    try {
        timeout.generate_stream(r);
        FAIL("expected GenerationTimeout");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::GenerationTimeout);
    }
}

TEST_CASE("stop sequences and max_tokens truncate output") {
    MockBackend mock(testing::always("alpha beta STOP gamma"));
    auto r = request("x");
    r.stop_sequences = {"STOP"};
    CHECK(mock.generate_stream(r).text().find("gamma") == std::string::npos);
    r = request("x");
    r.max_tokens = 2;
    CHECK(mock.generate_stream(r).token_count() == 2);
}

TEST_CASE("mock backend tolerates concurrent calls") {
    MockBackend mock(testing::always("a b c", 5));
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&] {
            if (mock.generate_stream(request("x")).text() == "a b c") ++ok;
        });
    for (auto& t : threads) t.join();
    CHECK(ok == 8);
    CHECK(mock.invocation_count() == 8);
}

TEST_CASE("local runtime backend without engine is unavailable") {
    LocalRuntimeBackend backend({});
    CHECK_FALSE(backend.descriptor().requires_network);
    try {
        backend.generate_stream(request("x"));
        FAIL("expected BackendUnavailable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BackendUnavailable);
    }

    LocalRuntimeBackend::Engine engine = [](const InferenceRequest&, const LocalRuntimeBackend::Config&,
                                            const std::function<bool(std::string_view)>& on_token) {
        for (auto t : {"x ", "y ", "z"})
            if (!on_token(t)) return;
    };
    LocalRuntimeBackend attached({}, engine);
    auto result = attached.generate_stream(request("x"));
    CHECK(result.text() == "x y z");
    CHECK(stream_is_well_ordered(result));
}

TEST_CASE("remote stub asks the egress guard before replying") {
    EgressGuard guard;
    RemoteStubBackend::Config cfg;
    cfg.destination = "cloud-inference.invalid";
    cfg.min_delay = 0ms;
    cfg.max_delay = 0ms;
    cfg.canned_response = "reply";
    RemoteStubBackend stub(cfg, guard);
    CHECK(stub.descriptor().requires_network);

    try {
        stub.generate_stream(request("x"));
        FAIL("expected EgressDenied in private mode");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EgressDenied);
    }
    guard.install_policy(Mode::CloudAi);
    CHECK(stub.generate_stream(request("x")).text() == "reply");
    auto log = guard.audit_log();
    REQUIRE(log.size() == 2);
    CHECK(log[0].decision == EgressDecision::Denied);
    CHECK(log[1].decision == EgressDecision::Granted);
}

TEST_CASE("backend hub bindings and mock scripts") {
    ModelRegistry reg;
    reg.load_manifest_json(bundled::demo_manifests());
    BackendHub hub;
    hub.bind_mocks_for(reg);
    CHECK(hub.model_ids().size() == 4);
    CHECK(hub.family_of("phi-3.5-mini") == ModelFamily::Phi);
    CHECK_FALSE(hub.family_of("nope").has_value());

    auto scripts = parse_mock_scripts(bundled::demo_mock_scripts());
    CHECK(scripts.at("gemma-fast").size() == 5);
    CHECK(scripts.at("gemma-fast")[0].prompt_matcher == "SOAP");
    CHECK(scripts.at("gemma-fast")[4].first_token_delay == 60ms);
    hub.configure_mock("qwen2", scripts.at("qwen2"));
    CHECK(hub.get("qwen2")->generate_stream(request("x", "qwen2")).text().find("296.21") != std::string::npos);

    EgressGuard guard;
    hub.bind("cloud", ModelFamily::Other, std::make_shared<RemoteStubBackend>(RemoteStubBackend::Config{}, guard));
    CHECK_THROWS_AS(hub.configure_mock("cloud", {}), Error);
    CHECK_THROWS_AS((void)hub.get("nope"), Error);
    CHECK_THROWS_AS(parse_mock_scripts("{}"), Error);
}
