#include <thread>

#include "doctest.h"
#include "test_support.hpp"

#include "consilium/egress_guard.hpp"
#include "consilium/error.hpp"

using namespace consilium;

namespace {

std::string denial_reason(EgressGuard& guard, const std::string& requester, const std::string& destination) {
    try {
        (void)guard.request_egress(requester, destination, 10);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EgressDenied);
        return guard.audit_log().back().reason;
    }
    return "granted";
}

std::chrono::system_clock::time_point local_time(int year, int month, int day) {
    std::tm tm{};
    tm.tm_year = year - 1900;
    tm.tm_mon = month - 1;
    tm.tm_mday = day;
    tm.tm_hour = 12;
    tm.tm_isdst = -1;
    return std::chrono::system_clock::from_time_t(std::mktime(&tm));
}

}  // namespace

TEST_CASE("private mode denies everything and audits each request") {
    EgressGuard guard;
    CHECK(guard.policy().mode == Mode::PrivateAi);
    CHECK(default_policy(Mode::PrivateAi).allowed_destinations.empty());
    CHECK(denial_reason(guard, "cloud_stub", "cloud-inference.invalid") == "PolicyViolation");
    CHECK(denial_reason(guard, "telemetry", "x.invalid") == "PolicyViolation");
    auto log = guard.audit_log();
    REQUIRE(log.size() == 2);
    CHECK(log[0].sequence == 1);
    CHECK(log[1].sequence == 2);
    CHECK(log[0].decision == EgressDecision::Denied);
    CHECK(guard.granted_count() == 0);
}

TEST_CASE("cloud mode allows the listed destination for known requesters") {
    EgressGuard guard;
    guard.install_policy(Mode::CloudAi);
    auto token = guard.request_egress("cloud_stub", "cloud-inference.invalid", 100);
    CHECK(token.mode == Mode::CloudAi);
    CHECK(denial_reason(guard, "cloud_stub", "evil.invalid") == "DestinationNotAllowed");
    CHECK(denial_reason(guard, "analytics", "cloud-inference.invalid") == "DestinationNotAllowed");
    CHECK(guard.quota().used == 1);

    guard.install_policy(Mode::Byok);
    CHECK(denial_reason(guard, "byok_stub", "byok-provider.invalid") == "granted");
    CHECK(guard.quota().used == 1);  // BYOK does not draw on the cloud quota
}

TEST_CASE("quota exhausts at the monthly limit and rolls over") {
    auto now = local_time(2026, 10, 14);
    EgressGuard::Options opts;
    opts.clock = [&] { return now; };
    EgressGuard guard(opts);
    guard.install_policy(Mode::CloudAi);
    for (int i = 0; i < kCloudMonthlyQuota; ++i) (void)guard.request_egress("cloud_stub", "cloud-inference.invalid", 1);
    CHECK(denial_reason(guard, "cloud_stub", "cloud-inference.invalid") == "QuotaExhausted");
    CHECK(guard.quota().used == kCloudMonthlyQuota);
    CHECK(guard.quota().period == "2026-10");

    now = local_time(2026, 11, 1);
    CHECK(guard.quota().used == 0);
    CHECK(guard.quota().period == "2026-11");
    CHECK(denial_reason(guard, "cloud_stub", "cloud-inference.invalid") == "granted");
}

TEST_CASE("audit log and quota persist across instances") {
    testing::TempDir dir;
    EgressGuard::Options opts;
    opts.audit_log_path = dir / "audit.log";
    opts.quota_path = dir / "quota.json";
    {
        EgressGuard guard(opts);
        guard.install_policy(Mode::CloudAi);
        (void)guard.request_egress("cloud_stub", "cloud-inference.invalid", 42);
        (void)denial_reason(guard, "cloud_stub", "nope.invalid");
    }
    auto events = read_audit_log(dir / "audit.log");
    REQUIRE(events.size() == 2);
    CHECK(events[0].bytes_declared == 42);
    CHECK(events[0].mode == Mode::CloudAi);
    CHECK(events[1].reason == "DestinationNotAllowed");

    EgressGuard reopened(opts);
    CHECK(reopened.quota().used == 1);
    CHECK(reopened.audit_log().size() == 2);
    reopened.install_policy(Mode::CloudAi);
    CHECK(reopened.request_egress("cloud_stub", "cloud-inference.invalid", 1).sequence == 3);
    CHECK(read_audit_log(dir / "audit.log").size() == 3);
}

TEST_CASE("audit lines round trip") {
    AuditEvent e;
    e.sequence = 9;
    e.timestamp_ms = 1'700'000'000'000;
    e.requester = "byok_stub";
    e.destination = "byok-provider.invalid";
    e.decision = EgressDecision::Granted;
    e.reason = "granted";
    e.bytes_declared = 123;
    e.mode = Mode::Byok;
    auto back = audit_event_from_json_line(to_json_line(e));
    CHECK(back.sequence == 9);
    CHECK(back.destination == e.destination);
    CHECK(back.decision == EgressDecision::Granted);
    CHECK(back.mode == Mode::Byok);
    CHECK(to_json_line(e).find('\n') == std::string::npos);
}

TEST_CASE("concurrent requests are totally ordered") {
    EgressGuard guard;
    guard.install_policy(Mode::Byok);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 50; ++i) (void)guard.request_egress("byok_stub", "byok-provider.invalid", 1);
        });
    for (auto& t : threads) t.join();
    auto log = guard.audit_log();
    REQUIRE(log.size() == 200);
    for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].sequence == i + 1);
}

TEST_CASE("month keys use local calendar months") {
    CHECK(month_key(local_time(2026, 1, 31)) == "2026-01");
    CHECK(month_key(local_time(2026, 12, 1)) == "2026-12");
}
