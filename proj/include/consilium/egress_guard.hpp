#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "consilium/mode.hpp"

namespace consilium {

inline constexpr int kCloudMonthlyQuota = 25;

enum class EgressDecision { Granted, Denied };
std::string_view to_string(EgressDecision decision);

struct EgressPolicy {
    Mode mode = Mode::PrivateAi;
    std::set<std::string> allowed_destinations;  // always empty for PrivateAi
};

/// Default destinations per mode. PrivateAi yields the empty set.
EgressPolicy default_policy(Mode mode);

struct AuditEvent {
    std::uint64_t sequence = 0;
    std::int64_t timestamp_ms = 0;  // wall clock, ms since epoch
    std::string requester;
    std::string destination;
    EgressDecision decision = EgressDecision::Denied;
    std::string reason;  // "granted", "PolicyViolation", "DestinationNotAllowed", "QuotaExhausted"
    std::uint64_t bytes_declared = 0;
    Mode mode = Mode::PrivateAi;
};

std::string to_json_line(const AuditEvent& event);
AuditEvent audit_event_from_json_line(std::string_view line);

struct QuotaLedger {
    std::string period;  // "YYYY-MM", local time
    int used = 0;
    int limit = kCloudMonthlyQuota;
};

struct GrantToken {
    std::uint64_t sequence = 0;
    std::string destination;
    Mode mode = Mode::PrivateAi;
};

/// The single broker every network-capable component must ask before sending
/// anything. Requests are totally ordered; each appends exactly one audit event.
class EgressGuard {
  public:
    using Clock = std::function<std::chrono::system_clock::time_point()>;

    struct Options {
        std::optional<std::filesystem::path> audit_log_path;  // line-delimited JSON, append-only
        std::optional<std::filesystem::path> quota_path;
        Clock clock;
    };

    EgressGuard();
    explicit EgressGuard(Options options);

    /// Atomic swap; requests already granted are unaffected.
    void install_policy(EgressPolicy policy);
    void install_policy(Mode mode) { install_policy(default_policy(mode)); }
    [[nodiscard]] EgressPolicy policy() const;

    /// Grants or throws Error(EgressDenied) carrying the denial reason. A denial is
    /// audited before the throw.
    GrantToken request_egress(const std::string& requester, const std::string& destination,
                              std::uint64_t bytes_declared);

    [[nodiscard]] std::vector<AuditEvent> audit_log() const;
    [[nodiscard]] std::size_t granted_count() const;
    [[nodiscard]] QuotaLedger quota() const;

  private:
    void roll_period_locked();
    void persist_quota_locked() const;

    mutable std::mutex mutex_;
    Options options_;
    EgressPolicy policy_;
    QuotaLedger quota_;
    std::vector<AuditEvent> events_;
    std::uint64_t next_sequence_ = 1;
    std::ofstream audit_file_;
};

/// Calendar-month key in local time, e.g. "2026-10".
std::string month_key(std::chrono::system_clock::time_point when);

/// Reads an audit log file written by EgressGuard.
std::vector<AuditEvent> read_audit_log(const std::filesystem::path& path);

}  // namespace consilium
