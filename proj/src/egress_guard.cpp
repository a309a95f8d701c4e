#include "consilium/egress_guard.hpp"

#include <ctime>

#include "json.hpp"

#include "consilium/error.hpp"

namespace consilium {

namespace {

using Json = nlohmann::ordered_json;

// Components allowed to ask at all. Anything else is audited and denied.
const std::set<std::string>& known_requesters() {
    static const std::set<std::string> ids{"cloud_stub", "byok_stub"};
    return ids;
}

std::string mode_key(Mode mode) {
    switch (mode) {
        case Mode::PrivateAi: return "private_ai";
        case Mode::CloudAi: return "cloud_ai";
        case Mode::Byok: return "byok";
    }
    return "private_ai";
}

std::int64_t to_epoch_ms(std::chrono::system_clock::time_point t) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

}  // namespace

std::string_view to_string(EgressDecision decision) {
    return decision == EgressDecision::Granted ? "granted" : "denied";
}

EgressPolicy default_policy(Mode mode) {
    EgressPolicy p;
    p.mode = mode;
    if (mode == Mode::CloudAi) p.allowed_destinations = {"cloud-inference.invalid"};
    if (mode == Mode::Byok) p.allowed_destinations = {"byok-provider.invalid"};
    return p;
}

std::string month_key(std::chrono::system_clock::time_point when) {
    const std::time_t t = std::chrono::system_clock::to_time_t(when);
    std::tm local{};
    localtime_r(&t, &local);
    char buf[16];
    std::strftime(buf, sizeof buf, "%Y-%m", &local);
    return buf;
}

std::string to_json_line(const AuditEvent& e) {
    Json j;
    j["sequence"] = e.sequence;
    j["timestamp_ms"] = e.timestamp_ms;
    j["requester"] = e.requester;
    j["destination"] = e.destination;
    j["decision"] = std::string(to_string(e.decision));
    j["reason"] = e.reason;
    j["bytes_declared"] = e.bytes_declared;
    j["mode"] = mode_key(e.mode);
    return j.dump();
}

AuditEvent audit_event_from_json_line(std::string_view line) {
    try {
        const auto j = Json::parse(line);
        AuditEvent e;
        e.sequence = j.at("sequence").get<std::uint64_t>();
        e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
        e.requester = j.at("requester").get<std::string>();
        e.destination = j.at("destination").get<std::string>();
        const auto decision = j.at("decision").get<std::string>();
        if (decision != "granted" && decision != "denied") throw Error(ErrorCode::ParseError, "bad decision");
        e.decision = decision == "granted" ? EgressDecision::Granted : EgressDecision::Denied;
        e.reason = j.at("reason").get<std::string>();
        e.bytes_declared = j.at("bytes_declared").get<std::uint64_t>();
        auto mode = parse_mode(j.at("mode").get<std::string>());
        if (!mode) throw Error(ErrorCode::ParseError, "bad mode");
        e.mode = *mode;
        return e;
    } catch (const Json::exception& ex) {
        throw Error(ErrorCode::ParseError, std::string("audit log line: ") + ex.what());
    }
}

std::vector<AuditEvent> read_audit_log(const std::filesystem::path& path) {
    std::vector<AuditEvent> events;
    std::ifstream in(path);
    if (!in) return events;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) events.push_back(audit_event_from_json_line(line));
    return events;
}

EgressGuard::EgressGuard() : EgressGuard(Options{}) {}

EgressGuard::EgressGuard(Options options) : options_(std::move(options)) {
    if (!options_.clock) options_.clock = [] { return std::chrono::system_clock::now(); };
    policy_ = default_policy(Mode::PrivateAi);
    quota_.period = month_key(options_.clock());

    if (options_.quota_path && std::filesystem::exists(*options_.quota_path)) {
        std::ifstream in(*options_.quota_path);
        try {
            const auto j = Json::parse(in);
            quota_.period = j.at("period").get<std::string>();
            quota_.used = j.at("used").get<int>();
        } catch (const Json::exception& ex) {
            throw Error(ErrorCode::ParseError, std::string("quota file: ") + ex.what());
        }
    }
    if (options_.audit_log_path) {
        events_ = read_audit_log(*options_.audit_log_path);
        if (!events_.empty()) next_sequence_ = events_.back().sequence + 1;
        if (options_.audit_log_path->has_parent_path())
            std::filesystem::create_directories(options_.audit_log_path->parent_path());
        audit_file_.open(*options_.audit_log_path, std::ios::app);
        if (!audit_file_) throw Error(ErrorCode::IoError, "cannot open audit log for append");
    }
    std::lock_guard lock(mutex_);
    roll_period_locked();
}

void EgressGuard::install_policy(EgressPolicy policy) {
    if (policy.mode == Mode::PrivateAi) policy.allowed_destinations.clear();
    std::lock_guard lock(mutex_);
    policy_ = std::move(policy);
}

EgressPolicy EgressGuard::policy() const {
    std::lock_guard lock(mutex_);
    return policy_;
}

GrantToken EgressGuard::request_egress(const std::string& requester, const std::string& destination,
                                       std::uint64_t bytes_declared) {
    std::lock_guard lock(mutex_);
    roll_period_locked();

    AuditEvent e;
    e.sequence = next_sequence_++;
    e.timestamp_ms = to_epoch_ms(options_.clock());
    e.requester = requester;
    e.destination = destination;
    e.bytes_declared = bytes_declared;
    e.mode = policy_.mode;

    if (policy_.mode == Mode::PrivateAi)
        e.reason = "PolicyViolation";
    else if (!known_requesters().contains(requester) || !policy_.allowed_destinations.contains(destination))
        e.reason = "DestinationNotAllowed";
    else if (policy_.mode == Mode::CloudAi && quota_.used >= quota_.limit)
        e.reason = "QuotaExhausted";
    else
        e.reason = "granted";
    e.decision = e.reason == "granted" ? EgressDecision::Granted : EgressDecision::Denied;

    if (e.decision == EgressDecision::Granted && policy_.mode == Mode::CloudAi) {
        ++quota_.used;
        persist_quota_locked();
    }
    events_.push_back(e);
    if (audit_file_.is_open()) {
        audit_file_ << to_json_line(e) << '\n';
        audit_file_.flush();
    }
    if (e.decision == EgressDecision::Denied)
        throw Error(ErrorCode::EgressDenied, "egress denied: " + e.reason);
    return {e.sequence, destination, policy_.mode};
}

std::vector<AuditEvent> EgressGuard::audit_log() const {
    std::lock_guard lock(mutex_);
    return events_;
}

std::size_t EgressGuard::granted_count() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& e : events_) n += e.decision == EgressDecision::Granted;
    return n;
}

QuotaLedger EgressGuard::quota() const {
    std::lock_guard lock(mutex_);
    auto q = quota_;
    if (q.period != month_key(options_.clock())) {
        q.period = month_key(options_.clock());
        q.used = 0;
    }
    return q;
}

void EgressGuard::roll_period_locked() {
    const auto now = month_key(options_.clock());
    if (quota_.period != now) {
        quota_.period = now;
        quota_.used = 0;
        persist_quota_locked();
    }
}

void EgressGuard::persist_quota_locked() const {
    if (!options_.quota_path) return;
    if (options_.quota_path->has_parent_path()) std::filesystem::create_directories(options_.quota_path->parent_path());
    const auto tmp = options_.quota_path->string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << Json{{"period", quota_.period}, {"used", quota_.used}, {"limit", quota_.limit}}.dump() << '\n';
        if (!out) throw Error(ErrorCode::IoError, "cannot write quota file");
    }
    std::filesystem::rename(tmp, *options_.quota_path);
}

}  // namespace consilium
