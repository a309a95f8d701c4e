#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

#include "consilium/bench_harness.hpp"
#include "consilium/consensus.hpp"
#include "consilium/corpus_tools.hpp"
#include "consilium/dsm5_knowledge.hpp"
#include "consilium/egress_guard.hpp"
#include "consilium/inference_backend.hpp"
#include "consilium/mode.hpp"
#include "consilium/model_registry.hpp"
#include "consilium/orchestrator.hpp"
#include "consilium/prompt_engine.hpp"
#include "consilium/safety_guard.hpp"
#include "consilium/session_vault.hpp"

namespace consilium {

inline constexpr int kApiSchemaVersion = 1;
inline constexpr int kDefaultPort = 8765;

enum class UserMode { Clinician, Patient };
std::string_view to_string(UserMode mode);
std::optional<UserMode> parse_user_mode(std::string_view text);

std::string_view attribution_key(Mode mode);  // "private_ai", "cloud_ai", "byok"

/// Response wrapper for every endpoint; attribution is always present.
struct ApiEnvelope {
    std::string request_id;
    std::string session_id;
    Mode attribution = Mode::PrivateAi;
    std::vector<std::string> flags;
    nlohmann::ordered_json payload = nlohmann::ordered_json::object();
    std::optional<ErrorCode> error;
    std::string error_message;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

nlohmann::ordered_json to_json(const ConsensusResult& result);
nlohmann::ordered_json to_json(const PatientFeedback& feedback);
nlohmann::ordered_json to_json(const RiskAssessment& risk);
nlohmann::ordered_json to_json(const AuditEvent& event);
nlohmann::ordered_json to_json(const QuotaLedger& quota);

/// Binds the pipeline together for the local service and the CLI.
class Gateway {
  public:
    struct Config {
        std::filesystem::path data_dir;
        std::string manifests_json;     // empty: bundled demo manifests
        std::string mock_scripts_json;  // empty: bundled demo scripts
        std::vector<std::string> private_roster;  // empty: fast variants preferred
        std::chrono::milliseconds cloud_min_delay{2500};
        std::chrono::milliseconds cloud_max_delay{3000};
        std::uint64_t available_memory_bytes = 8'000'000'000ULL;
        double headroom_fraction = kDefaultHeadroomFraction;
        bool persist_state = true;  // mode / audit / quota files under data_dir
        EgressGuard::Clock clock;
    };

    explicit Gateway(Config config);
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    std::string open_session(std::optional<Mode> mode = std::nullopt);
    void close_session(const std::string& session_id, bool persist,
                       const std::optional<UserAuthorization>& authorization);

    ApiEnvelope post_turn(const std::string& session_id, const std::string& text, UserMode user_mode);
    ApiEnvelope run_task(const std::string& session_id, TaskFlow flow, const std::string& text,
                         const std::optional<ExtractedDocument>& attachment);

    void set_mode(Mode mode, const std::optional<std::string>& byok_key = std::nullopt);
    [[nodiscard]] Mode mode() const;

    [[nodiscard]] std::vector<AuditEvent> audit_log() const;
    [[nodiscard]] QuotaLedger quota() const;
    BenchReport run_benchmark(int repeats, NetworkState state, std::vector<std::string> models = {});

    [[nodiscard]] nlohmann::ordered_json roster_json() const;
    [[nodiscard]] std::vector<std::string> roster_for(Mode mode) const;

    SessionVault& vault() { return *vault_; }
    BackendHub& hub() { return hub_; }
    EgressGuard& guard() { return *guard_; }
    const KnowledgeBase& knowledge() const { return kb_; }
    const ModelRegistry& registry() const { return registry_; }

  private:
    std::shared_ptr<std::mutex> session_lock(const std::string& session_id);
    std::string next_request_id();

    Config config_;
    KnowledgeBase kb_;
    TemplateStore templates_;
    ModelRegistry registry_;
    BackendHub hub_;
    std::unique_ptr<EgressGuard> guard_;
    std::unique_ptr<SessionVault> vault_;
    std::unique_ptr<PromptEngine> prompts_;
    std::unique_ptr<SafetyGuard> safety_;
    std::unique_ptr<Orchestrator> orchestrator_;

    mutable std::mutex state_mutex_;
    Mode mode_ = Mode::PrivateAi;
    std::map<std::string, std::shared_ptr<std::mutex>> session_locks_;
    std::uint64_t request_counter_ = 0;
};

/// True for 127.0.0.0/8, ::1 and "localhost".
bool is_loopback_address(std::string_view address);

/// Loopback-only HTTP front end over a Gateway.
class LocalService {
  public:
    explicit LocalService(Gateway& gateway);
    ~LocalService();
    LocalService(const LocalService&) = delete;
    LocalService& operator=(const LocalService&) = delete;

    /// Throws NonLoopbackBindRefused or PortInUse. Port 0 picks a free port.
    void bind(const std::string& address, int port);
    [[nodiscard]] int port() const { return port_; }

    void run();    // blocks until stop()
    void start();  // background thread
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace consilium
