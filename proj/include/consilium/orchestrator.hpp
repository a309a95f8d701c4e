#pragma once

#include <atomic>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "consilium/dsm5_knowledge.hpp"
#include "consilium/error.hpp"
#include "consilium/inference_backend.hpp"
#include "consilium/mode.hpp"
#include "consilium/model_output.hpp"
#include "consilium/model_registry.hpp"
#include "consilium/prompt_engine.hpp"

namespace consilium {

inline constexpr int kMaxAttempts = 3;  // initial call plus two re-prompts

using ValidationResult = std::variant<ModelOutput, std::vector<SchemaError>>;

/// First balanced {...} substring of `raw`, string- and escape-aware. Empty when none.
std::string_view extract_json_object(std::string_view raw);

/// Strict structural check of one raw model reply. Errors come back as data.
/// Codes are trimmed but not rejected when the knowledge base does not know them.
ValidationResult validate_output(std::string_view raw_text);

struct UnavailableModel {
    std::string model_id;
    std::string reason;  // schema_violation, backend_unavailable, egress_denied, timeout, ...
    int attempts_used = 0;
};

struct EnsembleRound {
    std::string round_id;
    std::map<std::string, RenderedPrompt> prompts;
    std::vector<ModelOutput> outputs;       // roster order
    std::vector<UnavailableModel> unavailable;
    Schedule schedule_used = Schedule::Sequential;
    std::map<std::string, TtfvrSample> timing;  // last attempt per model
    std::map<std::string, int> invocations;     // backend calls per model
    std::map<std::string, std::string> raw_outputs;  // accepted reply text per model
};

/// Result of one dispatched call.
struct DispatchResponse {
    std::string model_id;
    std::optional<StreamResult> stream;
    std::optional<ErrorCode> error;
    std::string error_message;
};

/// Runs one call per prompt. Parallel: all in flight at once, except that a
/// backend without parallel slots serves one call at a time. Sequential: strictly
/// one at a time, in the order given. Per-model failures are recorded, never thrown.
std::vector<DispatchResponse> dispatch(Schedule schedule, BackendHub& hub,
                                       std::span<const InferenceRequest> requests);

/// The ensemble agent: renders prompts, dispatches per schedule plan,
/// validates, re-prompts offenders and collects outputs.
class Orchestrator {
  public:
    struct Config {
        std::vector<std::string> roster;  // empty: every bound model
        std::uint64_t available_memory_bytes = 8'000'000'000ULL;
        double headroom_fraction = kDefaultHeadroomFraction;
        InferenceRequest request_defaults{};
    };

    Orchestrator(const ModelRegistry& registry, BackendHub& hub, const PromptEngine& prompts,
                 Config config);

    /// Throws NoModelsRegistered when the roster is empty, AllModelsUnavailable when
    /// no model produced a valid output (EgressDenied when every failure was a denial).
    EnsembleRound run_ensemble(std::string_view conversation, Mode mode,
                               std::span<const CriterionChecklist> checklists);

    /// Same as run_ensemble but returns the round even when no output survived.
    EnsembleRound run_round(std::string_view conversation, Mode mode,
                            std::span<const CriterionChecklist> checklists);

    [[nodiscard]] std::vector<std::string> roster() const;
    [[nodiscard]] Schedule plan_for(std::span<const std::string> models) const;
    [[nodiscard]] const Config& config() const { return config_; }

  private:
    const ModelRegistry& registry_;
    BackendHub& hub_;
    const PromptEngine& prompts_;
    Config config_;
    std::atomic<std::uint64_t> round_counter_{0};
};

}  // namespace consilium
