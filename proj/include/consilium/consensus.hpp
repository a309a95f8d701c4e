#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "consilium/dsm5_knowledge.hpp"
#include "consilium/mode.hpp"
#include "consilium/model_output.hpp"

namespace consilium {

enum class CodeGrouping { Pattern, ExactCode };

struct TallyEntry {
    std::string key;           // checklist pattern, or trimmed raw code when unknown
    std::string display_name;
    const CriterionChecklist* checklist = nullptr;
    double weight = 0.0;
    std::set<std::string> supporting_models;
    std::map<std::string, std::set<std::string>> evidence_symptoms;  // model -> canonical tokens
};

struct VoteTally {
    std::vector<TallyEntry> entries;  // sorted by key
    /// Canonical symptom tokens of every contributing model, including those
    /// that did not vote for a given entry.
    std::map<std::string, std::set<std::string>> model_symptoms;
    double total_weight = 0.0;
};

enum class CriterionStatus { Validated, Unmet, UnknownCode };
std::string_view to_string(CriterionStatus status);

enum class ConsensusFlag { LowConsensus, CriterionUnmet, DegradedEnsemble };
std::string_view to_string(ConsensusFlag flag);

struct RankedCandidate {
    std::string code;
    std::string name;
    double aggregate_confidence = 0.0;
    double weight = 0.0;
    int supporting_model_count = 0;
    CriterionStatus criterion_status = CriterionStatus::UnknownCode;
    int matched_symptom_count = 0;
    std::vector<std::string> matched_domains;
    std::vector<std::string> supporting_models;
};

struct ConsensusResult {
    std::vector<RankedCandidate> ranked;
    std::set<ConsensusFlag> flags;
    Mode attribution = Mode::PrivateAi;
    int available_model_count = 0;

    [[nodiscard]] bool has(ConsensusFlag flag) const { return flags.contains(flag); }
};

struct ConsensusConfig {
    CodeGrouping grouping = CodeGrouping::Pattern;
    int low_consensus_min_support = 2;
    double low_consensus_min_share = 0.5;
    int full_ensemble_size = 3;
    int evidence_min_models = 2;
    bool promote_validated = true;
};

/// Stage one: confidence-weighted vote grouped by code. Each model contributes at
/// most once per code, with the larger of its primary/differential confidences.
VoteTally tally_votes(std::span<const ModelOutput> outputs, const KnowledgeBase& kb,
                      const ConsensusConfig& config = {});

/// Stage two: rank by weight, then criterion cross-validation of the leading
/// known-code candidates against symptoms cited by at least two models.
ConsensusResult rank_and_validate(const VoteTally& tally, const KnowledgeBase& kb,
                                  int available_model_count, const ConsensusConfig& config = {});

ConsensusResult consensus(std::span<const ModelOutput> outputs, const KnowledgeBase& kb, Mode mode,
                          const ConsensusConfig& config = {});

}  // namespace consilium
