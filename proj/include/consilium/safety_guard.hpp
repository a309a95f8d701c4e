#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "consilium/consensus.hpp"
#include "consilium/dsm5_knowledge.hpp"

namespace consilium {

enum class RiskCategory { SuicidalIdeation, SelfHarmIntent, SevereFunctionalImpairment };
std::string_view to_string(RiskCategory category);

struct RiskSpan {
    std::size_t offset = 0;  // bytes into the original input
    std::size_t length = 0;
    RiskCategory category = RiskCategory::SuicidalIdeation;
};

struct RiskAssessment {
    bool triggered = false;
    std::set<RiskCategory> categories;
    std::vector<RiskSpan> matched_spans;  // ordered by offset
};

struct PatientFeedback {
    std::optional<std::string> escalation_notice;
    std::vector<std::string> domain_summaries;
    std::string framing;
    bool contains_no_codes = true;

    /// Escalation first, then domain feedback, then framing.
    [[nodiscard]] std::string render_text() const;
};

/// Lexicon/pattern risk scan and patient-mode output filter. Immutable after load.
class SafetyGuard {
  public:
    static SafetyGuard load_bundled(const KnowledgeBase& kb);
    SafetyGuard(std::string_view risk_lexicon_json, std::string_view resources_json,
                std::string_view feedback_json, const KnowledgeBase& kb);

    [[nodiscard]] RiskAssessment assess_risk(std::string_view text) const;

    [[nodiscard]] PatientFeedback filter_for_patient(const ConsensusResult& result,
                                                     std::span<const InstrumentScore> instrument_scores = {},
                                                     const RiskAssessment* risk = nullptr) const;

    /// Resource text surfaced ahead of diagnostic content for clinicians.
    [[nodiscard]] std::string clinician_escalation(const RiskAssessment& risk) const;
    [[nodiscard]] const std::string& patient_escalation() const { return patient_notice_; }

    /// Replaces every code pattern, code-like token, condition name and alias.
    [[nodiscard]] std::string redact(std::string_view text) const;

  private:
    struct Pattern {
        RiskCategory category;
        std::regex regex;
    };
    bool negated(const std::string& normalized, std::size_t match_start) const;

    const KnowledgeBase* kb_;
    std::vector<Pattern> patterns_;
    std::vector<std::string> window_cues_;
    std::vector<std::string> adjacent_cues_;
    int window_words_ = 3;
    std::string clinician_notice_;
    std::string patient_notice_;
    std::map<std::string, std::string> category_labels_;
    std::map<std::string, std::string> domain_phrases_;
    std::string generic_feedback_;
    std::string low_confidence_feedback_;
    std::string framing_;
    std::string instrument_template_;
    std::vector<std::string> redaction_terms_;  // lowercase, longest first
};

}  // namespace consilium
