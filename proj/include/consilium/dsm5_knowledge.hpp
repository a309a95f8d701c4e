#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace consilium {

enum class InstrumentId { Phq9, Gad7, Pcl5, Mdq, Panss };
std::string_view to_string(InstrumentId id);
std::optional<InstrumentId> parse_instrument(std::string_view text);

struct CriterionChecklist {
    std::string condition_name;
    std::vector<std::string> aliases;
    std::string code_pattern;  // "300.02", "296.2x" or "296.4x–296.8x"
    std::vector<std::string> symptom_domains;
    int min_symptom_count = 1;
    InstrumentId instrument_id = InstrumentId::Phq9;
};

struct CodeMatch {
    std::string canonical_code;  // trimmed, lowercased input
    const CriterionChecklist* checklist = nullptr;  // null when no checklist matches

    [[nodiscard]] bool matched() const { return checklist != nullptr; }
};

struct CanonicalSymptoms {
    std::set<std::string> tokens;
    std::vector<std::string> residue;  // raw strings with no lexicon entry, input order
};

struct ThresholdResult {
    bool pass = false;
    int matched_count = 0;
    std::vector<std::string> matched_domains;  // checklist order
};

struct InstrumentDefinition {
    InstrumentId id;
    std::string display_name;
    std::vector<std::pair<int, int>> item_ranges;  // per item [min, max]
    bool scored = false;
    struct Band {
        int min;
        int max;
        std::string label;
    };
    std::vector<Band> bands;
};

struct InstrumentScore {
    InstrumentId instrument_id;
    std::vector<int> item_scores;
    int total = 0;
    std::string severity_band;  // "unscored" for validation-only instruments
};

/// True when `code` falls under `pattern` (exact, trailing-x wildcard or x-range).
bool code_matches_pattern(std::string_view code, std::string_view pattern);

/// Lowercase, trim, collapse internal whitespace, fold typographic apostrophes and dashes.
std::string normalize_phrase(std::string_view raw);

/// Immutable checklists, symptom lexicon and instrument tables.
class KnowledgeBase {
  public:
    KnowledgeBase(KnowledgeBase&&) noexcept = default;
    KnowledgeBase& operator=(KnowledgeBase&&) noexcept = default;
    // CodeMatch results point into the checklist table; copies would dangle them.
    KnowledgeBase(const KnowledgeBase&) = delete;
    KnowledgeBase& operator=(const KnowledgeBase&) = delete;

    static KnowledgeBase load_bundled();
    static KnowledgeBase from_json(std::string_view json_text);

    [[nodiscard]] std::span<const CriterionChecklist> checklists() const { return checklists_; }
    [[nodiscard]] const CriterionChecklist* find_by_pattern(std::string_view pattern) const;
    /// Case-insensitive match on condition name or alias.
    [[nodiscard]] const CriterionChecklist* find_by_name(std::string_view name) const;

    [[nodiscard]] CodeMatch normalize_code(std::string_view raw) const;
    [[nodiscard]] CanonicalSymptoms canonicalize_symptoms(std::span<const std::string> raw) const;
    [[nodiscard]] InstrumentScore score_instrument(InstrumentId id, std::span<const int> items) const;
    [[nodiscard]] const InstrumentDefinition& instrument(InstrumentId id) const;

    [[nodiscard]] const std::map<std::string, std::string, std::less<>>& lexicon() const { return lexicon_; }
    [[nodiscard]] const std::string& digest() const { return digest_; }

  private:
    KnowledgeBase() = default;

    std::vector<CriterionChecklist> checklists_;
    std::map<std::string, std::string, std::less<>> lexicon_;
    std::vector<InstrumentDefinition> instruments_;
    std::string digest_;
};

ThresholdResult check_threshold(const CriterionChecklist& checklist,
                                const std::set<std::string>& evidence_tokens);

}  // namespace consilium
