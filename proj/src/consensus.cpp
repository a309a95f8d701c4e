#include "consilium/consensus.hpp"

#include <algorithm>

#include "consilium/error.hpp"

namespace consilium {

std::string_view to_string(CriterionStatus status) {
    switch (status) {
        case CriterionStatus::Validated: return "validated";
        case CriterionStatus::Unmet: return "unmet";
        case CriterionStatus::UnknownCode: return "unknown_code";
    }
    return "unknown_code";
}

std::string_view to_string(ConsensusFlag flag) {
    switch (flag) {
        case ConsensusFlag::LowConsensus: return "low_consensus";
        case ConsensusFlag::CriterionUnmet: return "criterion_unmet";
        case ConsensusFlag::DegradedEnsemble: return "degraded_ensemble";
    }
    return "low_consensus";
}

namespace {

struct Vote {
    std::string key;
    const CriterionChecklist* checklist = nullptr;
    std::string name;
    double confidence = 0.0;
};

Vote resolve(const KnowledgeBase& kb, const CodeGrouping grouping, std::string_view code, std::string_view name,
             double confidence) {
    Vote v;
    v.name = std::string(name);
    v.confidence = confidence;
    if (!code.empty()) {
        auto match = kb.normalize_code(code);
        v.checklist = match.checklist;
        v.key = match.matched() && grouping == CodeGrouping::Pattern ? match.checklist->code_pattern
                                                                     : match.canonical_code;
        return v;
    }
    // Differential entry without a code: fall back to the condition name.
    v.checklist = kb.find_by_name(name);
    v.key = v.checklist != nullptr ? v.checklist->code_pattern : normalize_phrase(name);
    return v;
}

}  // namespace

VoteTally tally_votes(std::span<const ModelOutput> outputs, const KnowledgeBase& kb, const ConsensusConfig& config) {
    if (outputs.empty()) throw Error(ErrorCode::EmptyOutputs, "consensus needs at least one model output");

    struct Accum {
        TallyEntry entry;
        std::map<std::string, double> best;        // model -> max confidence for this key
        std::map<std::string, std::string> names;  // model -> diagnosis text
    };
    std::map<std::string, Accum> by_key;
    VoteTally tally;

    for (const auto& out : outputs) {
        const auto symptoms = kb.canonicalize_symptoms(out.supporting_symptoms);
        tally.model_symptoms[out.model_id].insert(symptoms.tokens.begin(), symptoms.tokens.end());

        std::vector<Vote> votes;
        votes.push_back(resolve(kb, config.grouping, out.dsm5_code, out.diagnosis, out.confidence));
        for (const auto& d : out.differential)
            votes.push_back(resolve(kb, config.grouping, d.dsm5_code, d.diagnosis, d.confidence));

        for (const auto& v : votes) {
            auto& acc = by_key[v.key];
            acc.entry.key = v.key;
            if (v.checklist != nullptr) acc.entry.checklist = v.checklist;
            auto [it, inserted] = acc.best.emplace(out.model_id, v.confidence);
            if (inserted) {
                acc.names[out.model_id] = v.name;
            } else if (v.confidence > it->second) {
                it->second = v.confidence;
                acc.names[out.model_id] = v.name;
            }
            acc.entry.supporting_models.insert(out.model_id);
            acc.entry.evidence_symptoms[out.model_id] = symptoms.tokens;
        }
    }

    for (auto& [key, acc] : by_key) {
        for (const auto& [model, conf] : acc.best) acc.entry.weight += conf;
        acc.entry.display_name = acc.entry.checklist != nullptr ? acc.entry.checklist->condition_name
                                                                : acc.names.begin()->second;
        tally.total_weight += acc.entry.weight;
        tally.entries.push_back(std::move(acc.entry));
    }
    return tally;
}

ConsensusResult rank_and_validate(const VoteTally& tally, const KnowledgeBase& /*kb*/, int available_model_count,
                                  const ConsensusConfig& config) {
    if (available_model_count < 1) throw Error(ErrorCode::EmptyOutputs, "available model count must be at least 1");
    ConsensusResult result;
    result.available_model_count = available_model_count;

    // Tokens cited by enough distinct models.
    std::map<std::string, int> citations;
    for (const auto& [model, tokens] : tally.model_symptoms)
        for (const auto& t : tokens) ++citations[t];
    std::set<std::string> evidence;
    for (const auto& [t, n] : citations)
        if (n >= config.evidence_min_models) evidence.insert(t);

    for (const auto& e : tally.entries) {
        RankedCandidate c;
        c.code = e.key;
        c.name = e.display_name;
        c.weight = e.weight;
        c.aggregate_confidence = std::clamp(e.weight / available_model_count, 0.0, 1.0);
        c.supporting_model_count = static_cast<int>(e.supporting_models.size());
        c.supporting_models.assign(e.supporting_models.begin(), e.supporting_models.end());
        if (e.checklist != nullptr) {
            const auto th = check_threshold(*e.checklist, evidence);
            c.criterion_status = th.pass ? CriterionStatus::Validated : CriterionStatus::Unmet;
            c.matched_symptom_count = th.matched_count;
            c.matched_domains = th.matched_domains;
        }
        result.ranked.push_back(std::move(c));
    }
    std::sort(result.ranked.begin(), result.ranked.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        if (a.supporting_model_count != b.supporting_model_count)
            return a.supporting_model_count > b.supporting_model_count;
        return a.code < b.code;
    });

    auto first_known = std::find_if(result.ranked.begin(), result.ranked.end(), [](const RankedCandidate& c) {
        return c.criterion_status != CriterionStatus::UnknownCode;
    });
    if (first_known != result.ranked.end() && first_known->criterion_status == CriterionStatus::Unmet)
        result.flags.insert(ConsensusFlag::CriterionUnmet);
    if (config.promote_validated) {
        auto validated = std::find_if(result.ranked.begin(), result.ranked.end(), [](const RankedCandidate& c) {
            return c.criterion_status == CriterionStatus::Validated;
        });
        if (validated != result.ranked.end()) std::rotate(result.ranked.begin(), validated, validated + 1);
    }

    if (!result.ranked.empty()) {
        const auto& top = result.ranked.front();
        const double share = tally.total_weight > 0.0 ? top.weight / tally.total_weight : 0.0;
        if (top.supporting_model_count < config.low_consensus_min_support || share < config.low_consensus_min_share)
            result.flags.insert(ConsensusFlag::LowConsensus);
    }
    if (available_model_count < config.full_ensemble_size) result.flags.insert(ConsensusFlag::DegradedEnsemble);
    return result;
}

ConsensusResult consensus(std::span<const ModelOutput> outputs, const KnowledgeBase& kb, Mode mode,
                          const ConsensusConfig& config) {
    auto tally = tally_votes(outputs, kb, config);
    auto result = rank_and_validate(tally, kb, static_cast<int>(outputs.size()), config);
    result.attribution = mode;
    return result;
}

}  // namespace consilium
