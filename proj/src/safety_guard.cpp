#include "consilium/safety_guard.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"

#include "consilium/bundled_data.hpp"
#include "consilium/error.hpp"

namespace consilium {

namespace {

using Json = nlohmann::json;

constexpr std::string_view kWithheld = "[withheld]";

std::optional<RiskCategory> parse_category(std::string_view s) {
    if (s == "suicidal_ideation") return RiskCategory::SuicidalIdeation;
    if (s == "self_harm_intent") return RiskCategory::SelfHarmIntent;
    if (s == "severe_functional_impairment") return RiskCategory::SevereFunctionalImpairment;
    return std::nullopt;
}

// Lowercased, whitespace-collapsed text plus, per output byte, the source byte
// range it came from.
struct MappedText {
    std::string text;
    std::vector<std::pair<std::size_t, std::size_t>> origin;  // (offset, length)
};

MappedText normalize_mapped(std::string_view raw) {
    MappedText m;
    bool pending_space = false;
    for (std::size_t i = 0; i < raw.size();) {
        const auto c = static_cast<unsigned char>(raw[i]);
        char out = 0;
        std::size_t len = 1;
        if (c == 0xE2 && i + 2 < raw.size() && static_cast<unsigned char>(raw[i + 1]) == 0x80) {
            const auto c2 = static_cast<unsigned char>(raw[i + 2]);
            if (c2 == 0x98 || c2 == 0x99) out = '\'', len = 3;
            if (c2 == 0x93 || c2 == 0x94) out = '-', len = 3;
        }
        if (len == 1) {
            if (std::isspace(c)) {
                pending_space = !m.text.empty();
                ++i;
                continue;
            }
            out = static_cast<char>(std::tolower(c));
        }
        if (pending_space) {
            m.text.push_back(' ');
            m.origin.emplace_back(i, 0);
            pending_space = false;
        }
        m.text.push_back(out);
        m.origin.emplace_back(i, len);
        i += len;
    }
    return m;
}

std::vector<std::string> words_of(std::string_view s) {
    std::vector<std::string> words;
    std::istringstream in{std::string(s)};
    std::string w;
    while (in >> w) {
        while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back())) && w.back() != '\'') w.pop_back();
        if (!w.empty()) words.push_back(w);
    }
    return words;
}

std::string replace_all_icase(std::string text, std::string_view needle, std::string_view with) {
    if (needle.empty()) return text;
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto hit = lower.find(needle, pos);
        if (hit == std::string::npos) break;
        out.append(text, pos, hit - pos);
        out.append(with);
        pos = hit + needle.size();
    }
    out.append(text, pos, std::string::npos);
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

std::string_view to_string(RiskCategory category) {
    switch (category) {
        case RiskCategory::SuicidalIdeation: return "suicidal_ideation";
        case RiskCategory::SelfHarmIntent: return "self_harm_intent";
        case RiskCategory::SevereFunctionalImpairment: return "severe_functional_impairment";
    }
    return "suicidal_ideation";
}

std::string PatientFeedback::render_text() const {
    std::string out;
    if (escalation_notice) out += *escalation_notice + "\n\n";
    for (const auto& s : domain_summaries) out += s + "\n";
    if (!domain_summaries.empty()) out += "\n";
    out += framing;
    return out;
}

SafetyGuard SafetyGuard::load_bundled(const KnowledgeBase& kb) {
    return SafetyGuard(bundled::risk_lexicon(), bundled::escalation_resources(), bundled::patient_feedback(), kb);
}

SafetyGuard::SafetyGuard(std::string_view risk_lexicon_json, std::string_view resources_json,
                         std::string_view feedback_json, const KnowledgeBase& kb)
    : kb_(&kb) {
    try {
        const auto lex = Json::parse(risk_lexicon_json);
        const auto& neg = lex.at("negation");
        window_words_ = neg.at("window_words").get<int>();
        window_cues_ = neg.at("cues").get<std::vector<std::string>>();
        adjacent_cues_ = neg.at("adjacent_cues").get<std::vector<std::string>>();
        for (const auto& p : lex.at("patterns")) {
            auto cat = parse_category(p.at("category").get<std::string>());
            if (!cat) throw Error(ErrorCode::ParseError, "risk lexicon: unknown category");
            patterns_.push_back({*cat, std::regex(p.at("regex").get<std::string>(), std::regex::ECMAScript)});
        }

        const auto res = Json::parse(resources_json);
        clinician_notice_ = res.at("clinician_notice").get<std::string>();
        patient_notice_ = res.at("patient_notice").get<std::string>();
        category_labels_ = res.at("category_labels").get<std::map<std::string, std::string>>();

        const auto fb = Json::parse(feedback_json);
        domain_phrases_ = fb.at("domain_phrases").get<std::map<std::string, std::string>>();
        generic_feedback_ = fb.at("generic_feedback").get<std::string>();
        low_confidence_feedback_ = fb.at("low_confidence_feedback").get<std::string>();
        framing_ = fb.at("framing").get<std::string>();
        instrument_template_ = fb.at("instrument_template").get<std::string>();
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("safety data: ") + e.what());
    } catch (const std::regex_error& e) {
        throw Error(ErrorCode::ParseError, std::string("risk lexicon regex: ") + e.what());
    }

    for (const auto& c : kb.checklists()) {
        redaction_terms_.push_back(lower(c.condition_name));
        redaction_terms_.push_back(lower(c.code_pattern));
        redaction_terms_.push_back(normalize_phrase(c.code_pattern));
        for (const auto& a : c.aliases) redaction_terms_.push_back(lower(a));
    }
    std::sort(redaction_terms_.begin(), redaction_terms_.end(),
              [](const std::string& a, const std::string& b) { return a.size() != b.size() ? a.size() > b.size() : a < b; });
    redaction_terms_.erase(std::unique(redaction_terms_.begin(), redaction_terms_.end()), redaction_terms_.end());
}

bool SafetyGuard::negated(const std::string& normalized, std::size_t match_start) const {
    auto prefix = std::string_view(normalized).substr(0, match_start);
    const auto boundary = prefix.find_last_of(".!?;");
    if (boundary != std::string_view::npos) prefix = prefix.substr(boundary + 1);
    const auto words = words_of(prefix);
    if (words.empty()) return false;
    if (std::find(adjacent_cues_.begin(), adjacent_cues_.end(), words.back()) != adjacent_cues_.end()) return true;
    const auto n = std::min<std::size_t>(words.size(), static_cast<std::size_t>(window_words_));
    std::string window;
    for (std::size_t i = words.size() - n; i < words.size(); ++i) window += " " + words[i];
    window += " ";
    return std::any_of(window_cues_.begin(), window_cues_.end(),
                       [&](const std::string& cue) { return window.find(" " + cue + " ") != std::string::npos; });
}

RiskAssessment SafetyGuard::assess_risk(std::string_view text) const {
    struct Candidate {
        std::size_t start;
        std::size_t length;
        RiskCategory category;
    };
    RiskAssessment out;
    const auto mapped = normalize_mapped(text);
    std::vector<Candidate> candidates;
    for (const auto& p : patterns_)
        for (auto it = std::sregex_iterator(mapped.text.begin(), mapped.text.end(), p.regex);
             it != std::sregex_iterator(); ++it)
            if (it->length(0) > 0)
                candidates.push_back({static_cast<std::size_t>(it->position(0)),
                                      static_cast<std::size_t>(it->length(0)), p.category});
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return a.start != b.start ? a.start < b.start : a.length < b.length;
    });

    // Matches inside, or coordinated with, a negated match stay negated: "denies self-harm or suicidal thoughts".
    static const std::set<std::string, std::less<>> connectives{"or", "and", "nor", "any", "other"};
    std::optional<std::size_t> negated_end;
    for (const auto& c : candidates) {
        bool is_negated = negated(mapped.text, c.start) || (negated_end && c.start < *negated_end);
        if (!is_negated && negated_end) {
            const auto gap = std::string_view(mapped.text).substr(*negated_end, c.start - *negated_end);
            if (gap.find_first_of(".!?;") == std::string_view::npos) {
                const auto words = words_of(gap);
                const bool all_connective = std::all_of(words.begin(), words.end(), [](const std::string& w) {
                    return connectives.contains(w);
                });
                const bool disjunction = std::find(words.begin(), words.end(), "or") != words.end() ||
                                         std::find(words.begin(), words.end(), "nor") != words.end();
                is_negated = words.size() <= 3 && (all_connective || disjunction);
            }
        }
        if (is_negated) {
            negated_end = std::max(negated_end.value_or(0), c.start + c.length);
            continue;
        }
        const auto& first = mapped.origin[c.start];
        const auto& last = mapped.origin[c.start + c.length - 1];
        out.matched_spans.push_back({first.first, last.first + last.second - first.first, c.category});
        out.categories.insert(c.category);
    }
    out.triggered = !out.categories.empty();
    return out;
}

std::string SafetyGuard::clinician_escalation(const RiskAssessment& risk) const {
    if (!risk.triggered) return {};
    std::string out = clinician_notice_;
    std::string labels;
    for (auto c : risk.categories) {
        if (!labels.empty()) labels += "; ";
        auto it = category_labels_.find(std::string(to_string(c)));
        labels += it != category_labels_.end() ? it->second : std::string(to_string(c));
    }
    return out + " Detected: " + labels + ".";
}

std::string SafetyGuard::redact(std::string_view text) const {
    std::string out(text);
    for (const auto& term : redaction_terms_) out = replace_all_icase(std::move(out), term, kWithheld);
    static const std::regex code_like(R"(\b\d{3}\.[0-9xX]{1,2}\b)");
    out = std::regex_replace(out, code_like, std::string(kWithheld));
    // Stems of the code patterns, e.g. a bare "296".
    for (const auto& c : kb_->checklists()) {
        const std::regex stem("\\b" + c.code_pattern.substr(0, 3) + "\\b");
        out = std::regex_replace(out, stem, std::string(kWithheld));
    }
    return out;
}

PatientFeedback SafetyGuard::filter_for_patient(const ConsensusResult& result,
                                                std::span<const InstrumentScore> instrument_scores,
                                                const RiskAssessment* risk) const {
    PatientFeedback fb;
    if (risk != nullptr && risk->triggered) fb.escalation_notice = redact(patient_notice_);

    if (!result.ranked.empty()) {
        for (const auto& domain : result.ranked.front().matched_domains) {
            auto it = domain_phrases_.find(domain);
            if (it != domain_phrases_.end()) fb.domain_summaries.push_back(redact(it->second));
        }
    }
    if (fb.domain_summaries.empty()) fb.domain_summaries.push_back(redact(generic_feedback_));

    for (const auto& s : instrument_scores) {
        if (s.severity_band == "unscored") continue;
        std::string line = instrument_template_;
        line = replace_all_icase(line, "{instrument}", kb_->instrument(s.instrument_id).display_name);
        line = replace_all_icase(line, "{total}", std::to_string(s.total));
        line = replace_all_icase(line, "{band}", s.severity_band);
        fb.domain_summaries.push_back(redact(line));
    }
    if (result.has(ConsensusFlag::LowConsensus)) fb.domain_summaries.push_back(redact(low_confidence_feedback_));
    fb.framing = redact(framing_);
    fb.contains_no_codes = true;
    return fb;
}

}  // namespace consilium
