#include "consilium/dsm5_knowledge.hpp"

#include <algorithm>
#include <cctype>

#include "json.hpp"

#include "consilium/bundled_data.hpp"
#include "consilium/crypto.hpp"
#include "consilium/error.hpp"

namespace consilium {

std::string_view to_string(InstrumentId id) {
    switch (id) {
        case InstrumentId::Phq9: return "phq9";
        case InstrumentId::Gad7: return "gad7";
        case InstrumentId::Pcl5: return "pcl5";
        case InstrumentId::Mdq: return "mdq";
        case InstrumentId::Panss: return "panss";
    }
    return "phq9";
}

std::optional<InstrumentId> parse_instrument(std::string_view text) {
    for (auto id : {InstrumentId::Phq9, InstrumentId::Gad7, InstrumentId::Pcl5, InstrumentId::Mdq, InstrumentId::Panss})
        if (to_string(id) == text) return id;
    return std::nullopt;
}

std::string normalize_phrase(std::string_view raw) {
    std::string folded;
    folded.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto c = static_cast<unsigned char>(raw[i]);
        if (c == 0xE2 && i + 2 < raw.size() && static_cast<unsigned char>(raw[i + 1]) == 0x80) {
            const auto d = static_cast<unsigned char>(raw[i + 2]);
            if (d == 0x98 || d == 0x99) {  // ‘ ’
                folded.push_back('\'');
                i += 2;
                continue;
            }
            if (d == 0x93 || d == 0x94) {  // – —
                folded.push_back('-');
                i += 2;
                continue;
            }
        }
        folded.push_back(static_cast<char>(std::tolower(c)));
    }
    std::string out;
    out.reserve(folded.size());
    bool pending_space = false;
    for (char c : folded) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// "296.2x" style: stem plus trailing wildcard digit.
bool matches_wildcard(std::string_view code, std::string_view pattern) {
    if (code == pattern) return true;
    const auto stem = pattern.substr(0, pattern.size() - 1);
    if (code.size() == stem.size()) return code == stem;
    if (code.size() != pattern.size()) return false;
    return code.substr(0, stem.size()) == stem && (is_digit(code.back()) || code.back() == 'x');
}

}  // namespace

bool code_matches_pattern(std::string_view raw_code, std::string_view raw_pattern) {
    const auto code = normalize_phrase(raw_code);
    const auto pattern = normalize_phrase(raw_pattern);
    if (code.empty() || pattern.empty()) return false;
    if (code == pattern) return true;

    if (const auto dash = pattern.find('-'); dash != std::string::npos) {
        const std::string_view lo = std::string_view(pattern).substr(0, dash);
        const std::string_view hi = std::string_view(pattern).substr(dash + 1);
        // Range endpoints share a stem and differ in the digit before the wildcard.
        if (lo.size() != hi.size() || lo.size() < 2 || lo.back() != 'x' || hi.back() != 'x') return false;
        const auto pos = lo.size() - 2;
        if (lo.substr(0, pos) != hi.substr(0, pos) || !is_digit(lo[pos]) || !is_digit(hi[pos])) return false;
        if (code.size() < pos + 1 || code.substr(0, pos) != lo.substr(0, pos)) return false;
        const char d = code[pos];
        if (!is_digit(d) || d < lo[pos] || d > hi[pos]) return false;
        if (code.size() == pos + 1) return true;
        return code.size() == pos + 2 && (is_digit(code.back()) || code.back() == 'x');
    }
    if (pattern.back() == 'x') return matches_wildcard(code, pattern);
    return false;
}

KnowledgeBase KnowledgeBase::load_bundled() { return from_json(bundled::knowledge_base()); }

KnowledgeBase KnowledgeBase::from_json(std::string_view json_text) {
    KnowledgeBase kb;
    kb.digest_ = crypto::sha256_hex(json_text);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
        for (const auto& c : doc.at("checklists")) {
            CriterionChecklist cl;
            cl.condition_name = c.at("condition_name").get<std::string>();
            cl.aliases = c.value("aliases", std::vector<std::string>{});
            cl.code_pattern = c.at("code_pattern").get<std::string>();
            cl.symptom_domains = c.at("symptom_domains").get<std::vector<std::string>>();
            cl.min_symptom_count = c.at("min_symptom_count").get<int>();
            auto instrument = parse_instrument(c.at("instrument_id").get<std::string>());
            if (!instrument) throw Error(ErrorCode::KnowledgeBaseCorrupt, cl.condition_name + ": unknown instrument");
            cl.instrument_id = *instrument;
            if (cl.min_symptom_count < 1 || cl.min_symptom_count > static_cast<int>(cl.symptom_domains.size()))
                throw Error(ErrorCode::KnowledgeBaseCorrupt, cl.condition_name + ": min_symptom_count out of range");
            if (!code_matches_pattern(cl.code_pattern, cl.code_pattern))
                throw Error(ErrorCode::KnowledgeBaseCorrupt, cl.condition_name + ": code pattern does not match itself");
            kb.checklists_.push_back(std::move(cl));
        }
        for (const auto& [phrase, token] : doc.at("lexicon").items())
            kb.lexicon_[normalize_phrase(phrase)] = token.get<std::string>();
        for (const auto& i : doc.at("instruments")) {
            InstrumentDefinition def;
            auto id = parse_instrument(i.at("instrument_id").get<std::string>());
            if (!id) throw Error(ErrorCode::KnowledgeBaseCorrupt, "unknown instrument id");
            def.id = *id;
            def.display_name = i.at("display_name").get<std::string>();
            def.scored = i.at("scored").get<bool>();
            const int count = i.at("item_count").get<int>();
            if (i.contains("item_ranges")) {
                for (const auto& r : i["item_ranges"]) def.item_ranges.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
            } else {
                def.item_ranges.assign(static_cast<std::size_t>(count),
                                       {i.at("item_min").get<int>(), i.at("item_max").get<int>()});
            }
            if (static_cast<int>(def.item_ranges.size()) != count)
                throw Error(ErrorCode::KnowledgeBaseCorrupt, def.display_name + ": item_ranges length mismatch");
            for (const auto& b : i.at("bands"))
                def.bands.push_back({b.at("min").get<int>(), b.at("max").get<int>(), b.at("label").get<std::string>()});
            kb.instruments_.push_back(std::move(def));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::KnowledgeBaseCorrupt, std::string("knowledge base: ") + e.what());
    }

    std::set<std::string> targets;
    for (const auto& [phrase, token] : kb.lexicon_) targets.insert(token);
    for (const auto& cl : kb.checklists_)
        for (const auto& d : cl.symptom_domains)
            if (!targets.contains(d))
                throw Error(ErrorCode::KnowledgeBaseCorrupt, "domain '" + d + "' has no lexicon entry");
    // Canonical tokens always map to themselves.
    for (const auto& t : targets) kb.lexicon_.emplace(t, t);
    return kb;
}

const CriterionChecklist* KnowledgeBase::find_by_pattern(std::string_view pattern) const {
    for (const auto& cl : checklists_)
        if (cl.code_pattern == pattern) return &cl;
    return nullptr;
}

const CriterionChecklist* KnowledgeBase::find_by_name(std::string_view name) const {
    const auto key = normalize_phrase(name);
    if (key.empty()) return nullptr;
    for (const auto& cl : checklists_) {
        if (normalize_phrase(cl.condition_name) == key) return &cl;
        for (const auto& alias : cl.aliases)
            if (normalize_phrase(alias) == key) return &cl;
    }
    return nullptr;
}

CodeMatch KnowledgeBase::normalize_code(std::string_view raw) const {
    CodeMatch match;
    match.canonical_code = normalize_phrase(raw);
    for (const auto& cl : checklists_) {
        if (code_matches_pattern(match.canonical_code, cl.code_pattern)) {
            match.checklist = &cl;
            break;
        }
    }
    return match;
}

CanonicalSymptoms KnowledgeBase::canonicalize_symptoms(std::span<const std::string> raw) const {
    CanonicalSymptoms out;
    for (const auto& r : raw) {
        auto it = lexicon_.find(normalize_phrase(r));
        if (it != lexicon_.end())
            out.tokens.insert(it->second);
        else
            out.residue.push_back(r);
    }
    return out;
}

const InstrumentDefinition& KnowledgeBase::instrument(InstrumentId id) const {
    for (const auto& def : instruments_)
        if (def.id == id) return def;
    throw Error(ErrorCode::UnknownInstrument, "instrument not in knowledge base: " + std::string(to_string(id)));
}

InstrumentScore KnowledgeBase::score_instrument(InstrumentId id, std::span<const int> items) const {
    const auto& def = instrument(id);
    if (items.size() != def.item_ranges.size())
        throw Error(ErrorCode::WrongItemCount, def.display_name + " expects " + std::to_string(def.item_ranges.size()) +
                                                   " items, got " + std::to_string(items.size()));
    InstrumentScore score{id, std::vector<int>(items.begin(), items.end()), 0, "unscored"};
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto [lo, hi] = def.item_ranges[i];
        if (items[i] < lo || items[i] > hi)
            throw Error(ErrorCode::ItemOutOfRange, def.display_name + " item " + std::to_string(i + 1) + " must be in [" +
                                                       std::to_string(lo) + ", " + std::to_string(hi) + "]");
        score.total += items[i];
    }
    if (def.scored) {
        for (const auto& band : def.bands)
            if (score.total >= band.min && score.total <= band.max) score.severity_band = band.label;
    }
    return score;
}

ThresholdResult check_threshold(const CriterionChecklist& checklist, const std::set<std::string>& evidence_tokens) {
    ThresholdResult r;
    for (const auto& d : checklist.symptom_domains) {
        if (evidence_tokens.contains(d)) {
            ++r.matched_count;
            r.matched_domains.push_back(d);
        }
    }
    r.pass = r.matched_count >= checklist.min_symptom_count;
    return r;
}

}  // namespace consilium
