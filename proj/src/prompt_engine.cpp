#include "consilium/prompt_engine.hpp"

#include <algorithm>

#include "json.hpp"

#include "consilium/bundled_data.hpp"
#include "consilium/corpus_tools.hpp"
#include "consilium/crypto.hpp"
#include "consilium/error.hpp"
#include "consilium/inference_backend.hpp"

namespace consilium {

std::string_view to_string(TaskFlow flow) {
    switch (flow) {
        case TaskFlow::Diagnosis: return "diagnosis";
        case TaskFlow::SoapNote: return "soap_note";
        case TaskFlow::Icd10Coding: return "icd10_coding";
        case TaskFlow::ClinicalResearch: return "clinical_research";
        case TaskFlow::DocumentAnalysis: return "document_analysis";
    }
    return "diagnosis";
}

std::optional<TaskFlow> parse_task_flow(std::string_view text) {
    if (text == "soap") return TaskFlow::SoapNote;
    if (text == "icd10") return TaskFlow::Icd10Coding;
    if (text == "research") return TaskFlow::ClinicalResearch;
    if (text == "doc") return TaskFlow::DocumentAnalysis;
    for (auto f : {TaskFlow::Diagnosis, TaskFlow::SoapNote, TaskFlow::Icd10Coding, TaskFlow::ClinicalResearch,
                   TaskFlow::DocumentAnalysis})
        if (to_string(f) == text) return f;
    return std::nullopt;
}

namespace {

std::optional<PromptSlot> parse_slot(std::string_view text) {
    if (text == "system") return PromptSlot::System;
    if (text == "conversation") return PromptSlot::Conversation;
    if (text == "dsm5_context") return PromptSlot::Dsm5Context;
    if (text == "attachment") return PromptSlot::Attachment;
    if (text == "corrective_suffix") return PromptSlot::CorrectiveSuffix;
    return std::nullopt;
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string join_sections(const std::vector<std::string>& sections) {
    std::string out;
    for (const auto& s : sections) {
        if (s.empty()) continue;
        if (!out.empty()) out += "\n\n";
        out += s;
    }
    return out;
}

int schema_field_rank(std::string_view field) {
    static constexpr std::string_view order[] = {"", "diagnosis", "dsm5_code", "confidence", "supporting_symptoms",
                                                 "differential"};
    const auto head = field.substr(0, std::min(field.find_first_of(".["), field.size()));
    for (int i = 0; i < 6; ++i)
        if (order[i] == head) return i;
    return 6;
}

/// Truncates at a UTF-8 boundary and flattens newlines.
std::string excerpt(std::string_view text, std::size_t max_bytes) {
    std::size_t cut = std::min(text.size(), max_bytes);
    while (cut > 0 && cut < text.size() && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    std::string out(text.substr(0, cut));
    std::replace(out.begin(), out.end(), '\n', ' ');
    if (cut < text.size()) out += "...";
    return out;
}

}  // namespace

TemplateStore TemplateStore::load_bundled() { return from_json(bundled::prompt_templates()); }

TemplateStore TemplateStore::from_json(std::string_view json_text) {
    TemplateStore store;
    store.digest_ = crypto::sha256_hex(json_text);
    try {
        const auto doc = nlohmann::json::parse(json_text);
        for (const auto& t : doc.at("templates")) {
            PromptTemplate pt;
            pt.template_id = t.at("template_id").get<std::string>();
            auto flow = parse_task_flow(t.at("task_flow").get<std::string>());
            auto family = parse_family(t.at("model_family").get<std::string>());
            if (!flow || !family) throw Error(ErrorCode::TemplateStoreCorrupt, pt.template_id + ": bad flow or family");
            pt.task_flow = *flow;
            pt.model_family = *family;
            pt.system_instruction = t.at("system_instruction").get<std::string>();
            pt.task_directions = t.at("task_directions").get<std::string>();
            pt.conversation_heading = t.at("conversation_heading").get<std::string>();
            for (const auto& s : t.at("body_layout")) {
                auto slot = parse_slot(s.get<std::string>());
                if (!slot) throw Error(ErrorCode::TemplateStoreCorrupt, pt.template_id + ": unknown slot");
                pt.body_layout.push_back(*slot);
            }
            if (pt.task_flow == TaskFlow::Diagnosis && pt.system_instruction != kDiagnosisSystemInstruction)
                throw Error(ErrorCode::TemplateStoreCorrupt, pt.template_id + ": diagnosis system instruction altered");
            store.templates_.push_back(std::move(pt));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::TemplateStoreCorrupt, std::string("template store: ") + e.what());
    }
    return store;
}

const PromptTemplate& TemplateStore::find(TaskFlow flow, ModelFamily family) const {
    const PromptTemplate* fallback = nullptr;
    for (const auto& t : templates_) {
        if (t.task_flow != flow) continue;
        if (t.model_family == family) return t;
        if (t.model_family == ModelFamily::Other) fallback = &t;
    }
    if (fallback == nullptr)
        throw Error(ErrorCode::TemplateStoreCorrupt, "no template for task flow " + std::string(to_string(flow)));
    return *fallback;
}

std::string render_criterion_block(std::span<const CriterionChecklist> checklists) {
    std::string out = "DSM-5 criterion reference:";
    int n = 0;
    for (const auto& cl : checklists) {
        out += "\n\n[" + std::to_string(++n) + "] " + cl.condition_name;
        out += "\ncode: " + cl.code_pattern;
        out += "\nsymptom domains: ";
        for (std::size_t i = 0; i < cl.symptom_domains.size(); ++i) {
            if (i > 0) out += ", ";
            out += cl.symptom_domains[i];
        }
        out += "\nminimum symptom count: " + std::to_string(cl.min_symptom_count);
    }
    return out;
}

PromptEngine::PromptEngine(const TemplateStore& templates, const ModelDirectory& directory)
    : templates_(templates), directory_(directory) {}

RenderedPrompt PromptEngine::render_diagnosis_prompt(std::string_view conversation, std::string_view model_id,
                                                     std::span<const CriterionChecklist> checklists,
                                                     const ChecklistFilter& filter) const {
    if (is_blank(conversation)) throw Error(ErrorCode::EmptyConversation, "conversation is empty");
    const auto family = directory_.family_of(model_id);
    if (!family) throw Error(ErrorCode::UnknownModel, "unknown model: " + std::string(model_id));
    const auto& tpl = templates_.find(TaskFlow::Diagnosis, *family);

    std::vector<CriterionChecklist> injected;
    for (const auto& cl : checklists)
        if (!filter || filter(cl)) injected.push_back(cl);

    RenderedPrompt out;
    out.model_id = std::string(model_id);
    out.task_flow = TaskFlow::Diagnosis;
    std::vector<std::string> sections;
    for (auto slot : tpl.body_layout) {
        switch (slot) {
            case PromptSlot::System: sections.push_back(tpl.system_instruction + "\n\n" + tpl.task_directions); break;
            case PromptSlot::Conversation:
                sections.push_back(tpl.conversation_heading + "\n" + std::string(conversation));
                break;
            case PromptSlot::Dsm5Context:
                if (!injected.empty()) sections.push_back(render_criterion_block(injected));
                break;
            case PromptSlot::Attachment:
            case PromptSlot::CorrectiveSuffix: break;  // filled on re-prompt only
        }
    }
    out.text = join_sections(sections);
    for (const auto& cl : injected) out.included_context_codes.push_back(cl.code_pattern);
    return out;
}

RenderedPrompt PromptEngine::render_task_prompt(TaskFlow flow, std::string_view user_text,
                                                const ExtractedDocument* attachment,
                                                std::string_view model_id) const {
    if (flow == TaskFlow::Diagnosis)
        throw Error(ErrorCode::UnsupportedTaskFlow, "diagnosis prompts use render_diagnosis_prompt");
    if (is_blank(user_text)) throw Error(ErrorCode::EmptyQuery, "task input is empty");
    if (attachment != nullptr && attachment->text.size() > kAttachmentPromptCap)
        throw Error(ErrorCode::AttachmentTooLarge, "attachment exceeds " + std::to_string(kAttachmentPromptCap) +
                                                       " bytes of extracted text");
    auto family = ModelFamily::Other;
    if (!model_id.empty()) {
        auto f = directory_.family_of(model_id);
        if (!f) throw Error(ErrorCode::UnknownModel, "unknown model: " + std::string(model_id));
        family = *f;
    }
    const auto& tpl = templates_.find(flow, family);
    RenderedPrompt out;
    out.model_id = std::string(model_id);
    out.task_flow = flow;
    std::vector<std::string> sections;
    for (auto slot : tpl.body_layout) {
        switch (slot) {
            case PromptSlot::System: sections.push_back(tpl.system_instruction + "\n\n" + tpl.task_directions); break;
            case PromptSlot::Conversation:
                sections.push_back(tpl.conversation_heading + "\n" + std::string(user_text));
                break;
            case PromptSlot::Attachment:
                if (attachment != nullptr) {
                    std::string block = "Attached document (" + std::string(to_string(attachment->format)) + "): " +
                                        attachment->summary + "\n" + attachment->text;
                    sections.push_back(std::move(block));
                }
                break;
            case PromptSlot::Dsm5Context:
            case PromptSlot::CorrectiveSuffix: break;
        }
    }
    out.text = join_sections(sections);
    return out;
}

std::string render_corrective_suffix(std::string_view previous_output, std::span<const SchemaError> schema_errors) {
    std::vector<SchemaError> sorted(schema_errors.begin(), schema_errors.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const SchemaError& a, const SchemaError& b) {
        const auto ra = schema_field_rank(a.field);
        const auto rb = schema_field_rank(b.field);
        if (ra != rb) return ra < rb;
        return a.field < b.field;
    });
    std::string out =
        "Your previous response did not follow the required JSON format. Correct these problems and reply "
        "with only the JSON object:";
    for (const auto& e : sorted) {
        out += "\n- ";
        out += e.field.empty() ? std::string("response") : e.field;
        out += ": " + e.message;
    }
    if (!previous_output.empty()) out += "\nPrevious response began: \"" + excerpt(previous_output, 200) + "\"";
    return out;
}

}  // namespace consilium
