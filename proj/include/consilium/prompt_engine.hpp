#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "consilium/dsm5_knowledge.hpp"
#include "consilium/model_output.hpp"
#include "consilium/model_registry.hpp"

namespace consilium {

class ModelDirectory;
struct ExtractedDocument;

enum class TaskFlow { Diagnosis, SoapNote, Icd10Coding, ClinicalResearch, DocumentAnalysis };
std::string_view to_string(TaskFlow flow);
std::optional<TaskFlow> parse_task_flow(std::string_view text);

enum class PromptSlot { System, Conversation, Dsm5Context, Attachment, CorrectiveSuffix };

struct PromptTemplate {
    std::string template_id;
    TaskFlow task_flow = TaskFlow::Diagnosis;
    ModelFamily model_family = ModelFamily::Other;
    std::string system_instruction;
    std::string task_directions;
    std::string conversation_heading;
    std::vector<PromptSlot> body_layout;
};

inline constexpr std::string_view kDiagnosisSystemInstruction =
    "You are a psychiatric diagnostic assistant. Analyze the following "
    "psychiatrist–patient conversation and provide the DSM-5 diagnosis.";

inline constexpr std::size_t kAttachmentPromptCap = 64 * 1024;

/// Templates bundled with the application. Immutable once loaded; the digest
/// covers the raw store bytes.
class TemplateStore {
  public:
    static TemplateStore load_bundled();
    static TemplateStore from_json(std::string_view json_text);

    /// Exact family match, falling back to the `other` family template.
    [[nodiscard]] const PromptTemplate& find(TaskFlow flow, ModelFamily family) const;
    [[nodiscard]] std::span<const PromptTemplate> templates() const { return templates_; }
    [[nodiscard]] const std::string& digest() const { return digest_; }

  private:
    std::vector<PromptTemplate> templates_;
    std::string digest_;
};

struct RenderedPrompt {
    std::string model_id;
    TaskFlow task_flow = TaskFlow::Diagnosis;
    std::string text;
    std::vector<std::string> included_context_codes;
};



/// Restricts which checklists enter the criterion reference block. Default: all.
using ChecklistFilter = std::function<bool(const CriterionChecklist&)>;

/// Pure rendering over the template store; performs no I/O.
class PromptEngine {
  public:
    PromptEngine(const TemplateStore& templates, const ModelDirectory& directory);

    [[nodiscard]] RenderedPrompt render_diagnosis_prompt(std::string_view conversation,
                                                         std::string_view model_id,
                                                         std::span<const CriterionChecklist> checklists,
                                                         const ChecklistFilter& filter = {}) const;

    [[nodiscard]] RenderedPrompt render_task_prompt(TaskFlow flow, std::string_view user_text,
                                                    const ExtractedDocument* attachment = nullptr,
                                                    std::string_view model_id = {}) const;

  private:
    const TemplateStore& templates_;
    const ModelDirectory& directory_;
};

/// Plain-text labeled block, one condition per paragraph.
std::string render_criterion_block(std::span<const CriterionChecklist> checklists);

/// Deterministic corrective instruction naming every violated field, in schema order.
std::string render_corrective_suffix(std::string_view previous_output,
                                     std::span<const SchemaError> schema_errors);

}  // namespace consilium
