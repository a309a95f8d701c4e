#include "doctest.h"
#include "test_support.hpp"

#include "consilium/bundled_data.hpp"
#include "consilium/corpus_tools.hpp"
#include "consilium/error.hpp"
#include "consilium/inference_backend.hpp"
#include "consilium/prompt_engine.hpp"

using namespace consilium;
using testing::kb;

namespace {

struct Directory final : ModelDirectory {
    std::optional<ModelFamily> family_of(std::string_view id) const override {
        if (id == "g") return ModelFamily::Gemma;
        if (id == "p") return ModelFamily::Phi;
        if (id == "o") return ModelFamily::Other;
        return std::nullopt;
    }
};

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("diagnosis prompt carries the fixed instruction, conversation and criteria") {
    auto store = TemplateStore::load_bundled();
    Directory dir;
    PromptEngine engine(store, dir);
    auto p = engine.render_diagnosis_prompt("Doctor: How are you?\nPatient: Tired.", "g", kb().checklists());
    CHECK(p.text.find(std::string(kDiagnosisSystemInstruction)) == 0);
    CHECK(p.text.find("Patient: Tired.") != std::string::npos);
    CHECK(p.text.find("\"supporting_symptoms\"") != std::string::npos);
    CHECK(p.text.find("296.4x–296.8x") != std::string::npos);
    CHECK(p.included_context_codes.size() == 5);
    CHECK(p.task_flow == TaskFlow::Diagnosis);

    // Rendering is pure: same inputs, same bytes.
    CHECK(engine.render_diagnosis_prompt("Doctor: How are you?\nPatient: Tired.", "g", kb().checklists()).text ==
          p.text);

    auto filtered = engine.render_diagnosis_prompt(
        "x", "p", kb().checklists(), [](const CriterionChecklist& c) { return c.code_pattern == "300.02"; });
    CHECK(filtered.included_context_codes == std::vector<std::string>{"300.02"});
    CHECK(filtered.text.find("309.81") == std::string::npos);

    CHECK(code_of([&] { (void)engine.render_diagnosis_prompt("   ", "g", kb().checklists()); }) ==
          ErrorCode::EmptyConversation);
    CHECK(code_of([&] { (void)engine.render_diagnosis_prompt("x", "zzz", kb().checklists()); }) ==
          ErrorCode::UnknownModel);
}

TEST_CASE("every diagnosis template uses the same system instruction") {
    auto store = TemplateStore::load_bundled();
    int diagnosis = 0;
    for (const auto& t : store.templates())
        if (t.task_flow == TaskFlow::Diagnosis) {
            ++diagnosis;
            CHECK(t.system_instruction == kDiagnosisSystemInstruction);
        }
    CHECK(diagnosis >= 3);
    CHECK(store.find(TaskFlow::Diagnosis, ModelFamily::Qwen).task_flow == TaskFlow::Diagnosis);
    CHECK(store.digest().size() == 64);
}

TEST_CASE("altered diagnosis instruction corrupts the store") {
    auto j = nlohmann::json::parse(std::string(bundled::prompt_templates()));
    for (auto& t : j["templates"])
        if (t["task_flow"] == "diagnosis") t["system_instruction"] = "Something else.";
    CHECK(code_of([&] { (void)TemplateStore::from_json(j.dump()); }) == ErrorCode::TemplateStoreCorrupt);
}

TEST_CASE("task prompts") {
    auto store = TemplateStore::load_bundled();
    Directory dir;
    PromptEngine engine(store, dir);
    auto soap = engine.render_task_prompt(TaskFlow::SoapNote, "patient reports low mood");
    CHECK(soap.text.find("SOAP") != std::string::npos);
    CHECK(soap.text.find("patient reports low mood") != std::string::npos);
    CHECK(engine.render_task_prompt(TaskFlow::Icd10Coding, "x").text.find("ICD-10") != std::string::npos);

    auto doc = parse_attachment_content("name,score\nA,3\n", AttachmentFormat::Csv);
    auto analysis = engine.render_task_prompt(TaskFlow::DocumentAnalysis, "summarize", &doc, "o");
    CHECK(analysis.text.find(doc.summary) != std::string::npos);
    CHECK(analysis.text.find("row 1: name=A; score=3") != std::string::npos);

    ExtractedDocument big;
    big.text.assign(kAttachmentPromptCap + 1, 'a');
    CHECK(code_of([&] { (void)engine.render_task_prompt(TaskFlow::DocumentAnalysis, "x", &big); }) ==
          ErrorCode::AttachmentTooLarge);
    CHECK(code_of([&] { (void)engine.render_task_prompt(TaskFlow::SoapNote, " "); }) == ErrorCode::EmptyQuery);
    CHECK(code_of([&] { (void)engine.render_task_prompt(TaskFlow::Diagnosis, "x"); }) ==
          ErrorCode::UnsupportedTaskFlow);
}

TEST_CASE("corrective suffix lists errors in schema order") {
    std::vector<SchemaError> errors{
        {"differential[0].confidence", SchemaErrorKind::OutOfRange, "must be between 0.0 and 1.0, got 2"},
        {"confidence", SchemaErrorKind::MissingField, "required field is missing"},
        {"diagnosis", SchemaErrorKind::EmptyValue, "must not be empty"},
    };
    auto s = render_corrective_suffix("{\"diagnosis\": \"\"}", errors);
    const auto d = s.find("- diagnosis:");
    const auto c = s.find("- confidence:");
    const auto diff = s.find("- differential[0].confidence:");
    REQUIRE(d != std::string::npos);
    REQUIRE(c != std::string::npos);
    REQUIRE(diff != std::string::npos);
    CHECK(d < c);
    CHECK(c < diff);
    CHECK(render_corrective_suffix("x", errors) == render_corrective_suffix("x", errors));

    std::vector<SchemaError> doc{{"", SchemaErrorKind::NoJsonObject, "no JSON object found in the response"}};
    CHECK(render_corrective_suffix("", doc).find("- response: no JSON object") != std::string::npos);
}

TEST_CASE("task flow names round trip") {
    for (auto f : {TaskFlow::Diagnosis, TaskFlow::SoapNote, TaskFlow::Icd10Coding, TaskFlow::ClinicalResearch,
                   TaskFlow::DocumentAnalysis})
        CHECK(parse_task_flow(to_string(f)) == f);
}
