#include "consilium/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "consilium/dsm5_knowledge.hpp"
#include "consilium/error.hpp"

namespace consilium {

std::string_view to_string(SchemaErrorKind kind) {
    switch (kind) {
        case SchemaErrorKind::NoJsonObject: return "no_json_object";
        case SchemaErrorKind::InvalidJson: return "invalid_json";
        case SchemaErrorKind::MissingField: return "missing_field";
        case SchemaErrorKind::TypeMismatch: return "type_mismatch";
        case SchemaErrorKind::OutOfRange: return "out_of_range";
        case SchemaErrorKind::EmptyValue: return "empty_value";
    }
    return "invalid_json";
}

std::string_view extract_json_object(std::string_view raw) {
    const auto start = raw.find('{');
    if (start == std::string_view::npos) return {};
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
        const char c = raw[i];
        if (in_string) {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"')
            in_string = true;
        else if (c == '{')
            ++depth;
        else if (c == '}' && --depth == 0)
            return raw.substr(start, i - start + 1);
    }
    return {};
}

namespace {

using Json = nlohmann::json;

class FieldChecker {
  public:
    explicit FieldChecker(std::vector<SchemaError>& errors) : errors_(errors) {}

    const Json* require(const Json& obj, const std::string& key, const std::string& path) {
        if (!obj.contains(key)) {
            add(path, SchemaErrorKind::MissingField, "required field is missing");
            return nullptr;
        }
        return &obj.at(key);
    }

    std::optional<std::string> text(const Json& obj, const std::string& key, const std::string& path) {
        const auto* v = require(obj, key, path);
        if (v == nullptr) return std::nullopt;
        if (!v->is_string()) {
            add(path, SchemaErrorKind::TypeMismatch, "expected a string");
            return std::nullopt;
        }
        auto s = v->get<std::string>();
        if (normalize_phrase(s).empty()) {
            add(path, SchemaErrorKind::EmptyValue, "must not be empty");
            return std::nullopt;
        }
        return s;
    }

    std::optional<double> confidence(const Json& obj, const std::string& key, const std::string& path) {
        const auto* v = require(obj, key, path);
        if (v == nullptr) return std::nullopt;
        if (!v->is_number()) {
            add(path, SchemaErrorKind::TypeMismatch, "expected a number between 0.0 and 1.0");
            return std::nullopt;
        }
        const double d = v->get<double>();
        if (!std::isfinite(d) || d < 0.0 || d > 1.0) {
            add(path, SchemaErrorKind::OutOfRange, "must be between 0.0 and 1.0, got " + v->dump());
            return std::nullopt;
        }
        return d;
    }

    void add(const std::string& path, SchemaErrorKind kind, std::string message) {
        errors_.push_back({path, kind, std::move(message)});
    }

  private:
    std::vector<SchemaError>& errors_;
};

std::string reason_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::EgressDenied: return "egress_denied";
        case ErrorCode::GenerationTimeout: return "timeout";
        case ErrorCode::BackendUnavailable: return "backend_unavailable";
        case ErrorCode::UnknownModel: return "unknown_model";
        default: return "backend_error";
    }
}

bool mode_admits(Mode mode, const BackendDescriptor& d) {
    switch (mode) {
        case Mode::PrivateAi: return !d.requires_network;
        case Mode::CloudAi: return d.backend_kind == BackendKind::CloudStub;
        case Mode::Byok: return d.backend_kind == BackendKind::ByokStub;
    }
    return false;
}

DispatchResponse call_backend(BackendHub& hub, const InferenceRequest& request) {
    DispatchResponse r;
    r.model_id = request.model_id;
    try {
        r.stream = hub.get(request.model_id)->generate_stream(request);
    } catch (const Error& e) {
        r.error = e.code();
        r.error_message = e.what();
    } catch (const std::exception& e) {
        r.error = ErrorCode::BackendError;
        r.error_message = e.what();
    }
    return r;
}

}  // namespace

ValidationResult validate_output(std::string_view raw_text) {
    std::vector<SchemaError> errors;
    FieldChecker check(errors);
    const auto object_text = extract_json_object(raw_text);
    if (object_text.empty()) {
        check.add("", SchemaErrorKind::NoJsonObject, "no JSON object found in the response");
        return errors;
    }
    Json doc;
    try {
        doc = Json::parse(object_text);
    } catch (const Json::exception&) {
        check.add("", SchemaErrorKind::InvalidJson, "the JSON object could not be parsed");
        return errors;
    }

    ModelOutput out;
    auto diagnosis = check.text(doc, "diagnosis", "diagnosis");
    auto code = check.text(doc, "dsm5_code", "dsm5_code");
    auto confidence = check.confidence(doc, "confidence", "confidence");

    if (const auto* symptoms = check.require(doc, "supporting_symptoms", "supporting_symptoms")) {
        if (!symptoms->is_array()) {
            check.add("supporting_symptoms", SchemaErrorKind::TypeMismatch, "expected an array of strings");
        } else {
            for (std::size_t i = 0; i < symptoms->size(); ++i) {
                const auto& s = (*symptoms)[i];
                if (!s.is_string())
                    check.add("supporting_symptoms[" + std::to_string(i) + "]", SchemaErrorKind::TypeMismatch,
                              "expected a string");
                else
                    out.supporting_symptoms.push_back(s.get<std::string>());
            }
        }
    }
    if (const auto* diff = check.require(doc, "differential", "differential")) {
        if (!diff->is_array()) {
            check.add("differential", SchemaErrorKind::TypeMismatch, "expected an array of objects");
        } else {
            for (std::size_t i = 0; i < diff->size(); ++i) {
                const auto& e = (*diff)[i];
                const auto path = "differential[" + std::to_string(i) + "]";
                if (!e.is_object()) {
                    check.add(path, SchemaErrorKind::TypeMismatch, "expected an object");
                    continue;
                }
                DifferentialEntry entry;
                auto d = check.text(e, "diagnosis", path + ".diagnosis");
                auto c = check.confidence(e, "confidence", path + ".confidence");
                if (e.contains("dsm5_code")) {
                    if (auto dc = check.text(e, "dsm5_code", path + ".dsm5_code")) entry.dsm5_code = normalize_phrase(*dc);
                }
                if (d && c) {
                    entry.diagnosis = *d;
                    entry.confidence = *c;
                    out.differential.push_back(std::move(entry));
                }
            }
        }
    }
    if (!errors.empty()) return errors;
    out.diagnosis = *diagnosis;
    out.dsm5_code = normalize_phrase(*code);
    out.confidence = *confidence;
    return out;
}

std::vector<DispatchResponse> dispatch(Schedule schedule, BackendHub& hub, std::span<const InferenceRequest> requests) {
    std::vector<DispatchResponse> responses(requests.size());
    if (schedule == Schedule::Sequential) {
        for (std::size_t i = 0; i < requests.size(); ++i) responses[i] = call_backend(hub, requests[i]);
        return responses;
    }
    // One lock per single-slot backend instance.
    std::map<const InferenceBackend*, std::unique_ptr<std::mutex>> slot_locks;
    std::vector<std::mutex*> lock_for(requests.size(), nullptr);
    for (std::size_t i = 0; i < requests.size(); ++i) {
        if (!hub.contains(requests[i].model_id)) continue;
        auto backend = hub.get(requests[i].model_id);
        if (backend->descriptor().supports_parallel_slots) continue;
        auto& m = slot_locks[backend.get()];
        if (!m) m = std::make_unique<std::mutex>();
        lock_for[i] = m.get();
    }
    std::vector<std::thread> workers;
    workers.reserve(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
        workers.emplace_back([&, i] {
            if (lock_for[i] != nullptr) {
                std::lock_guard lock(*lock_for[i]);
                responses[i] = call_backend(hub, requests[i]);
            } else {
                responses[i] = call_backend(hub, requests[i]);
            }
        });
    }
    for (auto& w : workers) w.join();
    return responses;
}

Orchestrator::Orchestrator(const ModelRegistry& registry, BackendHub& hub, const PromptEngine& prompts, Config config)
    : registry_(registry), hub_(hub), prompts_(prompts), config_(std::move(config)) {}

std::vector<std::string> Orchestrator::roster() const {
    if (config_.roster.empty()) return hub_.model_ids();
    std::vector<std::string> out;
    for (const auto& id : config_.roster)
        if (hub_.contains(id)) out.push_back(id);
    return out;
}

Schedule Orchestrator::plan_for(std::span<const std::string> models) const {
    std::vector<ModelManifest> manifests;
    for (const auto& id : models)
        if (registry_.contains(id)) manifests.push_back(registry_.get(id));
    if (manifests.empty()) return Schedule::Parallel;  // remote stubs hold no local memory
    return plan_schedule(manifests, config_.available_memory_bytes, config_.headroom_fraction).schedule;
}

EnsembleRound Orchestrator::run_round(std::string_view conversation, Mode mode,
                                      std::span<const CriterionChecklist> checklists) {
    std::vector<std::string> models;
    for (const auto& id : roster())
        if (mode_admits(mode, hub_.get(id)->descriptor())) models.push_back(id);
    if (models.empty()) throw Error(ErrorCode::NoModelsRegistered, "no model in the roster is usable in this mode");

    EnsembleRound round;
    round.round_id = "round-" + std::to_string(++round_counter_);
    for (const auto& id : models) round.prompts.emplace(id, prompts_.render_diagnosis_prompt(conversation, id, checklists));
    round.schedule_used = plan_for(models);

    std::map<std::string, ModelOutput> accepted;
    std::map<std::string, std::string> corrective;  // model -> suffix for the next attempt
    std::vector<std::string> pending = models;
    for (int attempt = 1; attempt <= kMaxAttempts && !pending.empty(); ++attempt) {
        std::vector<InferenceRequest> requests;
        for (const auto& id : pending) {
            InferenceRequest req = config_.request_defaults;
            req.model_id = id;
            req.prompt_text = round.prompts.at(id).text;
            if (attempt > 1) req.prompt_text += "\n\n" + corrective.at(id);
            req.request_id = round.round_id + "/" + id + "/" + std::to_string(attempt);
            requests.push_back(std::move(req));
        }
        auto responses = dispatch(round.schedule_used, hub_, requests);
        std::vector<std::string> retry;
        for (auto& resp : responses) {
            const auto& id = resp.model_id;
            ++round.invocations[id];
            if (resp.error) {
                round.unavailable.push_back({id, reason_for(*resp.error), attempt});
                continue;
            }
            round.timing[id] = sample_from_stream(*resp.stream, id, round.round_id, attempt);
            const auto text = resp.stream->text();
            auto result = validate_output(text);
            if (auto* out = std::get_if<ModelOutput>(&result)) {
                out->model_id = id;
                out->attempts_used = attempt;
                accepted.emplace(id, std::move(*out));
                round.raw_outputs[id] = text;
            } else if (attempt == kMaxAttempts) {
                round.unavailable.push_back({id, "schema_violation", attempt});
            } else {
                corrective[id] = render_corrective_suffix(text, std::get<std::vector<SchemaError>>(result));
                retry.push_back(id);
            }
        }
        pending = std::move(retry);
    }
    for (const auto& id : models) {
        auto it = accepted.find(id);
        if (it != accepted.end()) round.outputs.push_back(std::move(it->second));
    }
    return round;
}

EnsembleRound Orchestrator::run_ensemble(std::string_view conversation, Mode mode,
                                         std::span<const CriterionChecklist> checklists) {
    auto round = run_round(conversation, mode, checklists);
    if (round.outputs.empty()) {
        const bool all_denied = !round.unavailable.empty() &&
                                std::all_of(round.unavailable.begin(), round.unavailable.end(),
                                            [](const UnavailableModel& u) { return u.reason == "egress_denied"; });
        std::string detail;
        for (const auto& u : round.unavailable) detail += " " + u.model_id + "=" + u.reason;
        if (all_denied) throw Error(ErrorCode::EgressDenied, "every model call was denied by the egress policy:" + detail);
        throw Error(ErrorCode::AllModelsUnavailable, "no model produced a valid output:" + detail);
    }
    return round;
}

}  // namespace consilium
