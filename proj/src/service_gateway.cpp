#include "consilium/service_gateway.hpp"

#include <arpa/inet.h>
#include <sys/socket.h>

#include <fstream>
#include <regex>

#include "httplib.h"

#include "consilium/bundled_data.hpp"
#include "consilium/error.hpp"

namespace consilium {

namespace fs = std::filesystem;
using OJson = nlohmann::ordered_json;

namespace {

constexpr std::string_view kByokSecretName = "byok_api_key";
constexpr std::string_view kCloudModelId = "cloud-ai";
constexpr std::string_view kByokModelId = "byok";

constexpr std::string_view kCannedRemoteResponse =
    "Simulated remote response. {\"diagnosis\": \"Major Depressive Disorder\", \"dsm5_code\": \"296.22\", "
    "\"confidence\": 0.78, \"supporting_symptoms\": [\"depressed mood\", \"anhedonia\", \"insomnia\", "
    "\"fatigue\", \"poor concentration\"], \"differential\": [{\"diagnosis\": \"Generalized Anxiety Disorder\", "
    "\"dsm5_code\": \"300.02\", \"confidence\": 0.15}]}";

bool mode_admits(Mode mode, const BackendDescriptor& d) {
    switch (mode) {
        case Mode::PrivateAi: return !d.requires_network;
        case Mode::CloudAi: return d.backend_kind == BackendKind::CloudStub;
        case Mode::Byok: return d.backend_kind == BackendKind::ByokStub;
    }
    return false;
}

std::vector<std::string> default_private_roster(const ModelRegistry& registry) {
    std::vector<std::string> ids;
    const bool has_fast = registry.contains("gemma-fast");
    for (const auto& m : registry.all()) {
        if (has_fast && m.family == ModelFamily::Gemma && m.variant == ModelVariant::Full) continue;
        ids.push_back(m.model_id);
    }
    return ids;
}

std::string join_turns(const Session& s) {
    std::string out;
    for (const auto& t : s.turns) {
        if (t.role == TurnRole::Assistant) continue;
        if (!out.empty()) out += "\n\n";
        out += t.text;
    }
    return out;
}

RiskAssessment merge(RiskAssessment a, const RiskAssessment& b) {
    a.categories.insert(b.categories.begin(), b.categories.end());
    a.triggered = !a.categories.empty();
    return a;
}

}  // namespace

std::string_view to_string(UserMode mode) { return mode == UserMode::Clinician ? "clinician" : "patient"; }

std::optional<UserMode> parse_user_mode(std::string_view text) {
    if (text == "clinician") return UserMode::Clinician;
    if (text == "patient") return UserMode::Patient;
    return std::nullopt;
}

std::string_view attribution_key(Mode mode) {
    switch (mode) {
        case Mode::PrivateAi: return "private_ai";
        case Mode::CloudAi: return "cloud_ai";
        case Mode::Byok: return "byok";
    }
    return "private_ai";
}

OJson ApiEnvelope::to_json() const {
    OJson j;
    j["schema_version"] = kApiSchemaVersion;
    j["request_id"] = request_id;
    j["session_id"] = session_id;
    j["attribution"] = attribution_key(attribution);
    j["attribution_label"] = attribution_label(attribution);
    j["flags"] = flags;
    j["payload"] = payload;
    if (error)
        j["error"] = {{"code", to_string(*error)}, {"message", error_message}};
    else
        j["error"] = nullptr;
    return j;
}

OJson to_json(const ConsensusResult& r) {
    OJson j;
    auto& ranked = j["ranked"] = OJson::array();
    for (const auto& c : r.ranked) {
        ranked.push_back({{"code", c.code},
                          {"name", c.name},
                          {"aggregate_confidence", c.aggregate_confidence},
                          {"weight", c.weight},
                          {"supporting_model_count", c.supporting_model_count},
                          {"criterion_status", to_string(c.criterion_status)},
                          {"matched_symptom_count", c.matched_symptom_count},
                          {"matched_domains", c.matched_domains},
                          {"supporting_models", c.supporting_models}});
    }
    auto& flags = j["flags"] = OJson::array();
    for (auto f : r.flags) flags.push_back(to_string(f));
    j["attribution"] = attribution_key(r.attribution);
    j["available_model_count"] = r.available_model_count;
    return j;
}

OJson to_json(const PatientFeedback& f) {
    OJson j;
    j["escalation_notice"] = f.escalation_notice ? OJson(*f.escalation_notice) : OJson(nullptr);
    j["domain_summaries"] = f.domain_summaries;
    j["framing"] = f.framing;
    j["contains_no_codes"] = f.contains_no_codes;
    j["text"] = f.render_text();
    return j;
}

OJson to_json(const RiskAssessment& r) {
    OJson j;
    j["triggered"] = r.triggered;
    auto& cats = j["categories"] = OJson::array();
    for (auto c : r.categories) cats.push_back(to_string(c));
    auto& spans = j["matched_spans"] = OJson::array();
    for (const auto& s : r.matched_spans)
        spans.push_back({{"offset", s.offset}, {"length", s.length}, {"category", to_string(s.category)}});
    return j;
}

OJson to_json(const AuditEvent& e) { return OJson::parse(to_json_line(e)); }

OJson to_json(const QuotaLedger& q) {
    return {{"period", q.period}, {"used", q.used}, {"limit", q.limit}, {"remaining", std::max(0, q.limit - q.used)}};
}

// Gateway ---------------------------------------------------------------------

Gateway::Gateway(Config config)
    : config_(std::move(config)), kb_(KnowledgeBase::load_bundled()), templates_(TemplateStore::load_bundled()) {
    std::error_code ec;
    fs::create_directories(config_.data_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create data directory " + config_.data_dir.string());

    registry_.load_manifest_json(config_.manifests_json.empty() ? std::string(bundled::demo_manifests())
                                                                : config_.manifests_json,
                                 config_.data_dir);
    hub_.bind_mocks_for(registry_);
    const auto scripts = parse_mock_scripts(config_.mock_scripts_json.empty() ? std::string(bundled::demo_mock_scripts())
                                                                              : config_.mock_scripts_json);
    for (const auto& [id, script] : scripts)
        if (hub_.contains(id)) hub_.configure_mock(id, script);

    EgressGuard::Options opts;
    opts.clock = config_.clock;
    if (config_.persist_state) {
        opts.audit_log_path = config_.data_dir / "audit.log";
        opts.quota_path = config_.data_dir / "quota.json";
    }
    guard_ = std::make_unique<EgressGuard>(opts);

    RemoteStubBackend::Config cloud;
    cloud.kind = BackendKind::CloudStub;
    cloud.requester = "cloud_stub";
    cloud.destination = *default_policy(Mode::CloudAi).allowed_destinations.begin();
    cloud.min_delay = config_.cloud_min_delay;
    cloud.max_delay = config_.cloud_max_delay;
    cloud.canned_response = std::string(kCannedRemoteResponse);
    hub_.bind(std::string(kCloudModelId), ModelFamily::Other, std::make_shared<RemoteStubBackend>(cloud, *guard_));
    auto byok = cloud;
    byok.kind = BackendKind::ByokStub;
    byok.requester = "byok_stub";
    byok.destination = *default_policy(Mode::Byok).allowed_destinations.begin();
    hub_.bind(std::string(kByokModelId), ModelFamily::Other, std::make_shared<RemoteStubBackend>(byok, *guard_));

    vault_ = std::make_unique<SessionVault>(config_.data_dir / "vault");
    prompts_ = std::make_unique<PromptEngine>(templates_, hub_);
    safety_ = std::make_unique<SafetyGuard>(SafetyGuard::load_bundled(kb_));

    Orchestrator::Config oc;
    oc.roster = config_.private_roster.empty() ? default_private_roster(registry_) : config_.private_roster;
    oc.roster.emplace_back(kCloudModelId);
    oc.roster.emplace_back(kByokModelId);
    oc.available_memory_bytes = config_.available_memory_bytes;
    oc.headroom_fraction = config_.headroom_fraction;
    orchestrator_ = std::make_unique<Orchestrator>(registry_, hub_, *prompts_, oc);

    Mode initial = Mode::PrivateAi;
    if (config_.persist_state) {
        std::ifstream in(config_.data_dir / "mode");
        std::string text;
        if (in >> text) {
            if (auto m = parse_mode(text)) initial = *m;
        }
        if (initial == Mode::Byok && !vault_->load_secret(kByokSecretName)) initial = Mode::PrivateAi;
    }
    mode_ = initial;
    guard_->install_policy(initial);
}

Gateway::~Gateway() = default;

std::shared_ptr<std::mutex> Gateway::session_lock(const std::string& session_id) {
    std::lock_guard lock(state_mutex_);
    auto& m = session_locks_[session_id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
}

std::string Gateway::next_request_id() {
    std::lock_guard lock(state_mutex_);
    return "req-" + std::to_string(++request_counter_);
}

std::string Gateway::open_session(std::optional<Mode> mode) {
    return vault_->open_session(mode.value_or(this->mode())).session_id;
}

void Gateway::close_session(const std::string& session_id, bool persist,
                            const std::optional<UserAuthorization>& authorization) {
    const auto held = session_lock(session_id);
    std::lock_guard lock(*held);
    vault_->close_session(session_id, persist, authorization);
    std::lock_guard state(state_mutex_);
    session_locks_.erase(session_id);
}

void Gateway::set_mode(Mode mode, const std::optional<std::string>& byok_key) {
    if (mode == Mode::Byok) {
        if (byok_key && !byok_key->empty())
            vault_->store_secret(kByokSecretName, *byok_key);
        else if (!vault_->load_secret(kByokSecretName))
            throw Error(ErrorCode::ByokKeyMissing, "BYOK mode needs an API key");
    }
    std::lock_guard lock(state_mutex_);
    guard_->install_policy(mode);
    mode_ = mode;
    if (config_.persist_state) {
        std::ofstream out(config_.data_dir / "mode", std::ios::trunc);
        out << attribution_key(mode) << '\n';
    }
}

Mode Gateway::mode() const {
    std::lock_guard lock(state_mutex_);
    return mode_;
}

std::vector<AuditEvent> Gateway::audit_log() const { return guard_->audit_log(); }
QuotaLedger Gateway::quota() const { return guard_->quota(); }

std::vector<std::string> Gateway::roster_for(Mode mode) const {
    std::vector<std::string> out;
    for (const auto& id : orchestrator_->roster())
        if (mode_admits(mode, hub_.get(id)->descriptor())) out.push_back(id);
    return out;
}

OJson Gateway::roster_json() const {
    OJson j;
    const auto active = mode();
    j["mode"] = attribution_key(active);
    j["attribution_label"] = attribution_label(active);
    j["schedule"] = to_string(orchestrator_->plan_for(roster_for(Mode::PrivateAi)));
    auto& models = j["models"] = OJson::array();
    for (const auto& id : orchestrator_->roster()) {
        const auto d = hub_.get(id)->descriptor();
        OJson m;
        m["model_id"] = id;
        m["backend_kind"] = to_string(d.backend_kind);
        m["requires_network"] = d.requires_network;
        m["active"] = mode_admits(active, d);
        if (registry_.contains(id)) {
            const auto& man = registry_.get(id);
            m["family"] = to_string(man.family);
            m["variant"] = to_string(man.variant);
            m["weight_format"] = to_string(man.weight_format);
            m["weight_file"] = man.weight_path.filename().string();
            m["disk_size_bytes"] = man.disk_size_bytes;
            m["runtime_memory_bytes"] = man.runtime_memory_bytes;
            m["mock_backed"] = man.mock_backed;
        }
        models.push_back(std::move(m));
    }
    return j;
}

ApiEnvelope Gateway::post_turn(const std::string& session_id, const std::string& text, UserMode user_mode) {
    const auto held = session_lock(session_id);
    std::lock_guard lock(*held);
    const auto active = mode();
    ApiEnvelope env;
    env.request_id = next_request_id();
    env.session_id = session_id;
    env.attribution = active;

    vault_->append_turn(session_id, user_mode == UserMode::Patient ? TurnRole::Patient : TurnRole::Clinician, text);
    auto risk = safety_->assess_risk(text);
    vault_->add_risk_flags(session_id, risk.categories);
    const auto conversation = join_turns(vault_->snapshot(session_id));

    // Escalation goes first, whatever happens downstream.
    auto escalation = [&](const RiskAssessment& r) {
        if (!r.triggered) return;
        env.payload["escalation"] = user_mode == UserMode::Patient
                                        ? OJson{{"notice", safety_->patient_escalation()}}
                                        : OJson{{"notice", safety_->clinician_escalation(r)}, {"risk", to_json(r)}};
    };
    escalation(risk);

    EnsembleRound round;
    try {
        round = orchestrator_->run_ensemble(conversation, active, kb_.checklists());
    } catch (const Error& e) {
        env.error = e.code();
        env.error_message = e.what();
        if (user_mode == UserMode::Patient && risk.triggered)
            env.payload["feedback"] = to_json(safety_->filter_for_patient(ConsensusResult{}, {}, &risk));
        return env;
    }

    std::string model_text;
    for (const auto& [id, raw] : round.raw_outputs) model_text += raw + "\n";
    const auto output_risk = safety_->assess_risk(model_text);
    const auto combined = merge(risk, output_risk);
    if (combined.triggered && !risk.triggered) escalation(combined);
    vault_->add_risk_flags(session_id, combined.categories);

    const auto result = consensus(round.outputs, kb_, active);
    for (auto f : result.flags) env.flags.emplace_back(to_string(f));

    if (user_mode == UserMode::Patient) {
        const auto fb = safety_->filter_for_patient(result, {}, &combined);
        env.payload["feedback"] = to_json(fb);
        vault_->append_turn(session_id, TurnRole::Assistant, fb.render_text());
    } else {
        env.payload["consensus"] = to_json(result);
        env.payload["risk"] = to_json(combined);
        auto& models = env.payload["models"] = OJson::array();
        for (const auto& o : round.outputs)
            models.push_back({{"model_id", o.model_id}, {"diagnosis", o.diagnosis}, {"dsm5_code", o.dsm5_code},
                              {"confidence", o.confidence}, {"attempts_used", o.attempts_used}});
        auto& unavailable = env.payload["unavailable"] = OJson::array();
        for (const auto& u : round.unavailable)
            unavailable.push_back({{"model_id", u.model_id}, {"reason", u.reason}, {"attempts_used", u.attempts_used}});
        env.payload["schedule"] = to_string(round.schedule_used);
        std::string summary = "No candidate diagnosis.";
        if (!result.ranked.empty())
            summary = result.ranked.front().name + " (" + result.ranked.front().code + ")";
        vault_->append_turn(session_id, TurnRole::Assistant, summary);
    }
    return env;
}

ApiEnvelope Gateway::run_task(const std::string& session_id, TaskFlow flow, const std::string& text,
                              const std::optional<ExtractedDocument>& attachment) {
    const auto held = session_lock(session_id);
    std::lock_guard lock(*held);
    const auto active = mode();
    ApiEnvelope env;
    env.request_id = next_request_id();
    env.session_id = session_id;
    env.attribution = active;
    if (!vault_->is_open(session_id)) throw Error(ErrorCode::UnknownSession, "unknown session");

    const auto risk = safety_->assess_risk(text + (attachment ? "\n" + attachment->text : std::string()));
    if (risk.triggered) {
        env.payload["escalation"] = {{"notice", safety_->clinician_escalation(risk)}, {"risk", to_json(risk)}};
        vault_->add_risk_flags(session_id, risk.categories);
    }

    const auto models = roster_for(active);
    if (models.empty()) throw Error(ErrorCode::NoModelsRegistered, "no model is usable in this mode");
    bool all_denied = true;
    std::string failures;
    for (const auto& id : models) {
        const auto prompt = prompts_->render_task_prompt(flow, text, attachment ? &*attachment : nullptr, id);
        InferenceRequest req;
        req.model_id = id;
        req.prompt_text = prompt.text;
        req.request_id = env.request_id + "/" + id;
        try {
            const auto stream = hub_.get(id)->generate_stream(req);
            vault_->append_turn(session_id, TurnRole::Clinician, text);
            vault_->append_turn(session_id, TurnRole::Assistant, stream.text());
            env.payload["task"] = to_string(flow);
            env.payload["model_id"] = id;
            env.payload["text"] = stream.text();
            if (attachment)
                env.payload["attachment"] = {{"format", to_string(attachment->format)}, {"summary", attachment->summary}};
            return env;
        } catch (const Error& e) {
            all_denied = all_denied && e.code() == ErrorCode::EgressDenied;
            failures += " " + id + "=" + std::string(to_string(e.code()));
        }
    }
    env.error = all_denied ? ErrorCode::EgressDenied : ErrorCode::AllModelsUnavailable;
    env.error_message = "no model completed the task:" + failures;
    return env;
}

BenchReport Gateway::run_benchmark(int repeats, NetworkState state, std::vector<std::string> models) {
    BenchConfig cfg;
    cfg.repeats = repeats;
    cfg.network_state = state;
    if (models.empty()) models = roster_for(state == NetworkState::Airplane ? Mode::PrivateAi : mode());
    cfg.models = std::move(models);
    for (const auto& c : kb_.checklists()) {
        auto& prompts = cfg.corpus[c.condition_name];
        for (std::size_t i = 0; i < kMinPromptsPerCategory; ++i) {
            std::string symptoms;
            for (std::size_t k = 0; k < c.symptom_domains.size() && k < i + 2; ++k) {
                if (!symptoms.empty()) symptoms += ", ";
                symptoms += c.symptom_domains[(i + k) % c.symptom_domains.size()];
            }
            prompts.push_back({c.code_pattern + "-" + std::to_string(i + 1),
                               "Clinician: What brings you in today?\nPatient: I have been struggling with " + symptoms +
                                   " for several weeks."});
        }
    }
    return compare_against_reference(consilium::run_benchmark(cfg, hub_, *guard_));
}

// Local service -----------------------------------------------------------------

bool is_loopback_address(std::string_view address) {
    if (address == "localhost") return true;
    const std::string a(address);
    in_addr v4{};
    if (inet_pton(AF_INET, a.c_str(), &v4) == 1) return (ntohl(v4.s_addr) >> 24) == 127;
    in6_addr v6{};
    if (inet_pton(AF_INET6, a.c_str(), &v6) == 1) return IN6_IS_ADDR_LOOPBACK(&v6);
    return false;
}

namespace {

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnknownSession: return 404;
        case ErrorCode::AuthorizationMissing:
        case ErrorCode::IsolationViolation: return 403;
        case ErrorCode::EgressDenied: return 403;
        case ErrorCode::AllModelsUnavailable:
        case ErrorCode::NoModelsRegistered: return 503;
        case ErrorCode::BadRequest:
        case ErrorCode::EmptyConversation:
        case ErrorCode::EmptyQuery:
        case ErrorCode::UnsupportedTaskFlow:
        case ErrorCode::AttachmentTooLarge:
        case ErrorCode::UnsupportedFormat:
        case ErrorCode::OversizeAttachment:
        case ErrorCode::ParseError:
        case ErrorCode::InvalidRepeats:
        case ErrorCode::CorpusTooSmall:
        case ErrorCode::NetworkStateViolation:
        case ErrorCode::ByokKeyMissing:
        case ErrorCode::UnknownModel: return 400;
        default: return 500;
    }
}

OJson parse_body(const httplib::Request& req) {
    if (req.body.empty()) return OJson::object();
    try {
        auto j = OJson::parse(req.body);
        if (!j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
        return j;
    } catch (const OJson::exception&) {
        throw Error(ErrorCode::BadRequest, "request body is not valid JSON");
    }
}

template <typename T>
T field(const OJson& body, const char* name, T fallback) {
    if (!body.contains(name) || body[name].is_null()) return fallback;
    try {
        return body[name].get<T>();
    } catch (const OJson::exception&) {
        throw Error(ErrorCode::BadRequest, std::string("field '") + name + "' has the wrong type");
    }
}

}  // namespace

struct LocalService::Impl {
    Gateway& gateway;
    httplib::Server server;

    explicit Impl(Gateway& g) : gateway(g) {
        // Plain SO_REUSEADDR: a second bind on a live port must fail.
        server.set_socket_options([](int sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
        });
        routes();
    }

    void reply(httplib::Response& res, const ApiEnvelope& env, int status = 200) {
        res.status = env.error ? http_status(*env.error) : status;
        res.set_content(env.to_json().dump(), "application/json");
    }

    template <typename Fn>
    httplib::Server::Handler wrap(Fn fn) {
        return [this, fn](const httplib::Request& req, httplib::Response& res) {
            ApiEnvelope env;
            env.attribution = gateway.mode();
            try {
                fn(req, res, env);
                return;
            } catch (const Error& e) {
                env.error = e.code();
                env.error_message = e.what();
            } catch (const std::exception& e) {
                env.error = ErrorCode::BadRequest;
                env.error_message = e.what();
            }
            reply(res, env);
        };
    }

    void routes() {
        using Req = const httplib::Request&;
        using Res = httplib::Response&;

        server.Get("/v1/health", wrap([this](Req, Res res, ApiEnvelope& env) {
            env.payload = {{"status", "ok"}, {"schema_version", kApiSchemaVersion}};
            reply(res, env);
        }));
        server.Post("/v1/sessions", wrap([this](Req req, Res res, ApiEnvelope& env) {
            const auto body = parse_body(req);
            std::optional<Mode> mode;
            if (body.contains("mode")) {
                mode = parse_mode(field<std::string>(body, "mode", ""));
                if (!mode) throw Error(ErrorCode::BadRequest, "unknown mode");
            }
            env.session_id = gateway.open_session(mode);
            env.payload = {{"session_id", env.session_id}};
            reply(res, env, 201);
        }));
        server.Delete(R"(/v1/sessions/([A-Za-z0-9_-]+))", wrap([this](Req req, Res res, ApiEnvelope& env) {
            const auto body = parse_body(req);
            env.session_id = req.matches[1];
            const bool persist = field<bool>(body, "persist", false);
            std::optional<UserAuthorization> auth;
            if (body.contains("authorization"))
                auth = UserAuthorization{field<std::string>(body["authorization"], "actor", "")};
            gateway.close_session(env.session_id, persist, auth);
            env.payload = {{"closed", true}, {"persisted", persist}};
            reply(res, env);
        }));
        server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/turns)", wrap([this](Req req, Res res, ApiEnvelope& env) {
            const auto body = parse_body(req);
            const auto user_mode = parse_user_mode(field<std::string>(body, "user_mode", "clinician"));
            if (!user_mode) throw Error(ErrorCode::BadRequest, "user_mode must be clinician or patient");
            env = gateway.post_turn(req.matches[1], field<std::string>(body, "text", ""), *user_mode);
            reply(res, env);
        }));
        server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/tasks)", wrap([this](Req req, Res res, ApiEnvelope& env) {
            env.session_id = req.matches[1];
            const auto body = parse_body(req);
            const auto flow = parse_task_flow(field<std::string>(body, "flow", ""));
            if (!flow) throw Error(ErrorCode::UnsupportedTaskFlow, "unknown task flow");
            std::optional<ExtractedDocument> doc;
            if (body.contains("attachment")) {
                const auto& a = body["attachment"];
                auto declared = field<std::string>(a, "format", "");
                if (declared.empty()) declared = format_from_extension(field<std::string>(a, "filename", ""));
                const auto fmt = parse_attachment_format(declared);
                if (!fmt) throw Error(ErrorCode::UnsupportedFormat, "unsupported attachment format '" + declared + "'");
                doc = parse_attachment_content(field<std::string>(a, "content", ""), *fmt);
            }
            env = gateway.run_task(env.session_id, *flow, field<std::string>(body, "text", ""), doc);
            reply(res, env);
        }));
        server.Get("/v1/mode", wrap([this](Req, Res res, ApiEnvelope& env) {
            env.payload = {{"mode", attribution_key(gateway.mode())}, {"attribution_label", attribution_label(gateway.mode())}};
            reply(res, env);
        }));
        server.Put("/v1/mode", wrap([this](Req req, Res res, ApiEnvelope& env) {
            const auto body = parse_body(req);
            const auto mode = parse_mode(field<std::string>(body, "mode", ""));
            if (!mode) throw Error(ErrorCode::BadRequest, "unknown mode");
            std::optional<std::string> key;
            if (body.contains("byok_key")) key = field<std::string>(body, "byok_key", "");
            gateway.set_mode(*mode, key);
            env.attribution = *mode;
            env.payload = {{"mode", attribution_key(*mode)}, {"attribution_label", attribution_label(*mode)}};
            reply(res, env);
        }));
        server.Get("/v1/audit", wrap([this](Req, Res res, ApiEnvelope& env) {
            auto& events = env.payload["events"] = OJson::array();
            for (const auto& e : gateway.audit_log()) events.push_back(to_json(e));
            reply(res, env);
        }));
        server.Get("/v1/quota", wrap([this](Req, Res res, ApiEnvelope& env) {
            env.payload = to_json(gateway.quota());
            reply(res, env);
        }));
        server.Get("/v1/roster", wrap([this](Req, Res res, ApiEnvelope& env) {
            env.payload = gateway.roster_json();
            reply(res, env);
        }));
        server.Post("/v1/bench", wrap([this](Req req, Res res, ApiEnvelope& env) {
            const auto body = parse_body(req);
            const auto state = parse_network_state(field<std::string>(body, "network_state", "airplane"));
            if (!state) throw Error(ErrorCode::BadRequest, "network_state must be airplane or stable");
            const auto report = gateway.run_benchmark(field<int>(body, "repeats", kMinRepeats), *state,
                                                      field<std::vector<std::string>>(body, "models", {}));
            env.payload = OJson::parse(report_to_json(report));
            reply(res, env);
        }));
    }
};

LocalService::LocalService(Gateway& gateway) : impl_(std::make_unique<Impl>(gateway)) {}

LocalService::~LocalService() { stop(); }

void LocalService::bind(const std::string& address, int port) {
    if (!is_loopback_address(address))
        throw Error(ErrorCode::NonLoopbackBindRefused, "the service only binds to loopback addresses, not " + address);
    if (port == 0) {
        const int chosen = impl_->server.bind_to_any_port(address);
        if (chosen <= 0) throw Error(ErrorCode::PortInUse, "no free port on " + address);
        port_ = chosen;
        return;
    }
    if (!impl_->server.bind_to_port(address, port))
        throw Error(ErrorCode::PortInUse, "port " + std::to_string(port) + " on " + address + " is in use");
    port_ = port;
}

void LocalService::run() { impl_->server.listen_after_bind(); }

void LocalService::start() {
    thread_ = std::thread([this] { run(); });
    impl_->server.wait_until_ready();
}

void LocalService::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace consilium
