// consilium: command-line front end over the local gateway.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "consilium/error.hpp"
#include "consilium/service_gateway.hpp"

using namespace consilium;
namespace fs = std::filesystem;
using OJson = nlohmann::ordered_json;

namespace {

constexpr int kUsageExit = 2;
constexpr int kErrorExit = 1;

fs::path default_data_dir() {
    if (const char* env = std::getenv("CONSILIUM_DATA_DIR"); env != nullptr && *env != '\0') return env;
    if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') return fs::path(home) / ".consilium";
    return fs::path(".consilium");
}

int default_port() {
    if (const char* env = std::getenv("CONSILIUM_PORT"); env != nullptr && *env != '\0') return std::atoi(env);
    return kDefaultPort;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void print_error(ErrorCode code, const std::string& message) {
    std::cerr << OJson{{"error", {{"code", to_string(code)}, {"message", message}}}}.dump() << "\n";
}

int emit(const ApiEnvelope& env) {
    std::cout << env.to_json().dump(2) << "\n";
    return env.error ? kErrorExit : 0;
}

std::optional<UserAuthorization> authorization_from(const std::string& actor) {
    if (actor.empty()) return std::nullopt;
    return UserAuthorization{actor};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Local, privacy-first psychiatric decision support"};
    app.require_subcommand(1);

    std::string data_dir = default_data_dir().string();
    app.add_option("--data-dir", data_dir, "State directory (env CONSILIUM_DATA_DIR)");

    // session
    auto* session = app.add_subcommand("session", "Interactive session reading turns from stdin");
    bool session_patient = false;
    std::string session_authorize;
    bool session_persist = false;
    session->add_flag("--patient", session_patient, "Patient mode output");
    session->add_flag("--persist", session_persist, "Persist the session on exit (needs --authorize)");
    session->add_option("--authorize", session_authorize, "Name of the user authorizing persistence");

    // diagnose
    auto* diagnose = app.add_subcommand("diagnose", "Run the diagnosis flow on a conversation file");
    std::string diagnose_file;
    bool diagnose_patient = false;
    bool diagnose_persist = false;
    std::string diagnose_authorize;
    diagnose->add_option("--file", diagnose_file, "Conversation text file")->required()->check(CLI::ExistingFile);
    diagnose->add_flag("--patient", diagnose_patient, "Patient mode output");
    diagnose->add_flag("--persist", diagnose_persist, "Persist the session (needs --authorize)");
    diagnose->add_option("--authorize", diagnose_authorize, "Name of the user authorizing persistence");

    // task
    auto* task = app.add_subcommand("task", "Run a task flow");
    std::string task_flow;
    std::string task_text;
    std::string task_attach;
    task->add_option("flow", task_flow, "soap, icd10, research or doc")
        ->required()
        ->check(CLI::IsMember({"soap", "icd10", "research", "doc"}));
    task->add_option("--text", task_text, "Clinical content or question");
    task->add_option("--attach", task_attach, "Attachment (.txt, .md, .csv, .json)")->check(CLI::ExistingFile);

    // mode
    auto* mode_cmd = app.add_subcommand("mode", "Show or change the inference mode");
    mode_cmd->require_subcommand(1);
    auto* mode_get = mode_cmd->add_subcommand("get", "Print the active mode");
    auto* mode_set = mode_cmd->add_subcommand("set", "Switch mode");
    std::string mode_value;
    std::string byok_key;
    mode_set->add_option("mode", mode_value, "private, cloud or byok")
        ->required()
        ->check(CLI::IsMember({"private", "cloud", "byok", "private_ai", "cloud_ai"}));
    mode_set->add_option("--key", byok_key, "API key for BYOK mode (stored sealed)");

    // bench
    auto* bench = app.add_subcommand("bench", "Benchmark harness");
    bench->require_subcommand(1);
    auto* bench_run = bench->add_subcommand("run", "Run the benchmark protocol");
    int repeats = kMinRepeats;
    std::string network_state = "airplane";
    std::vector<std::string> bench_models;
    bool bench_json = false;
    bench_run->add_option("--repeats", repeats, "Runs per model per prompt")
        ->check(CLI::Range(kMinRepeats, kMaxRepeats));
    bench_run->add_option("--network-state", network_state, "airplane or stable")
        ->check(CLI::IsMember({"airplane", "stable"}));
    bench_run->add_option("--models", bench_models, "Models to benchmark")->delimiter(',');
    bench_run->add_flag("--json", bench_json, "Machine-readable report");

    // dataset
    auto* dataset = app.add_subcommand("dataset", "Dataset utilities");
    dataset->require_subcommand(1);
    auto* ds_load = dataset->add_subcommand("load", "Validate a record file");
    auto* ds_split = dataset->add_subcommand("split", "Deterministic train/validation/test split");
    std::string ds_file;
    std::size_t ds_n = 0;
    std::uint64_t ds_seed = 0;
    std::string ds_out;
    ds_load->add_option("--file", ds_file, "Line-delimited JSON records")->required()->check(CLI::ExistingFile);
    auto* split_file = ds_split->add_option("--file", ds_file, "Line-delimited JSON records")->check(CLI::ExistingFile);
    auto* split_n = ds_split->add_option("--n", ds_n, "Record count (no file)")->check(CLI::PositiveNumber);
    split_file->excludes(split_n);
    ds_split->add_option("--seed", ds_seed, "Shuffle seed");
    ds_split->add_option("--out-dir", ds_out, "Write train/validation/test files here (with --file)");

    // audit
    auto* audit = app.add_subcommand("audit", "Egress audit log");
    audit->require_subcommand(1);
    auto* audit_show = audit->add_subcommand("show", "Print every audit event");
    bool audit_json = false;
    audit_show->add_flag("--json", audit_json, "One JSON object per line");

    // vault
    auto* vault = app.add_subcommand("vault", "Explicit export and import of persisted sessions");
    vault->require_subcommand(1);
    auto* v_export = vault->add_subcommand("export", "Write a sealed export of a persisted session");
    auto* v_import = vault->add_subcommand("import", "Import a sealed export into a new session");
    std::string v_session;
    std::string v_path;
    std::string v_authorize;
    v_export->add_option("--session", v_session, "Session id")->required();
    v_export->add_option("--out", v_path, "Export file")->required();
    v_export->add_option("--authorize", v_authorize, "Name of the authorizing user")->required();
    v_import->add_option("--in", v_path, "Export file")->required()->check(CLI::ExistingFile);
    v_import->add_option("--authorize", v_authorize, "Name of the authorizing user")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Run the loopback HTTP service");
    std::string address = "127.0.0.1";
    int port = default_port();
    serve->add_option("--address", address, "Loopback bind address");
    serve->add_option("--port", port, "Port (env CONSILIUM_PORT)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageExit;
    }

    try {
        // Pure dataset commands need no gateway state.
        if (*ds_load) {
            std::vector<LoadWarning> warnings;
            const auto records = load_records(ds_file, &warnings);
            std::cout << "records " << records.size() << "\n";
            for (const auto& w : warnings) std::cout << "warning record " << w.record_index << ": " << w.message << "\n";
            return 0;
        }
        if (*ds_split) {
            std::vector<ClinicalRecord> records;
            if (!ds_file.empty()) {
                records = load_records(ds_file);
                ds_n = records.size();
            } else if (ds_n == 0) {
                std::cerr << "dataset split: give --n or --file\n";
                return kUsageExit;
            }
            const auto a = split_indices(ds_n, ds_seed);
            std::cout << "train " << a.counts.train << "\nvalidation " << a.counts.validation << "\ntest "
                      << a.counts.test << "\n";
            if (!ds_out.empty()) {
                if (records.empty()) {
                    std::cerr << "dataset split: --out-dir needs --file\n";
                    return kUsageExit;
                }
                fs::create_directories(ds_out);
                std::map<SplitBucket, std::vector<ClinicalRecord>> parts;
                for (std::size_t i = 0; i < records.size(); ++i) parts[a.bucket_of[i]].push_back(records[i]);
                for (auto b : {SplitBucket::Train, SplitBucket::Validation, SplitBucket::Test}) {
                    std::ofstream out(fs::path(ds_out) / (std::string(to_string(b)) + ".jsonl"), std::ios::trunc);
                    out << serialize_records(parts[b]);
                }
            }
            return 0;
        }

        Gateway::Config cfg;
        cfg.data_dir = data_dir;
        Gateway gateway(cfg);

        if (*session) {
            const auto id = gateway.open_session();
            std::cerr << "session " << id << " (" << attribution_label(gateway.mode()) << "); one turn per line, EOF ends\n";
            int status = 0;
            for (std::string line; std::getline(std::cin, line);) {
                if (line.empty()) continue;
                status = emit(gateway.post_turn(id, line, session_patient ? UserMode::Patient : UserMode::Clinician));
            }
            gateway.close_session(id, session_persist, authorization_from(session_authorize));
            if (session_persist) std::cerr << "persisted " << id << "\n";
            return status;
        }
        if (*diagnose) {
            const auto id = gateway.open_session();
            const auto env = gateway.post_turn(id, read_file(diagnose_file),
                                               diagnose_patient ? UserMode::Patient : UserMode::Clinician);
            gateway.close_session(id, diagnose_persist, authorization_from(diagnose_authorize));
            return emit(env);
        }
        if (*task) {
            std::optional<ExtractedDocument> doc;
            if (!task_attach.empty()) doc = parse_attachment(task_attach, format_from_extension(task_attach));
            if (task_flow == "doc" && !doc) {
                std::cerr << "task doc: --attach is required\n";
                return kUsageExit;
            }
            const auto id = gateway.open_session();
            const auto env = gateway.run_task(id, *parse_task_flow(task_flow), task_text, doc);
            gateway.close_session(id, false, std::nullopt);
            return emit(env);
        }
        if (*mode_get) {
            const auto q = gateway.quota();
            std::cout << attribution_key(gateway.mode()) << " (" << attribution_label(gateway.mode()) << ")\n";
            if (gateway.mode() == Mode::CloudAi) std::cout << "quota " << q.used << "/" << q.limit << " " << q.period << "\n";
            return 0;
        }
        if (*mode_set) {
            const auto mode = *parse_mode(mode_value);
            gateway.set_mode(mode, byok_key.empty() ? std::nullopt : std::optional<std::string>(byok_key));
            std::cout << attribution_key(mode) << "\n";
            return 0;
        }
        if (*bench_run) {
            const auto report = gateway.run_benchmark(repeats, *parse_network_state(network_state), bench_models);
            std::cout << (bench_json ? report_to_json(report) + "\n" : report_to_table(report));
            return 0;
        }
        if (*audit_show) {
            const auto events = gateway.audit_log();
            std::size_t granted = 0;
            for (const auto& e : events) {
                granted += e.decision == EgressDecision::Granted;
                if (audit_json) {
                    std::cout << to_json_line(e) << "\n";
                } else {
                    std::cout << e.sequence << " " << e.timestamp_ms << " " << attribution_key(e.mode) << " "
                              << e.requester << " -> " << e.destination << " " << to_string(e.decision) << " "
                              << e.reason << " " << e.bytes_declared << "B\n";
                }
            }
            if (!audit_json) std::cout << "events " << events.size() << " granted " << granted << "\n";
            return 0;
        }
        if (*v_export) {
            gateway.vault().export_session(v_session, v_path, UserAuthorization{v_authorize});
            std::cout << "exported " << v_session << "\n";
            return 0;
        }
        if (*v_import) {
            const auto id = gateway.open_session();
            const auto imported = gateway.vault().import_session(v_path, id, UserAuthorization{v_authorize});
            std::cout << "imported " << imported.session_id << " into " << id << " (" << imported.turns.size()
                      << " turns)\n";
            gateway.close_session(id, true, UserAuthorization{v_authorize});
            return 0;
        }
        if (*serve) {
            LocalService service(gateway);
            service.bind(address, port);
            std::cerr << "listening on " << address << ":" << service.port() << "\n";
            service.run();
            return 0;
        }
    } catch (const Error& e) {
        print_error(e.code(), e.what());
        return kErrorExit;
    } catch (const std::exception& e) {
        print_error(ErrorCode::IoError, e.what());
        return kErrorExit;
    }
    return 0;
}
