#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "consilium/dsm5_knowledge.hpp"
#include "consilium/inference_backend.hpp"
#include "consilium/model_output.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "consilium-test-XXXXXX").string();
        if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

  private:
    fs::path path_;
};

inline fs::path fixture(const std::string& rel) { return fs::path(CONSILIUM_FIXTURE_DIR) / rel; }

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<std::string> read_lines(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);)
        if (!line.empty() && line[0] != '#') out.push_back(line);
    return out;
}

inline const consilium::KnowledgeBase& kb() {
    static const auto instance = consilium::KnowledgeBase::load_bundled();
    return instance;
}

struct Diff {
    std::string diagnosis;
    std::string code;
    double confidence;
};

/// A reply that satisfies the output schema.
inline std::string reply_json(const std::string& diagnosis, const std::string& code, double confidence,
                              const std::vector<std::string>& symptoms, const std::vector<Diff>& differential = {}) {
    nlohmann::ordered_json j;
    j["diagnosis"] = diagnosis;
    j["dsm5_code"] = code;
    j["confidence"] = confidence;
    j["supporting_symptoms"] = symptoms;
    j["differential"] = nlohmann::ordered_json::array();
    for (const auto& d : differential) {
        nlohmann::ordered_json e{{"diagnosis", d.diagnosis}, {"confidence", d.confidence}};
        if (!d.code.empty()) e["dsm5_code"] = d.code;
        j["differential"].push_back(e);
    }
    return j.dump();
}

inline consilium::ModelOutput output(const std::string& model, const std::string& diagnosis, const std::string& code,
                                     double confidence, std::vector<std::string> symptoms = {},
                                     std::vector<consilium::DifferentialEntry> differential = {}) {
    consilium::ModelOutput o;
    o.model_id = model;
    o.diagnosis = diagnosis;
    o.dsm5_code = code;
    o.confidence = confidence;
    o.supporting_symptoms = std::move(symptoms);
    o.differential = std::move(differential);
    return o;
}

inline consilium::MockScript always(const std::string& response, int delay_ms = 0) {
    consilium::MockScriptEntry e;
    e.response_text = response;
    e.first_token_delay = std::chrono::milliseconds(delay_ms);
    return {e};
}

/// Every file under `root`, concatenated.
inline std::string all_bytes_under(const fs::path& root) {
    std::string out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out += read_text(e.path());
    return out;
}

/// (relative path, content) for every regular file under `root`.
inline std::vector<std::pair<std::string, std::string>> snapshot_tree(const fs::path& root) {
    std::vector<std::pair<std::string, std::string>> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), read_text(e.path()));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace testing
