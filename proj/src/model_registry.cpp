#include "consilium/model_registry.hpp"

#include <fstream>
#include <mutex>
#include <sstream>

#include "json.hpp"

#include "consilium/crypto.hpp"
#include "consilium/error.hpp"

namespace consilium {

std::string_view to_string(ModelFamily family) {
    switch (family) {
        case ModelFamily::Gemma: return "gemma";
        case ModelFamily::Phi: return "phi";
        case ModelFamily::Qwen: return "qwen";
        case ModelFamily::Other: return "other";
    }
    return "other";
}

std::string_view to_string(ModelVariant variant) {
    switch (variant) {
        case ModelVariant::Fast: return "fast";
        case ModelVariant::Full: return "full";
        case ModelVariant::Standard: return "standard";
    }
    return "standard";
}

std::string_view to_string(WeightFormat format) {
    switch (format) {
        case WeightFormat::GgufQ4km: return "gguf_q4km";
        case WeightFormat::OnnxInt4: return "onnx_int4";
    }
    return "gguf_q4km";
}

std::string_view to_string(Schedule schedule) {
    return schedule == Schedule::Parallel ? "parallel" : "sequential";
}

std::optional<ModelFamily> parse_family(std::string_view text) {
    for (auto f : {ModelFamily::Gemma, ModelFamily::Phi, ModelFamily::Qwen, ModelFamily::Other})
        if (to_string(f) == text) return f;
    return std::nullopt;
}

std::optional<ModelVariant> parse_variant(std::string_view text) {
    for (auto v : {ModelVariant::Fast, ModelVariant::Full, ModelVariant::Standard})
        if (to_string(v) == text) return v;
    return std::nullopt;
}

std::optional<WeightFormat> parse_weight_format(std::string_view text) {
    for (auto f : {WeightFormat::GgufQ4km, WeightFormat::OnnxInt4})
        if (to_string(f) == text) return f;
    return std::nullopt;
}

bool is_well_formed_digest(std::string_view digest) {
    if (digest.size() != 64) return false;
    for (char c : digest)
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    return true;
}

void validate_manifest(const ModelManifest& m) {
    if (m.model_id.empty()) throw Error(ErrorCode::MalformedManifest, "model_id is empty");
    if (m.disk_size_bytes == 0)
        throw Error(ErrorCode::MalformedManifest, m.model_id + ": disk_size_bytes must be > 0");
    if (m.runtime_memory_bytes < m.disk_size_bytes)
        throw Error(ErrorCode::MalformedManifest,
                    m.model_id + ": runtime_memory_bytes is smaller than disk_size_bytes");
    if (!is_well_formed_digest(m.weight_digest))
        throw Error(ErrorCode::MalformedDigest, m.model_id + ": weight_digest must be 64 lowercase hex chars");
}

EnsembleBudget plan_schedule(std::span<const ModelManifest> manifests, std::uint64_t available_memory_bytes,
                             double headroom_fraction) {
    if (manifests.empty()) throw Error(ErrorCode::EmptyEnsemble, "no manifests to schedule");
    if (!(headroom_fraction >= 0.0 && headroom_fraction < 1.0))
        throw Error(ErrorCode::MalformedManifest, "headroom_fraction must lie in [0, 1)");
    EnsembleBudget budget;
    budget.available_memory_bytes = available_memory_bytes;
    budget.headroom_fraction = headroom_fraction;
    for (const auto& m : manifests) budget.required_memory_bytes += m.runtime_memory_bytes;
    const long double usable =
        static_cast<long double>(available_memory_bytes) * (1.0L - static_cast<long double>(headroom_fraction));
    budget.schedule = usable >= static_cast<long double>(budget.required_memory_bytes) ? Schedule::Parallel
                                                                                      : Schedule::Sequential;
    return budget;
}

void ModelRegistry::register_manifest(ModelManifest manifest) {
    validate_manifest(manifest);
    if (!manifest.mock_backed && !std::filesystem::exists(manifest.weight_path))
        throw Error(ErrorCode::MissingWeightFile,
                    manifest.model_id + ": weight file not found: " + manifest.weight_path.string());
    std::unique_lock lock(mutex_);
    if (by_id_.contains(manifest.model_id))
        throw Error(ErrorCode::DuplicateModelId, "model_id already registered: " + manifest.model_id);
    order_.push_back(manifest.model_id);
    auto id = manifest.model_id;
    by_id_.emplace(std::move(id), std::move(manifest));
}

void ModelRegistry::load_manifest_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open manifest file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    load_manifest_json(buffer.str(), path.parent_path());
}

void ModelRegistry::load_manifest_json(std::string_view json_text, const std::filesystem::path& base_dir) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedManifest, std::string("manifest file is not valid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw Error(ErrorCode::MalformedManifest, "manifest file must be a JSON array");
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& rec = doc[i];
        const auto where = "manifest[" + std::to_string(i) + "]";
        auto str = [&](const char* key) {
            if (!rec.contains(key) || !rec[key].is_string())
                throw Error(ErrorCode::MalformedManifest, where + ": missing string field " + key);
            return rec[key].get<std::string>();
        };
        auto uint = [&](const char* key) {
            if (!rec.contains(key) || !rec[key].is_number_unsigned())
                throw Error(ErrorCode::MalformedManifest, where + ": missing non-negative integer field " + key);
            return rec[key].get<std::uint64_t>();
        };
        ModelManifest m;
        m.model_id = str("model_id");
        auto family = parse_family(str("family"));
        auto variant = parse_variant(str("variant"));
        auto format = parse_weight_format(str("weight_format"));
        if (!family) throw Error(ErrorCode::MalformedManifest, where + ": unknown family");
        if (!variant) throw Error(ErrorCode::MalformedManifest, where + ": unknown variant");
        if (!format) throw Error(ErrorCode::MalformedManifest, where + ": unknown weight_format");
        m.family = *family;
        m.variant = *variant;
        m.weight_format = *format;
        m.parameter_count = uint("parameter_count");
        m.disk_size_bytes = uint("disk_size_bytes");
        m.runtime_memory_bytes = uint("runtime_memory_bytes");
        m.weight_digest = str("weight_digest");
        std::filesystem::path weight = str("weight_path");
        m.weight_path = weight.is_relative() && !base_dir.empty() ? base_dir / weight : weight;
        m.mock_backed = rec.value("mock_backed", false);
        register_manifest(std::move(m));
    }
}

const ModelManifest& ModelRegistry::get(std::string_view model_id) const {
    std::shared_lock lock(mutex_);
    auto it = by_id_.find(model_id);
    if (it == by_id_.end()) throw Error(ErrorCode::UnknownModel, "unknown model: " + std::string(model_id));
    return it->second;
}

bool ModelRegistry::contains(std::string_view model_id) const {
    std::shared_lock lock(mutex_);
    return by_id_.find(model_id) != by_id_.end();
}

std::vector<ModelManifest> ModelRegistry::all() const {
    std::shared_lock lock(mutex_);
    std::vector<ModelManifest> out;
    out.reserve(order_.size());
    for (const auto& id : order_) out.push_back(by_id_.find(id)->second);
    return out;
}

VerificationReport ModelRegistry::verify_weights(std::string_view model_id) const {
    const auto& m = get(model_id);
    if (!std::filesystem::exists(m.weight_path))
        throw Error(ErrorCode::MissingWeightFile, m.model_id + ": weight file not found");
    VerificationReport report;
    report.model_id = m.model_id;
    report.expected_digest = m.weight_digest;
    report.actual_digest = crypto::sha256_file_hex(m.weight_path);
    report.match = report.actual_digest == report.expected_digest;
    if (!report.match)
        throw Error(ErrorCode::DigestMismatch, m.model_id + ": weight digest mismatch (expected " +
                                                   report.expected_digest + ", got " + report.actual_digest + ")");
    return report;
}

}  // namespace consilium
