#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace consilium {

enum class ModelFamily { Gemma, Phi, Qwen, Other };
enum class ModelVariant { Fast, Full, Standard };
enum class WeightFormat { GgufQ4km, OnnxInt4 };

std::string_view to_string(ModelFamily family);
std::string_view to_string(ModelVariant variant);
std::string_view to_string(WeightFormat format);
std::optional<ModelFamily> parse_family(std::string_view text);
std::optional<ModelVariant> parse_variant(std::string_view text);
std::optional<WeightFormat> parse_weight_format(std::string_view text);

/// One quantized weight artifact of the ensemble. Sizes are bytes.
struct ModelManifest {
    std::string model_id;
    ModelFamily family = ModelFamily::Other;
    ModelVariant variant = ModelVariant::Standard;
    std::uint64_t parameter_count = 0;
    WeightFormat weight_format = WeightFormat::GgufQ4km;
    std::uint64_t disk_size_bytes = 0;
    std::uint64_t runtime_memory_bytes = 0;
    std::string weight_digest;  // SHA-256, 64 lowercase hex chars
    std::filesystem::path weight_path;
    bool mock_backed = false;  // no weight file required
};

/// Throws MalformedManifest / MalformedDigest on invariant violations.
void validate_manifest(const ModelManifest& manifest);

bool is_well_formed_digest(std::string_view digest);

enum class Schedule { Parallel, Sequential };
std::string_view to_string(Schedule schedule);

struct EnsembleBudget {
    std::uint64_t available_memory_bytes = 0;
    double headroom_fraction = 0.0;
    std::uint64_t required_memory_bytes = 0;
    Schedule schedule = Schedule::Sequential;
};

inline constexpr double kDefaultHeadroomFraction = 0.15;

/// Parallel iff available * (1 - headroom) >= sum of runtime memory.
EnsembleBudget plan_schedule(std::span<const ModelManifest> manifests,
                             std::uint64_t available_memory_bytes,
                             double headroom_fraction = kDefaultHeadroomFraction);

struct VerificationReport {
    std::string model_id;
    std::string expected_digest;
    std::string actual_digest;
    bool match = false;
};

/// Read-mostly store of manifests. Registration is expected during startup,
/// lookups are safe from any thread afterwards.
class ModelRegistry {
  public:
    void register_manifest(ModelManifest manifest);

    /// Loads a JSON array of manifest records; relative weight paths resolve
    /// against `base_dir`.
    void load_manifest_file(const std::filesystem::path& path);
    void load_manifest_json(std::string_view json_text,
                            const std::filesystem::path& base_dir = {});

    [[nodiscard]] const ModelManifest& get(std::string_view model_id) const;
    [[nodiscard]] bool contains(std::string_view model_id) const;
    [[nodiscard]] std::vector<ModelManifest> all() const;  // registration order

    /// Recomputes the weight file's SHA-256. Throws DigestMismatch when it differs.
    [[nodiscard]] VerificationReport verify_weights(std::string_view model_id) const;

  private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, ModelManifest, std::less<>> by_id_;
    std::vector<std::string> order_;
};


}  // namespace consilium
