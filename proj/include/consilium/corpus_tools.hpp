#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace consilium {

/// One annotated conversational record (four-field schema).
struct ClinicalRecord {
    std::string instruction;
    std::string conversation;
    std::string diagnosis;  // label plus DSM-5 code
    std::string condition;  // short category label

    bool operator==(const ClinicalRecord&) const = default;
};

inline constexpr std::size_t kExpectedConversationMin = 2070;
inline constexpr std::size_t kExpectedConversationMax = 5070;

struct LoadWarning {
    std::size_t record_index = 0;
    std::string message;
};

/// Reads line-delimited JSON records (one object per line, blank lines skipped).
/// Throws ParseError / SchemaViolation naming the 0-based record index.
std::vector<ClinicalRecord> load_records(const std::filesystem::path& path,
                                         std::vector<LoadWarning>* warnings = nullptr);
std::vector<ClinicalRecord> parse_records(std::string_view text,
                                          std::vector<LoadWarning>* warnings = nullptr);
std::string serialize_records(std::span<const ClinicalRecord> records);

enum class SplitBucket : std::uint8_t { Train, Validation, Test };
std::string_view to_string(SplitBucket bucket);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
};

struct SplitAssignment {
    std::vector<SplitBucket> bucket_of;  // indexed by record position
    SplitCounts counts;
};

/// floor(2n/3) train, floor(n/6) validation, remainder test.
SplitCounts split_counts(std::size_t n);

/// Deterministic shuffle by seed, then contiguous assignment. Identical output
/// on every platform (own Fisher-Yates over mt19937_64).
SplitAssignment split_indices(std::size_t n, std::uint64_t seed);
SplitAssignment split(std::span<const ClinicalRecord> records, std::uint64_t seed);

enum class AttachmentFormat { Txt, Md, Csv, Json };
std::string_view to_string(AttachmentFormat format);
std::optional<AttachmentFormat> parse_attachment_format(std::string_view text);

inline constexpr std::size_t kAttachmentRawCap = 1024 * 1024;
inline constexpr std::size_t kAttachmentExtractedCap = 64 * 1024;

struct ExtractedDocument {
    AttachmentFormat format = AttachmentFormat::Txt;
    std::string text;     // extracted plain text embedded into prompts
    std::string summary;  // one-line structure summary
    std::size_t row_count = 0;             // csv
    std::vector<std::string> header;       // csv
    std::size_t key_path_count = 0;        // json
};

struct AttachmentLimits {
    std::size_t raw_cap = kAttachmentRawCap;
    std::size_t extracted_cap = kAttachmentExtractedCap;
};

/// `declared_format` must be one of txt, md, csv, json (UnsupportedFormat otherwise).
ExtractedDocument parse_attachment(const std::filesystem::path& path, std::string_view declared_format,
                                   const AttachmentLimits& limits = {});
ExtractedDocument parse_attachment_content(std::string_view content, AttachmentFormat format,
                                           const AttachmentLimits& limits = {});

/// Infers the declared format from the file extension ("report.csv" -> "csv").
std::string format_from_extension(const std::filesystem::path& path);

std::string strip_markdown(std::string_view markdown);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace consilium
