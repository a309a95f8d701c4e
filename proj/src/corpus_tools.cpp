#include "consilium/corpus_tools.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "consilium/error.hpp"

namespace consilium {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::array<const char*, 4> kRecordFields{"instruction", "conversation", "diagnosis", "condition"};

std::size_t utf8_length(std::string_view s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    // Rejection sampling: discard the low residue so every index is equally likely.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) return r % bound;
    }
}

void flatten_json(const Json& j, const std::string& path, std::vector<std::string>& lines) {
    if (j.is_object() && !j.empty()) {
        for (const auto& [k, v] : j.items()) flatten_json(v, path.empty() ? k : path + "." + k, lines);
    } else if (j.is_array() && !j.empty()) {
        for (std::size_t i = 0; i < j.size(); ++i) flatten_json(j[i], path + "[" + std::to_string(i) + "]", lines);
    } else {
        const auto value = j.is_string() ? j.get<std::string>() : j.dump();
        lines.push_back((path.empty() ? std::string("(root)") : path) + ": " + value);
    }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

std::vector<ClinicalRecord> parse_records(std::string_view text, std::vector<LoadWarning>* warnings) {
    std::vector<ClinicalRecord> records;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

        const std::size_t index = records.size();
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception&) {
            throw Error(ErrorCode::ParseError,
                        "record " + std::to_string(index) + " (line " + std::to_string(line_no) + "): invalid JSON");
        }
        if (!j.is_object())
            throw Error(ErrorCode::ParseError, "record " + std::to_string(index) + ": expected a JSON object");
        std::array<std::string, 4> values;
        for (std::size_t f = 0; f < kRecordFields.size(); ++f) {
            const std::string name = kRecordFields[f];
            if (!j.contains(name))
                throw Error(ErrorCode::SchemaViolation, "record " + std::to_string(index) + ": field '" + name + "' is missing");
            if (!j[name].is_string())
                throw Error(ErrorCode::SchemaViolation, "record " + std::to_string(index) + ": field '" + name + "' must be a string");
            values[f] = j[name].get<std::string>();
            if (values[f].find_first_not_of(" \t\r\n") == std::string::npos)
                throw Error(ErrorCode::SchemaViolation, "record " + std::to_string(index) + ": field '" + name + "' is empty");
        }
        if (warnings != nullptr) {
            const auto len = utf8_length(values[1]);
            if (len < kExpectedConversationMin || len > kExpectedConversationMax)
                warnings->push_back({index, "conversation length " + std::to_string(len) + " outside the expected range"});
            for (const auto& [k, v] : j.items())
                if (std::find(kRecordFields.begin(), kRecordFields.end(), k) == kRecordFields.end())
                    warnings->push_back({index, "unknown field '" + k + "' ignored"});
        }
        records.push_back({std::move(values[0]), std::move(values[1]), std::move(values[2]), std::move(values[3])});
    }
    return records;
}

std::vector<ClinicalRecord> load_records(const std::filesystem::path& path, std::vector<LoadWarning>* warnings) {
    return parse_records(read_all(path), warnings);
}

std::string serialize_records(std::span<const ClinicalRecord> records) {
    std::string out;
    for (const auto& r : records) {
        Json j;
        j["instruction"] = r.instruction;
        j["conversation"] = r.conversation;
        j["diagnosis"] = r.diagnosis;
        j["condition"] = r.condition;
        out += j.dump() + "\n";
    }
    return out;
}

std::string_view to_string(SplitBucket bucket) {
    switch (bucket) {
        case SplitBucket::Train: return "train";
        case SplitBucket::Validation: return "validation";
        case SplitBucket::Test: return "test";
    }
    return "train";
}

SplitCounts split_counts(std::size_t n) {
    SplitCounts c;
    c.train = 2 * n / 3;
    c.validation = n / 6;
    c.test = n - c.train - c.validation;
    return c;
}

SplitAssignment split_indices(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw Error(ErrorCode::EmptyDataset, "cannot split an empty dataset");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_below(rng, i + 1)]);

    SplitAssignment a;
    a.counts = split_counts(n);
    a.bucket_of.assign(n, SplitBucket::Test);
    for (std::size_t k = 0; k < n; ++k) {
        SplitBucket b = SplitBucket::Test;
        if (k < a.counts.train)
            b = SplitBucket::Train;
        else if (k < a.counts.train + a.counts.validation)
            b = SplitBucket::Validation;
        a.bucket_of[order[k]] = b;
    }
    return a;
}

SplitAssignment split(std::span<const ClinicalRecord> records, std::uint64_t seed) {
    return split_indices(records.size(), seed);
}

std::string_view to_string(AttachmentFormat format) {
    switch (format) {
        case AttachmentFormat::Txt: return "txt";
        case AttachmentFormat::Md: return "md";
        case AttachmentFormat::Csv: return "csv";
        case AttachmentFormat::Json: return "json";
    }
    return "txt";
}

std::optional<AttachmentFormat> parse_attachment_format(std::string_view text) {
    std::string s(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (!s.empty() && s.front() == '.') s.erase(0, 1);
    if (s == "txt") return AttachmentFormat::Txt;
    if (s == "md" || s == "markdown") return AttachmentFormat::Md;
    if (s == "csv") return AttachmentFormat::Csv;
    if (s == "json") return AttachmentFormat::Json;
    return std::nullopt;
}

std::string format_from_extension(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    if (!ext.empty()) ext.erase(0, 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            field_started = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (field_started || !field.empty() || !row.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            field_started = false;
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw Error(ErrorCode::ParseError, "csv: unterminated quoted field");
    if (field_started || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string strip_markdown(std::string_view markdown) {
    static const std::regex image(R"(!\[([^\]]*)\]\([^)]*\))");
    static const std::regex link(R"(\[([^\]]*)\]\([^)]*\))");
    static const std::regex emphasis(R"((\*\*|__|\*|_|~~|`)([^*_~`]+)\1)");
    static const std::regex heading(R"(^\s{0,3}#{1,6}\s+)");
    static const std::regex bullet(R"(^\s*([-*+]|\d+[.)])\s+)");
    static const std::regex quote(R"(^\s*>\s?)");
    static const std::regex rule(R"(^\s*([-*_]\s*){3,}$)");
    static const std::regex table_sep(R"(^\s*\|?\s*:?-{3,}:?\s*(\|\s*:?-{3,}:?\s*)*\|?\s*$)");

    std::string out;
    std::istringstream in{std::string(markdown)};
    std::string line;
    bool in_fence = false;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto trimmed_start = line.find_first_not_of(" \t");
        if (trimmed_start != std::string::npos && line.compare(trimmed_start, 3, "```") == 0) {
            in_fence = !in_fence;
            continue;
        }
        if (!in_fence) {
            if (std::regex_match(line, table_sep) || std::regex_match(line, rule)) continue;
            line = std::regex_replace(line, heading, "");
            line = std::regex_replace(line, quote, "");
            line = std::regex_replace(line, bullet, "");
            line = std::regex_replace(line, image, "$1");
            line = std::regex_replace(line, link, "$1");
            for (int pass = 0; pass < 3; ++pass) line = std::regex_replace(line, emphasis, "$2");
            if (line.find('|') != std::string::npos) {
                std::vector<std::string> cells;
                std::string cell;
                std::istringstream cs(line);
                while (std::getline(cs, cell, '|')) {
                    const auto b = cell.find_first_not_of(" \t");
                    if (b == std::string::npos) continue;
                    cells.push_back(cell.substr(b, cell.find_last_not_of(" \t") - b + 1));
                }
                line = join(cells, "  ");
            }
        }
        if (!first) out += '\n';
        out += line;
        first = false;
    }
    return out;
}

ExtractedDocument parse_attachment_content(std::string_view content, AttachmentFormat format,
                                           const AttachmentLimits& limits) {
    if (content.size() > limits.raw_cap)
        throw Error(ErrorCode::OversizeAttachment, "attachment exceeds the raw size cap of " + std::to_string(limits.raw_cap) + " bytes");
    ExtractedDocument doc;
    doc.format = format;
    switch (format) {
        case AttachmentFormat::Txt:
            doc.text = std::string(content);
            doc.summary = "plain text, " + std::to_string(content.size()) + " bytes";
            break;
        case AttachmentFormat::Md:
            doc.text = strip_markdown(content);
            doc.summary = "markdown document, " + std::to_string(doc.text.size()) + " bytes of text";
            break;
        case AttachmentFormat::Csv: {
            auto rows = parse_csv(content);
            if (!rows.empty()) {
                doc.header = std::move(rows.front());
                rows.erase(rows.begin());
            }
            doc.row_count = rows.size();
            doc.summary = (doc.header.empty() ? std::string("no header") : "header " + join(doc.header, ", ")) + ", " +
                          std::to_string(doc.row_count) + (doc.row_count == 1 ? " row" : " rows");
            std::vector<std::string> lines;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                std::vector<std::string> cells;
                for (std::size_t c = 0; c < rows[r].size(); ++c) {
                    const auto name = c < doc.header.size() ? doc.header[c] : "column " + std::to_string(c + 1);
                    cells.push_back(name + "=" + rows[r][c]);
                }
                lines.push_back("row " + std::to_string(r + 1) + ": " + join(cells, "; "));
            }
            doc.text = join(lines, "\n");
            break;
        }
        case AttachmentFormat::Json: {
            Json j;
            try {
                j = Json::parse(content);
            } catch (const Json::exception& e) {
                throw Error(ErrorCode::ParseError, std::string("json attachment: ") + e.what());
            }
            std::vector<std::string> lines;
            flatten_json(j, "", lines);
            doc.key_path_count = lines.size();
            doc.summary = std::to_string(lines.size()) + (lines.size() == 1 ? " key path" : " key paths");
            doc.text = join(lines, "\n");
            break;
        }
    }
    if (doc.text.size() > limits.extracted_cap)
        throw Error(ErrorCode::OversizeAttachment,
                    "extracted text exceeds the cap of " + std::to_string(limits.extracted_cap) + " bytes");
    return doc;
}

ExtractedDocument parse_attachment(const std::filesystem::path& path, std::string_view declared_format,
                                   const AttachmentLimits& limits) {
    const auto format = parse_attachment_format(declared_format);
    if (!format) throw Error(ErrorCode::UnsupportedFormat, "unsupported attachment format '" + std::string(declared_format) + "'");
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot read attachment " + path.filename().string());
    if (size > limits.raw_cap)
        throw Error(ErrorCode::OversizeAttachment, "attachment exceeds the raw size cap of " + std::to_string(limits.raw_cap) + " bytes");
    return parse_attachment_content(read_all(path), *format, limits);
}

}  // namespace consilium
