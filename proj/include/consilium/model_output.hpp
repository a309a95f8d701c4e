#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace consilium {

struct DifferentialEntry {
    std::string diagnosis;
    std::string dsm5_code;  // optional in the wire schema; empty when absent
    double confidence = 0.0;
};

/// One backend's structured diagnostic result.
struct ModelOutput {
    std::string model_id;
    std::string diagnosis;
    std::string dsm5_code;
    double confidence = 0.0;
    std::vector<std::string> supporting_symptoms;
    std::vector<DifferentialEntry> differential;
    int attempts_used = 1;
};

enum class SchemaErrorKind { NoJsonObject, InvalidJson, MissingField, TypeMismatch, OutOfRange, EmptyValue };
std::string_view to_string(SchemaErrorKind kind);

struct SchemaError {
    std::string field;  // dotted path, e.g. "differential[1].confidence"; empty for document-level errors
    SchemaErrorKind kind = SchemaErrorKind::MissingField;
    std::string message;
};

}  // namespace consilium
