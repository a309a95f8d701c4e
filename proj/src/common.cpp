#include "consilium/error.hpp"
#include "consilium/mode.hpp"

namespace consilium {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DuplicateModelId: return "DuplicateModelId";
        case ErrorCode::MalformedDigest: return "MalformedDigest";
        case ErrorCode::MalformedManifest: return "MalformedManifest";
        case ErrorCode::MissingWeightFile: return "MissingWeightFile";
        case ErrorCode::DigestMismatch: return "DigestMismatch";
        case ErrorCode::UnknownModel: return "UnknownModel";
        case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::BackendError: return "BackendError";
        case ErrorCode::NoScriptMatch: return "NoScriptMatch";
        case ErrorCode::NotAMockBackend: return "NotAMockBackend";
        case ErrorCode::GenerationTimeout: return "GenerationTimeout";
        case ErrorCode::EgressDenied: return "EgressDenied";
        case ErrorCode::InvalidRequest: return "InvalidRequest";
        case ErrorCode::EmptyConversation: return "EmptyConversation";
        case ErrorCode::EmptyQuery: return "EmptyQuery";
        case ErrorCode::UnsupportedTaskFlow: return "UnsupportedTaskFlow";
        case ErrorCode::AttachmentTooLarge: return "AttachmentTooLarge";
        case ErrorCode::TemplateStoreCorrupt: return "TemplateStoreCorrupt";
        case ErrorCode::WrongItemCount: return "WrongItemCount";
        case ErrorCode::ItemOutOfRange: return "ItemOutOfRange";
        case ErrorCode::UnknownInstrument: return "UnknownInstrument";
        case ErrorCode::KnowledgeBaseCorrupt: return "KnowledgeBaseCorrupt";
        case ErrorCode::NoModelsRegistered: return "NoModelsRegistered";
        case ErrorCode::AllModelsUnavailable: return "AllModelsUnavailable";
        case ErrorCode::EmptyOutputs: return "EmptyOutputs";
        case ErrorCode::UnknownSession: return "UnknownSession";
        case ErrorCode::AuthorizationMissing: return "AuthorizationMissing";
        case ErrorCode::AuthenticationFailure: return "AuthenticationFailure";
        case ErrorCode::UnknownKey: return "UnknownKey";
        case ErrorCode::IsolationViolation: return "IsolationViolation";
        case ErrorCode::VaultIoError: return "VaultIoError";
        case ErrorCode::PolicyViolation: return "PolicyViolation";
        case ErrorCode::QuotaExhausted: return "QuotaExhausted";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::OversizeAttachment: return "OversizeAttachment";
        case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
        case ErrorCode::NetworkStateViolation: return "NetworkStateViolation";
        case ErrorCode::InvalidRepeats: return "InvalidRepeats";
        case ErrorCode::EmptySamples: return "EmptySamples";
        case ErrorCode::PortInUse: return "PortInUse";
        case ErrorCode::NonLoopbackBindRefused: return "NonLoopbackBindRefused";
        case ErrorCode::ByokKeyMissing: return "ByokKeyMissing";
        case ErrorCode::BadRequest: return "BadRequest";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::PrivateAi: return "private";
        case Mode::CloudAi: return "cloud";
        case Mode::Byok: return "byok";
    }
    return "private";
}

std::optional<Mode> parse_mode(std::string_view text) {
    if (text == "private" || text == "private_ai") return Mode::PrivateAi;
    if (text == "cloud" || text == "cloud_ai") return Mode::CloudAi;
    if (text == "byok") return Mode::Byok;
    return std::nullopt;
}

std::string_view attribution_label(Mode mode) {
    switch (mode) {
        case Mode::PrivateAi: return "Private AI";
        case Mode::CloudAi: return "Cloud AI";
        case Mode::Byok: return "BYOK";
    }
    return "Private AI";
}

}  // namespace consilium
