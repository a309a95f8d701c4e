#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace consilium {

enum class ErrorCode {
    // model_registry
    DuplicateModelId,
    MalformedDigest,
    MalformedManifest,
    MissingWeightFile,
    DigestMismatch,
    UnknownModel,
    EmptyEnsemble,
    // inference_backend
    BackendUnavailable,
    BackendError,
    NoScriptMatch,
    NotAMockBackend,
    GenerationTimeout,
    EgressDenied,
    InvalidRequest,
    // prompt_engine
    EmptyConversation,
    EmptyQuery,
    UnsupportedTaskFlow,
    AttachmentTooLarge,
    TemplateStoreCorrupt,
    // dsm5_knowledge
    WrongItemCount,
    ItemOutOfRange,
    UnknownInstrument,
    KnowledgeBaseCorrupt,
    // orchestrator / consensus
    NoModelsRegistered,
    AllModelsUnavailable,
    EmptyOutputs,
    // session_vault
    UnknownSession,
    AuthorizationMissing,
    AuthenticationFailure,
    UnknownKey,
    IsolationViolation,
    VaultIoError,
    // egress_guard
    PolicyViolation,
    QuotaExhausted,
    // corpus_tools
    ParseError,
    SchemaViolation,
    EmptyDataset,
    UnsupportedFormat,
    OversizeAttachment,
    // bench_harness
    CorpusTooSmall,
    NetworkStateViolation,
    InvalidRepeats,
    EmptySamples,
    // service_gateway
    PortInUse,
    NonLoopbackBindRefused,
    ByokKeyMissing,
    BadRequest,
    IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library. The code is the stable, machine-readable
/// part; the message is for humans and never contains clinical content.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

}  // namespace consilium
