#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "consilium/crypto.hpp"
#include "consilium/mode.hpp"
#include "consilium/safety_guard.hpp"

namespace consilium {

enum class TurnRole { Clinician, Patient, Assistant };
std::string_view to_string(TurnRole role);
std::optional<TurnRole> parse_turn_role(std::string_view text);

struct Turn {
    TurnRole role = TurnRole::Clinician;
    std::string text;
    std::int64_t timestamp_ms = 0;
};

struct Session {
    std::string session_id;
    Mode mode = Mode::PrivateAi;
    std::vector<Turn> turns;  // append-only
    std::int64_t created_at_ms = 0;
    bool persisted = false;
    std::set<RiskCategory> risk_flags;
    std::vector<std::string> imported_from;  // session ids brought in by authorized import
};

/// Serialized session (versioned structured text); this is the AEAD plaintext.
std::string serialize_session(const Session& session);
Session deserialize_session(std::string_view text);

/// Proof of an explicit, user-initiated action. Empty actor means not authorized.
struct UserAuthorization {
    std::string actor;
    [[nodiscard]] bool valid() const { return !actor.empty(); }
};

struct VaultRecord {
    std::string session_id;
    std::array<std::uint8_t, crypto::kNonceSize> nonce{};
    crypto::Bytes ciphertext;
    std::array<std::uint8_t, crypto::kTagSize> auth_tag{};
    std::string key_id;
};

/// Byte framing of a record file (all integers big-endian):
///   magic "CSVR" | u8 version=1 | u16 key_id len | key_id | u16 session_id len | session_id
///   | 12-byte nonce | 16-byte tag | u32 ciphertext len | ciphertext
/// Everything before the nonce is bound as AEAD associated data.
crypto::Bytes encode_record(const VaultRecord& record);
VaultRecord decode_record(std::span<const std::uint8_t> bytes);  // throws AuthenticationFailure on bad framing

inline constexpr std::string_view kDefaultKeyId = "device-0";

/// At-rest protection and session lifecycle. Sessions live in memory; only an
/// authorized close or export writes anything, and only ciphertext.
class SessionVault {
  public:
    /// Creates the key store (owner-only permissions) on first use.
    explicit SessionVault(std::filesystem::path root, std::string key_id = std::string(kDefaultKeyId));

    // Session lifecycle ------------------------------------------------------
    Session& open_session(Mode mode);
    void append_turn(std::string_view session_id, TurnRole role, std::string text);
    void add_risk_flags(std::string_view session_id, const std::set<RiskCategory>& categories);
    [[nodiscard]] Session snapshot(std::string_view session_id) const;
    [[nodiscard]] bool is_open(std::string_view session_id) const;

    /// persist=false drops the session from memory and writes nothing.
    /// persist=true requires authorization and writes exactly one record file.
    void close_session(std::string_view session_id, bool persist,
                       const std::optional<UserAuthorization>& authorization = std::nullopt);

    // Sealing ------------------------------------------------------------------
    VaultRecord seal(std::span<const std::uint8_t> plaintext, std::string_view session_id,
                     std::string_view key_id = {});
    crypto::Bytes unseal(const VaultRecord& record, std::string_view key_id = {}) const;

    // Isolation ----------------------------------------------------------------
    /// Reads a persisted session record on behalf of `requesting_session_id`.
    /// Allowed for the same id or after an authorized import of `target` into
    /// the requester; otherwise IsolationViolation.
    Session read_isolated(std::string_view target_session_id, std::string_view requesting_session_id) const;

    /// Writes a sealed export of a persisted or open session.
    void export_session(std::string_view session_id, const std::filesystem::path& out,
                        const UserAuthorization& authorization);
    /// Unseals an export into an open session and grants it read access to the source.
    Session import_session(const std::filesystem::path& in, std::string_view into_session_id,
                           const UserAuthorization& authorization);

    // Secrets (BYOK API key) -----------------------------------------------------
    void store_secret(std::string_view name, std::string_view value);
    [[nodiscard]] std::optional<std::string> load_secret(std::string_view name) const;

    [[nodiscard]] const std::filesystem::path& root() const { return root_; }
    [[nodiscard]] std::filesystem::path record_path(std::string_view session_id) const;
    [[nodiscard]] std::size_t nonce_count() const;

  private:
    crypto::Bytes key_for(std::string_view key_id) const;
    std::array<std::uint8_t, crypto::kNonceSize> fresh_nonce_locked();
    void write_atomically(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) const;
    static crypto::Bytes read_file(const std::filesystem::path& path);

    std::filesystem::path root_;
    std::string key_id_;
    mutable std::mutex mutex_;
    std::map<std::string, Session, std::less<>> open_;
    std::unordered_set<std::string> nonces_;  // hex, for key_id_
    std::map<std::string, std::set<std::string>, std::less<>> import_grants_;  // requester -> targets
    std::map<std::string, Session, std::less<>> imported_;                      // source id -> imported copy
    std::uint64_t session_counter_ = 0;
};

}  // namespace consilium
