#include "consilium/session_vault.hpp"

#include <chrono>
#include <fstream>

#include "json.hpp"

#include "consilium/error.hpp"

namespace consilium {

namespace fs = std::filesystem;

namespace {

using Json = nlohmann::ordered_json;

constexpr std::string_view kMagic = "CSVR";
constexpr std::uint8_t kRecordVersion = 1;
constexpr int kSessionFormatVersion = 1;

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string mode_key(Mode mode) {
    switch (mode) {
        case Mode::PrivateAi: return "private_ai";
        case Mode::CloudAi: return "cloud_ai";
        case Mode::Byok: return "byok";
    }
    return "private_ai";
}

void put_u16(crypto::Bytes& out, std::size_t v) {
    if (v > 0xFFFF) throw Error(ErrorCode::VaultIoError, "record field too long");
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(crypto::Bytes& out, std::size_t v) {
    if (v > 0xFFFFFFFFULL) throw Error(ErrorCode::VaultIoError, "record too large");
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_str(crypto::Bytes& out, std::string_view s) {
    put_u16(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

// Associated data: the framing header up to (not including) the nonce.
crypto::Bytes header_bytes(std::string_view key_id, std::string_view session_id) {
    crypto::Bytes out(kMagic.begin(), kMagic.end());
    out.push_back(kRecordVersion);
    put_str(out, key_id);
    put_str(out, session_id);
    return out;
}

class Reader {
  public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    std::span<const std::uint8_t> take(std::size_t n) {
        if (pos_ + n > b_.size()) throw Error(ErrorCode::AuthenticationFailure, "vault record is truncated");
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t u16() {
        auto s = take(2);
        return (std::size_t{s[0]} << 8) | s[1];
    }
    std::size_t u32() {
        auto s = take(4);
        return (std::size_t{s[0]} << 24) | (std::size_t{s[1]} << 16) | (std::size_t{s[2]} << 8) | s[3];
    }
    std::string str() {
        auto s = take(u16());
        return {s.begin(), s.end()};
    }
    [[nodiscard]] bool done() const { return pos_ == b_.size(); }

  private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

bool safe_id(std::string_view id) {
    if (id.empty() || id.size() > 128) return false;
    for (char c : id)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
    return true;
}

std::span<const std::uint8_t> as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace

std::string_view to_string(TurnRole role) {
    switch (role) {
        case TurnRole::Clinician: return "clinician";
        case TurnRole::Patient: return "patient";
        case TurnRole::Assistant: return "assistant";
    }
    return "clinician";
}

std::optional<TurnRole> parse_turn_role(std::string_view text) {
    if (text == "clinician") return TurnRole::Clinician;
    if (text == "patient") return TurnRole::Patient;
    if (text == "assistant") return TurnRole::Assistant;
    return std::nullopt;
}

std::string serialize_session(const Session& s) {
    Json j;
    j["format_version"] = kSessionFormatVersion;
    j["session_id"] = s.session_id;
    j["mode"] = mode_key(s.mode);
    j["created_at_ms"] = s.created_at_ms;
    j["persisted"] = s.persisted;
    auto& turns = j["turns"] = Json::array();
    for (const auto& t : s.turns)
        turns.push_back({{"role", to_string(t.role)}, {"text", t.text}, {"timestamp_ms", t.timestamp_ms}});
    auto& flags = j["risk_flags"] = Json::array();
    for (auto f : s.risk_flags) flags.push_back(to_string(f));
    j["imported_from"] = s.imported_from;
    return j.dump();
}

Session deserialize_session(std::string_view text) {
    try {
        const auto j = Json::parse(text);
        if (j.at("format_version").get<int>() != kSessionFormatVersion)
            throw Error(ErrorCode::ParseError, "unsupported session format version");
        Session s;
        s.session_id = j.at("session_id").get<std::string>();
        auto mode = parse_mode(j.at("mode").get<std::string>());
        if (!mode) throw Error(ErrorCode::ParseError, "session: unknown mode");
        s.mode = *mode;
        s.created_at_ms = j.at("created_at_ms").get<std::int64_t>();
        s.persisted = j.at("persisted").get<bool>();
        for (const auto& t : j.at("turns")) {
            auto role = parse_turn_role(t.at("role").get<std::string>());
            if (!role) throw Error(ErrorCode::ParseError, "session: unknown turn role");
            s.turns.push_back({*role, t.at("text").get<std::string>(), t.at("timestamp_ms").get<std::int64_t>()});
        }
        for (const auto& f : j.at("risk_flags")) {
            const auto name = f.get<std::string>();
            if (name == "suicidal_ideation") s.risk_flags.insert(RiskCategory::SuicidalIdeation);
            else if (name == "self_harm_intent") s.risk_flags.insert(RiskCategory::SelfHarmIntent);
            else if (name == "severe_functional_impairment") s.risk_flags.insert(RiskCategory::SevereFunctionalImpairment);
            else throw Error(ErrorCode::ParseError, "session: unknown risk flag");
        }
        s.imported_from = j.at("imported_from").get<std::vector<std::string>>();
        return s;
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("session: ") + e.what());
    }
}

crypto::Bytes encode_record(const VaultRecord& r) {
    auto out = header_bytes(r.key_id, r.session_id);
    out.insert(out.end(), r.nonce.begin(), r.nonce.end());
    out.insert(out.end(), r.auth_tag.begin(), r.auth_tag.end());
    put_u32(out, r.ciphertext.size());
    out.insert(out.end(), r.ciphertext.begin(), r.ciphertext.end());
    return out;
}

VaultRecord decode_record(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    auto magic = in.take(kMagic.size());
    if (!std::equal(magic.begin(), magic.end(), kMagic.begin()))
        throw Error(ErrorCode::AuthenticationFailure, "not a vault record");
    if (in.take(1)[0] != kRecordVersion) throw Error(ErrorCode::AuthenticationFailure, "unsupported record version");
    VaultRecord r;
    r.key_id = in.str();
    r.session_id = in.str();
    auto nonce = in.take(crypto::kNonceSize);
    std::copy(nonce.begin(), nonce.end(), r.nonce.begin());
    auto tag = in.take(crypto::kTagSize);
    std::copy(tag.begin(), tag.end(), r.auth_tag.begin());
    auto ct = in.take(in.u32());
    r.ciphertext.assign(ct.begin(), ct.end());
    if (!in.done()) throw Error(ErrorCode::AuthenticationFailure, "trailing bytes after vault record");
    return r;
}

SessionVault::SessionVault(fs::path root, std::string key_id) : root_(std::move(root)), key_id_(std::move(key_id)) {
    if (!safe_id(key_id_)) throw Error(ErrorCode::UnknownKey, "invalid key id");
    std::error_code ec;
    fs::create_directories(root_ / "keys", ec);
    fs::create_directories(root_ / "sessions", ec);
    if (ec) throw Error(ErrorCode::VaultIoError, "cannot create vault directories");
    fs::permissions(root_ / "keys", fs::perms::owner_all, fs::perm_options::replace, ec);

    const auto key_path = root_ / "keys" / (key_id_ + ".key");
    if (!fs::exists(key_path)) {
        const auto key = crypto::random_bytes(crypto::kKeySize);
        write_atomically(key_path, key);
        fs::permissions(key_path, fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace, ec);
    }
    const auto ledger = root_ / "keys" / (key_id_ + ".nonces");
    if (fs::exists(ledger)) {
        const auto bytes = read_file(ledger);
        for (std::size_t i = 0; i + crypto::kNonceSize <= bytes.size(); i += crypto::kNonceSize)
            nonces_.insert(crypto::to_hex(std::span(bytes).subspan(i, crypto::kNonceSize)));
    }
}

crypto::Bytes SessionVault::read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::VaultIoError, "cannot read " + path.filename().string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void SessionVault::write_atomically(const fs::path& path, std::span<const std::uint8_t> bytes) const {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::VaultIoError, "cannot write " + path.filename().string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::VaultIoError, "cannot replace " + path.filename().string());
}

crypto::Bytes SessionVault::key_for(std::string_view key_id) const {
    const std::string id(key_id.empty() ? std::string_view(key_id_) : key_id);
    if (!safe_id(id)) throw Error(ErrorCode::UnknownKey, "unknown key id");
    const auto path = root_ / "keys" / (id + ".key");
    if (!fs::exists(path)) throw Error(ErrorCode::UnknownKey, "unknown key id: " + id);
    auto key = read_file(path);
    if (key.size() != crypto::kKeySize) throw Error(ErrorCode::UnknownKey, "key file has the wrong size");
    return key;
}

std::array<std::uint8_t, crypto::kNonceSize> SessionVault::fresh_nonce_locked() {
    std::array<std::uint8_t, crypto::kNonceSize> nonce{};
    for (;;) {
        const auto r = crypto::random_bytes(crypto::kNonceSize);
        std::copy(r.begin(), r.end(), nonce.begin());
        if (nonces_.insert(crypto::to_hex(nonce)).second) break;
    }
    std::ofstream ledger(root_ / "keys" / (key_id_ + ".nonces"), std::ios::binary | std::ios::app);
    ledger.write(reinterpret_cast<const char*>(nonce.data()), nonce.size());
    if (!ledger) throw Error(ErrorCode::VaultIoError, "cannot append to the nonce ledger");
    return nonce;
}

VaultRecord SessionVault::seal(std::span<const std::uint8_t> plaintext, std::string_view session_id,
                               std::string_view key_id) {
    if (!key_id.empty() && key_id != key_id_)
        throw Error(ErrorCode::UnknownKey, "sealing is only possible with the device key");
    const auto key = key_for(key_id_);
    VaultRecord r;
    r.session_id = std::string(session_id);
    r.key_id = key_id_;
    {
        std::lock_guard lock(mutex_);
        r.nonce = fresh_nonce_locked();
    }
    const auto aad = header_bytes(r.key_id, r.session_id);
    auto box = crypto::aes256gcm_encrypt(key, r.nonce, aad, plaintext);
    r.ciphertext = std::move(box.ciphertext);
    r.auth_tag = box.tag;
    return r;
}

crypto::Bytes SessionVault::unseal(const VaultRecord& record, std::string_view key_id) const {
    if (!key_id.empty() && key_id != record.key_id)
        throw Error(ErrorCode::AuthenticationFailure, "record was sealed under a different key");
    const auto key = key_for(record.key_id);
    crypto::Bytes plain;
    if (!crypto::aes256gcm_decrypt(key, record.nonce, header_bytes(record.key_id, record.session_id),
                                   record.ciphertext, record.auth_tag, plain))
        throw Error(ErrorCode::AuthenticationFailure, "vault record failed authentication");
    return plain;
}

Session& SessionVault::open_session(Mode mode) {
    std::lock_guard lock(mutex_);
    std::string id;
    do {
        id = "s-" + crypto::to_hex(crypto::random_bytes(8));
    } while (open_.contains(id) || fs::exists(record_path(id)));
    Session s;
    s.session_id = id;
    s.mode = mode;
    s.created_at_ms = now_ms();
    ++session_counter_;
    return open_.emplace(id, std::move(s)).first->second;
}

void SessionVault::append_turn(std::string_view session_id, TurnRole role, std::string text) {
    std::lock_guard lock(mutex_);
    auto it = open_.find(session_id);
    if (it == open_.end()) throw Error(ErrorCode::UnknownSession, "unknown session");
    it->second.turns.push_back({role, std::move(text), now_ms()});
}

void SessionVault::add_risk_flags(std::string_view session_id, const std::set<RiskCategory>& categories) {
    std::lock_guard lock(mutex_);
    auto it = open_.find(session_id);
    if (it == open_.end()) throw Error(ErrorCode::UnknownSession, "unknown session");
    it->second.risk_flags.insert(categories.begin(), categories.end());
}

Session SessionVault::snapshot(std::string_view session_id) const {
    std::lock_guard lock(mutex_);
    auto it = open_.find(session_id);
    if (it == open_.end()) throw Error(ErrorCode::UnknownSession, "unknown session");
    return it->second;
}

bool SessionVault::is_open(std::string_view session_id) const {
    std::lock_guard lock(mutex_);
    return open_.contains(session_id);
}

void SessionVault::close_session(std::string_view session_id, bool persist,
                                 const std::optional<UserAuthorization>& authorization) {
    Session s;
    {
        std::lock_guard lock(mutex_);
        auto it = open_.find(session_id);
        if (it == open_.end()) throw Error(ErrorCode::UnknownSession, "unknown session");
        if (persist && !(authorization && authorization->valid()))
            throw Error(ErrorCode::AuthorizationMissing, "persisting a session needs explicit user authorization");
        s = std::move(it->second);
        open_.erase(it);
        import_grants_.erase(s.session_id);
    }
    if (!persist) return;
    s.persisted = true;
    const auto plain = serialize_session(s);
    const auto record = seal(as_bytes(plain), s.session_id);
    write_atomically(record_path(s.session_id), encode_record(record));
}

fs::path SessionVault::record_path(std::string_view session_id) const {
    if (!safe_id(session_id)) throw Error(ErrorCode::UnknownSession, "invalid session id");
    return root_ / "sessions" / (std::string(session_id) + ".rec");
}

std::size_t SessionVault::nonce_count() const {
    std::lock_guard lock(mutex_);
    return nonces_.size();
}

Session SessionVault::read_isolated(std::string_view target, std::string_view requester) const {
    {
        std::lock_guard lock(mutex_);
        if (target != requester) {
            auto g = import_grants_.find(requester);
            if (g == import_grants_.end() || !g->second.contains(std::string(target)))
                throw Error(ErrorCode::IsolationViolation, "sessions cannot read each other's data");
            auto imp = imported_.find(target);
            if (imp != imported_.end()) return imp->second;
        } else {
            auto it = open_.find(target);
            if (it != open_.end()) return it->second;
        }
    }
    const auto path = record_path(target);
    if (!fs::exists(path)) throw Error(ErrorCode::UnknownSession, "no persisted record for this session");
    const auto record = decode_record(read_file(path));
    if (record.session_id != target) throw Error(ErrorCode::AuthenticationFailure, "record session id mismatch");
    const auto plain = unseal(record);
    return deserialize_session(std::string(plain.begin(), plain.end()));
}

void SessionVault::export_session(std::string_view session_id, const fs::path& out,
                                  const UserAuthorization& authorization) {
    if (!authorization.valid()) throw Error(ErrorCode::AuthorizationMissing, "export needs explicit user authorization");
    Session s;
    bool found = false;
    {
        std::lock_guard lock(mutex_);
        auto it = open_.find(session_id);
        if (it != open_.end()) s = it->second, found = true;
    }
    if (!found) s = read_isolated(session_id, session_id);
    const auto plain = serialize_session(s);
    const auto record = seal(as_bytes(plain), s.session_id);
    write_atomically(out, encode_record(record));
}

Session SessionVault::import_session(const fs::path& in, std::string_view into_session_id,
                                     const UserAuthorization& authorization) {
    if (!authorization.valid()) throw Error(ErrorCode::AuthorizationMissing, "import needs explicit user authorization");
    if (!is_open(into_session_id)) throw Error(ErrorCode::UnknownSession, "import target session is not open");
    const auto record = decode_record(read_file(in));
    const auto plain = unseal(record);
    auto source = deserialize_session(std::string(plain.begin(), plain.end()));
    if (source.session_id != record.session_id) throw Error(ErrorCode::AuthenticationFailure, "export id mismatch");
    std::lock_guard lock(mutex_);
    auto it = open_.find(into_session_id);
    if (it == open_.end()) throw Error(ErrorCode::UnknownSession, "import target session is not open");
    it->second.imported_from.push_back(source.session_id);
    import_grants_[std::string(into_session_id)].insert(source.session_id);
    imported_[source.session_id] = source;
    return source;
}

void SessionVault::store_secret(std::string_view name, std::string_view value) {
    if (!safe_id(name)) throw Error(ErrorCode::VaultIoError, "invalid secret name");
    std::error_code ec;
    fs::create_directories(root_ / "secrets", ec);
    const auto record = seal(as_bytes(value), "secret-" + std::string(name));
    write_atomically(root_ / "secrets" / (std::string(name) + ".sec"), encode_record(record));
}

std::optional<std::string> SessionVault::load_secret(std::string_view name) const {
    if (!safe_id(name)) return std::nullopt;
    const auto path = root_ / "secrets" / (std::string(name) + ".sec");
    if (!fs::exists(path)) return std::nullopt;
    const auto record = decode_record(read_file(path));
    if (record.session_id != "secret-" + std::string(name))
        throw Error(ErrorCode::AuthenticationFailure, "secret record name mismatch");
    const auto plain = unseal(record);
    return std::string(plain.begin(), plain.end());
}

}  // namespace consilium
