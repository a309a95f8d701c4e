#include <sys/stat.h>

#include "doctest.h"
#include "test_support.hpp"

#include "consilium/error.hpp"
#include "consilium/session_vault.hpp"

using namespace consilium;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoError;
}

crypto::Bytes bytes(std::string_view s) { return {s.begin(), s.end()}; }

const UserAuthorization kAuth{"clinician"};

}  // namespace

TEST_CASE("key store is created owner-only") {
    testing::TempDir dir;
    SessionVault vault(dir / "vault");
    struct stat st {};
    REQUIRE(::stat((dir / "vault/keys").c_str(), &st) == 0);
    CHECK((st.st_mode & 0777) == 0700);
    REQUIRE(::stat((dir / "vault/keys/device-0.key").c_str(), &st) == 0);
    CHECK((st.st_mode & 0777) == 0600);
    CHECK(fs::file_size(dir / "vault/keys/device-0.key") == crypto::kKeySize);
}

TEST_CASE("seal and unseal") {
    testing::TempDir dir;
    SessionVault vault(dir / "vault");
    auto rec = vault.seal(bytes("hello transcript"), "s-1");
    CHECK(rec.key_id == "device-0");
    auto back = vault.unseal(rec);
    CHECK(std::string(back.begin(), back.end()) == "hello transcript");

    auto encoded = encode_record(rec);
    CHECK(std::string(encoded.begin(), encoded.begin() + 4) == "CSVR");
    auto decoded = decode_record(encoded);
    CHECK(decoded.session_id == "s-1");
    CHECK(decoded.nonce == rec.nonce);

    auto other_session = rec;
    other_session.session_id = "s-2";
    CHECK(code_of([&] { (void)vault.unseal(other_session); }) == ErrorCode::AuthenticationFailure);
    auto truncated = encoded;
    truncated.pop_back();
    CHECK(code_of([&] { (void)decode_record(truncated); }) == ErrorCode::AuthenticationFailure);
    encoded.push_back(0);
    CHECK(code_of([&] { (void)decode_record(encoded); }) == ErrorCode::AuthenticationFailure);
    CHECK(code_of([&] { (void)vault.seal(bytes("x"), "s", "other-key"); }) == ErrorCode::UnknownKey);
}

TEST_CASE("a reopened vault keeps its key and nonce ledger") {
    testing::TempDir dir;
    VaultRecord rec;
    {
        SessionVault vault(dir / "vault");
        rec = vault.seal(bytes("persisted"), "s-1");
        CHECK(vault.nonce_count() == 1);
    }
    SessionVault again(dir / "vault");
    CHECK(again.nonce_count() == 1);
    auto back = again.unseal(rec);
    CHECK(std::string(back.begin(), back.end()) == "persisted");
}

TEST_CASE("session lifecycle and persistence") {
    testing::TempDir dir;
    SessionVault vault(dir / "vault");
    auto& s = vault.open_session(Mode::PrivateAi);
    const auto id = s.session_id;
    CHECK(id.rfind("s-", 0) == 0);
    vault.append_turn(id, TurnRole::Patient, "I feel low");
    vault.append_turn(id, TurnRole::Assistant, "noted");
    vault.add_risk_flags(id, {RiskCategory::SelfHarmIntent});
    auto snap = vault.snapshot(id);
    CHECK(snap.turns.size() == 2);
    CHECK(snap.risk_flags.contains(RiskCategory::SelfHarmIntent));

    CHECK(code_of([&] { vault.close_session(id, true); }) == ErrorCode::AuthorizationMissing);
    CHECK(code_of([&] { vault.close_session(id, true, UserAuthorization{}); }) == ErrorCode::AuthorizationMissing);
    CHECK(vault.is_open(id));
    vault.close_session(id, true, kAuth);
    CHECK_FALSE(vault.is_open(id));
    CHECK(fs::exists(vault.record_path(id)));
    CHECK(testing::read_text(vault.record_path(id)).find("I feel low") == std::string::npos);

    auto restored = vault.read_isolated(id, id);
    CHECK(restored.persisted);
    REQUIRE(restored.turns.size() == 2);
    CHECK(restored.turns[0].text == "I feel low");
    CHECK(restored.turns[0].role == TurnRole::Patient);

    auto& t = vault.open_session(Mode::CloudAi);
    const auto tid = t.session_id;
    vault.append_turn(tid, TurnRole::Clinician, "ephemeral words");
    vault.close_session(tid, false);
    CHECK_FALSE(fs::exists(vault.record_path(tid)));
    CHECK(testing::all_bytes_under(dir.path()).find("ephemeral words") == std::string::npos);
    CHECK(code_of([&] { (void)vault.snapshot(tid); }) == ErrorCode::UnknownSession);
    CHECK(code_of([&] { vault.append_turn("s-nope", TurnRole::Patient, "x"); }) == ErrorCode::UnknownSession);
}

TEST_CASE("cross-session reads need an authorized import") {
    testing::TempDir dir;
    SessionVault vault(dir / "vault");
    const auto a = vault.open_session(Mode::PrivateAi).session_id;
    vault.append_turn(a, TurnRole::Patient, "session a content");
    vault.close_session(a, true, kAuth);
    const auto b = vault.open_session(Mode::PrivateAi).session_id;
    CHECK(code_of([&] { (void)vault.read_isolated(a, b); }) == ErrorCode::IsolationViolation);

    const auto out = dir / "a.export";
    CHECK(code_of([&] { vault.export_session(a, out, UserAuthorization{}); }) == ErrorCode::AuthorizationMissing);
    vault.export_session(a, out, kAuth);
    CHECK(testing::read_text(out).find("session a content") == std::string::npos);
    CHECK(code_of([&] { (void)vault.import_session(out, b, UserAuthorization{}); }) == ErrorCode::AuthorizationMissing);
    auto imported = vault.import_session(out, b, kAuth);
    CHECK(imported.session_id == a);
    CHECK(vault.snapshot(b).imported_from == std::vector<std::string>{a});
    CHECK(vault.read_isolated(a, b).turns.at(0).text == "session a content");

    const auto c = vault.open_session(Mode::PrivateAi).session_id;
    CHECK(code_of([&] { (void)vault.read_isolated(a, c); }) == ErrorCode::IsolationViolation);
}

TEST_CASE("serialization round trip") {
    Session s;
    s.session_id = "s-abc";
    s.mode = Mode::Byok;
    s.turns = {{TurnRole::Clinician, "hi \"there\"\n", 5}, {TurnRole::Patient, "ünïcode", 6}};
    s.created_at_ms = 4;
    s.risk_flags = {RiskCategory::SuicidalIdeation};
    s.imported_from = {"s-x"};
    auto back = deserialize_session(serialize_session(s));
    CHECK(back.session_id == s.session_id);
    CHECK(back.mode == Mode::Byok);
    CHECK(back.turns.size() == 2);
    CHECK(back.turns[0].text == s.turns[0].text);
    CHECK(back.turns[1].timestamp_ms == 6);
    CHECK(back.risk_flags == s.risk_flags);
    CHECK(back.imported_from == s.imported_from);
}

TEST_CASE("secrets are sealed at rest") {
    testing::TempDir dir;
    {
        SessionVault vault(dir / "vault");
        CHECK_FALSE(vault.load_secret("byok").has_value());
        vault.store_secret("byok", "sk-test-secret-value");
    }
    CHECK(testing::all_bytes_under(dir.path()).find("sk-test-secret-value") == std::string::npos);
    SessionVault vault(dir / "vault");
    CHECK(vault.load_secret("byok") == "sk-test-secret-value");
}
