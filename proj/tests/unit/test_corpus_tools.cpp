#include "doctest.h"
#include "test_support.hpp"

#include "consilium/corpus_tools.hpp"
#include "consilium/error.hpp"

using namespace consilium;
using testing::fixture;

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

std::string record_line(const std::string& conversation) {
    return nlohmann::ordered_json{{"instruction", "i"}, {"conversation", conversation}, {"diagnosis", "MDD (296.23)"},
                                  {"condition", "depression"}}
        .dump();
}

}  // namespace

TEST_CASE("fixture corpus loads without warnings") {
    std::vector<LoadWarning> warnings;
    auto records = load_records(fixture("records_500.jsonl"), &warnings);
    CHECK(records.size() == 500);
    CHECK(warnings.empty());
    CHECK(records[0].condition == "depression");
}

TEST_CASE("record round trip and warnings") {
    const std::string text = record_line("short") + "\n\n" + record_line(std::string(2100, 'a')) + "\n";
    std::vector<LoadWarning> warnings;
    auto records = parse_records(text, &warnings);
    REQUIRE(records.size() == 2);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].record_index == 0);
    CHECK(parse_records(serialize_records(records)) == records);

    auto extra = nlohmann::json::parse(record_line(std::string(2100, 'b')));
    extra["source"] = "x";
    warnings.clear();
    (void)parse_records(extra.dump(), &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].message.find("source") != std::string::npos);

    // Code points, not bytes: 2070 two-byte characters sit inside the range.
    std::string accented;
    for (int i = 0; i < 2070; ++i) accented += "é";
    warnings.clear();
    (void)parse_records(record_line(accented), &warnings);
    CHECK(warnings.empty());
}

TEST_CASE("record errors name the record") {
    const std::string good = record_line("x");
    try {
        (void)parse_records(good + "\n{not json}\n");
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ParseError);
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
    auto missing = nlohmann::json::parse(good);
    missing.erase("diagnosis");
    try {
        (void)parse_records(missing.dump());
        FAIL("expected SchemaViolation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SchemaViolation);
        CHECK(std::string(e.what()).find("diagnosis") != std::string::npos);
    }
    auto wrong = nlohmann::json::parse(good);
    wrong["condition"] = 3;
    CHECK(code_of([&] { (void)parse_records(wrong.dump()); }) == ErrorCode::SchemaViolation);
    wrong["condition"] = "";
    CHECK(code_of([&] { (void)parse_records(wrong.dump()); }) == ErrorCode::SchemaViolation);
}

TEST_CASE("split counts and determinism") {
    auto c = split_counts(500);
    CHECK(c.train == 333);
    CHECK(c.validation == 83);
    CHECK(c.test == 84);
    CHECK(split_counts(1).test == 1);

    auto a = split_indices(500, 7);
    auto b = split_indices(500, 7);
    CHECK(a.bucket_of == b.bucket_of);
    CHECK(split_indices(500, 8).bucket_of != a.bucket_of);
    std::size_t train = 0;
    for (auto bucket : a.bucket_of) train += bucket == SplitBucket::Train;
    CHECK(train == 333);
    CHECK(code_of([] { (void)split_indices(0, 1); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("split assignment is pinned across platforms") {
    // The engine's 10000th output is fixed by the C++ standard, so seeded splits match everywhere.
    std::mt19937_64 engine;
    engine.discard(9999);
    CHECK(engine() == 9981545732273789042ULL);

    // Regression value recorded from the first build.
    auto a = split_indices(12, 42);
    std::string pattern;
    for (auto b : a.bucket_of) pattern += b == SplitBucket::Train ? 'T' : b == SplitBucket::Validation ? 'V' : 'E';
    CHECK(pattern == "ETTTTTETTTVV");
}

TEST_CASE("csv parsing") {
    auto rows = parse_csv("a,b\n\"x, y\",\"he said \"\"hi\"\"\"\r\n1,\n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1][0] == "x, y");
    CHECK(rows[1][1] == "he said \"hi\"");
    CHECK(rows[2] == std::vector<std::string>{"1", ""});
    CHECK(code_of([] { (void)parse_csv("\"open"); }) == ErrorCode::ParseError);
}

TEST_CASE("attachments by format") {
    auto csv = parse_attachment(fixture("sample.csv"), "csv");
    CHECK(csv.summary == "header item, score, note, 3 rows");
    CHECK(csv.row_count == 3);
    CHECK(csv.text.find("row 1: item=sleep; score=2; note=wakes early, then lies awake") == 0);

    auto json = parse_attachment(fixture("sample.json"), format_from_extension("sample.json"));
    CHECK(json.key_path_count == 6);
    CHECK(json.summary == "6 key paths");
    CHECK(json.text.find("patient.visits[1].phq9: 11") != std::string::npos);

    auto md = parse_attachment(fixture("sample.md"), "md");
    CHECK(md.text.find("poor sleep") != std::string::npos);
    CHECK(md.text.find("**") == std::string::npos);
    CHECK(md.text.find("# ") == std::string::npos);
    CHECK(md.text.find("clinic guidance") != std::string::npos);
    CHECK(md.text.find("https://") == std::string::npos);

    auto txt = parse_attachment_content("plain", AttachmentFormat::Txt);
    CHECK(txt.text == "plain");

    CHECK(code_of([] { (void)parse_attachment(fixture("sample.csv"), "pdf"); }) == ErrorCode::UnsupportedFormat);
    CHECK(code_of([] { (void)parse_attachment_content("{", AttachmentFormat::Json); }) == ErrorCode::ParseError);
    AttachmentLimits tiny{10, 5};
    CHECK(code_of([&] { (void)parse_attachment_content(std::string(11, 'a'), AttachmentFormat::Txt, tiny); }) ==
          ErrorCode::OversizeAttachment);
    CHECK(code_of([&] { (void)parse_attachment_content(std::string(6, 'a'), AttachmentFormat::Txt, tiny); }) ==
          ErrorCode::OversizeAttachment);
    CHECK(code_of([] { (void)parse_attachment_content(std::string(kAttachmentRawCap + 1, 'a'), AttachmentFormat::Txt); }) ==
          ErrorCode::OversizeAttachment);
    CHECK(format_from_extension("Report.CSV") == "csv");
}
