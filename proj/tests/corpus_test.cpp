#include <doctest.h>

#include "metmap/common.hpp"
#include "metmap/corpus.hpp"
#include "metmap/text.hpp"
#include "test_util.hpp"

#include <nlohmann/json.hpp>

using namespace metmap;
using nlohmann::json;

namespace {

std::string inline_image_json(int index) {
    Raster r = testutil::pattern_raster(index);
    json j = {{"b64", base64_encode(r.data)}, {"w", r.w}, {"h", r.h}, {"c", r.c}};
    return j.dump();
}

std::string record(const std::string& id, const std::string& split, int index = 0,
                   const std::string& extra = "") {
    return "{\"id\":\"" + id + "\",\"image\":" + inline_image_json(index) +
           ",\"text\":\"地球资源\",\"targets\":[\"地球\"],\"sources\":[\"苹果\"],\"split\":\"" +
           split + "\"" + extra + "}";
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("loads a small fixture preserving order") {
    std::string dir = testutil::temp_dir("corpus_small");
    std::string path = testutil::write_temp_file(
        dir, "c.jsonl", record("a", "train") + "\n" + record("b", "val") + "\n" + record("c", "test") + "\n");
    Corpus c = load_corpus(path, CorpusProfile::kSynthetic);
    REQUIRE(c.samples.size() == 3);
    CHECK(c.samples[0].id == "a");
    CHECK(c.samples[1].id == "b");
    CHECK(c.samples[2].id == "c");
}

TEST_CASE("missing field errors carry the line and field name") {
    std::string dir = testutil::temp_dir("corpus_missing");
    std::string bad = "{\"id\":\"a\",\"image\":" + inline_image_json(0) +
                      ",\"text\":\"地球\",\"sources\":[\"苹果\"],\"split\":\"train\"}";
    std::string path = testutil::write_temp_file(dir, "c.jsonl", record("ok", "train") + "\n" + bad + "\n");
    try {
        load_corpus(path, CorpusProfile::kSynthetic);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("targets") != std::string::npos);
    }
}

TEST_CASE("duplicate ids are rejected") {
    std::string dir = testutil::temp_dir("corpus_dup");
    std::string path =
        testutil::write_temp_file(dir, "c.jsonl", record("a", "train") + "\n" + record("a", "val") + "\n");
    CHECK_THROWS_WITH_AS(load_corpus(path, CorpusProfile::kSynthetic),
                         doctest::Contains("duplicate id"), DataError);
}

TEST_CASE("unknown split value is rejected") {
    std::string dir = testutil::temp_dir("corpus_split");
    std::string path = testutil::write_temp_file(dir, "c.jsonl", record("a", "dev") + "\n");
    CHECK_THROWS_WITH_AS(load_corpus(path, CorpusProfile::kSynthetic),
                         doctest::Contains("split"), DataError);
}

TEST_CASE("real profile requires the referenced image file") {
    std::string dir = testutil::temp_dir("corpus_realimg");
    std::string rec =
        "{\"id\":\"a\",\"image\":\"missing.png\",\"text\":\"地球\",\"targets\":[\"地球\"],"
        "\"sources\":[\"苹果\"],\"split\":\"train\"}";
    std::string path = testutil::write_temp_file(dir, "c.jsonl", rec + "\n");
    CHECK_THROWS_WITH_AS(load_corpus(path, CorpusProfile::kReal),
                         doctest::Contains("missing image file"), DataError);
    // The synthetic profile tolerates it.
    Corpus c = load_corpus(path, CorpusProfile::kSynthetic);
    CHECK(c.samples.size() == 1);
}

TEST_CASE("bundled fixture loads with 32 samples and 24/4/4 splits") {
    Corpus c = testutil::load_fixture_corpus();
    CHECK(c.samples.size() == 32);
    CHECK(c.split_samples(Split::kTrain).size() == 24);
    CHECK(c.split_samples(Split::kVal).size() == 4);
    CHECK(c.split_samples(Split::kTest).size() == 4);
}

TEST_CASE("load-then-serialize round trip preserves records") {
    Corpus c = testutil::load_fixture_corpus();
    std::string serialized = serialize_corpus(c);
    std::string dir = testutil::temp_dir("corpus_rt");
    std::string path = testutil::write_temp_file(dir, "rt.jsonl", serialized);
    Corpus back = load_corpus(path, CorpusProfile::kSynthetic);
    REQUIRE(back.samples.size() == c.samples.size());
    // Field-for-field equality via JSON comparison of each record.
    std::ifstream orig(testutil::fixture_corpus_path());
    std::ifstream again(path);
    std::string a, b;
    while (std::getline(orig, a) && std::getline(again, b)) {
        CHECK(json::parse(a) == json::parse(b));
    }
}

TEST_CASE("unknown fields survive the round trip") {
    std::string dir = testutil::temp_dir("corpus_extra");
    std::string path = testutil::write_temp_file(
        dir, "c.jsonl", record("a", "train", 0, ",\"note\":\"keep me\",\"rank\":3") + "\n");
    Corpus c = load_corpus(path, CorpusProfile::kSynthetic);
    json j = json::parse(serialize_corpus(c));
    CHECK(j.at("note") == "keep me");
    CHECK(j.at("rank") == 3);
}

TEST_CASE("validate_sample enforces the real-profile dimension rule") {
    Sample s = testutil::make_sample("a", "地球", {"地球"}, {"苹果"});
    s.image.inline_raster = testutil::pattern_raster(0, 400, 400, 3);
    CHECK(validate_sample(s, CorpusProfile::kReal).ok());

    s.image.inline_raster = testutil::pattern_raster(0, 351, 351, 3);
    CHECK(validate_sample(s, CorpusProfile::kReal).ok());  // strictly greater than 350

    s.image.inline_raster = testutil::pattern_raster(0, 350, 350, 3);
    auto res = validate_sample(s, CorpusProfile::kReal);
    REQUIRE_FALSE(res.ok());
    CHECK(res.violations == std::vector<std::string>{"image_too_small"});

    // The synthetic profile waives the rule.
    s.image.inline_raster = testutil::pattern_raster(0, 8, 8, 3);
    CHECK(validate_sample(s, CorpusProfile::kSynthetic).ok());
}

TEST_CASE("validate_sample lists every violated rule") {
    Sample s;
    s.id = "bad";
    s.text = "   ";
    s.targets = {""};
    s.sources = {};
    Raster corrupt;
    corrupt.w = 4;
    corrupt.h = 4;
    corrupt.c = 3;
    corrupt.data = {1, 2, 3};  // wrong byte count
    s.image.inline_raster = corrupt;
    auto res = validate_sample(s, CorpusProfile::kSynthetic);
    CHECK(res.violations ==
          std::vector<std::string>{"empty_text", "no_targets", "no_sources", "image_unreadable"});
}

TEST_CASE("validate_sample is pure") {
    Sample s = testutil::make_sample("a", "", {}, {});
    auto r1 = validate_sample(s, CorpusProfile::kSynthetic);
    auto r2 = validate_sample(s, CorpusProfile::kSynthetic);
    CHECK(r1.violations == r2.violations);
}

TEST_CASE("stats on a single sample") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "一二三四五", {"一"}, {"二"}));
    StatsTable t = corpus_stats(c, count_tokens);
    CHECK(t.train.samples == 1);
    CHECK(t.train.target_words == 1);
    CHECK(t.train.source_words == 1);
    CHECK(t.train.total_words == 5);
    CHECK(t.train.avg_words == 5);
    CHECK(t.total.samples == 1);
}

TEST_CASE("fixture stats match the manifest exactly") {
    auto manifest = testutil::load_manifest();
    Corpus c = testutil::load_fixture_corpus();
    StatsTable t = corpus_stats(c, count_tokens);
    auto check_row = [&](const SplitStats& got, const json& want) {
        CHECK(got.samples == want.at("samples").get<long long>());
        CHECK(got.target_words == want.at("target_words").get<long long>());
        CHECK(got.source_words == want.at("source_words").get<long long>());
        CHECK(got.total_words == want.at("total_words").get<long long>());
        CHECK(got.avg_words == want.at("avg_words").get<long long>());
    };
    check_row(t.train, manifest.at("stats").at("train"));
    check_row(t.val, manifest.at("stats").at("val"));
    check_row(t.test, manifest.at("stats").at("test"));
    check_row(t.total, manifest.at("stats").at("total"));
}

TEST_CASE("stats totals equal the sum of split rows for random corpora") {
    SplitMix64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        Corpus c;
        int n = 1 + static_cast<int>(rng.next_below(20));
        for (int i = 0; i < n; ++i) {
            std::string text;
            int len = 1 + static_cast<int>(rng.next_below(10));
            for (int k = 0; k < len; ++k) {
                utf8_append(text, static_cast<char32_t>(0x4E00 + rng.next_below(100)));
            }
            Split split = static_cast<Split>(rng.next_below(3));
            c.samples.push_back(
                testutil::make_sample("s" + std::to_string(i), text, {"水"}, {"火"}, split));
        }
        StatsTable t = corpus_stats(c, count_tokens);
        CHECK(t.total.samples == t.train.samples + t.val.samples + t.test.samples);
        CHECK(t.total.target_words == t.train.target_words + t.val.target_words + t.test.target_words);
        CHECK(t.total.source_words == t.train.source_words + t.val.source_words + t.test.source_words);
        CHECK(t.total.total_words == t.train.total_words + t.val.total_words + t.test.total_words);
    }
}

TEST_CASE("canonical label joins items with the ideographic comma") {
    CHECK(canonical_label({"猎豹", "闪电"}) == "猎豹、闪电");
    CHECK(canonical_label({"地球"}) == "地球");
    CHECK(canonical_label({" 地球 ", ""}) == "地球");
}

TEST_CASE("stats table renders with a reference comparison") {
    Corpus c = testutil::load_fixture_corpus();
    StatsTable t = corpus_stats(c, count_tokens);
    std::string rendered = render_stats_table(t, &cm3d_reference());
    CHECK(rendered.find("Train") != std::string::npos);
    CHECK(rendered.find("reference (cm3d)") != std::string::npos);
    CHECK(rendered.find("sample counts: DIFFER from reference") != std::string::npos);
}

TEST_CASE("image decode round trip through PNG") {
    Raster r = testutil::pattern_raster(4, 16, 12, 3);
    std::string b64 = image_bytes_b64(ImageRef{"", r});
    std::string dir = testutil::temp_dir("imgdec");
    auto bytes = base64_decode(b64);
    std::string path = dir + "/img.png";
    write_file(path, std::string(bytes.begin(), bytes.end()));
    Raster back = decode_image_file(path);
    CHECK(back.w == r.w);
    CHECK(back.h == r.h);
    CHECK(back.c == r.c);
    CHECK(back.data == r.data);  // PNG is lossless and channels are RGB
}

}  // TEST_SUITE
