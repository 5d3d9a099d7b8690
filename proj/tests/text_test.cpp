#include <doctest.h>

#include "metmap/common.hpp"
#include "metmap/text.hpp"
#include "test_util.hpp"

using namespace metmap;

TEST_SUITE("text") {

TEST_CASE("vocab reserves the five specials") {
    Vocab v;
    CHECK(v.size() == 5);
    CHECK(v.id_of("<pad>") == PAD);
    CHECK(v.id_of("<bos>") == BOS);
    CHECK(v.id_of("<eos>") == EOS);
    CHECK(v.id_of("<sep>") == SEP);
    CHECK(v.id_of("<unk>") == UNK);
}

TEST_CASE("build_vocab on a single repeated token") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "水水", {"水"}, {"水"}));
    Vocab v = build_vocab(c);
    CHECK(v.size() == 6);
    CHECK(v.id_of("水") == 5);
}

TEST_CASE("build_vocab is deterministic for identical corpora") {
    Corpus a, b;
    a.samples.push_back(testutil::make_sample("s1", "地球苹果", {"地球"}, {"苹果"}));
    a.samples.push_back(testutil::make_sample("s2", "吸烟的肺", {"肺"}, {"烟"}));
    b.samples = a.samples;
    CHECK(build_vocab(a).tokens() == build_vocab(b).tokens());
}

TEST_CASE("build_vocab order follows first occurrence") {
    Corpus a;
    a.samples.push_back(testutil::make_sample("s1", "乙甲", {"丙"}, {"丁"}));
    Vocab v = build_vocab(a);
    CHECK(v.token_of(5) == "乙");
    CHECK(v.token_of(6) == "甲");
    CHECK(v.token_of(7) == "丙");
    CHECK(v.token_of(8) == "丁");
}

TEST_CASE("fixture vocab matches the manifest") {
    auto manifest = testutil::load_manifest();
    Corpus corpus = testutil::load_fixture_corpus();
    Vocab v = build_vocab(corpus);
    CHECK(v.size() == manifest.at("vocab_size").get<int>());
    auto expected = manifest.at("vocab_tokens").get<std::vector<std::string>>();
    REQUIRE(static_cast<size_t>(v.size()) == expected.size() + 5);
    for (size_t i = 0; i < expected.size(); ++i) {
        CHECK(v.token_of(static_cast<int>(i) + 5) == expected[i]);
    }
}

TEST_CASE("tokenize splits CJK per character and ASCII by runs") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "地球apple", {"地"}, {"球"}));
    Vocab v = build_vocab(c);
    TokenSequence seq = tokenize("地球apple", v, 32);
    REQUIRE(seq.length() == 3);
    CHECK(v.token_of(seq.ids[0]) == "地");
    CHECK(v.token_of(seq.ids[1]) == "球");
    CHECK(v.token_of(seq.ids[2]) == "apple");
}

TEST_CASE("tokenize keeps the ideographic comma and drops other punctuation") {
    auto tokens = tokenize_text("地球、苹果，好。 ok!");
    REQUIRE(tokens.size() == 6);
    CHECK(tokens[0] == "地");
    CHECK(tokens[2] == "、");
    CHECK(tokens[5] == "ok");
}

TEST_CASE("tokenize truncates to max_len") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "一二三四五", {"一"}, {"二"}));
    Vocab v = build_vocab(c);
    CHECK(tokenize("一二三四五", v, 1).length() == 1);
    CHECK(tokenize("一二三四五", v, 3).length() == 3);
    CHECK_THROWS_AS(tokenize("一", v, 0), DataError);
}

TEST_CASE("out-of-vocab tokens map to UNK") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "水", {"水"}, {"水"}));
    Vocab v = build_vocab(c);
    TokenSequence seq = tokenize("火水", v, 8);
    REQUIRE(seq.length() == 2);
    CHECK(seq.ids[0] == UNK);
    CHECK(v.token_of(seq.ids[1]) == "水");
}

TEST_CASE("tokenize never emits pad/bos/eos/sep") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "水火山", {"水"}, {"火"}));
    Vocab v = build_vocab(c);
    SplitMix64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::string s;
        for (int i = 0; i < 12; ++i) {
            char32_t cp = static_cast<char32_t>(0x4E00 + rng.next_below(500));
            if (rng.next_below(4) == 0) cp = static_cast<char32_t>('a' + rng.next_below(26));
            utf8_append(s, cp);
        }
        for (int id : tokenize(s, v, 64).ids) {
            CHECK(id != PAD);
            CHECK(id != BOS);
            CHECK(id != EOS);
            CHECK(id != SEP);
        }
    }
}

TEST_CASE("fixture token ids match the manifest") {
    auto manifest = testutil::load_manifest();
    Corpus corpus = testutil::load_fixture_corpus();
    Vocab v = build_vocab(corpus);
    int max_len = manifest.at("tokenize_max_len").get<int>();
    for (const auto& entry : manifest.at("samples")) {
        const Sample* s = corpus.find(entry.at("id").get<std::string>());
        REQUIRE(s != nullptr);
        CHECK(tokenize(s->text, v, max_len).ids == entry.at("token_ids").get<std::vector<int>>());
    }
}

TEST_CASE("detokenize drops specials and concatenates") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "肺", {"肺"}, {"肺"}));
    Vocab v = build_vocab(c);
    TokenSequence seq;
    seq.ids = {BOS, v.id_of("肺"), EOS};
    CHECK(detokenize(seq, v) == "肺");
    CHECK(detokenize(TokenSequence{}, v).empty());
    TokenSequence bad;
    bad.ids = {99};
    CHECK_THROWS_AS(detokenize(bad, v), DataError);
}

TEST_CASE("tokenize/detokenize round-trips in-vocab CJK strings") {
    SplitMix64 rng(7);
    std::vector<std::string> texts;
    Corpus c;
    for (int i = 0; i < 100; ++i) {
        std::string s;
        int len = 1 + static_cast<int>(rng.next_below(12));
        for (int k = 0; k < len; ++k) {
            utf8_append(s, static_cast<char32_t>(0x4E00 + rng.next_below(300)));
        }
        texts.push_back(s);
        c.samples.push_back(testutil::make_sample("s" + std::to_string(i), s, {"水"}, {"火"}));
    }
    Vocab v = build_vocab(c);
    for (const auto& s : texts) {
        CHECK(detokenize(tokenize(s, v, 64), v) == s);
    }
}

TEST_CASE("vocab file round-trips") {
    Corpus c;
    c.samples.push_back(testutil::make_sample("a", "地球apple水", {"地球"}, {"水"}));
    Vocab v = build_vocab(c);
    std::string dir = testutil::temp_dir("vocab");
    v.save(dir + "/vocab.txt");
    Vocab loaded = Vocab::load(dir + "/vocab.txt");
    CHECK(loaded.tokens() == v.tokens());
}

}  // TEST_SUITE
