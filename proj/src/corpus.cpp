#include "metmap/corpus.hpp"

#include "metmap/common.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace metmap {

using nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "train";
}

std::optional<Split> split_from_name(const std::string& name) {
    if (name == "train") return Split::kTrain;
    if (name == "val") return Split::kVal;
    if (name == "test") return Split::kTest;
    return std::nullopt;
}

std::vector<const Sample*> Corpus::split_samples(Split s) const {
    std::vector<const Sample*> out;
    for (const auto& sample : samples) {
        if (sample.split == s) out.push_back(&sample);
    }
    return out;
}

const Sample* Corpus::find(const std::string& id) const {
    for (const auto& sample : samples) {
        if (sample.id == id) return &sample;
    }
    return nullptr;
}

Raster decode_image_file(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw DataError("cannot decode image: " + path);
    if (img.channels() == 4) {
        cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
    }
    if (img.channels() == 3) {
        cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
    }
    if (img.depth() != CV_8U) {
        img.convertTo(img, CV_8U);
    }
    Raster r;
    r.h = img.rows;
    r.w = img.cols;
    r.c = img.channels();
    r.data.resize(static_cast<size_t>(r.h) * r.w * r.c);
    if (img.isContinuous()) {
        std::memcpy(r.data.data(), img.data, r.data.size());
    } else {
        for (int y = 0; y < r.h; ++y) {
            std::memcpy(r.data.data() + static_cast<size_t>(y) * r.w * r.c, img.ptr(y),
                        static_cast<size_t>(r.w) * r.c);
        }
    }
    return r;
}

Raster load_raster(const ImageRef& ref) {
    if (ref.is_inline()) {
        if (!ref.inline_raster->valid()) throw DataError("inline raster is malformed");
        return *ref.inline_raster;
    }
    return decode_image_file(ref.path);
}

std::string image_bytes_b64(const ImageRef& ref) {
    if (ref.is_inline()) {
        const Raster& r = *ref.inline_raster;
        if (!r.valid()) throw DataError("inline raster is malformed");
        int type = r.c == 1 ? CV_8UC1 : (r.c == 3 ? CV_8UC3 : -1);
        if (type < 0) throw DataError("inline raster has unsupported channel count");
        cv::Mat img(r.h, r.w, type, const_cast<std::uint8_t*>(r.data.data()));
        cv::Mat bgr;
        if (r.c == 3) {
            cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
        } else {
            bgr = img;
        }
        std::vector<unsigned char> buf;
        cv::imencode(".png", bgr, buf);
        return base64_encode(std::vector<std::uint8_t>(buf.begin(), buf.end()));
    }
    std::string bytes = read_file(ref.path);
    return base64_encode(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

std::string canonical_label(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& item : items) {
        std::string t = trim(item);
        if (t.empty()) continue;
        if (!out.empty()) out += "、";
        out += t;
    }
    return out;
}

std::string gold_label(const Sample& sample, int stage) {
    return canonical_label(stage == 1 ? sample.targets : sample.sources);
}

ValidationResult validate_sample(const Sample& sample, CorpusProfile profile) {
    ValidationResult res;
    if (trim(sample.text).empty()) res.violations.push_back("empty_text");

    auto has_nonempty = [](const std::vector<std::string>& items) {
        for (const auto& s : items) {
            if (!trim(s).empty()) return true;
        }
        return false;
    };
    if (!has_nonempty(sample.targets)) res.violations.push_back("no_targets");
    if (!has_nonempty(sample.sources)) res.violations.push_back("no_sources");

    bool check_raster = profile == CorpusProfile::kReal || sample.image.is_inline();
    if (check_raster) {
        try {
            Raster r = load_raster(sample.image);
            if (profile == CorpusProfile::kReal && !(r.w > 350 && r.h > 350)) {
                res.violations.push_back("image_too_small");
            }
        } catch (const DataError&) {
            res.violations.push_back("image_unreadable");
        }
    }
    return res;
}

namespace {

std::string line_err(int lineno, const std::string& msg) {
    return "line " + std::to_string(lineno) + ": " + msg;
}

ImageRef parse_image_field(const json& j, int lineno) {
    ImageRef ref;
    if (j.is_string()) {
        ref.path = j.get<std::string>();
        return ref;
    }
    if (j.is_object()) {
        for (const char* key : {"b64", "w", "h", "c"}) {
            if (!j.contains(key)) {
                throw DataError(line_err(lineno, "field \"image\" missing subfield \"" +
                                                     std::string(key) + "\""));
            }
        }
        Raster r;
        r.w = j.at("w").get<int>();
        r.h = j.at("h").get<int>();
        r.c = j.at("c").get<int>();
        r.data = base64_decode(j.at("b64").get<std::string>());
        ref.inline_raster = std::move(r);
        return ref;
    }
    throw DataError(line_err(lineno, "field \"image\" must be a path or an inline raster"));
}

const char* kKnownFields[] = {"id", "image", "text", "targets", "sources", "split", "kind", "tags"};

bool is_known_field(const std::string& key) {
    for (const char* k : kKnownFields) {
        if (key == k) return true;
    }
    return false;
}

Sample parse_record(const json& j, int lineno) {
    for (const char* key : {"id", "image", "text", "targets", "sources", "split"}) {
        if (!j.contains(key)) {
            throw DataError(line_err(lineno, "missing field \"" + std::string(key) + "\""));
        }
    }
    Sample s;
    try {
        s.id = j.at("id").get<std::string>();
        s.text = j.at("text").get<std::string>();
        s.targets = j.at("targets").get<std::vector<std::string>>();
        s.sources = j.at("sources").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(line_err(lineno, std::string("bad field type: ") + e.what()));
    }
    s.image = parse_image_field(j.at("image"), lineno);

    std::string split_str = j.at("split").is_string() ? j.at("split").get<std::string>() : "";
    auto split = split_from_name(split_str);
    if (!split) {
        throw DataError(line_err(lineno, "field \"split\" has unknown value \"" + split_str + "\""));
    }
    s.split = *split;

    if (j.contains("kind")) {
        s.kind = j.at("kind").get<std::string>();
        if (s.kind != "commercial" && s.kind != "public_service" && s.kind != "unknown") {
            throw DataError(line_err(lineno, "field \"kind\" has unknown value \"" + s.kind + "\""));
        }
    }
    if (j.contains("tags")) {
        s.tags = j.at("tags").get<std::vector<std::string>>();
    }

    json extra = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!is_known_field(it.key())) extra[it.key()] = it.value();
    }
    if (!extra.empty()) s.extra_json = extra.dump();
    return s;
}

}  // namespace

Corpus load_corpus(const std::string& path, CorpusProfile profile) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path);

    Corpus corpus;
    corpus.profile = profile;
    std::string line;
    int lineno = 0;
    std::unordered_map<std::string, int> seen_ids;
    std::filesystem::path base = std::filesystem::path(path).parent_path();

    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(line_err(lineno, std::string("malformed JSON: ") + e.what()));
        }
        Sample s = parse_record(j, lineno);

        auto [it, inserted] = seen_ids.emplace(s.id, lineno);
        if (!inserted) {
            throw DataError(line_err(lineno, "duplicate id \"" + s.id + "\" (first at line " +
                                                 std::to_string(it->second) + ")"));
        }
        if (!s.image.is_inline() && !s.image.path.empty()) {
            // Relative paths resolve against the corpus file's directory.
            std::filesystem::path p(s.image.path);
            if (p.is_relative()) s.image.path = (base / p).string();
            if (profile == CorpusProfile::kReal && !std::filesystem::exists(s.image.path)) {
                throw DataError(line_err(lineno, "missing image file \"" + s.image.path + "\""));
            }
        }
        ValidationResult v = validate_sample(s, profile);
        if (!v.ok()) {
            std::string msg = "sample \"" + s.id + "\" invalid:";
            for (const auto& rule : v.violations) msg += " " + rule;
            throw DataError(line_err(lineno, msg));
        }
        corpus.samples.push_back(std::move(s));
    }
    return corpus;
}

std::string serialize_corpus(const Corpus& corpus) {
    std::string out;
    for (const Sample& s : corpus.samples) {
        json j;
        if (!s.extra_json.empty()) j = json::parse(s.extra_json);
        j["id"] = s.id;
        if (s.image.is_inline()) {
            const Raster& r = *s.image.inline_raster;
            j["image"] = {{"b64", base64_encode(r.data)}, {"w", r.w}, {"h", r.h}, {"c", r.c}};
        } else {
            j["image"] = s.image.path;
        }
        j["text"] = s.text;
        j["targets"] = s.targets;
        j["sources"] = s.sources;
        j["split"] = split_name(s.split);
        if (!s.kind.empty()) j["kind"] = s.kind;
        if (!s.tags.empty()) j["tags"] = s.tags;
        out += j.dump();
        out += '\n';
    }
    return out;
}

namespace {

long long round_half_even(long long num, long long den) {
    if (den == 0) return 0;
    return std::llrint(static_cast<double>(num) / static_cast<double>(den));
}

SplitStats accumulate_stats(const std::vector<const Sample*>& samples,
                            const TokenCounter& counter) {
    SplitStats st;
    st.samples = static_cast<long long>(samples.size());
    for (const Sample* s : samples) {
        for (const auto& t : s->targets) st.target_words += counter(t);
        for (const auto& t : s->sources) st.source_words += counter(t);
        st.total_words += counter(s->text);
    }
    st.avg_words = round_half_even(st.total_words, st.samples);
    return st;
}

}  // namespace

StatsTable corpus_stats(const Corpus& corpus, const TokenCounter& counter) {
    StatsTable t;
    t.counting_convention =
        "one token per CJK ideograph or ideographic comma; maximal ASCII letter/digit runs; "
        "all else dropped";
    t.train = accumulate_stats(corpus.split_samples(Split::kTrain), counter);
    t.val = accumulate_stats(corpus.split_samples(Split::kVal), counter);
    t.test = accumulate_stats(corpus.split_samples(Split::kTest), counter);
    t.total.samples = t.train.samples + t.val.samples + t.test.samples;
    t.total.target_words = t.train.target_words + t.val.target_words + t.test.target_words;
    t.total.source_words = t.train.source_words + t.val.source_words + t.test.source_words;
    t.total.total_words = t.train.total_words + t.val.total_words + t.test.total_words;
    t.total.avg_words = round_half_even(t.total.total_words, t.total.samples);
    return t;
}

const StatsReference& cm3d_reference() {
    static const StatsReference ref = {
        "cm3d",
        {4888, 14764, 10016, 53768, 11},
        {610, 1832, 1212, 6405, 10},
        {610, 1834, 1215, 7930, 13},
        {6108, 18428, 12443, 68103, 11},
    };
    return ref;
}

namespace {

void append_row(std::string& out, const char* label, const SplitStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-8s %10lld %13lld %13lld %12lld %10lld\n", label, s.samples,
                  s.target_words, s.source_words, s.total_words, s.avg_words);
    out += buf;
}

}  // namespace

std::string render_stats_table(const StatsTable& stats, const StatsReference* ref) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-8s %10s %13s %13s %12s %10s\n", "", "Samples",
                  "TargetWords", "SourceWords", "TotalWords", "AvgWords");
    out += buf;
    append_row(out, "Train", stats.train);
    append_row(out, "Val", stats.val);
    append_row(out, "Test", stats.test);
    append_row(out, "Total", stats.total);
    out += "word counting: " + stats.counting_convention + "\n";
    if (ref) {
        out += "\nreference (" + ref->name + "):\n";
        append_row(out, "Train", ref->train);
        append_row(out, "Val", ref->val);
        append_row(out, "Test", ref->test);
        append_row(out, "Total", ref->total);
        bool samples_match = stats.train.samples == ref->train.samples &&
                             stats.val.samples == ref->val.samples &&
                             stats.test.samples == ref->test.samples &&
                             stats.total.samples == ref->total.samples;
        bool words_match = stats.train.total_words == ref->train.total_words &&
                           stats.val.total_words == ref->val.total_words &&
                           stats.test.total_words == ref->test.total_words;
        out += samples_match ? "sample counts: MATCH reference\n"
                             : "sample counts: DIFFER from reference\n";
        out += words_match ? "word counts: MATCH reference\n"
                           : "word counts: DIFFER from reference (expected: reference counts "
                             "come from a different word-counting convention)\n";
    }
    return out;
}

nlohmann::json stats_to_json(const StatsTable& stats) {
    auto row = [](const SplitStats& s) {
        return json{{"samples", s.samples},
                    {"target_words", s.target_words},
                    {"source_words", s.source_words},
                    {"total_words", s.total_words},
                    {"avg_words", s.avg_words}};
    };
    return json{{"train", row(stats.train)},
                {"val", row(stats.val)},
                {"test", row(stats.test)},
                {"total", row(stats.total)},
                {"counting_convention", stats.counting_convention}};
}

}  // namespace metmap
