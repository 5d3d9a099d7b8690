#pragma once

#include "metmap/corpus.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

namespace testutil {

inline std::string fixture_dir() {
    return METMAP_FIXTURE_DIR;
}

inline std::string fixture_corpus_path() {
    return fixture_dir() + "/corpus_32.jsonl";
}

inline nlohmann::json load_manifest() {
    std::ifstream in(fixture_dir() + "/manifest.json");
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

inline metmap::Corpus load_fixture_corpus() {
    return metmap::load_corpus(fixture_corpus_path(), metmap::CorpusProfile::kSynthetic);
}

// Fresh directory under the build tree's temp area.
inline std::string temp_dir(const std::string& name) {
    static std::atomic<int> counter{0};
    auto dir = std::filesystem::temp_directory_path() /
               ("metmap_test_" + name + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline std::string write_temp_file(const std::string& dir, const std::string& name,
                                   const std::string& content) {
    auto path = std::filesystem::path(dir) / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path.string();
}

// Deterministic byte-pattern raster, matching the fixture generator's rule.
inline metmap::Raster pattern_raster(int index, int w = 8, int h = 8, int c = 3) {
    metmap::Raster r;
    r.w = w;
    r.h = h;
    r.c = c;
    r.data.resize(static_cast<size_t>(w) * h * c);
    size_t i = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                r.data[i++] = static_cast<std::uint8_t>((index * 31 + y * 7 + x * 13 + ch * 97) % 256);
            }
        }
    }
    return r;
}

inline metmap::Sample make_sample(const std::string& id, const std::string& text,
                                  std::vector<std::string> targets,
                                  std::vector<std::string> sources,
                                  metmap::Split split = metmap::Split::kTrain, int image_index = 0) {
    metmap::Sample s;
    s.id = id;
    s.text = text;
    s.targets = std::move(targets);
    s.sources = std::move(sources);
    s.split = split;
    s.image.inline_raster = pattern_raster(image_index);
    return s;
}

}  // namespace testutil
