#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace metmap {

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
std::optional<Split> split_from_name(const std::string& name);

// 8-bit interleaved raster, row-major, c channels per pixel.
struct Raster {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<std::uint8_t> data;  // h*w*c bytes

    bool valid() const {
        return h > 0 && w > 0 && c > 0 && data.size() == static_cast<size_t>(h) * w * c;
    }
};

// Either a path to a PNG/JPEG on disk or an inline raster from a fixture.
struct ImageRef {
    std::string path;               // empty when inline
    std::optional<Raster> inline_raster;

    bool is_inline() const { return inline_raster.has_value(); }
};

struct Sample {
    std::string id;
    ImageRef image;
    std::string text;
    std::vector<std::string> targets;
    std::vector<std::string> sources;
    Split split = Split::kTrain;
    std::string kind;               // "", "commercial", "public_service", "unknown"
    std::vector<std::string> tags;  // free-text error-analysis buckets

    // Unknown record fields, preserved for round-tripping (serialized JSON
    // object; empty when the record had none).
    std::string extra_json;
};

enum class CorpusProfile { kReal, kSynthetic };

struct Corpus {
    std::vector<Sample> samples;
    CorpusProfile profile = CorpusProfile::kSynthetic;

    std::vector<const Sample*> split_samples(Split s) const;
    const Sample* find(const std::string& id) const;
};

struct ValidationResult {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Decodes PNG/JPEG from disk. Channels are returned in RGB order for 3-channel
// images, single channel for grayscale.
Raster decode_image_file(const std::string& path);

// Resolves a sample's image to a raster (inline copy or file decode).
Raster load_raster(const ImageRef& ref);

// Base64 of the image's encoded bytes (file contents, or PNG-encoded inline
// raster) for providers that accept images.
std::string image_bytes_b64(const ImageRef& ref);

// Canonical single-string label: items joined with the ideographic comma.
std::string canonical_label(const std::vector<std::string>& items);

// Stage 1 labels come from targets, stage 2 from sources.
std::string gold_label(const Sample& sample, int stage);

// Rules: both profiles require non-empty text and ≥1 non-empty target and
// source. The real profile additionally requires a readable image with both
// dimensions strictly greater than 350. The synthetic profile waives the
// dimension rule and tolerates a missing image file; a present-but-corrupt
// raster is still a violation. Every violated rule is listed.
ValidationResult validate_sample(const Sample& sample, CorpusProfile profile);

// Loads a line-delimited JSON corpus. Errors carry the 1-based line number
// and the offending field. File order is preserved.
Corpus load_corpus(const std::string& path, CorpusProfile profile);

// One JSON object per line, mirroring the input schema (unknown fields kept).
std::string serialize_corpus(const Corpus& corpus);

struct SplitStats {
    long long samples = 0;
    long long target_words = 0;
    long long source_words = 0;
    long long total_words = 0;
    long long avg_words = 0;  // round-half-even(total_words / samples)
};

struct StatsTable {
    SplitStats train, val, test, total;
    std::string counting_convention;
};

using TokenCounter = std::function<int(const std::string&)>;

StatsTable corpus_stats(const Corpus& corpus, const TokenCounter& counter);

// Reference sample/word counts that a full-scale corpus is expected to match;
// used by the stats report to flag divergence.
struct StatsReference {
    std::string name;
    SplitStats train, val, test, total;
};

const StatsReference& cm3d_reference();

// Plain-text table; when a reference is given, prints its rows alongside and
// notes that word counts depend on the counting convention.
std::string render_stats_table(const StatsTable& stats, const StatsReference* ref = nullptr);

nlohmann::json stats_to_json(const StatsTable& stats);

}  // namespace metmap
