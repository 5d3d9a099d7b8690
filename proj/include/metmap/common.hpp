#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metmap {

// Error taxonomy mapped to CLI exit codes: usage=1, data=2, provider=3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProviderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit over UTF-8 bytes. Keeps the mock provider reproducible
// across languages (the fixture manifest is generated by a Python script
// implementing the same function).
std::uint64_t fnv1a64(std::string_view bytes);

// splitmix64: tiny deterministic PRNG used everywhere randomness is part of
// a reproducibility contract (parameter init, shuffling, hashed embeddings).
// Standard-library distributions are implementation-defined and avoided.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    // uniform in [0, 1)
    double next_double();

    // uniform in [lo, hi)
    double uniform(double lo, double hi);

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n);

private:
    std::uint64_t state_;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Hex-encoded SHA-256, used for cache keys and checkpoint vocab hashes.
std::string sha256_hex(std::string_view bytes);

// UTF-8 <-> code points. Invalid bytes are skipped (decoding never throws).
std::vector<char32_t> utf8_decode(std::string_view text);
void utf8_append(std::string& out, char32_t cp);
std::string utf8_encode(const std::vector<char32_t>& cps);

// Trims ASCII whitespace plus U+3000 (ideographic space) from both ends.
std::string trim(std::string_view text);

std::string iso8601_utc_now();

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace metmap
