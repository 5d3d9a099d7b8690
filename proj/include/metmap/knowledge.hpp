#pragma once

#include "metmap/common.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace metmap {

struct KnowledgeRequest {
    std::string sample_id;
    std::string image_ref;  // path or "inline:<sample_id>" for fixture rasters
    std::string image_b64;  // raw bytes for remote providers; may be empty
    std::string text;
    std::string prompt;
    int stage = 1;
};

struct KnowledgeRecord {
    std::string cache_key;
    std::string provider;
    std::string sample_id;
    int stage = 1;
    std::string prompt;
    std::string generation;
    std::string created_at;
};

std::string cache_key(const std::string& provider_name, const std::string& sample_id, int stage,
                      const std::string& prompt);

class KnowledgeProvider {
public:
    virtual ~KnowledgeProvider() = default;
    virtual std::string name() const = 0;
    // Returns a non-empty generation or throws ProviderError.
    virtual std::string generate(const KnowledgeRequest& req) = 0;
    // Whether requests should carry encoded image bytes.
    virtual bool wants_image() const { return false; }
};

// Deterministic test double: picks 1–3 tokens from the request text, keyed by
// (seed, sample_id, stage). Pure function of its inputs.
class MockProvider : public KnowledgeProvider {
public:
    explicit MockProvider(std::uint64_t seed) : seed_(seed) {}
    std::string name() const override { return "mock"; }
    std::string generate(const KnowledgeRequest& req) override;

    static std::string mock_generate(const KnowledgeRequest& req, std::uint64_t seed);

private:
    std::uint64_t seed_;
};

struct HttpProviderConfig {
    std::string endpoint;        // e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string api_key_env = "METMAP_API_KEY";
    int max_retries = 2;         // retries after the first attempt
    int backoff_ms = 250;        // doubles per retry
    double temperature = 0.0;
    int timeout_sec = 60;
};

// Generic chat-with-image client (OpenAI-style JSON body, image sent as a
// base64 data URI when present). Transient failures (HTTP 5xx, transport)
// are retried with exponential backoff; auth and empty generations are not.
class HttpProvider : public KnowledgeProvider {
public:
    explicit HttpProvider(HttpProviderConfig config);
    std::string name() const override;
    std::string generate(const KnowledgeRequest& req) override;
    bool wants_image() const override { return true; }

private:
    HttpProviderConfig config_;
};

// Append-only line-delimited JSON cache with last-writer-wins semantics.
// Corrupt lines are skipped with a warning, never fatal. Thread-safe.
class KnowledgeCache {
public:
    explicit KnowledgeCache(std::string path);

    std::optional<KnowledgeRecord> lookup(const std::string& key) const;
    void append(const KnowledgeRecord& record);
    size_t size() const;
    const std::string& path() const { return path_; }

private:
    std::string path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, KnowledgeRecord> records_;
};

// Cache-through query with per-key in-flight deduplication: concurrent
// requests for the same key make at most one provider call, and at most
// max_in_flight calls run at once. provider may be null for offline replay,
// in which case replay_name selects whose records to look up and a cache
// miss is a ProviderError.
class KnowledgeClient {
public:
    KnowledgeClient(KnowledgeCache& cache, KnowledgeProvider* provider, int max_in_flight = 4,
                    std::string replay_name = "mock");

    const std::string& provider_name() const { return provider_name_; }

    KnowledgeRecord lookup_or_fill(const KnowledgeRequest& req);

    bool provider_wants_image() const { return provider_ && provider_->wants_image(); }
    long long provider_calls() const { return calls_; }

private:
    KnowledgeCache& cache_;
    KnowledgeProvider* provider_;
    std::string provider_name_;
    int max_in_flight_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::unordered_set<std::string> in_flight_;
    int active_ = 0;
    std::atomic<long long> calls_{0};
};

}  // namespace metmap
