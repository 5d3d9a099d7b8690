#include "metmap/knowledge.hpp"

#include "metmap/text.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

namespace metmap {

using nlohmann::json;

std::string cache_key(const std::string& provider_name, const std::string& sample_id, int stage,
                      const std::string& prompt) {
    std::string material = provider_name;
    material += '\x1f';
    material += sample_id;
    material += '\x1f';
    material += std::to_string(stage);
    material += '\x1f';
    material += prompt;
    return sha256_hex(material);
}

std::string MockProvider::mock_generate(const KnowledgeRequest& req, std::uint64_t seed) {
    std::vector<std::string> tokens = tokenize_text(req.text);
    if (tokens.empty()) tokens.push_back("none");
    std::string key = std::to_string(seed) + "|" + req.sample_id + "|" + std::to_string(req.stage);
    std::uint64_t k = 1 + fnv1a64(key) % 3;
    std::string picked;
    for (std::uint64_t i = 0; i < k; ++i) {
        picked += tokens[fnv1a64(key + "|" + std::to_string(i)) % tokens.size()];
    }
    const char* prefix = req.stage == 1 ? "Purpose: " : "Incongruent elements: ";
    return prefix + picked;
}

std::string MockProvider::generate(const KnowledgeRequest& req) {
    return mock_generate(req, seed_);
}

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw ProviderError("http provider: endpoint not configured");
}

std::string HttpProvider::name() const {
    return config_.model.empty() ? "http" : "http:" + config_.model;
}

namespace {

struct ParsedUrl {
    std::string base;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ProviderError("bad endpoint url: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string HttpProvider::generate(const KnowledgeRequest& req) {
    ParsedUrl url = parse_url(config_.endpoint);
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", req.prompt + "\n" + req.text}});
    if (!req.image_b64.empty()) {
        content.push_back(
            {{"type", "image_url"},
             {"image_url", {{"url", "data:image/png;base64," + req.image_b64}}}});
    }
    json body = {{"model", config_.model},
                 {"temperature", config_.temperature},
                 {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
    std::string payload = body.dump();

    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
        }
        httplib::Client cli(url.base);
        cli.set_read_timeout(config_.timeout_sec, 0);
        cli.set_connection_timeout(config_.timeout_sec, 0);
        auto res = cli.Post(url.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status == 401 || res->status == 403) {
            throw ProviderError("auth failure (" + std::to_string(res->status) + ") for sample " +
                                req.sample_id);
        }
        if (res->status >= 500) {
            last_error = "server error " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw ProviderError("provider returned status " + std::to_string(res->status) +
                                " for sample " + req.sample_id);
        }
        std::string generation;
        try {
            json reply = json::parse(res->body);
            generation = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw ProviderError("unparseable provider reply for sample " + req.sample_id + ": " +
                                e.what());
        }
        if (trim(generation).empty()) {
            throw ProviderError("empty_generation for sample " + req.sample_id);
        }
        return generation;
    }
    throw ProviderError("provider unreachable after " + std::to_string(config_.max_retries + 1) +
                        " attempts for sample " + req.sample_id + ": " + last_error);
}

KnowledgeCache::KnowledgeCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;  // cold cache
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            json j = json::parse(line);
            KnowledgeRecord rec;
            rec.cache_key = j.at("cache_key").get<std::string>();
            rec.provider = j.at("provider").get<std::string>();
            rec.sample_id = j.at("sample_id").get<std::string>();
            rec.stage = j.at("stage").get<int>();
            rec.prompt = j.at("prompt").get<std::string>();
            rec.generation = j.at("generation").get<std::string>();
            rec.created_at = j.value("created_at", "");
            records_[rec.cache_key] = std::move(rec);  // last writer wins
        } catch (const json::exception& e) {
            std::cerr << "warning: skipping corrupt cache line " << lineno << " in " << path_
                      << ": " << e.what() << "\n";
        }
    }
}

std::optional<KnowledgeRecord> KnowledgeCache::lookup(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

void KnowledgeCache::append(const KnowledgeRecord& record) {
    std::lock_guard<std::mutex> lock(mu_);
    json j = {{"cache_key", record.cache_key}, {"provider", record.provider},
              {"sample_id", record.sample_id}, {"stage", record.stage},
              {"prompt", record.prompt},       {"generation", record.generation},
              {"created_at", record.created_at}};
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot append to cache file: " + path_);
    out << j.dump() << "\n";
    records_[record.cache_key] = record;
}

size_t KnowledgeCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size();
}

KnowledgeClient::KnowledgeClient(KnowledgeCache& cache, KnowledgeProvider* provider,
                                 int max_in_flight, std::string replay_name)
    : cache_(cache),
      provider_(provider),
      provider_name_(provider ? provider->name() : std::move(replay_name)),
      max_in_flight_(max_in_flight < 1 ? 1 : max_in_flight) {}

KnowledgeRecord KnowledgeClient::lookup_or_fill(const KnowledgeRequest& req) {
    if (trim(req.prompt).empty()) throw DataError("knowledge request has an empty prompt");
    if (req.stage != 1 && req.stage != 2) throw DataError("knowledge request stage must be 1 or 2");
    const std::string key = cache_key(provider_name_, req.sample_id, req.stage, req.prompt);

    {
        std::unique_lock<std::mutex> lk(mu_);
        for (;;) {
            if (auto hit = cache_.lookup(key)) return *hit;
            if (!in_flight_.count(key)) break;
            cv_.wait(lk);
        }
        if (!provider_) {
            throw ProviderError("cache miss for sample " + req.sample_id + " (stage " +
                                std::to_string(req.stage) + ") and no provider configured");
        }
        while (active_ >= max_in_flight_) cv_.wait(lk);
        in_flight_.insert(key);
        ++active_;
    }

    KnowledgeRecord rec;
    try {
        calls_.fetch_add(1);
        std::string generation = provider_->generate(req);
        if (trim(generation).empty()) {
            throw ProviderError("empty_generation for sample " + req.sample_id);
        }
        rec.cache_key = key;
        rec.provider = provider_name_;
        rec.sample_id = req.sample_id;
        rec.stage = req.stage;
        rec.prompt = req.prompt;
        rec.generation = std::move(generation);
        rec.created_at = iso8601_utc_now();
        cache_.append(rec);
    } catch (...) {
        std::lock_guard<std::mutex> lk(mu_);
        in_flight_.erase(key);
        --active_;
        cv_.notify_all();
        throw;
    }
    {
        std::lock_guard<std::mutex> lk(mu_);
        in_flight_.erase(key);
        --active_;
        cv_.notify_all();
    }
    return rec;
}

}  // namespace metmap
