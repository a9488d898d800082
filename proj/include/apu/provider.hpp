// Annotation providers: live HTTP endpoint and mock directory, plus the
// caching client that guarantees each (image, prompt) pair is queried at
// most once.

#pragma once

#include "apu/digest.hpp"
#include "apu/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>

namespace apu {

struct AnnotationProvider {
    virtual ~AnnotationProvider() = default;
    virtual std::string query(const Bytes& image, const std::string& prompt) = 0;
};

// Serves canned responses from a directory; files are named by the sha256
// of the image bytes.
class MockProvider : public AnnotationProvider {
public:
    explicit MockProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}

    static std::filesystem::path response_path(const std::filesystem::path& dir,
                                               const Bytes& image) {
        return dir / (sha256_hex(image) + ".txt");
    }

    std::string query(const Bytes& image, const std::string&) override {
        const auto path = response_path(dir_, image);
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw TransportError("mock provider has no response for image digest " +
                                     sha256_hex(image),
                                 1);
        return std::string(std::istreambuf_iterator<char>(in), {});
    }

private:
    std::filesystem::path dir_;
};

struct HttpProviderConfig {
    std::string endpoint;          // full URL, e.g. http://host:port/v1/annotate
    int max_attempts = 5;
    int backoff_base_ms = 1000;    // doubles per retry
    const char* token_env = "APU_LVLM_API_KEY";
};

// Live provider speaking a minimal chat-style protocol: one text part and
// one inline base64 image part per request. Transport failures, 429 and
// 5xx responses are retried with exponential backoff.
class HttpProvider : public AnnotationProvider {
public:
    explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
        const auto scheme_end = cfg_.endpoint.find("://");
        if (scheme_end == std::string::npos)
            throw ValidationError("provider endpoint must be a full URL: " + cfg_.endpoint);
        const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            base_ = cfg_.endpoint;
            path_ = "/";
        } else {
            base_ = cfg_.endpoint.substr(0, path_start);
            path_ = cfg_.endpoint.substr(path_start);
        }
    }

    std::string query(const Bytes& image, const std::string& prompt) override {
        nlohmann::json body;
        body["messages"] = {{{"role", "user"},
                             {"content",
                              {{{"type", "text"}, {"text", prompt}},
                               {{"type", "image"}, {"image_base64", base64_encode(image)}}}}}};
        const std::string payload = body.dump();

        httplib::Headers headers;
        if (const char* token = std::getenv(cfg_.token_env))
            headers.emplace("Authorization", std::string("Bearer ") + token);

        std::string last_error;
        for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
            if (attempt > 1) {
                const auto wait = std::chrono::milliseconds(
                    cfg_.backoff_base_ms << (attempt - 2));
                std::this_thread::sleep_for(wait);
            }
            httplib::Client client(base_);
            auto res = client.Post(path_, headers, payload, "application/json");
            if (!res) {
                last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
                continue;
            }
            if (res->status == 200) return extract_content(res->body);
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            throw TransportError("provider rejected request with HTTP " +
                                     std::to_string(res->status),
                                 attempt);
        }
        throw TransportError("provider unreachable after " + std::to_string(cfg_.max_attempts) +
                                 " attempts: " + last_error,
                             cfg_.max_attempts);
    }

private:
    static std::string extract_content(const std::string& body) {
        const auto j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
        if (j.is_object() && j.contains("content") && j["content"].is_string())
            return j["content"].get<std::string>();
        return body;
    }

    HttpProviderConfig cfg_;
    std::string base_;
    std::string path_;
};

// Wraps a provider with a content-addressed response cache (file name =
// sha256 of image bytes + prompt) and a bound on concurrent in-flight
// provider calls. A cached pair never reaches the provider again.
class CachingClient {
public:
    CachingClient(AnnotationProvider& provider, std::filesystem::path cache_dir,
                  int max_in_flight = 4, int min_interval_ms = 0)
        : provider_(provider),
          cache_dir_(std::move(cache_dir)),
          in_flight_(max_in_flight),
          min_interval_(min_interval_ms) {
        std::filesystem::create_directories(cache_dir_);
    }

    std::string query(const Bytes& image, const std::string& prompt) {
        const auto path = cache_dir_ / (query_digest(image, prompt) + ".txt");
        {
            std::lock_guard lock(cache_mutex_);
            std::ifstream in(path, std::ios::binary);
            if (in) return std::string(std::istreambuf_iterator<char>(in), {});
        }

        in_flight_.acquire();
        std::string response;
        try {
            pace();
            response = provider_.query(image, prompt);
        } catch (...) {
            in_flight_.release();
            throw;
        }
        in_flight_.release();

        std::lock_guard lock(cache_mutex_);
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            out << response;
        }
        std::filesystem::rename(tmp, path);
        return response;
    }

private:
    // Shared rate limiter: consecutive provider calls start at least
    // min_interval_ apart.
    void pace() {
        if (min_interval_.count() <= 0) return;
        std::lock_guard lock(pace_mutex_);
        const auto now = std::chrono::steady_clock::now();
        const auto earliest = last_start_ + min_interval_;
        if (now < earliest) std::this_thread::sleep_for(earliest - now);
        last_start_ = std::chrono::steady_clock::now();
    }

    AnnotationProvider& provider_;
    std::filesystem::path cache_dir_;
    std::counting_semaphore<256> in_flight_;
    std::chrono::milliseconds min_interval_;
    std::mutex cache_mutex_;
    std::mutex pace_mutex_;
    std::chrono::steady_clock::time_point last_start_{};
};

}  // namespace apu
