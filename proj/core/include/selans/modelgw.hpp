#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "selans/dataset.hpp"
#include "selans/errors.hpp"
#include "selans/protocol.hpp"

namespace selans::modelgw {

class AuthError : public TransportFailure {
public:
    using TransportFailure::TransportFailure;
};

class RateLimited : public TransportFailure {
public:
    using TransportFailure::TransportFailure;
};

class TransportError : public TransportFailure {
public:
    using TransportFailure::TransportFailure;
};

class ProviderError : public TransportFailure {
public:
    ProviderError(int status, const std::string& body_excerpt)
        : TransportFailure("provider error " + std::to_string(status) + ": " + body_excerpt),
          status(status) {}
    int status;
};

class UnknownQuestion : public DataError {
public:
    explicit UnknownQuestion(const std::string& id)
        : DataError("no synthetic knowledge entry for question: " + id) {}
};

class CacheCorrupt : public DataError {
public:
    explicit CacheCorrupt(const std::string& key)
        : DataError("cache entry failed its checksum: " + key) {}
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_backoff{250};
};

/// Connection settings for a live chat-completion endpoint. The auth secret
/// is read from the named environment variable and never serialized.
struct ModelEndpointConfig {
    std::string base_url; // e.g. https://api.example.com/v1
    std::string model_name;
    double temperature = 0.0;
    bool request_logprobs = false;
    std::string auth_token_env = "MODEL_API_KEY";
    int max_parallel = 4;
    RetryPolicy retry;

    void validate() const;
};

struct TokenLogprob {
    std::string token;
    double logprob; // <= 0
};

struct RawCompletion {
    std::string text;
    std::optional<std::vector<TokenLogprob>> token_logprobs;
    std::map<std::string, std::string> provider_meta;
};

/// Transport seam: the production implementation speaks HTTP, tests inject
/// counters and canned responses.
class HttpTransport {
public:
    struct Response {
        int status = 0;
        std::string body;
    };

    virtual ~HttpTransport() = default;
    /// POST with a JSON body; throws TransportError when no response at all
    /// could be obtained.
    virtual Response post_json(const std::string& base_url, const std::string& path,
                               const std::vector<std::pair<std::string, std::string>>& headers,
                               const std::string& body) = 0;
};

std::unique_ptr<HttpTransport> make_http_transport();

/// One chat-completion round trip with retry/backoff on transient failures.
RawCompletion complete(const std::string& prompt, const ModelEndpointConfig& cfg,
                       HttpTransport& transport);

/// Offline agent with controllable knowledge and calibration. Deterministic:
/// the response is a pure function of (seed, question id, scheme).
struct SyntheticAgentConfig {
    enum class Policy { BayesThreshold, AlwaysAnswer, NeverAbstainBelow };

    std::unordered_map<std::string, double> knowledge; // id -> q_true in [0,1]
    std::optional<double> default_q_true;
    /// When set, questions missing from the map get q_true drawn uniformly
    /// from a (seed, id)-keyed stream, giving a calibrated population without
    /// materializing a map.
    bool uniform_beliefs = false;
    double confidence_noise = 0.0; // sigma of additive noise, clamped to [0,1]
    Policy policy = Policy::BayesThreshold;
    double policy_threshold = 0.0; // tau_a for BayesThreshold, c for NeverAbstainBelow
    std::uint64_t seed = 0;

    void validate() const;
};

RawCompletion synthetic_complete(const dataset::QuestionRecord& q,
                                 const SyntheticAgentConfig& cfg,
                                 const protocol::RewardConfig& scheme);

/// Append-only JSONL completion cache keyed by a SHA-256 of the request
/// identity. Concurrent readers, serialized writers.
class CompletionCache {
public:
    explicit CompletionCache(const std::string& path);

    static std::string make_key(const std::string& model_name, double temperature,
                                bool request_logprobs, const std::string& prompt);

    std::optional<RawCompletion> lookup(const std::string& key) const; // throws CacheCorrupt
    void store(const std::string& key, const RawCompletion& completion);

    std::size_t size() const;
    std::size_t corrupt_entries() const;

private:
    std::string path_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, RawCompletion> entries_;
    std::unordered_set<std::string> corrupt_;
};

/// Cache-through completion: hits never touch the transport.
RawCompletion cached_complete(const std::string& prompt, const ModelEndpointConfig& cfg,
                              CompletionCache& cache, HttpTransport& transport);

} // namespace selans::modelgw
