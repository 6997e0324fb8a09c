#include "selans/modelgw.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "selans/random.hpp"
#include "sha256.hpp"

// cpp-httplib needs this before the include to follow redirects etc.; TLS is
// delegated to the deployment (plain HTTP works against local gateways).
#include <httplib.h>

namespace selans::modelgw {
namespace {

using json = nlohmann::json;

json completion_to_json(const RawCompletion& c) {
    json obj;
    obj["text"] = c.text;
    if (c.token_logprobs) {
        json arr = json::array();
        for (const auto& tl : *c.token_logprobs) arr.push_back({tl.token, tl.logprob});
        obj["logprobs"] = arr;
    } else {
        obj["logprobs"] = nullptr;
    }
    obj["meta"] = c.provider_meta;
    return obj;
}

RawCompletion completion_from_json(const json& obj) {
    RawCompletion c;
    c.text = obj.at("text").get<std::string>();
    if (obj.contains("logprobs") && obj["logprobs"].is_array()) {
        std::vector<TokenLogprob> lps;
        for (const auto& item : obj["logprobs"])
            lps.push_back({item.at(0).get<std::string>(), item.at(1).get<double>()});
        c.token_logprobs = std::move(lps);
    }
    if (obj.contains("meta") && obj["meta"].is_object()) {
        for (const auto& [k, v] : obj["meta"].items())
            c.provider_meta[k] = v.get<std::string>();
    }
    return c;
}

struct HttplibTransport final : HttpTransport {
    Response post_json(const std::string& base_url, const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& headers,
                       const std::string& body) override {
        httplib::Client client(base_url);
        client.set_connection_timeout(30, 0);
        client.set_read_timeout(120, 0);
        httplib::Headers hdrs;
        for (const auto& [k, v] : headers) hdrs.emplace(k, v);
        auto res = client.Post(path, hdrs, body, "application/json");
        if (!res) throw TransportError("no response from " + base_url + path);
        return {res->status, res->body};
    }
};

std::string excerpt(const std::string& body) {
    return body.size() <= 200 ? body : body.substr(0, 200) + "...";
}

double q_true_for(const dataset::QuestionRecord& q, const SyntheticAgentConfig& cfg) {
    if (auto it = cfg.knowledge.find(q.id); it != cfg.knowledge.end()) return it->second;
    if (cfg.uniform_beliefs) {
        std::uint64_t state = rng::derive_seed(cfg.seed ^ 0x5e1a5eedULL, q.id);
        return static_cast<double>(rng::splitmix64(state) >> 11) * 0x1.0p-53;
    }
    if (cfg.default_q_true) return *cfg.default_q_true;
    throw UnknownQuestion(q.id);
}

} // namespace

void ModelEndpointConfig::validate() const {
    if (base_url.empty()) throw ConfigError("model endpoint needs a base URL");
    if (model_name.empty()) throw ConfigError("model endpoint needs a model name");
    if (max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
    if (retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
}

std::unique_ptr<HttpTransport> make_http_transport() {
    return std::make_unique<HttplibTransport>();
}

RawCompletion complete(const std::string& prompt, const ModelEndpointConfig& cfg,
                       HttpTransport& transport) {
    cfg.validate();

    json request;
    request["model"] = cfg.model_name;
    request["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
    request["temperature"] = cfg.temperature;
    if (cfg.request_logprobs) request["logprobs"] = true;
    const std::string body = request.dump();

    std::vector<std::pair<std::string, std::string>> headers;
    if (const char* token = std::getenv(cfg.auth_token_env.c_str());
        token != nullptr && *token != '\0') {
        headers.emplace_back("Authorization", std::string("Bearer ") + token);
    }

    std::string last_error;
    for (int attempt = 0; attempt < cfg.retry.max_attempts; ++attempt) {
        if (attempt > 0) {
            const auto delay = cfg.retry.base_backoff * (1 << (attempt - 1));
            if (delay.count() > 0) std::this_thread::sleep_for(delay);
        }

        HttpTransport::Response res;
        try {
            res = transport.post_json(cfg.base_url, "/chat/completions", headers, body);
        } catch (const TransportError& e) {
            last_error = e.what();
            continue;
        }

        if (res.status == 401 || res.status == 403)
            throw AuthError("authentication rejected (status " + std::to_string(res.status) +
                            "); check $" + cfg.auth_token_env);
        if (res.status == 429 || res.status >= 500) {
            last_error = "status " + std::to_string(res.status) + ": " + excerpt(res.body);
            continue;
        }
        if (res.status != 200) throw ProviderError(res.status, excerpt(res.body));

        json parsed;
        try {
            parsed = json::parse(res.body);
        } catch (const json::exception& e) {
            throw ProviderError(res.status, std::string("unparseable body: ") + e.what());
        }
        if (!parsed.contains("choices") || parsed["choices"].empty())
            throw ProviderError(res.status, "response has no choices");

        const json& choice = parsed["choices"][0];
        RawCompletion out;
        out.text = choice.at("message").at("content").get<std::string>();
        if (parsed.contains("id")) out.provider_meta["request_id"] = parsed["id"].dump();
        if (parsed.contains("usage")) out.provider_meta["usage"] = parsed["usage"].dump();

        if (cfg.request_logprobs) {
            if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
                choice["logprobs"].contains("content") &&
                choice["logprobs"]["content"].is_array()) {
                std::vector<TokenLogprob> lps;
                for (const auto& item : choice["logprobs"]["content"]) {
                    lps.push_back({item.value("token", std::string{}),
                                   std::min(item.value("logprob", 0.0), 0.0)});
                }
                out.token_logprobs = std::move(lps);
            } else {
                out.provider_meta["logprobs_missing"] = "true";
            }
        }
        return out;
    }

    if (last_error.rfind("status 429", 0) == 0)
        throw RateLimited("rate limited after " + std::to_string(cfg.retry.max_attempts) +
                          " attempts: " + last_error);
    throw TransportError("exhausted " + std::to_string(cfg.retry.max_attempts) +
                         " attempts: " + last_error);
}

void SyntheticAgentConfig::validate() const {
    if (confidence_noise < 0.0) throw ConfigError("confidence_noise must be >= 0");
    for (const auto& [id, q] : knowledge) {
        if (q < 0.0 || q > 1.0)
            throw ConfigError("q_true outside [0,1] for question " + id);
    }
    if (default_q_true && (*default_q_true < 0.0 || *default_q_true > 1.0))
        throw ConfigError("default_q_true outside [0,1]");
}

RawCompletion synthetic_complete(const dataset::QuestionRecord& q,
                                 const SyntheticAgentConfig& cfg,
                                 const protocol::RewardConfig& scheme) {
    cfg.validate();
    const double q_true = q_true_for(q, cfg);

    rng::Engine eng(rng::derive_seed(cfg.seed, q.id));
    const bool candidate_correct = eng.bernoulli(q_true);
    double confidence = q_true;
    if (cfg.confidence_noise > 0.0)
        confidence = std::clamp(q_true + cfg.confidence_noise * eng.normal(), 0.0, 1.0);

    bool abstain = false;
    switch (cfg.policy) {
    case SyntheticAgentConfig::Policy::BayesThreshold:
        abstain = confidence < cfg.policy_threshold;
        break;
    case SyntheticAgentConfig::Policy::AlwaysAnswer:
        abstain = false;
        break;
    case SyntheticAgentConfig::Policy::NeverAbstainBelow:
        // Inverted rule: answers on low confidence, abstains at or above c.
        abstain = confidence >= cfg.policy_threshold;
        break;
    }

    // The candidate answer is the same whichever round surfaces it: the first
    // reference when the knowledge draw lands correct, a non-matching token
    // otherwise.
    std::string candidate;
    if (candidate_correct) {
        candidate = q.references.front();
    } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(rng::derive_seed(cfg.seed + 1, q.id)));
        candidate = "unverified-claim-" + std::string(buf);
    }

    protocol::ParsedResponse structured;
    if (scheme.scheme == protocol::Scheme::PureEval) {
        structured = abstain
                         ? protocol::ParsedResponse::abstained(std::nullopt, std::nullopt)
                         : protocol::ParsedResponse::answered(candidate, std::nullopt);
    } else if (abstain) {
        structured = protocol::ParsedResponse::abstained(candidate, confidence);
    } else {
        structured = protocol::ParsedResponse::answered(candidate, confidence);
    }

    RawCompletion out;
    out.text = protocol::format_response(structured);
    out.provider_meta["synthetic"] = "true";
    return out;
}

CompletionCache::CompletionCache(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return; // fresh cache
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object() || !obj.contains("key")) continue;
        const std::string key = obj.value("key", std::string{});
        if (!obj.contains("entry") || !obj.contains("check") ||
            detail::sha256_hex(obj["entry"].dump()) != obj["check"].get<std::string>()) {
            corrupt_.insert(key);
            continue;
        }
        try {
            entries_[key] = completion_from_json(obj["entry"]);
            corrupt_.erase(key); // a later clean append repairs the key
        } catch (const json::exception&) {
            corrupt_.insert(key);
        }
    }
}

std::string CompletionCache::make_key(const std::string& model_name, double temperature,
                                      bool request_logprobs, const std::string& prompt) {
    char temp[40];
    std::snprintf(temp, sizeof temp, "%.17g", temperature);
    std::string material = model_name;
    material += '\x1f';
    material += temp;
    material += '\x1f';
    material += request_logprobs ? '1' : '0';
    material += '\x1f';
    material += prompt;
    return detail::sha256_hex(material);
}

std::optional<RawCompletion> CompletionCache::lookup(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    if (corrupt_.count(key)) throw CacheCorrupt(key);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void CompletionCache::store(const std::string& key, const RawCompletion& completion) {
    std::lock_guard<std::mutex> lock(mutex_);
    const json entry = completion_to_json(completion);
    json line;
    line["key"] = key;
    line["entry"] = entry;
    line["check"] = detail::sha256_hex(entry.dump());

    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot append to cache file: " + path_);
    out << line.dump() << '\n';
    out.flush();

    entries_[key] = completion;
    corrupt_.erase(key);
}

std::size_t CompletionCache::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
}

std::size_t CompletionCache::corrupt_entries() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return corrupt_.size();
}

RawCompletion cached_complete(const std::string& prompt, const ModelEndpointConfig& cfg,
                              CompletionCache& cache, HttpTransport& transport) {
    const std::string key =
        CompletionCache::make_key(cfg.model_name, cfg.temperature, cfg.request_logprobs, prompt);
    if (auto hit = cache.lookup(key)) return *hit;
    RawCompletion fresh = complete(prompt, cfg, transport);
    cache.store(key, fresh);
    return fresh;
}

} // namespace selans::modelgw
