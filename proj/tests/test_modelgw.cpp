#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selans/modelgw.hpp"
#include "selans/protocol.hpp"

using namespace selans;
using json = nlohmann::json;
using modelgw::CompletionCache;
using modelgw::ModelEndpointConfig;
using modelgw::RawCompletion;
using modelgw::SyntheticAgentConfig;
using protocol::ParsedResponse;
using protocol::RewardConfig;

namespace {

struct ScriptedTransport final : modelgw::HttpTransport {
    std::vector<Response> script;
    std::size_t calls = 0;
    std::string last_body;

    Response post_json(const std::string&, const std::string&,
                       const std::vector<std::pair<std::string, std::string>>&,
                       const std::string& body) override {
        last_body = body;
        const std::size_t i = std::min(calls, script.size() - 1);
        ++calls;
        return script[i];
    }
};

std::string chat_body(const std::string& content) {
    json obj;
    obj["id"] = "r-1";
    obj["choices"] = json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}});
    return obj.dump();
}

ModelEndpointConfig fast_endpoint() {
    ModelEndpointConfig cfg;
    cfg.base_url = "http://gateway.test";
    cfg.model_name = "test-model";
    cfg.retry.max_attempts = 3;
    cfg.retry.base_backoff = std::chrono::milliseconds(0);
    return cfg;
}

dataset::QuestionRecord question(const std::string& id) {
    dataset::QuestionRecord q;
    q.id = id;
    q.question = "Q " + id + "?";
    q.references = {"ref-" + id};
    return q;
}

struct TempPath {
    std::string path;
    explicit TempPath(const std::string& name) : path("selans_gw_" + name) {
        std::remove(path.c_str());
    }
    ~TempPath() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("complete returns text on a well-formed response") {
    ScriptedTransport transport;
    transport.script = {{200, chat_body("Answer: Paris\nConfidence: 0.9000")}};
    const RawCompletion c = modelgw::complete("prompt", fast_endpoint(), transport);
    CHECK(c.text == "Answer: Paris\nConfidence: 0.9000");
    CHECK(transport.calls == 1);
    // request carries the configured model and temperature
    const json sent = json::parse(transport.last_body);
    CHECK(sent["model"] == "test-model");
    CHECK(sent["temperature"] == 0.0);
    CHECK(sent["messages"][0]["content"] == "prompt");
}

TEST_CASE("retry and failure mapping") {
    SUBCASE("429 responses exhausting retries raise RateLimited") {
        ScriptedTransport transport;
        transport.script = {{429, "slow down"}};
        CHECK_THROWS_AS(modelgw::complete("p", fast_endpoint(), transport),
                        modelgw::RateLimited);
        CHECK(transport.calls == 3);
    }
    SUBCASE("transient 500 then success") {
        ScriptedTransport transport;
        transport.script = {{500, "oops"}, {200, chat_body("Answer: ok\nConfidence: 0.5")}};
        const RawCompletion c = modelgw::complete("p", fast_endpoint(), transport);
        CHECK(c.text == "Answer: ok\nConfidence: 0.5");
        CHECK(transport.calls == 2);
    }
    SUBCASE("401 is an auth error, no retry") {
        ScriptedTransport transport;
        transport.script = {{401, "no"}};
        CHECK_THROWS_AS(modelgw::complete("p", fast_endpoint(), transport), modelgw::AuthError);
        CHECK(transport.calls == 1);
    }
    SUBCASE("unexpected status is a provider error") {
        ScriptedTransport transport;
        transport.script = {{418, "teapot"}};
        CHECK_THROWS_AS(modelgw::complete("p", fast_endpoint(), transport),
                        modelgw::ProviderError);
    }
}

TEST_CASE("token logprobs") {
    SUBCASE("parsed when present") {
        json obj;
        obj["choices"] = json::array(
            {{{"message", {{"content", "Answer: hi"}}},
              {"logprobs",
               {{"content", json::array({{{"token", "Answer"}, {"logprob", -0.1}},
                                         {{"token", ": hi"}, {"logprob", -0.2}}})}}}}});
        ScriptedTransport transport;
        transport.script = {{200, obj.dump()}};
        ModelEndpointConfig cfg = fast_endpoint();
        cfg.request_logprobs = true;
        const RawCompletion c = modelgw::complete("p", cfg, transport);
        REQUIRE(c.token_logprobs.has_value());
        REQUIRE(c.token_logprobs->size() == 2);
        CHECK((*c.token_logprobs)[0].token == "Answer");
        CHECK((*c.token_logprobs)[1].logprob == -0.2);
    }
    SUBCASE("absence is flagged, not fatal") {
        ScriptedTransport transport;
        transport.script = {{200, chat_body("Answer: hi")}};
        ModelEndpointConfig cfg = fast_endpoint();
        cfg.request_logprobs = true;
        const RawCompletion c = modelgw::complete("p", cfg, transport);
        CHECK_FALSE(c.token_logprobs.has_value());
        CHECK(c.provider_meta.at("logprobs_missing") == "true");
    }
}

TEST_CASE("synthetic agent policies") {
    const auto scheme = RewardConfig::scheme_b(1.0, 1.0, 0.4);

    SUBCASE("confident knowledge answers with its confidence") {
        SyntheticAgentConfig cfg;
        cfg.knowledge["a"] = 0.9;
        cfg.policy = SyntheticAgentConfig::Policy::BayesThreshold;
        cfg.policy_threshold = 0.7;
        const RawCompletion c = modelgw::synthetic_complete(question("a"), cfg, scheme);
        const ParsedResponse p = protocol::parse_response(c.text);
        CHECK(p.kind == ParsedResponse::Kind::Answered);
        CHECK(c.text.find("Confidence: 0.9000") != std::string::npos);
    }
    SUBCASE("shaky knowledge abstains with a best guess at its confidence") {
        SyntheticAgentConfig cfg;
        cfg.knowledge["a"] = 0.2;
        cfg.policy = SyntheticAgentConfig::Policy::BayesThreshold;
        cfg.policy_threshold = 0.7;
        const RawCompletion c = modelgw::synthetic_complete(question("a"), cfg, scheme);
        const ParsedResponse p = protocol::parse_response(c.text);
        REQUIRE(p.kind == ParsedResponse::Kind::Abstained);
        REQUIRE(p.best_guess.has_value());
        CHECK(c.text.rfind("Answer: I don't know", 0) == 0);
        CHECK(c.text.find("Best Guess Confidence: 0.2000") != std::string::npos);
    }
    SUBCASE("zero threshold never abstains") {
        SyntheticAgentConfig cfg;
        cfg.policy = SyntheticAgentConfig::Policy::BayesThreshold;
        cfg.policy_threshold = 0.0;
        cfg.default_q_true = 0.05;
        for (int i = 0; i < 20; ++i) {
            const auto c = modelgw::synthetic_complete(question(std::to_string(i)), cfg, scheme);
            CHECK(protocol::parse_response(c.text).kind == ParsedResponse::Kind::Answered);
        }
    }
    SUBCASE("inverted policy abstains only at high confidence") {
        SyntheticAgentConfig cfg;
        cfg.policy = SyntheticAgentConfig::Policy::NeverAbstainBelow;
        cfg.policy_threshold = 0.5;
        cfg.knowledge["low"] = 0.2;
        cfg.knowledge["high"] = 0.9;
        CHECK(protocol::parse_response(
                  modelgw::synthetic_complete(question("low"), cfg, scheme).text)
                  .kind == ParsedResponse::Kind::Answered);
        CHECK(protocol::parse_response(
                  modelgw::synthetic_complete(question("high"), cfg, scheme).text)
                  .kind == ParsedResponse::Kind::Abstained);
    }
    SUBCASE("unknown question without a default") {
        SyntheticAgentConfig cfg;
        CHECK_THROWS_AS(modelgw::synthetic_complete(question("missing"), cfg, scheme),
                        modelgw::UnknownQuestion);
    }
    SUBCASE("pure-eval responses stay single-round") {
        SyntheticAgentConfig cfg;
        cfg.knowledge["a"] = 0.2;
        cfg.policy_threshold = 0.7;
        const auto c =
            modelgw::synthetic_complete(question("a"), cfg, RewardConfig::pure_eval());
        CHECK(c.text == "Answer: I don't know\nConfidence:");
    }
}

TEST_CASE("synthetic agent determinism and correctness marginals") {
    const auto scheme = RewardConfig::scheme_b(1.0, 1.0, 0.4);
    SyntheticAgentConfig cfg;
    cfg.uniform_beliefs = true;
    cfg.policy = SyntheticAgentConfig::Policy::BayesThreshold;
    cfg.policy_threshold = 0.7;
    cfg.seed = 99;

    SUBCASE("byte-identical across calls") {
        for (int i = 0; i < 50; ++i) {
            const auto q = question("q" + std::to_string(i));
            CHECK(modelgw::synthetic_complete(q, cfg, scheme).text ==
                  modelgw::synthetic_complete(q, cfg, scheme).text);
        }
    }
    SUBCASE("noiseless agents answer exactly when q_true clears the threshold") {
        SyntheticAgentConfig known;
        known.policy = SyntheticAgentConfig::Policy::BayesThreshold;
        known.policy_threshold = 0.6;
        for (int i = 0; i < 40; ++i) {
            const double q_true = i / 39.0;
            known.knowledge["k"] = q_true;
            const auto c = modelgw::synthetic_complete(question("k"), known, scheme);
            const bool answered =
                protocol::parse_response(c.text).kind == ParsedResponse::Kind::Answered;
            CHECK(answered == (q_true >= 0.6));
        }
    }
    SUBCASE("answers match the references at roughly the stated rate") {
        SyntheticAgentConfig agent;
        agent.default_q_true = 0.8;
        agent.policy = SyntheticAgentConfig::Policy::AlwaysAnswer;
        agent.seed = 5;
        int correct = 0;
        const int n = 2000;
        for (int i = 0; i < n; ++i) {
            const auto q = question("m" + std::to_string(i));
            const auto p = protocol::parse_response(
                modelgw::synthetic_complete(q, agent, scheme).text);
            REQUIRE(p.kind == ParsedResponse::Kind::Answered);
            correct += dataset::match_answer(p.answer, q.references) ? 1 : 0;
        }
        const double rate = static_cast<double>(correct) / n;
        CHECK(rate > 0.75);
        CHECK(rate < 0.85);
    }
}

TEST_CASE("completion cache") {
    SUBCASE("hits never touch the transport") {
        TempPath cache_file("hit.jsonl");
        CompletionCache cache(cache_file.path);
        ScriptedTransport transport;
        transport.script = {{200, chat_body("Answer: one\nConfidence: 0.5")}};
        const auto cfg = fast_endpoint();

        const RawCompletion first = modelgw::cached_complete("p", cfg, cache, transport);
        CHECK(transport.calls == 1);
        const RawCompletion second = modelgw::cached_complete("p", cfg, cache, transport);
        CHECK(transport.calls == 1); // zero new network calls
        CHECK(second.text == first.text);
    }
    SUBCASE("key separates models, temperatures, and logprob settings") {
        const std::string base = CompletionCache::make_key("m1", 0.0, false, "p");
        CHECK(CompletionCache::make_key("m2", 0.0, false, "p") != base);
        CHECK(CompletionCache::make_key("m1", 0.5, false, "p") != base);
        CHECK(CompletionCache::make_key("m1", 0.0, true, "p") != base);
        CHECK(CompletionCache::make_key("m1", 0.0, false, "q") != base);
        CHECK(CompletionCache::make_key("m1", 0.0, false, "p") == base);
    }
    SUBCASE("entries survive reopening") {
        TempPath cache_file("persist.jsonl");
        const std::string key = CompletionCache::make_key("m", 0.0, false, "p");
        {
            CompletionCache cache(cache_file.path);
            RawCompletion c;
            c.text = "stored";
            cache.store(key, c);
        }
        CompletionCache reopened(cache_file.path);
        const auto hit = reopened.lookup(key);
        REQUIRE(hit.has_value());
        CHECK(hit->text == "stored");
    }
    SUBCASE("tampered entries are quarantined") {
        TempPath cache_file("corrupt.jsonl");
        const std::string key = CompletionCache::make_key("m", 0.0, false, "p");
        {
            CompletionCache cache(cache_file.path);
            RawCompletion c;
            c.text = "clean";
            cache.store(key, c);
        }
        // flip the stored text without updating the checksum
        std::ifstream in(cache_file.path);
        std::string line;
        std::getline(in, line);
        in.close();
        const auto pos = line.find("clean");
        REQUIRE(pos != std::string::npos);
        line.replace(pos, 5, "dirty");
        std::ofstream out(cache_file.path, std::ios::trunc);
        out << line << '\n';
        out.close();

        CompletionCache reopened(cache_file.path);
        CHECK(reopened.corrupt_entries() == 1);
        CHECK_THROWS_AS(reopened.lookup(key), modelgw::CacheCorrupt);
    }
}
