#include "selans/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "sha256.hpp"

namespace selans::runner {
namespace {

using json = nlohmann::json;
using protocol::Channel;
using protocol::ParsedResponse;
using protocol::RewardConfig;
using protocol::Scheme;

constexpr const char* kRunSchema = "selans.run.v1";
constexpr const char* kScoredSchema = "selans.scored.v1";
constexpr const char* kReportSchema = "selans.report.v1";

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json scheme_to_json(const RewardConfig& cfg) {
    json obj;
    obj["scheme"] = protocol::scheme_name(cfg.scheme);
    obj["reward_correct"] = cfg.reward_correct;
    obj["penalty_incorrect"] = cfg.penalty_incorrect;
    if (cfg.reward_abstain)
        obj["reward_abstain"] = *cfg.reward_abstain;
    else
        obj["reward_abstain"] = nullptr;
    obj["norms"] = cfg.norms;
    return obj;
}

RewardConfig scheme_from_json(const json& obj) {
    RewardConfig cfg;
    cfg.scheme = protocol::scheme_from_name(obj.at("scheme").get<std::string>());
    cfg.reward_correct = obj.value("reward_correct", 1.0);
    cfg.penalty_incorrect = obj.value("penalty_incorrect", 0.0);
    if (obj.contains("reward_abstain") && obj["reward_abstain"].is_number())
        cfg.reward_abstain = obj["reward_abstain"].get<double>();
    cfg.norms = obj.value("norms", false);
    cfg.validate();
    return cfg;
}

const char* parsed_kind_name(ParsedResponse::Kind kind) {
    switch (kind) {
    case ParsedResponse::Kind::Answered: return "answered";
    case ParsedResponse::Kind::Abstained: return "abstained";
    case ParsedResponse::Kind::ParseFailure: return "parse_failure";
    }
    return "unknown";
}

json parsed_to_json(const ParsedResponse& p) {
    json obj;
    obj["kind"] = parsed_kind_name(p.kind);
    switch (p.kind) {
    case ParsedResponse::Kind::Answered:
        obj["answer"] = p.answer;
        if (p.confidence) obj["confidence"] = *p.confidence;
        break;
    case ParsedResponse::Kind::Abstained:
        if (p.best_guess) obj["best_guess"] = *p.best_guess;
        if (p.best_guess_confidence) obj["best_guess_confidence"] = *p.best_guess_confidence;
        break;
    case ParsedResponse::Kind::ParseFailure:
        obj["reason"] = p.failure_reason;
        break;
    }
    if (p.confidence_clamped) obj["clamped"] = true;
    return obj;
}

ParsedResponse parsed_from_json(const json& obj, const std::string& raw) {
    const std::string kind = obj.value("kind", "parse_failure");
    ParsedResponse p;
    if (kind == "answered") {
        std::optional<double> conf;
        if (obj.contains("confidence")) conf = obj["confidence"].get<double>();
        p = ParsedResponse::answered(obj.value("answer", std::string{}), conf);
    } else if (kind == "abstained") {
        std::optional<std::string> guess;
        std::optional<double> conf;
        if (obj.contains("best_guess")) guess = obj["best_guess"].get<std::string>();
        if (obj.contains("best_guess_confidence"))
            conf = obj["best_guess_confidence"].get<double>();
        p = ParsedResponse::abstained(guess, conf);
    } else {
        p = ParsedResponse::failure(obj.value("reason", std::string{}));
    }
    p.confidence_clamped = obj.value("clamped", false);
    p.raw = raw;
    return p;
}

json record_to_json(const RunRecord& rec) {
    json obj;
    obj["qid"] = rec.question_id;
    obj["prompt_sha256"] = rec.prompt_sha256;
    obj["raw"] = rec.raw;
    if (rec.token_logprobs) {
        json arr = json::array();
        for (const auto& tl : *rec.token_logprobs) arr.push_back({tl.token, tl.logprob});
        obj["logprobs"] = arr;
    }
    obj["parsed"] = parsed_to_json(rec.parsed);
    obj["status"] = rec.status;
    if (!rec.error.empty()) obj["error"] = rec.error;
    obj["ts"] = rec.timestamp;
    obj["attempts"] = rec.attempts;
    return obj;
}

RunRecord record_from_json(const json& obj) {
    RunRecord rec;
    rec.question_id = obj.at("qid").get<std::string>();
    rec.prompt_sha256 = obj.value("prompt_sha256", std::string{});
    rec.raw = obj.value("raw", std::string{});
    if (obj.contains("logprobs") && obj["logprobs"].is_array()) {
        std::vector<modelgw::TokenLogprob> lps;
        for (const auto& item : obj["logprobs"])
            lps.push_back({item.at(0).get<std::string>(), item.at(1).get<double>()});
        rec.token_logprobs = std::move(lps);
    }
    rec.parsed = parsed_from_json(obj.value("parsed", json::object()), rec.raw);
    rec.status = obj.value("status", std::string{"ok"});
    rec.error = obj.value("error", std::string{});
    rec.timestamp = obj.value("ts", std::string{});
    rec.attempts = obj.value("attempts", 1);
    return rec;
}

/// Geometric-mean token probability over the tokens that realize the
/// evaluated answer. Tokens are located by matching the answer substring in
/// the concatenated token stream; alignment failures yield absent.
std::optional<double> answer_token_conf(const RunRecord& rec, const std::string& answer) {
    if (!rec.token_logprobs || rec.token_logprobs->empty() || answer.empty())
        return std::nullopt;

    std::string joined;
    std::vector<std::size_t> offsets;
    offsets.reserve(rec.token_logprobs->size());
    for (const auto& tl : *rec.token_logprobs) {
        offsets.push_back(joined.size());
        joined += tl.token;
    }
    const std::size_t pos = joined.find(answer);
    if (pos == std::string::npos) return std::nullopt;
    const std::size_t end = pos + answer.size();

    double sum = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < rec.token_logprobs->size(); ++i) {
        const std::size_t tok_begin = offsets[i];
        const std::size_t tok_end =
            i + 1 < offsets.size() ? offsets[i + 1] : joined.size();
        if (tok_end <= pos || tok_begin >= end) continue;
        sum += std::min((*rec.token_logprobs)[i].logprob, 0.0);
        ++count;
    }
    if (count == 0) return std::nullopt;
    return std::exp(sum / static_cast<double>(count));
}

json header_json(const RunConfig& cfg, std::int64_t n_questions,
                 const std::string& dataset_source) {
    json obj;
    obj["schema"] = kRunSchema;
    obj["scheme"] = scheme_to_json(cfg.scheme);
    obj["seed"] = cfg.seed;
    obj["n_questions"] = n_questions;
    obj["dataset"] = dataset_source;
    obj["mode"] = cfg.synthetic ? "synthetic" : "live";
    if (cfg.live_model) obj["model"] = cfg.live_model->model_name;
    return obj;
}

std::string fingerprint(const json& header) {
    json key;
    for (const char* field : {"scheme", "seed", "n_questions", "dataset", "mode", "model"}) {
        if (header.contains(field)) key[field] = header[field];
    }
    return key.dump();
}

struct Sink {
    std::ofstream out;
    std::mutex mutex;

    void write_line(const std::string& line) {
        std::lock_guard<std::mutex> lock(mutex);
        out << line << '\n';
        out.flush();
    }
};

std::optional<double> slice_ratio(std::int64_t num, std::int64_t den) {
    if (den <= 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

TercileSlice make_slice(const metrics::OutcomeCounts& c) {
    TercileSlice s;
    s.counts = c;
    s.far_answered = slice_ratio(c.n_incorrect_answered, c.n_answered);
    s.far_overall = slice_ratio(c.n_incorrect_overall, c.n_total);
    s.coverage = slice_ratio(c.n_answered, c.n_total);
    s.aer = slice_ratio(c.n_incorrect_overall - c.n_incorrect_answered, c.n_incorrect_overall);
    return s;
}

json slice_to_json(const TercileSlice& s) {
    json obj;
    obj["n_total"] = s.counts.n_total;
    obj["n_answered"] = s.counts.n_answered;
    obj["n_abstained"] = s.counts.n_abstained;
    obj["n_parse_failure"] = s.counts.n_parse_failure;
    obj["n_incorrect_answered"] = s.counts.n_incorrect_answered;
    obj["n_incorrect_overall"] = s.counts.n_incorrect_overall;
    auto put = [&obj](const char* key, const std::optional<double>& v) {
        if (v) obj[key] = *v;
    };
    put("far_answered", s.far_answered);
    put("far_overall", s.far_overall);
    put("coverage", s.coverage);
    put("aer", s.aer);
    return obj;
}

TercileSlice slice_from_json(const json& obj) {
    TercileSlice s;
    s.counts.n_total = obj.value("n_total", std::int64_t{0});
    s.counts.n_answered = obj.value("n_answered", std::int64_t{0});
    s.counts.n_abstained = obj.value("n_abstained", std::int64_t{0});
    s.counts.n_parse_failure = obj.value("n_parse_failure", std::int64_t{0});
    s.counts.n_incorrect_answered = obj.value("n_incorrect_answered", std::int64_t{0});
    s.counts.n_incorrect_overall = obj.value("n_incorrect_overall", std::int64_t{0});
    auto get = [&obj](const char* key) -> std::optional<double> {
        if (obj.contains(key)) return obj[key].get<double>();
        return std::nullopt;
    };
    s.far_answered = get("far_answered");
    s.far_overall = get("far_overall");
    s.coverage = get("coverage");
    s.aer = get("aer");
    return s;
}

Channel channel_from_name(const std::string& name) {
    if (name == "first_round") return Channel::FirstRound;
    if (name == "best_guess") return Channel::BestGuess;
    return Channel::None;
}

json report_to_json(const metrics::MetricReport& r) {
    json obj = json::object();
    auto put = [&obj](const char* key, const std::optional<double>& v) {
        if (v) obj[key] = *v;
    };
    put("far_answered", r.far_answered);
    put("far_answered_ci95", r.far_answered_ci95);
    put("far_overall", r.far_overall);
    put("far_overall_ci95", r.far_overall_ci95);
    put("coverage", r.coverage);
    put("aer", r.aer);
    put("pure_eval_aer_bound", r.pure_eval_aer_bound);
    put("total_reward", r.total_reward);
    put("brier_answered", r.brier_answered);
    put("brier_answered_ci95", r.brier_answered_ci95);
    put("brier_overall", r.brier_overall);
    put("brier_overall_ci95", r.brier_overall_ci95);
    put("ece_answered", r.ece_answered);
    put("ece_overall", r.ece_overall);
    put("pearson_r", r.pearson_r);
    put("pearson_ci95_lo", r.pearson_ci95_lo);
    put("pearson_ci95_hi", r.pearson_ci95_hi);
    return obj;
}

metrics::MetricReport report_from_json(const json& obj) {
    metrics::MetricReport r;
    auto get = [&obj](const char* key) -> std::optional<double> {
        if (obj.contains(key)) return obj[key].get<double>();
        return std::nullopt;
    };
    r.far_answered = get("far_answered");
    r.far_answered_ci95 = get("far_answered_ci95");
    r.far_overall = get("far_overall");
    r.far_overall_ci95 = get("far_overall_ci95");
    r.coverage = get("coverage");
    r.aer = get("aer");
    r.pure_eval_aer_bound = get("pure_eval_aer_bound");
    r.total_reward = get("total_reward");
    r.brier_answered = get("brier_answered");
    r.brier_answered_ci95 = get("brier_answered_ci95");
    r.brier_overall = get("brier_overall");
    r.brier_overall_ci95 = get("brier_overall_ci95");
    r.ece_answered = get("ece_answered");
    r.ece_overall = get("ece_overall");
    r.pearson_r = get("pearson_r");
    r.pearson_ci95_lo = get("pearson_ci95_lo");
    r.pearson_ci95_hi = get("pearson_ci95_hi");
    return r;
}

std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", *v);
    return buf;
}

const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols = {
        "scheme",          "reward_correct",
        "penalty_incorrect", "reward_abstain",
        "norms",           "n_total",
        "n_answered",      "n_abstained",
        "n_parse_failure", "n_incorrect_answered",
        "n_incorrect_overall", "far_answered",
        "far_answered_ci95", "far_overall",
        "far_overall_ci95", "coverage",
        "aer",             "total_reward",
        "brier_answered",  "brier_answered_ci95",
        "brier_overall",   "brier_overall_ci95",
        "ece_answered",    "ece_overall",
        "pearson_r",       "pearson_ci95_lo",
        "pearson_ci95_hi"};
    return cols;
}

std::vector<std::string> report_row(const ScoredRun& run) {
    const auto& c = run.counts;
    const auto& r = run.report;
    return {
        protocol::scheme_name(run.scheme.scheme),
        fmt_opt(run.scheme.reward_correct),
        fmt_opt(run.scheme.penalty_incorrect),
        run.scheme.reward_abstain ? fmt_opt(*run.scheme.reward_abstain) : "",
        run.scheme.norms ? "true" : "false",
        std::to_string(c.n_total),
        std::to_string(c.n_answered),
        std::to_string(c.n_abstained),
        std::to_string(c.n_parse_failure),
        std::to_string(c.n_incorrect_answered),
        std::to_string(c.n_incorrect_overall),
        fmt_opt(r.far_answered),
        fmt_opt(r.far_answered_ci95),
        fmt_opt(r.far_overall),
        fmt_opt(r.far_overall_ci95),
        fmt_opt(r.coverage),
        fmt_opt(r.aer),
        fmt_opt(r.total_reward),
        fmt_opt(r.brier_answered),
        fmt_opt(r.brier_answered_ci95),
        fmt_opt(r.brier_overall),
        fmt_opt(r.brier_overall_ci95),
        fmt_opt(r.ece_answered),
        fmt_opt(r.ece_overall),
        fmt_opt(r.pearson_r),
        fmt_opt(r.pearson_ci95_lo),
        fmt_opt(r.pearson_ci95_hi),
    };
}

} // namespace

void RunConfig::validate() const {
    if (dataset_path.empty()) throw ConfigError("run config needs a dataset path");
    if (output_path.empty()) throw ConfigError("run config needs an output path");
    if (static_cast<bool>(live_model) == static_cast<bool>(synthetic))
        throw ConfigError("configure exactly one of a live model or a synthetic agent");
    if (limit && *limit < 0) throw ConfigError("limit must be nonnegative");
    scheme.validate();
    if (live_model) live_model->validate();
    if (synthetic) synthetic->validate();
}

RunSummary run_experiment(const RunConfig& cfg, modelgw::HttpTransport* transport,
                          bool progress) {
    cfg.validate();
    const dataset::QuestionSet questions =
        dataset::ingest_dataset(cfg.dataset_path, cfg.dataset_format);
    const std::int64_t n_questions =
        cfg.limit ? std::min<std::int64_t>(*cfg.limit,
                                           static_cast<std::int64_t>(questions.records.size()))
                  : static_cast<std::int64_t>(questions.records.size());

    const json header = header_json(cfg, n_questions, questions.source);

    std::unordered_map<std::string, int> attempt_count;
    std::unordered_map<std::string, bool> done;
    bool have_header = false;
    {
        std::ifstream in(cfg.output_path, std::ios::binary);
        std::string line;
        bool first = true;
        while (in && std::getline(in, line)) {
            if (line.empty()) continue;
            json obj = json::parse(line, nullptr, false);
            if (obj.is_discarded()) throw RunnerError("unreadable line in " + cfg.output_path);
            if (first && obj.value("schema", std::string{}) == kRunSchema) {
                if (fingerprint(obj) != fingerprint(header))
                    throw ConfigError("existing run file was produced by a different "
                                      "configuration: " +
                                      cfg.output_path);
                have_header = true;
                first = false;
                continue;
            }
            first = false;
            RunRecord rec = record_from_json(obj);
            attempt_count[rec.question_id] += 1;
            if (rec.status == "ok") done[rec.question_id] = true;
        }
    }

    Sink sink;
    sink.out.open(cfg.output_path, std::ios::binary | std::ios::app);
    if (!sink.out) throw dataset::FileUnreadable(cfg.output_path);
    if (!have_header) sink.write_line(header.dump());

    std::vector<const dataset::QuestionRecord*> pending;
    RunSummary summary;
    for (std::int64_t i = 0; i < n_questions; ++i) {
        const auto& q = questions.records[static_cast<std::size_t>(i)];
        if (done.count(q.id)) {
            ++summary.skipped;
            continue;
        }
        pending.push_back(&q);
    }

    std::unique_ptr<modelgw::HttpTransport> owned_transport;
    if (cfg.live_model && transport == nullptr) {
        owned_transport = modelgw::make_http_transport();
        transport = owned_transport.get();
    }
    std::optional<modelgw::CompletionCache> cache;
    if (cfg.live_model && cfg.cache_path) cache.emplace(*cfg.cache_path);

    std::atomic<std::int64_t> processed{0};
    std::mutex state_mutex; // guards summary + attempt_count
    std::atomic<bool> abort{false};
    std::exception_ptr first_error;

    auto handle_question = [&](const dataset::QuestionRecord& q) {
        const std::string prompt = protocol::render_prompt(q, cfg.scheme);
        RunRecord rec;
        rec.question_id = q.id;
        rec.prompt_sha256 = detail::sha256_hex(prompt);
        {
            std::lock_guard<std::mutex> lock(state_mutex);
            rec.attempts = ++attempt_count[q.id];
        }

        try {
            modelgw::RawCompletion completion;
            if (cfg.synthetic) {
                completion = modelgw::synthetic_complete(q, *cfg.synthetic, cfg.scheme);
            } else if (cache) {
                completion = modelgw::cached_complete(prompt, *cfg.live_model, *cache, *transport);
            } else {
                completion = modelgw::complete(prompt, *cfg.live_model, *transport);
            }
            rec.raw = completion.text;
            rec.token_logprobs = completion.token_logprobs;
            protocol::ParseOptions opts;
            opts.require_confidence = cfg.scheme.scheme != Scheme::PureEval;
            rec.parsed = protocol::parse_response(completion.text, opts);
            rec.status = "ok";
        } catch (const TransportFailure& e) {
            rec.status = "error";
            rec.error = e.what();
            rec.parsed = ParsedResponse::failure(std::string("transport: ") + e.what());
            if (cfg.fail_fast) {
                std::lock_guard<std::mutex> lock(state_mutex);
                if (!first_error) first_error = std::current_exception();
                abort = true;
            }
        }
        rec.timestamp = utc_timestamp();
        sink.write_line(record_to_json(rec).dump());
        {
            std::lock_guard<std::mutex> lock(state_mutex);
            if (rec.status == "ok")
                ++summary.completed;
            else
                ++summary.errors;
        }
        const std::int64_t count = ++processed;
        if (progress && (count % 500 == 0 || count == static_cast<std::int64_t>(pending.size())))
            std::fprintf(stderr, "[run] %lld/%zu\n", static_cast<long long>(count),
                         pending.size());
    };

    if (cfg.synthetic) {
        // Synthetic agents are pure; a sequential pass keeps the record order
        // equal to the dataset order.
        for (const auto* q : pending) {
            if (abort) break;
            handle_question(*q);
        }
    } else {
        const int workers = std::max(1, cfg.live_model->max_parallel);
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                while (!abort) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= pending.size()) break;
                    handle_question(*pending[i]);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    if (first_error) std::rethrow_exception(first_error);
    return summary;
}

RunFile load_run_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dataset::FileUnreadable(path);

    RunFile run;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded()) throw RunnerError("unreadable line in " + path);
        if (first) {
            first = false;
            if (obj.value("schema", std::string{}) == kRunSchema) {
                run.scheme = scheme_from_json(obj.at("scheme"));
                run.seed = obj.value("seed", std::uint64_t{0});
                run.n_questions = obj.value("n_questions", std::int64_t{0});
                run.dataset_source = obj.value("dataset", std::string{});
                continue;
            }
            throw RunnerError("missing run header in " + path);
        }
        run.records.push_back(record_from_json(obj));
    }
    return run;
}

ScoredRun score_run(const RunFile& run, const dataset::QuestionSet& questions) {
    // Last terminal record per question wins; error records never shadow an
    // ok one.
    std::unordered_map<std::string, const RunRecord*> terminal;
    for (const auto& rec : run.records) {
        if (rec.status != "ok") continue;
        terminal[rec.question_id] = &rec;
    }
    for (const auto& [id, rec] : terminal) {
        if (questions.find(id) == nullptr) throw UnknownQuestion(id);
    }

    ScoredRun scored;
    scored.scheme = run.scheme;

    auto& counts = scored.counts;
    std::unordered_map<std::string, const metrics::ScoredTrial*> trial_by_id;
    for (const auto& q : questions.records) {
        auto it = terminal.find(q.id);
        if (it == terminal.end()) continue;
        const RunRecord& rec = *it->second;

        metrics::ScoredTrial trial;
        trial.question_id = q.id;
        const protocol::EvaluatedAnswer eval = protocol::evaluated_answer(rec.parsed);
        trial.channel = eval.channel;
        trial.confidence = eval.confidence;
        if (eval.answer) {
            trial.correct = dataset::match_answer(*eval.answer, q.references);
            trial.token_conf = answer_token_conf(rec, *eval.answer);
        }

        counts.n_total += 1;
        switch (rec.parsed.kind) {
        case ParsedResponse::Kind::Answered:
            counts.n_answered += 1;
            if (!trial.correct.value_or(false)) {
                counts.n_incorrect_answered += 1;
                counts.n_incorrect_overall += 1;
            }
            break;
        case ParsedResponse::Kind::Abstained:
            counts.n_abstained += 1;
            if (!trial.correct.value_or(false)) counts.n_incorrect_overall += 1;
            break;
        case ParsedResponse::Kind::ParseFailure:
            counts.n_parse_failure += 1;
            counts.n_incorrect_overall += 1;
            break;
        }
        scored.trials.push_back(std::move(trial));
    }
    counts.validate();
    for (const auto& t : scored.trials) trial_by_id[t.question_id] = &t;

    scored.incomplete =
        run.n_questions > 0 && counts.n_total < run.n_questions;
    scored.report = metrics::compute_report(scored.trials, counts, run.scheme);

    const bool all_popular = !questions.records.empty() &&
                             std::all_of(questions.records.begin(), questions.records.end(),
                                         [&](const dataset::QuestionRecord& q) {
                                             return q.popularity.has_value() ||
                                                    trial_by_id.find(q.id) == trial_by_id.end();
                                         });
    bool any_popular = false;
    for (const auto& q : questions.records) {
        if (q.popularity && trial_by_id.count(q.id)) any_popular = true;
    }
    if (all_popular && any_popular) {
        dataset::QuestionSet covered;
        covered.source = questions.source;
        for (const auto& q : questions.records) {
            if (trial_by_id.count(q.id)) covered.records.push_back(q);
        }
        const dataset::TercilePartition part = dataset::popularity_terciles(covered);

        auto cell_counts = [&](const std::vector<dataset::QuestionRecord>& cell) {
            metrics::OutcomeCounts c;
            for (const auto& q : cell) {
                const metrics::ScoredTrial& t = *trial_by_id.at(q.id);
                c.n_total += 1;
                switch (t.channel) {
                case Channel::FirstRound:
                    c.n_answered += 1;
                    if (!t.correct.value_or(false)) {
                        c.n_incorrect_answered += 1;
                        c.n_incorrect_overall += 1;
                    }
                    break;
                case Channel::BestGuess:
                    c.n_abstained += 1;
                    if (!t.correct.value_or(false)) c.n_incorrect_overall += 1;
                    break;
                case Channel::None:
                    // Either an abstention without a guess or a parse failure;
                    // the trial view cannot tell them apart, so the slice files
                    // them under abstentions and counts them as overall errors.
                    c.n_abstained += 1;
                    c.n_incorrect_overall += 1;
                    break;
                }
            }
            return c;
        };

        TercileBreakdown breakdown;
        breakdown.common = make_slice(cell_counts(part.common));
        breakdown.middle = make_slice(cell_counts(part.middle));
        breakdown.rare = make_slice(cell_counts(part.rare));
        scored.terciles = breakdown;
    }

    return scored;
}

std::string serialize_scored_run(const ScoredRun& scored) {
    json obj;
    obj["schema"] = kScoredSchema;
    obj["scheme"] = scheme_to_json(scored.scheme);
    obj["incomplete"] = scored.incomplete;

    json counts;
    counts["n_total"] = scored.counts.n_total;
    counts["n_answered"] = scored.counts.n_answered;
    counts["n_abstained"] = scored.counts.n_abstained;
    counts["n_parse_failure"] = scored.counts.n_parse_failure;
    counts["n_incorrect_answered"] = scored.counts.n_incorrect_answered;
    counts["n_incorrect_overall"] = scored.counts.n_incorrect_overall;
    obj["counts"] = counts;

    obj["metrics"] = report_to_json(scored.report);
    if (scored.terciles) {
        json terc;
        terc["common"] = slice_to_json(scored.terciles->common);
        terc["middle"] = slice_to_json(scored.terciles->middle);
        terc["rare"] = slice_to_json(scored.terciles->rare);
        obj["terciles"] = terc;
    }

    json trials = json::array();
    for (const auto& t : scored.trials) {
        json item;
        item["qid"] = t.question_id;
        item["channel"] = protocol::channel_name(t.channel);
        if (t.confidence) item["confidence"] = *t.confidence;
        if (t.correct) item["correct"] = *t.correct;
        if (t.token_conf) item["token_conf"] = *t.token_conf;
        trials.push_back(std::move(item));
    }
    obj["trials"] = trials;
    return obj.dump();
}

ScoredRun deserialize_scored_run(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::exception& e) {
        throw RunnerError(std::string("unreadable scored run: ") + e.what());
    }
    if (obj.value("schema", std::string{}) != kScoredSchema)
        throw RunnerError("not a scored-run file (missing schema tag)");

    ScoredRun scored;
    scored.scheme = scheme_from_json(obj.at("scheme"));
    scored.incomplete = obj.value("incomplete", false);

    const json& counts = obj.at("counts");
    scored.counts.n_total = counts.value("n_total", std::int64_t{0});
    scored.counts.n_answered = counts.value("n_answered", std::int64_t{0});
    scored.counts.n_abstained = counts.value("n_abstained", std::int64_t{0});
    scored.counts.n_parse_failure = counts.value("n_parse_failure", std::int64_t{0});
    scored.counts.n_incorrect_answered = counts.value("n_incorrect_answered", std::int64_t{0});
    scored.counts.n_incorrect_overall = counts.value("n_incorrect_overall", std::int64_t{0});

    scored.report = report_from_json(obj.value("metrics", json::object()));
    if (obj.contains("terciles") && obj["terciles"].is_object()) {
        TercileBreakdown breakdown;
        breakdown.common = slice_from_json(obj["terciles"]["common"]);
        breakdown.middle = slice_from_json(obj["terciles"]["middle"]);
        breakdown.rare = slice_from_json(obj["terciles"]["rare"]);
        scored.terciles = breakdown;
    }

    for (const auto& item : obj.value("trials", json::array())) {
        metrics::ScoredTrial t;
        t.question_id = item.value("qid", std::string{});
        t.channel = channel_from_name(item.value("channel", std::string{"none"}));
        if (item.contains("confidence")) t.confidence = item["confidence"].get<double>();
        if (item.contains("correct")) t.correct = item["correct"].get<bool>();
        if (item.contains("token_conf")) t.token_conf = item["token_conf"].get<double>();
        scored.trials.push_back(std::move(t));
    }
    return scored;
}

ScoredRun load_scored_run(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dataset::FileUnreadable(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_scored_run(ss.str());
}

ReportFormat report_format_from_name(const std::string& name) {
    if (name == "csv") return ReportFormat::Csv;
    if (name == "json") return ReportFormat::Json;
    if (name == "table") return ReportFormat::Table;
    throw ConfigError("unknown report format: " + name);
}

std::string render_report(const std::vector<ScoredRun>& runs, ReportFormat format) {
    if (runs.empty()) throw metrics::EmptyInput("report");

    switch (format) {
    case ReportFormat::Csv: {
        std::string out = std::string("# schema ") + kReportSchema + "\n";
        const auto& cols = report_columns();
        for (std::size_t i = 0; i < cols.size(); ++i) {
            out += cols[i];
            out += i + 1 < cols.size() ? "," : "\n";
        }
        for (const auto& run : runs) {
            const auto row = report_row(run);
            for (std::size_t i = 0; i < row.size(); ++i) {
                out += row[i];
                out += i + 1 < row.size() ? "," : "\n";
            }
        }
        return out;
    }
    case ReportFormat::Json: {
        json obj;
        obj["schema"] = kReportSchema;
        json arr = json::array();
        for (const auto& run : runs) {
            const auto& cols = report_columns();
            const auto row = report_row(run);
            json item;
            for (std::size_t i = 0; i < cols.size(); ++i)
                item[cols[i]] = row[i];
            arr.push_back(std::move(item));
        }
        obj["runs"] = arr;
        return obj.dump(2) + "\n";
    }
    case ReportFormat::Table: {
        static const std::vector<std::pair<std::string, int>> layout = {
            {"scheme", 10}, {"norms", 6},    {"coverage", 9}, {"far_answered", 13},
            {"far_overall", 12}, {"aer", 8}, {"total_reward", 13}, {"brier_answered", 15},
            {"ece_answered", 13}, {"n_total", 8}};
        const auto& cols = report_columns();
        auto col_index = [&cols](const std::string& name) {
            return static_cast<std::size_t>(
                std::find(cols.begin(), cols.end(), name) - cols.begin());
        };
        std::string out;
        char buf[64];
        for (const auto& [name, width] : layout) {
            std::snprintf(buf, sizeof buf, "%-*s", width, name.c_str());
            out += buf;
            out += ' ';
        }
        out += '\n';
        for (const auto& run : runs) {
            const auto row = report_row(run);
            for (const auto& [name, width] : layout) {
                const std::string& cell = row[col_index(name)];
                std::snprintf(buf, sizeof buf, "%-*s", width,
                              cell.empty() ? "-" : cell.c_str());
                out += buf;
                out += ' ';
            }
            out += '\n';
        }
        return out;
    }
    }
    throw ConfigError("unknown report format");
}

} // namespace selans::runner
