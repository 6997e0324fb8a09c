// selans: selective-answering evaluation harness and certified abstention
// risk-control toolkit.
//
// Exit codes: 0 success, 2 configuration error, 3 transport exhaustion,
// 4 data error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "selans/dataset.hpp"
#include "selans/decision.hpp"
#include "selans/errors.hpp"
#include "selans/metrics.hpp"
#include "selans/modelgw.hpp"
#include "selans/protocol.hpp"
#include "selans/riskctl.hpp"
#include "selans/runner.hpp"

namespace {

using json = nlohmann::json;
using namespace selans;

dataset::DatasetFormat format_from_name(const std::string& name) {
    if (name == "popqa-tsv") return dataset::DatasetFormat::PopqaTsv;
    if (name == "jsonl") return dataset::DatasetFormat::Jsonl;
    if (name == "csv") return dataset::DatasetFormat::Csv;
    throw ConfigError("unknown dataset format: " + name);
}

void write_or_print(const std::optional<std::string>& path, const std::string& content) {
    if (!path || *path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(*path, std::ios::binary);
    if (!out) throw dataset::FileUnreadable(*path);
    out << content;
}

modelgw::SyntheticAgentConfig synthetic_from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dataset::FileUnreadable(path);
    json obj;
    try {
        in >> obj;
    } catch (const json::exception& e) {
        throw ConfigError("unreadable synthetic agent config: " + std::string(e.what()));
    }

    modelgw::SyntheticAgentConfig cfg;
    if (obj.contains("knowledge")) {
        for (const auto& [id, q] : obj["knowledge"].items())
            cfg.knowledge[id] = q.get<double>();
    }
    if (obj.contains("default_q_true")) cfg.default_q_true = obj["default_q_true"].get<double>();
    cfg.uniform_beliefs = obj.value("uniform_beliefs", false);
    cfg.confidence_noise = obj.value("confidence_noise", 0.0);
    const std::string policy = obj.value("policy", std::string{"bayes_threshold"});
    if (policy == "bayes_threshold")
        cfg.policy = modelgw::SyntheticAgentConfig::Policy::BayesThreshold;
    else if (policy == "always_answer")
        cfg.policy = modelgw::SyntheticAgentConfig::Policy::AlwaysAnswer;
    else if (policy == "never_abstain_below")
        cfg.policy = modelgw::SyntheticAgentConfig::Policy::NeverAbstainBelow;
    else
        throw ConfigError("unknown synthetic policy: " + policy);
    cfg.policy_threshold = obj.value("policy_threshold", 0.0);
    cfg.validate();
    return cfg;
}

struct SchemeFlags {
    std::string scheme = "b";
    double reward = 1.0;
    double penalty = 1.0;
    double abstain = 0.4;
    bool abstain_set = false;
    bool norms = false;

    protocol::RewardConfig build() const {
        const protocol::Scheme kind = protocol::scheme_from_name(scheme);
        protocol::RewardConfig cfg;
        cfg.scheme = kind;
        cfg.norms = norms;
        if (kind == protocol::Scheme::PureEval) return cfg;
        cfg.reward_correct = reward;
        cfg.penalty_incorrect = penalty;
        if (kind == protocol::Scheme::SchemeB)
            cfg.reward_abstain = abstain;
        else if (abstain_set)
            cfg.reward_abstain = abstain; // scheme A control must pass 0
        cfg.validate();
        return cfg;
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--scheme", scheme, "Reward scheme: pure, a, or b")
            ->check(CLI::IsMember({"pure", "a", "b", "pure_eval", "scheme_a", "scheme_b"}));
        cmd->add_option("--reward", reward, "Payoff for a correct answer (R)");
        cmd->add_option("--penalty", penalty, "Penalty magnitude for a wrong answer (beta)");
        auto* opt = cmd->add_option("--abstain", abstain, "Abstention payoff (gamma)");
        opt->each([this](const std::string&) { abstain_set = true; });
        cmd->add_flag("--norms", norms, "Prepend the normative principles block");
    }
};

std::vector<riskctl::CalibrationPoint> points_from_scored(const runner::ScoredRun& scored) {
    std::vector<riskctl::CalibrationPoint> points;
    for (const auto& t : scored.trials) {
        if (t.channel == protocol::Channel::None || !t.confidence || !t.correct) continue;
        points.push_back({1.0 - *t.confidence, !*t.correct});
    }
    if (points.empty())
        throw DataError("scored run has no usable (confidence, correctness) pairs");
    return points;
}

json threshold_to_json(const riskctl::CertifiedThreshold& t,
                       const riskctl::ValidationResult* validation) {
    json obj;
    if (t.u_hat) {
        obj["u_hat"] = *t.u_hat;
        obj["confidence_threshold"] = 1.0 - *t.u_hat;
    } else {
        obj["u_hat"] = nullptr;
        obj["reject_all"] = true;
    }
    obj["risk_target"] = t.risk_target;
    obj["delta"] = t.delta;
    obj["method"] =
        t.method == riskctl::SelectionMethod::Bonferroni ? "bonferroni" : "multistart";
    if (t.method == riskctl::SelectionMethod::Multistart) obj["starts"] = t.starts;

    json audit = json::array();
    for (const auto& entry : t.audit) {
        json row;
        row["u"] = entry.u;
        row["n"] = entry.n;
        row["k"] = entry.k;
        if (entry.ucb) row["ucb"] = *entry.ucb;
        if (entry.p_value) row["p_value"] = *entry.p_value;
        row["certified"] = entry.certified;
        if (!entry.visited) row["visited"] = false;
        audit.push_back(std::move(row));
    }
    obj["audit"] = audit;

    if (!t.paths.empty()) {
        json paths = json::array();
        for (const auto& p : t.paths) {
            json row;
            row["start_index"] = p.start_index;
            if (p.stop_index) row["stop_index"] = *p.stop_index;
            row["certified_indices"] = p.certified_indices;
            paths.push_back(std::move(row));
        }
        obj["paths"] = paths;
    }

    if (validation) {
        json v;
        v["acceptance_rate"] = validation->acceptance_rate;
        v["acceptance_ci95"] = validation->acceptance_ci95;
        if (validation->cfar) {
            v["cfar"] = *validation->cfar;
            v["cfar_ci95"] = *validation->cfar_ci95;
        }
        obj["validation"] = v;
    }
    return obj;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Selective-answering evaluation harness with certified "
                 "abstention risk control"};
    app.require_subcommand(1);

    // ---- ingest ----------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest", "Convert a dataset to canonical JSONL");
    std::string ingest_path, ingest_format = "jsonl";
    std::optional<std::string> ingest_out;
    ingest->add_option("path", ingest_path, "Input dataset file")->required();
    ingest->add_option("--format", ingest_format, "popqa-tsv, jsonl, or csv")
        ->check(CLI::IsMember({"popqa-tsv", "jsonl", "csv"}));
    ingest->add_option("--out", ingest_out, "Output path (default: stdout)");
    ingest->callback([&] {
        const auto set = dataset::ingest_dataset(ingest_path, format_from_name(ingest_format));
        write_or_print(ingest_out, dataset::dump_jsonl(set));
        std::fprintf(stderr, "ingested %zu records from %s\n", set.records.size(),
                     ingest_path.c_str());
    });

    // ---- run -------------------------------------------------------------
    auto* run = app.add_subcommand("run", "Run an experiment against a model");
    std::string run_dataset, run_dataset_format = "jsonl", run_out;
    SchemeFlags run_scheme;
    std::optional<std::string> model_url, model_name, synthetic_path, cache_path;
    std::string auth_env = "MODEL_API_KEY";
    bool logprobs = false, fail_fast = false;
    int max_parallel = 4;
    std::uint64_t run_seed = 0;
    std::optional<std::int64_t> run_limit;
    run->add_option("--dataset", run_dataset, "Dataset file")->required();
    run->add_option("--dataset-format", run_dataset_format, "popqa-tsv, jsonl, or csv")
        ->check(CLI::IsMember({"popqa-tsv", "jsonl", "csv"}));
    run_scheme.attach(run);
    run->add_option("--model-url", model_url, "Chat-completion base URL");
    run->add_option("--model", model_name, "Model name sent to the endpoint");
    run->add_option("--synthetic", synthetic_path, "Synthetic agent config JSON");
    run->add_option("--cache", cache_path, "Completion cache file (live runs)");
    run->add_option("--auth-env", auth_env, "Environment variable holding the API key");
    run->add_flag("--logprobs", logprobs, "Request token log-probabilities");
    run->add_option("--max-parallel", max_parallel, "Max in-flight requests");
    run->add_flag("--fail-fast", fail_fast, "Abort on the first transport failure");
    run->add_option("--seed", run_seed, "Seed for synthetic agents");
    run->add_option("--limit", run_limit, "Max questions to process");
    run->add_option("--out", run_out, "Run record output (JSONL)")->required();
    run->callback([&] {
        runner::RunConfig cfg;
        cfg.dataset_path = run_dataset;
        cfg.dataset_format = format_from_name(run_dataset_format);
        cfg.scheme = run_scheme.build();
        cfg.output_path = run_out;
        cfg.seed = run_seed;
        cfg.limit = run_limit;
        cfg.fail_fast = fail_fast;
        if (synthetic_path) {
            auto agent = synthetic_from_file(*synthetic_path);
            agent.seed = run_seed;
            cfg.synthetic = agent;
        }
        if (model_url) {
            modelgw::ModelEndpointConfig endpoint;
            endpoint.base_url = *model_url;
            endpoint.model_name = model_name.value_or("");
            endpoint.request_logprobs = logprobs;
            endpoint.auth_token_env = auth_env;
            endpoint.max_parallel = max_parallel;
            cfg.live_model = endpoint;
            cfg.cache_path = cache_path;
        }
        const auto summary = runner::run_experiment(cfg, nullptr, true);
        std::fprintf(stderr, "completed %lld, skipped %lld, errors %lld -> %s\n",
                     static_cast<long long>(summary.completed),
                     static_cast<long long>(summary.skipped),
                     static_cast<long long>(summary.errors), run_out.c_str());
        if (summary.errors > 0) throw TransportFailure("run finished with transport errors");
    });

    // ---- score -----------------------------------------------------------
    auto* score = app.add_subcommand("score", "Score a run against its dataset");
    std::string score_run_path, score_dataset, score_dataset_format = "jsonl";
    std::optional<std::string> score_out;
    score->add_option("--run", score_run_path, "Run record file")->required();
    score->add_option("--dataset", score_dataset, "Dataset file")->required();
    score->add_option("--dataset-format", score_dataset_format, "popqa-tsv, jsonl, or csv")
        ->check(CLI::IsMember({"popqa-tsv", "jsonl", "csv"}));
    score->add_option("--out", score_out, "Scored run output (default: stdout)");
    score->callback([&] {
        const auto run_file = runner::load_run_file(score_run_path);
        const auto questions =
            dataset::ingest_dataset(score_dataset, format_from_name(score_dataset_format));
        const auto scored = runner::score_run(run_file, questions);
        write_or_print(score_out, runner::serialize_scored_run(scored) + "\n");
    });

    // ---- calibrate -------------------------------------------------------
    auto* calibrate =
        app.add_subcommand("calibrate", "Select a certified confidence threshold");
    std::string cal_scored, cal_method = "bonferroni";
    double cal_target = 0.3, cal_delta = 0.05, cal_split = 0.2;
    std::size_t cal_starts = 10;
    int cal_grid_denom = 100;
    std::uint64_t cal_seed = 0;
    std::optional<std::string> cal_out, cal_cfar_out;
    calibrate->add_option("--scored", cal_scored, "Scored run JSON")->required();
    calibrate->add_option("--target", cal_target, "Risk target r")->required();
    calibrate->add_option("--delta", cal_delta, "Overall failure probability");
    calibrate->add_option("--method", cal_method, "bonferroni or multistart")
        ->check(CLI::IsMember({"bonferroni", "multistart"}));
    calibrate->add_option("--starts", cal_starts, "Multistart path count L");
    calibrate->add_option("--grid-step", cal_grid_denom,
                          "Grid density: thresholds i/N for i in 0..N");
    calibrate->add_option("--split", cal_split, "Calibration fraction of the data");
    calibrate->add_option("--seed", cal_seed, "Split shuffle seed");
    calibrate->add_option("--out", cal_out, "Threshold report output (default: stdout)");
    calibrate->add_option("--cfar-out", cal_cfar_out, "CFAR curve CSV output");
    calibrate->callback([&] {
        const auto scored = runner::load_scored_run(cal_scored);
        const auto points = points_from_scored(scored);
        const auto split = riskctl::split_calibration(points, cal_split, cal_seed);
        const auto grid = riskctl::ThresholdGrid::even(cal_grid_denom);

        riskctl::CertifiedThreshold threshold;
        if (cal_method == "bonferroni") {
            threshold =
                riskctl::select_bonferroni(split.calibration, grid, cal_target, cal_delta);
        } else {
            threshold = riskctl::select_multistart(
                split.calibration, grid, cal_target, cal_delta,
                riskctl::default_starts(grid.size(), cal_starts));
        }
        const auto validation = riskctl::validate_threshold(split.validation, threshold);

        json out = threshold_to_json(threshold, &validation);
        out["n_calibration"] = split.calibration.size();
        out["n_validation"] = split.validation.size();
        write_or_print(cal_out, out.dump(2) + "\n");
        if (cal_cfar_out)
            write_or_print(cal_cfar_out,
                           riskctl::cfar_curve_csv(split.calibration, grid, cal_delta));
    });

    // ---- simulate --------------------------------------------------------
    auto* simulate = app.add_subcommand("simulate", "Frontier simulation for belief models");
    bool frontier_flag = false;
    std::string sim_belief = "uniform";
    double sim_alpha = 1.0, sim_beta = 1.0;
    std::int64_t sim_samples = 100000;
    std::uint64_t sim_seed = 0;
    std::optional<std::string> sim_configs, sim_out;
    simulate->add_flag("--frontier", frontier_flag, "Sweep the reward configurations");
    simulate->add_option("--belief", sim_belief, "uniform or beta")
        ->check(CLI::IsMember({"uniform", "beta"}));
    simulate->add_option("--alpha", sim_alpha, "Beta belief alpha");
    simulate->add_option("--beta-param", sim_beta, "Beta belief beta");
    simulate->add_option("--configs", sim_configs,
                         "JSON file with a list of {reward,penalty,abstain} objects");
    simulate->add_option("--samples", sim_samples, "Monte Carlo draws per configuration");
    simulate->add_option("--seed", sim_seed, "Simulation seed");
    simulate->add_option("--out", sim_out, "CSV output (default: stdout)");
    simulate->callback([&] {
        decision::BeliefModel model = sim_belief == "beta"
                                          ? decision::BeliefModel::beta_belief(sim_alpha, sim_beta)
                                          : decision::BeliefModel::uniform();
        std::vector<protocol::RewardConfig> configs;
        if (sim_configs) {
            std::ifstream in(*sim_configs, std::ios::binary);
            if (!in) throw dataset::FileUnreadable(*sim_configs);
            json arr;
            try {
                in >> arr;
            } catch (const json::exception& e) {
                throw ConfigError("unreadable configs file: " + std::string(e.what()));
            }
            for (const auto& item : arr) {
                configs.push_back(protocol::RewardConfig::scheme_b(
                    item.value("reward", 1.0), item.value("penalty", 1.0),
                    item.value("abstain", 0.4)));
            }
        } else {
            for (double g : {0.0, 0.2, 0.4, 0.6, 0.8})
                configs.push_back(protocol::RewardConfig::scheme_b(1.0, 1.0, g));
        }
        const auto outcomes = decision::simulate_frontier(model, configs, sim_samples, sim_seed);
        write_or_print(sim_out, decision::frontier_csv(configs, outcomes));
    });

    // ---- mc-validity -----------------------------------------------------
    auto* mc = app.add_subcommand("mc-validity",
                                  "Monte Carlo check of the selection guarantee");
    std::int64_t mc_trials = 2000, mc_cal_size = 500;
    double mc_target = 0.25, mc_delta = 0.05;
    std::string mc_generator = "all", mc_algorithm = "both";
    std::uint64_t mc_seed = 0;
    mc->add_option("--trials", mc_trials, "Trials per generator/algorithm pair");
    mc->add_option("--calibration-size", mc_cal_size, "Calibration points per trial");
    mc->add_option("--target", mc_target, "Risk target r");
    mc->add_option("--delta", mc_delta, "Failure probability budget");
    mc->add_option("--generator", mc_generator, "monotone, flat, nonmonotone, or all")
        ->check(CLI::IsMember({"monotone", "flat", "nonmonotone", "all"}));
    mc->add_option("--algorithm", mc_algorithm, "bonferroni, multistart, or both")
        ->check(CLI::IsMember({"bonferroni", "multistart", "both"}));
    mc->add_option("--seed", mc_seed, "Master seed");
    mc->callback([&] {
        std::vector<std::pair<std::string, riskctl::RiskGenerator>> generators;
        if (mc_generator == "monotone" || mc_generator == "all")
            generators.emplace_back(
                "monotone", riskctl::RiskGenerator(riskctl::RiskGenerator::Kind::Monotone));
        if (mc_generator == "flat" || mc_generator == "all")
            generators.emplace_back(
                "flat", riskctl::RiskGenerator(riskctl::RiskGenerator::Kind::Flat, 0.3));
        if (mc_generator == "nonmonotone" || mc_generator == "all")
            generators.emplace_back(
                "nonmonotone",
                riskctl::RiskGenerator(riskctl::RiskGenerator::Kind::NonMonotone));

        std::vector<std::pair<std::string, riskctl::SelectionMethod>> methods;
        if (mc_algorithm == "bonferroni" || mc_algorithm == "both")
            methods.emplace_back("bonferroni", riskctl::SelectionMethod::Bonferroni);
        if (mc_algorithm == "multistart" || mc_algorithm == "both")
            methods.emplace_back("multistart", riskctl::SelectionMethod::Multistart);

        std::printf("generator,algorithm,trials,selections,violations,violation_rate\n");
        for (const auto& [gname, gen] : generators) {
            for (const auto& [mname, method] : methods) {
                const auto res = riskctl::monte_carlo_validity(gen, method, mc_target, mc_delta,
                                                               mc_trials, mc_seed, mc_cal_size);
                std::printf("%s,%s,%lld,%lld,%lld,%.6g\n", gname.c_str(), mname.c_str(),
                            static_cast<long long>(res.trials),
                            static_cast<long long>(res.selections),
                            static_cast<long long>(res.violations), res.violation_rate);
            }
        }
    });

    // ---- report ----------------------------------------------------------
    auto* report = app.add_subcommand("report", "Render metric rows for scored runs");
    std::vector<std::string> report_inputs;
    std::string report_format = "table";
    std::optional<std::string> report_out;
    report->add_option("scored", report_inputs, "Scored run JSON files")->required();
    report->add_option("--format", report_format, "csv, json, or table")
        ->check(CLI::IsMember({"csv", "json", "table"}));
    report->add_option("--out", report_out, "Output path (default: stdout)");
    report->callback([&] {
        std::vector<runner::ScoredRun> runs;
        for (const auto& path : report_inputs) runs.push_back(runner::load_scored_run(path));
        write_or_print(
            report_out,
            runner::render_report(runs, runner::report_format_from_name(report_format)));
    });

    // ---- render (prompt inspection) ----------------------------------------
    auto* render = app.add_subcommand("render", "Print the rendered prompt for a question");
    SchemeFlags render_scheme;
    std::string render_question = "What is the capital of France?";
    std::optional<std::string> render_template;
    render_scheme.attach(render);
    render->add_option("--question", render_question, "Question text");
    render->add_option("--template", render_template, "Custom template file");
    render->callback([&] {
        dataset::QuestionRecord q;
        q.id = "render";
        q.question = render_question;
        q.references = {"-"};
        if (render_template) {
            std::ifstream in(*render_template, std::ios::binary);
            if (!in) throw dataset::FileUnreadable(*render_template);
            std::string tmpl((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
            std::cout << protocol::render_prompt(q, render_scheme.build(), tmpl) << "\n";
        } else {
            std::cout << protocol::render_prompt(q, render_scheme.build()) << "\n";
        }
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const TransportFailure& e) {
        std::fprintf(stderr, "transport error: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
