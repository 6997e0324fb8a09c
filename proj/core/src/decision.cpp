#include "selans/decision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "selans/random.hpp"
#include "selans/riskctl.hpp"

namespace selans::decision {
namespace {

using protocol::RewardConfig;

struct ClosedForm {
    double coverage;
    std::optional<double> far_answered;
    double expected_reward;
};

double gamma_of(const RewardConfig& cfg) { return cfg.reward_abstain.value_or(0.0); }

// E[p | p >= tau] pieces for the analytic belief kinds; correctness resolves
// on true p, so under identity calibration the frontier has a closed form.
std::optional<ClosedForm> closed_form(const BeliefModel& model, const RewardConfig& cfg,
                                      double tau) {
    if (!model.calibrated()) return std::nullopt;
    const double R = cfg.reward_correct;
    const double beta_pen = cfg.penalty_incorrect;
    const double gamma = gamma_of(cfg);

    double cov = 0.0;       // Pr(p >= tau)
    double mean_above = 0.0; // E[p * 1{p >= tau}]
    switch (model.kind) {
    case BeliefModel::Kind::Uniform: {
        const double t = std::clamp(tau, 0.0, 1.0);
        cov = tau > 1.0 ? 0.0 : 1.0 - t;
        mean_above = tau > 1.0 ? 0.0 : (1.0 - t * t) / 2.0;
        break;
    }
    case BeliefModel::Kind::Beta: {
        const double a = model.alpha;
        const double b = model.beta;
        if (tau > 1.0) {
            cov = 0.0;
        } else {
            const double t = std::clamp(tau, 0.0, 1.0);
            cov = 1.0 - riskctl::regularized_incomplete_beta(a, b, t);
            mean_above =
                a / (a + b) * (1.0 - riskctl::regularized_incomplete_beta(a + 1.0, b, t));
        }
        break;
    }
    case BeliefModel::Kind::Empirical: {
        if (model.empirical.empty()) return std::nullopt;
        std::int64_t n_above = 0;
        double sum_above = 0.0;
        for (double p : model.empirical) {
            if (p >= tau) {
                ++n_above;
                sum_above += p;
            }
        }
        const auto n = static_cast<double>(model.empirical.size());
        cov = static_cast<double>(n_above) / n;
        mean_above = sum_above / n;
        break;
    }
    }

    ClosedForm out;
    out.coverage = cov;
    if (cov > 0.0) out.far_answered = 1.0 - mean_above / cov;
    out.expected_reward = (R + beta_pen) * mean_above - beta_pen * cov + gamma * (1.0 - cov);
    return out;
}

} // namespace

BeliefModel BeliefModel::uniform() { return BeliefModel{}; }

BeliefModel BeliefModel::beta_belief(double alpha, double beta) {
    if (alpha <= 0.0 || beta <= 0.0)
        throw ConfigError("beta belief parameters must be positive");
    BeliefModel m;
    m.kind = Kind::Beta;
    m.alpha = alpha;
    m.beta = beta;
    return m;
}

BeliefModel BeliefModel::empirical_belief(std::vector<double> values) {
    if (values.empty()) throw ConfigError("empirical belief list is empty");
    for (double v : values) {
        if (v < 0.0 || v > 1.0) throw ConfigError("empirical beliefs must lie in [0,1]");
    }
    BeliefModel m;
    m.kind = Kind::Empirical;
    m.empirical = std::move(values);
    return m;
}

double bayes_threshold(const RewardConfig& cfg) {
    cfg.validate();
    if (cfg.scheme == protocol::Scheme::PureEval)
        throw protocol::InvalidConfig("pure_eval has no payoff threshold");
    return (gamma_of(cfg) + cfg.penalty_incorrect) / (cfg.reward_correct + cfg.penalty_incorrect);
}

ExpectedUtilities expected_utilities(double p, const RewardConfig& cfg) {
    cfg.validate();
    return {(cfg.reward_correct + cfg.penalty_incorrect) * p - cfg.penalty_incorrect,
            gamma_of(cfg)};
}

Action optimal_action(double p, const RewardConfig& cfg) {
    return p >= bayes_threshold(cfg) ? Action::Answer : Action::Abstain;
}

std::vector<PolicyOutcome> simulate_frontier(const BeliefModel& model,
                                             const std::vector<RewardConfig>& configs,
                                             std::int64_t samples, std::uint64_t seed) {
    if (samples < 1) throw ConfigError("frontier simulation needs at least one sample");

    std::vector<PolicyOutcome> outcomes;
    outcomes.reserve(configs.size());
    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
        const RewardConfig& cfg = configs[ci];
        const double tau = bayes_threshold(cfg);
        const double gamma = gamma_of(cfg);

        rng::Engine eng(rng::derive_seed(seed, static_cast<std::uint64_t>(ci)));
        std::int64_t answered = 0, incorrect_answered = 0;
        double reward_sum = 0.0;
        for (std::int64_t s = 0; s < samples; ++s) {
            double p_true = 0.0;
            switch (model.kind) {
            case BeliefModel::Kind::Uniform: p_true = eng.uniform(); break;
            case BeliefModel::Kind::Beta: {
                // Johnk-free route: invert the Beta CDF on a uniform draw.
                const double u = std::min(std::max(eng.uniform(), 1e-12), 1.0 - 1e-12);
                p_true = riskctl::beta_inv_quantile(u, model.alpha, model.beta);
                break;
            }
            case BeliefModel::Kind::Empirical:
                p_true = model.empirical[static_cast<std::size_t>(
                    eng.bounded(model.empirical.size()))];
                break;
            }
            const double reported = std::clamp(model.report(p_true), 0.0, 1.0);
            const bool correct = eng.bernoulli(p_true);
            if (reported >= tau) {
                ++answered;
                if (!correct) ++incorrect_answered;
                reward_sum += correct ? cfg.reward_correct : -cfg.penalty_incorrect;
            } else {
                reward_sum += gamma;
            }
        }

        PolicyOutcome out;
        out.tau = tau;
        out.coverage = static_cast<double>(answered) / static_cast<double>(samples);
        if (answered > 0)
            out.far_answered =
                static_cast<double>(incorrect_answered) / static_cast<double>(answered);
        out.expected_reward = reward_sum / static_cast<double>(samples);

        if (auto exact = closed_form(model, cfg, tau)) {
            out.coverage_exact = exact->coverage;
            out.far_answered_exact = exact->far_answered;
            out.expected_reward_exact = exact->expected_reward;
        }
        outcomes.push_back(std::move(out));
    }
    return outcomes;
}

std::string frontier_csv(const std::vector<RewardConfig>& configs,
                         const std::vector<PolicyOutcome>& outcomes) {
    std::string out = "tau,gamma,beta,coverage,far_answered,expected_reward\n";
    char buf[200];
    for (std::size_t i = 0; i < outcomes.size() && i < configs.size(); ++i) {
        const auto& o = outcomes[i];
        const auto& cfg = configs[i];
        if (o.far_answered)
            std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", o.tau,
                          cfg.reward_abstain.value_or(0.0), cfg.penalty_incorrect, o.coverage,
                          *o.far_answered, o.expected_reward);
        else
            std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.6g,%.6g,,%.6g\n", o.tau,
                          cfg.reward_abstain.value_or(0.0), cfg.penalty_incorrect, o.coverage,
                          o.expected_reward);
        out += buf;
    }
    return out;
}

} // namespace selans::decision
