#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "selans/errors.hpp"
#include "selans/protocol.hpp"

namespace selans::decision {

/// Distribution of the agent's correctness belief p, plus an optional
/// monotone transform applied to the *reported* confidence only (identity
/// means calibrated; correctness always resolves on the true p).
struct BeliefModel {
    enum class Kind { Uniform, Beta, Empirical };

    Kind kind = Kind::Uniform;
    double alpha = 1.0; // Beta only
    double beta = 1.0;  // Beta only
    std::vector<double> empirical;
    std::function<double(double)> calibration; // empty => identity

    static BeliefModel uniform();
    static BeliefModel beta_belief(double alpha, double beta);
    static BeliefModel empirical_belief(std::vector<double> values);

    bool calibrated() const { return !calibration; }
    double report(double p_true) const { return calibration ? calibration(p_true) : p_true; }
};

/// One operating point on the abstention-hallucination frontier.
struct PolicyOutcome {
    double tau = 0.0;
    double coverage = 0.0;
    std::optional<double> far_answered; // absent when nothing is answered
    double expected_reward = 0.0;

    // Closed-form counterparts, present for analytic belief models under
    // identity calibration.
    std::optional<double> coverage_exact;
    std::optional<double> far_answered_exact;
    std::optional<double> expected_reward_exact;
};

/// The utility-indifference confidence threshold (gamma + beta)/(R + beta).
/// Values above 1 mean always abstain, at or below 0 always answer.
double bayes_threshold(const protocol::RewardConfig& cfg);

struct ExpectedUtilities {
    double answer;  // (R + beta) p - beta
    double abstain; // gamma
};

ExpectedUtilities expected_utilities(double p, const protocol::RewardConfig& cfg);

enum class Action { Answer, Abstain };

/// Answer iff p >= bayes_threshold(cfg); the tie goes to answering.
Action optimal_action(double p, const protocol::RewardConfig& cfg);

/// Simulates the threshold policy over a belief population for each config:
/// beliefs are drawn, the action is taken on the reported confidence, and
/// correctness resolves as Bernoulli(true p). Deterministic given the seed.
std::vector<PolicyOutcome> simulate_frontier(const BeliefModel& model,
                                             const std::vector<protocol::RewardConfig>& configs,
                                             std::int64_t samples, std::uint64_t seed);

/// CSV export mirroring the frontier axes:
/// tau, gamma, beta, coverage, far_answered, expected_reward.
std::string frontier_csv(const std::vector<protocol::RewardConfig>& configs,
                         const std::vector<PolicyOutcome>& outcomes);

} // namespace selans::decision
