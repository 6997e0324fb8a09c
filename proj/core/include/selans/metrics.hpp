#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selans/errors.hpp"
#include "selans/protocol.hpp"

namespace selans::metrics {

class MetricError : public DataError {
public:
    using DataError::DataError;
};

class EmptyDenominator : public MetricError {
public:
    explicit EmptyDenominator(const std::string& which)
        : MetricError("empty denominator: " + which) {}
};

class EmptyInput : public MetricError {
public:
    explicit EmptyInput(const std::string& which) : MetricError("empty input: " + which) {}
};

class ConstantInput : public MetricError {
public:
    ConstantInput() : MetricError("correlation input is constant") {}
};

class LengthMismatch : public MetricError {
public:
    LengthMismatch() : MetricError("input vectors differ in length") {}
};

class PositiveLogprob : public MetricError {
public:
    PositiveLogprob() : MetricError("log-probability above 0") {}
};

/// Closed accounting over one run:
/// n_answered + n_abstained + n_parse_failure = n_total.
struct OutcomeCounts {
    std::int64_t n_total = 0;
    std::int64_t n_answered = 0;
    std::int64_t n_incorrect_answered = 0;
    std::int64_t n_incorrect_overall = 0;
    std::int64_t n_abstained = 0;
    std::int64_t n_parse_failure = 0;

    void validate() const; // throws MetricError when the identity is broken
};

/// One scored interaction. channel None (abstention without a best guess, or
/// a parse failure) counts as incorrect in overall metrics and is excluded
/// from answered-only metrics.
struct ScoredTrial {
    std::string question_id;
    protocol::Channel channel = protocol::Channel::None;
    std::optional<double> confidence;
    std::optional<bool> correct;
    std::optional<double> token_conf; // geometric-mean token probability
};

struct FarRates {
    double far_answered;
    double far_overall;
};

FarRates far_rates(const OutcomeCounts& c);
double coverage(const OutcomeCounts& c);
double aer(const OutcomeCounts& c);

/// Conservative upper bound on the abstention-to-error ratio for single-round
/// runs: spontaneous "I don't know" responses over spontaneous refusals plus
/// one-round incorrect answers.
double pure_eval_aer_bound(std::int64_t n_incorrect_answered, std::int64_t n_spontaneous_idk);

/// Announced-payoff total over a run.
/// Scheme B: +R / -beta on first-round answers, +gamma for every first-round
/// abstention regardless of the best guess. Scheme A: forced-answer scoring,
/// +R when the evaluated answer is correct and -beta otherwise, over all
/// questions.
double total_reward(const OutcomeCounts& c, const protocol::RewardConfig& cfg);
double total_reward(const std::vector<ScoredTrial>& trials, const protocol::RewardConfig& cfg);

struct Score {
    double confidence; // in [0,1]
    bool correct;
};

double brier(const std::vector<Score>& scores);

/// Binned expected calibration error with K equal-width bins, final bin
/// right-closed. Bin membership uses the exact bin edges k/K so boundary
/// confidences land deterministically.
double ece(const std::vector<Score>& scores, int bins = 10);

struct PearsonResult {
    double r;
    double ci95_lo;
    double ci95_hi;
};

/// Sample Pearson correlation with a Fisher-z 95% interval.
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Wald half-width z_{0.975} * sqrt(p(1-p)/n).
double wald_ci(double p_hat, std::int64_t n, double level = 0.95);

/// exp(mean log p); in (0,1] for valid inputs.
double geo_mean_token_prob(const std::vector<double>& logprobs);

struct PrfBridge {
    double precision;
    double recall;
    double f1;
    double e_surf; // surfaced-answer error rate over all questions
};

/// Precision/recall/F1 view of a selective-answering operating point.
PrfBridge prf_bridge(double far_answered, double coverage);

/// Flat per-run metric set. Fields are absent when their denominator is
/// empty (e.g. AER with no overall errors) rather than defaulted.
struct MetricReport {
    std::optional<double> far_answered, far_answered_ci95;
    std::optional<double> far_overall, far_overall_ci95;
    std::optional<double> coverage;
    std::optional<double> aer;
    std::optional<double> pure_eval_aer_bound; // pure-eval runs only
    std::optional<double> total_reward;
    std::optional<double> brier_answered, brier_answered_ci95;
    std::optional<double> brier_overall, brier_overall_ci95;
    std::optional<double> ece_answered, ece_overall;
    std::optional<double> pearson_r, pearson_ci95_lo, pearson_ci95_hi;
};

/// Answered-only metrics are computed over first-round answers; overall
/// metrics over all evaluated answers (first round plus best guesses).
/// Pearson correlates stated confidence with token confidence where both
/// exist.
MetricReport compute_report(const std::vector<ScoredTrial>& trials, const OutcomeCounts& counts,
                            const protocol::RewardConfig& cfg);

} // namespace selans::metrics
