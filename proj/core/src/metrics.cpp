#include "selans/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace selans::metrics {

namespace {
constexpr double kZ975 = 1.959964;
} // namespace

void OutcomeCounts::validate() const {
    auto nonneg = [](std::int64_t v) { return v >= 0; };
    if (!nonneg(n_total) || !nonneg(n_answered) || !nonneg(n_incorrect_answered) ||
        !nonneg(n_incorrect_overall) || !nonneg(n_abstained) || !nonneg(n_parse_failure))
        throw MetricError("negative outcome count");
    if (n_answered + n_abstained + n_parse_failure != n_total)
        throw MetricError("outcome counts do not sum to n_total");
    if (n_incorrect_answered > n_answered)
        throw MetricError("n_incorrect_answered exceeds n_answered");
    if (n_incorrect_answered > n_incorrect_overall || n_incorrect_overall > n_total)
        throw MetricError("n_incorrect_overall out of range");
}

FarRates far_rates(const OutcomeCounts& c) {
    if (c.n_answered <= 0) throw EmptyDenominator("n_answered");
    if (c.n_total <= 0) throw EmptyDenominator("n_total");
    return {static_cast<double>(c.n_incorrect_answered) / static_cast<double>(c.n_answered),
            static_cast<double>(c.n_incorrect_overall) / static_cast<double>(c.n_total)};
}

double coverage(const OutcomeCounts& c) {
    if (c.n_total <= 0) throw EmptyDenominator("n_total");
    return static_cast<double>(c.n_answered) / static_cast<double>(c.n_total);
}

double aer(const OutcomeCounts& c) {
    if (c.n_incorrect_overall <= 0) throw EmptyDenominator("n_incorrect_overall");
    return static_cast<double>(c.n_incorrect_overall - c.n_incorrect_answered) /
           static_cast<double>(c.n_incorrect_overall);
}

double pure_eval_aer_bound(std::int64_t n_incorrect_answered, std::int64_t n_spontaneous_idk) {
    const std::int64_t denom = n_incorrect_answered + n_spontaneous_idk;
    if (denom <= 0) throw EmptyDenominator("n_incorrect_answered + n_spontaneous_idk");
    return static_cast<double>(n_spontaneous_idk) / static_cast<double>(denom);
}

double total_reward(const OutcomeCounts& c, const protocol::RewardConfig& cfg) {
    cfg.validate();
    const double R = cfg.reward_correct;
    const double beta = cfg.penalty_incorrect;
    switch (cfg.scheme) {
    case protocol::Scheme::SchemeA:
        return static_cast<double>(c.n_total - c.n_incorrect_overall) * R -
               static_cast<double>(c.n_incorrect_overall) * beta;
    case protocol::Scheme::SchemeB: {
        const double gamma = cfg.reward_abstain.value_or(0.0);
        // Abstentions and parse failures both sit outside n_answered; the
        // abstention credit is applied to that whole remainder, and the
        // parse-failure count is reported alongside so the difference is
        // auditable.
        return static_cast<double>(c.n_answered - c.n_incorrect_answered) * R -
               static_cast<double>(c.n_incorrect_answered) * beta +
               static_cast<double>(c.n_total - c.n_answered) * gamma;
    }
    case protocol::Scheme::PureEval: break;
    }
    throw EmptyInput("total_reward is undefined for pure_eval");
}

double total_reward(const std::vector<ScoredTrial>& trials, const protocol::RewardConfig& cfg) {
    cfg.validate();
    const double R = cfg.reward_correct;
    const double beta = cfg.penalty_incorrect;
    double total = 0.0;
    if (cfg.scheme == protocol::Scheme::SchemeA) {
        for (const auto& t : trials) {
            const bool correct = t.correct.value_or(false);
            total += correct ? R : -beta;
        }
        return total;
    }
    if (cfg.scheme != protocol::Scheme::SchemeB)
        throw EmptyInput("total_reward is undefined for pure_eval");
    const double gamma = cfg.reward_abstain.value_or(0.0);
    for (const auto& t : trials) {
        if (t.channel == protocol::Channel::FirstRound)
            total += t.correct.value_or(false) ? R : -beta;
        else
            total += gamma;
    }
    return total;
}

double brier(const std::vector<Score>& scores) {
    if (scores.empty()) throw EmptyInput("brier");
    double sum = 0.0;
    for (const auto& s : scores) {
        const double y = s.correct ? 1.0 : 0.0;
        sum += (s.confidence - y) * (s.confidence - y);
    }
    return sum / static_cast<double>(scores.size());
}

double ece(const std::vector<Score>& scores, int bins) {
    if (scores.empty()) throw EmptyInput("ece");
    if (bins < 1) throw MetricError("ece needs at least one bin");

    std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
    for (int k = 0; k <= bins; ++k)
        edges[static_cast<std::size_t>(k)] = static_cast<double>(k) / static_cast<double>(bins);

    std::vector<std::int64_t> count(static_cast<std::size_t>(bins), 0);
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::int64_t> correct_sum(static_cast<std::size_t>(bins), 0);

    for (const auto& s : scores) {
        int bin = -1;
        for (int k = 0; k < bins; ++k) {
            const bool last = k == bins - 1;
            if (s.confidence >= edges[static_cast<std::size_t>(k)] &&
                (last ? s.confidence <= edges[static_cast<std::size_t>(k) + 1]
                      : s.confidence < edges[static_cast<std::size_t>(k) + 1])) {
                bin = k;
                break;
            }
        }
        if (bin < 0) throw MetricError("confidence outside [0,1]");
        count[static_cast<std::size_t>(bin)] += 1;
        conf_sum[static_cast<std::size_t>(bin)] += s.confidence;
        correct_sum[static_cast<std::size_t>(bin)] += s.correct ? 1 : 0;
    }

    const double n = static_cast<double>(scores.size());
    double total = 0.0;
    for (int k = 0; k < bins; ++k) {
        const auto idx = static_cast<std::size_t>(k);
        if (count[idx] == 0) continue;
        const double m = static_cast<double>(count[idx]);
        const double acc = static_cast<double>(correct_sum[idx]) / m;
        const double conf = conf_sum[idx] / m;
        total += (m / n) * std::fabs(acc - conf);
    }
    return total;
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw LengthMismatch();
    const std::size_t n = x.size();
    if (n < 3) throw EmptyInput("pearson needs at least 3 pairs");

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ConstantInput();

    double r = sxy / std::sqrt(sxx * syy);
    r = std::clamp(r, -1.0, 1.0);

    // Fisher z interval; degenerate |r| = 1 collapses to a point.
    if (r == 1.0 || r == -1.0) return {r, r, r};
    const double z = std::atanh(r);
    const double se = 1.0 / std::sqrt(static_cast<double>(n) - 3.0);
    return {r, std::tanh(z - kZ975 * se), std::tanh(z + kZ975 * se)};
}

double wald_ci(double p_hat, std::int64_t n, double level) {
    if (n <= 0) throw EmptyDenominator("wald n");
    if (p_hat < 0.0 || p_hat > 1.0) throw MetricError("p_hat outside [0,1]");
    // Only the 95% level is pinned; other levels would need a normal
    // quantile, which nothing downstream asks for.
    if (level != 0.95) throw MetricError("only level=0.95 is supported");
    return kZ975 * std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n));
}

double geo_mean_token_prob(const std::vector<double>& logprobs) {
    if (logprobs.empty()) throw EmptyInput("geo_mean_token_prob");
    double sum = 0.0;
    for (double lp : logprobs) {
        if (lp > 0.0) throw PositiveLogprob();
        sum += lp;
    }
    return std::exp(sum / static_cast<double>(logprobs.size()));
}

PrfBridge prf_bridge(double far_answered, double coverage) {
    if (far_answered < 0.0 || far_answered > 1.0 || coverage < 0.0 || coverage > 1.0)
        throw MetricError("prf_bridge inputs must lie in [0,1]");
    PrfBridge out;
    out.precision = 1.0 - far_answered;
    out.recall = coverage * out.precision;
    const double denom = out.precision + out.recall;
    out.f1 = denom == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / denom;
    out.e_surf = coverage * far_answered;
    return out;
}

namespace {

struct BrierWithCi {
    double mean;
    double ci95;
};

BrierWithCi brier_with_ci(const std::vector<Score>& scores) {
    const double mean = brier(scores);
    double ss = 0.0;
    for (const auto& s : scores) {
        const double term = (s.confidence - (s.correct ? 1.0 : 0.0)) *
                            (s.confidence - (s.correct ? 1.0 : 0.0));
        ss += (term - mean) * (term - mean);
    }
    const auto n = static_cast<double>(scores.size());
    const double se = n > 1.0 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    return {mean, kZ975 * se};
}

} // namespace

MetricReport compute_report(const std::vector<ScoredTrial>& trials, const OutcomeCounts& counts,
                            const protocol::RewardConfig& cfg) {
    counts.validate();
    MetricReport rep;

    if (counts.n_total > 0) {
        rep.coverage = coverage(counts);
        rep.far_overall =
            static_cast<double>(counts.n_incorrect_overall) / static_cast<double>(counts.n_total);
        rep.far_overall_ci95 = wald_ci(*rep.far_overall, counts.n_total);
    }
    if (counts.n_answered > 0) {
        rep.far_answered = static_cast<double>(counts.n_incorrect_answered) /
                           static_cast<double>(counts.n_answered);
        rep.far_answered_ci95 = wald_ci(*rep.far_answered, counts.n_answered);
    }
    if (counts.n_incorrect_overall > 0) rep.aer = aer(counts);
    if (cfg.scheme == protocol::Scheme::PureEval) {
        if (counts.n_incorrect_answered + counts.n_abstained > 0)
            rep.pure_eval_aer_bound =
                pure_eval_aer_bound(counts.n_incorrect_answered, counts.n_abstained);
    } else {
        rep.total_reward = total_reward(counts, cfg);
    }

    std::vector<Score> answered, overall;
    std::vector<double> self_conf, token_conf;
    for (const auto& t : trials) {
        if (t.channel == protocol::Channel::None || !t.confidence || !t.correct) continue;
        const Score s{*t.confidence, *t.correct};
        overall.push_back(s);
        if (t.channel == protocol::Channel::FirstRound) answered.push_back(s);
        if (t.token_conf) {
            self_conf.push_back(*t.confidence);
            token_conf.push_back(*t.token_conf);
        }
    }

    if (!answered.empty()) {
        const BrierWithCi b = brier_with_ci(answered);
        rep.brier_answered = b.mean;
        rep.brier_answered_ci95 = b.ci95;
        rep.ece_answered = ece(answered);
    }
    if (!overall.empty()) {
        const BrierWithCi b = brier_with_ci(overall);
        rep.brier_overall = b.mean;
        rep.brier_overall_ci95 = b.ci95;
        rep.ece_overall = ece(overall);
    }
    if (self_conf.size() >= 3) {
        try {
            const PearsonResult p = pearson(self_conf, token_conf);
            rep.pearson_r = p.r;
            rep.pearson_ci95_lo = p.ci95_lo;
            rep.pearson_ci95_hi = p.ci95_hi;
        } catch (const ConstantInput&) {
            // constant signals carry no correlation; leave the field absent
        }
    }
    return rep;
}

} // namespace selans::metrics
