#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "selans/metrics.hpp"
#include "selans/random.hpp"

using namespace selans;
using metrics::OutcomeCounts;
using metrics::Score;
using protocol::Channel;
using protocol::RewardConfig;

namespace {

// The published PopQA run used throughout the regression checks:
// 14267 questions, 11982 answered, 5771 wrong among answered, 7824 wrong
// under forced answering.
OutcomeCounts reference_counts() {
    OutcomeCounts c;
    c.n_total = 14267;
    c.n_answered = 11982;
    c.n_incorrect_answered = 5771;
    c.n_incorrect_overall = 7824;
    c.n_abstained = c.n_total - c.n_answered;
    c.n_parse_failure = 0;
    return c;
}

} // namespace

TEST_CASE("outcome counts invariants") {
    OutcomeCounts c = reference_counts();
    CHECK_NOTHROW(c.validate());
    c.n_abstained -= 1;
    CHECK_THROWS_AS(c.validate(), metrics::MetricError);
    c = reference_counts();
    c.n_incorrect_answered = c.n_answered + 1;
    CHECK_THROWS_AS(c.validate(), metrics::MetricError);
}

TEST_CASE("far rates against the published counts") {
    const auto rates = metrics::far_rates(reference_counts());
    CHECK(rates.far_answered == doctest::Approx(0.4817).epsilon(1e-3));
    CHECK(rates.far_answered == doctest::Approx(5771.0 / 11982.0));
    CHECK(rates.far_overall == doctest::Approx(0.5484).epsilon(1e-3));

    OutcomeCounts clean = reference_counts();
    clean.n_incorrect_answered = 0;
    clean.n_incorrect_overall = 0;
    CHECK(metrics::far_rates(clean).far_answered == 0.0);

    OutcomeCounts empty;
    CHECK_THROWS_AS(metrics::far_rates(empty), metrics::EmptyDenominator);
}

TEST_CASE("coverage") {
    OutcomeCounts c = reference_counts();
    c.n_answered = 9683;
    c.n_abstained = c.n_total - c.n_answered;
    CHECK(metrics::coverage(c) == doctest::Approx(0.6787).epsilon(1e-3));

    c.n_answered = c.n_total;
    c.n_abstained = 0;
    CHECK(metrics::coverage(c) == 1.0);
    c.n_answered = 0;
    c.n_abstained = c.n_total;
    CHECK(metrics::coverage(c) == 0.0);
}

TEST_CASE("abstention-to-error ratio") {
    CHECK(metrics::aer(reference_counts()) == doctest::Approx(0.2624).epsilon(1e-3));

    OutcomeCounts c = reference_counts();
    c.n_incorrect_overall = c.n_incorrect_answered;
    CHECK(metrics::aer(c) == 0.0);
    c.n_incorrect_answered = 0;
    CHECK(metrics::aer(c) == 1.0);
    c.n_incorrect_overall = 0;
    CHECK_THROWS_AS(metrics::aer(c), metrics::EmptyDenominator);
}

TEST_CASE("single-round abstention bound") {
    CHECK(metrics::pure_eval_aer_bound(7205, 443) == doctest::Approx(0.0579).epsilon(1e-3));
    CHECK(metrics::pure_eval_aer_bound(10, 0) == 0.0);
    CHECK(metrics::pure_eval_aer_bound(0, 10) == 1.0);
    CHECK_THROWS_AS(metrics::pure_eval_aer_bound(0, 0), metrics::EmptyDenominator);
}

TEST_CASE("total reward from counts") {
    SUBCASE("forced-answer scoring reproduces -1381") {
        const double reward =
            metrics::total_reward(reference_counts(), RewardConfig::scheme_a(1.0, 1.0));
        CHECK(reward == -1381.0);
    }
    SUBCASE("abstention-credit scoring over the published counts") {
        OutcomeCounts c;
        c.n_total = 14267;
        c.n_answered = 9683;
        c.n_incorrect_answered = 3969;
        c.n_incorrect_overall = 7921;
        c.n_abstained = c.n_total - c.n_answered;
        const double reward =
            metrics::total_reward(c, RewardConfig::scheme_b(1.0, 1.0, 0.4));
        CHECK(reward == doctest::Approx(3578.6).epsilon(1e-9));
    }
    SUBCASE("zero questions") {
        CHECK(metrics::total_reward(OutcomeCounts{}, RewardConfig::scheme_a(1.0, 1.0)) == 0.0);
    }
    SUBCASE("scaling all three components by a power of two scales the total exactly") {
        OutcomeCounts c;
        c.n_total = 100;
        c.n_answered = 60;
        c.n_incorrect_answered = 20;
        c.n_incorrect_overall = 45;
        c.n_abstained = 40;
        for (double scale : {2.0, 4.0, 0.5}) {
            const double base = metrics::total_reward(c, RewardConfig::scheme_b(1.0, 1.0, 0.4));
            const double scaled = metrics::total_reward(
                c, RewardConfig::scheme_b(scale, scale, 0.4 * scale));
            CHECK(scaled == scale * base);
        }
        for (double scale : {3.0, 7.5}) {
            const double base = metrics::total_reward(c, RewardConfig::scheme_b(1.0, 1.0, 0.4));
            const double scaled = metrics::total_reward(
                c, RewardConfig::scheme_b(scale, scale, 0.4 * scale));
            CHECK(scaled == doctest::Approx(scale * base).epsilon(1e-12));
        }
    }
}

TEST_CASE("total reward from trials matches the counts route") {
    rng::Engine eng(3);
    std::vector<metrics::ScoredTrial> trials;
    OutcomeCounts c;
    for (int i = 0; i < 500; ++i) {
        metrics::ScoredTrial t;
        t.question_id = "q" + std::to_string(i);
        const double roll = eng.uniform();
        c.n_total += 1;
        if (roll < 0.6) {
            t.channel = Channel::FirstRound;
            t.correct = eng.bernoulli(0.5);
            c.n_answered += 1;
            if (!*t.correct) {
                c.n_incorrect_answered += 1;
                c.n_incorrect_overall += 1;
            }
        } else if (roll < 0.9) {
            t.channel = Channel::BestGuess;
            t.correct = eng.bernoulli(0.3);
            c.n_abstained += 1;
            if (!*t.correct) c.n_incorrect_overall += 1;
        } else {
            t.channel = Channel::None;
            c.n_abstained += 1;
            c.n_incorrect_overall += 1;
        }
        trials.push_back(t);
    }
    const auto cfg_b = RewardConfig::scheme_b(1.0, 1.0, 0.4);
    CHECK(metrics::total_reward(trials, cfg_b) ==
          doctest::Approx(metrics::total_reward(c, cfg_b)).epsilon(1e-12));
    const auto cfg_a = RewardConfig::scheme_a(1.0, 1.0);
    CHECK(metrics::total_reward(trials, cfg_a) ==
          doctest::Approx(metrics::total_reward(c, cfg_a)).epsilon(1e-12));
}

TEST_CASE("brier score") {
    CHECK(metrics::brier({{1.0, true}}) == 0.0);
    CHECK(metrics::brier({{0.5, true}, {0.5, false}}) == 0.25);
    CHECK_THROWS_AS(metrics::brier({}), metrics::EmptyInput);

    SUBCASE("matches a direct summation oracle") {
        rng::Engine eng(17);
        std::vector<Score> scores;
        for (int i = 0; i < 100; ++i) scores.push_back({eng.uniform(), eng.bernoulli(0.5)});
        double oracle = 0.0;
        for (const auto& s : scores) {
            const double y = s.correct ? 1.0 : 0.0;
            oracle += (s.confidence - y) * (s.confidence - y);
        }
        oracle /= static_cast<double>(scores.size());
        CHECK(std::fabs(metrics::brier(scores) - oracle) < 1e-12);
    }
    SUBCASE("constant base-rate predictor on balanced data is exactly p(1-p)") {
        std::vector<Score> scores;
        for (int i = 0; i < 50; ++i) scores.push_back({0.5, i % 2 == 0});
        CHECK(metrics::brier(scores) == 0.25);
    }
}

namespace {

// Independent brute-force binning: explicit interval checks per bin.
double ece_oracle(const std::vector<Score>& scores, int bins) {
    double total = 0.0;
    const double n = static_cast<double>(scores.size());
    for (int k = 0; k < bins; ++k) {
        const double lo = static_cast<double>(k) / bins;
        const double hi = static_cast<double>(k + 1) / bins;
        double conf = 0.0, acc = 0.0, m = 0.0;
        for (const auto& s : scores) {
            const bool in = k == bins - 1 ? (s.confidence >= lo && s.confidence <= hi)
                                          : (s.confidence >= lo && s.confidence < hi);
            if (!in) continue;
            m += 1.0;
            conf += s.confidence;
            acc += s.correct ? 1.0 : 0.0;
        }
        if (m > 0.0) total += (m / n) * std::fabs(acc / m - conf / m);
    }
    return total;
}

} // namespace

TEST_CASE("binned calibration error") {
    SUBCASE("single-bin example") {
        std::vector<Score> scores(20, Score{0.95, true});
        CHECK(metrics::ece(scores) == doctest::Approx(0.05).epsilon(1e-12));
    }
    SUBCASE("confidence 1.0 lands in the final closed bin") {
        CHECK_NOTHROW(metrics::ece({{1.0, true}}));
        CHECK(metrics::ece({{1.0, true}}) == 0.0);
    }
    SUBCASE("matches the brute-force oracle exactly") {
        rng::Engine eng(23);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<Score> scores;
            const int n = 200;
            for (int i = 0; i < n; ++i) {
                double conf = eng.uniform();
                if (eng.bernoulli(0.1)) conf = static_cast<double>(eng.bounded(11)) / 10.0;
                scores.push_back({conf, eng.bernoulli(conf)});
            }
            CHECK(metrics::ece(scores, 10) == ece_oracle(scores, 10));
            CHECK(metrics::ece(scores, 7) == ece_oracle(scores, 7));
        }
    }
    SUBCASE("calibrated scores trend to small values") {
        rng::Engine eng(31);
        std::vector<Score> scores;
        for (int i = 0; i < 100000; ++i) {
            const double p = eng.uniform();
            scores.push_back({p, eng.bernoulli(p)});
        }
        CHECK(metrics::ece(scores) < 0.03);
    }
    CHECK_THROWS_AS(metrics::ece({}), metrics::EmptyInput);
}

TEST_CASE("pearson correlation with Fisher interval") {
    const std::vector<double> x = {0.1, 0.4, 0.5, 0.9, 0.7};
    std::vector<double> neg;
    for (double v : x) neg.push_back(-v);

    CHECK(metrics::pearson(x, x).r == doctest::Approx(1.0));
    CHECK(metrics::pearson(x, neg).r == doctest::Approx(-1.0));
    CHECK_THROWS_AS(metrics::pearson({1, 1, 1}, {1, 2, 3}), metrics::ConstantInput);
    CHECK_THROWS_AS(metrics::pearson({1, 2}, {1, 2, 3}), metrics::LengthMismatch);

    SUBCASE("matches the covariance-definition oracle") {
        rng::Engine eng(13);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> a, b;
            const int n = 30;
            for (int i = 0; i < n; ++i) {
                const double v = eng.uniform();
                a.push_back(v);
                b.push_back(0.3 * v + 0.7 * eng.uniform());
            }
            double ma = 0, mb = 0;
            for (int i = 0; i < n; ++i) {
                ma += a[static_cast<std::size_t>(i)];
                mb += b[static_cast<std::size_t>(i)];
            }
            ma /= n;
            mb /= n;
            double cov = 0, va = 0, vb = 0;
            for (int i = 0; i < n; ++i) {
                const double da = a[static_cast<std::size_t>(i)] - ma;
                const double db = b[static_cast<std::size_t>(i)] - mb;
                cov += da * db;
                va += da * da;
                vb += db * db;
            }
            const double oracle = cov / std::sqrt(va * vb);
            const auto res = metrics::pearson(a, b);
            CHECK(std::fabs(res.r - oracle) < 1e-10);
            CHECK(res.ci95_lo <= res.r);
            CHECK(res.ci95_hi >= res.r);
        }
    }
}

TEST_CASE("wald half-width") {
    CHECK(metrics::wald_ci(5771.0 / 11982.0, 11982) == doctest::Approx(0.00895).epsilon(1e-3));
    CHECK(metrics::wald_ci(0.0, 50) == 0.0);
    CHECK(metrics::wald_ci(0.5, 100) ==
          doctest::Approx(1.959964 * std::sqrt(0.25 / 100.0)).epsilon(1e-12));
    CHECK(metrics::wald_ci(0.5, 100) == doctest::Approx(0.098).epsilon(1e-2));
    CHECK_THROWS_AS(metrics::wald_ci(0.5, 0), metrics::EmptyDenominator);
}

TEST_CASE("geometric-mean token probability") {
    const double half = std::log(0.5);
    CHECK(metrics::geo_mean_token_prob({half, half}) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(metrics::geo_mean_token_prob({0.0}) == 1.0);
    CHECK_THROWS_AS(metrics::geo_mean_token_prob({}), metrics::EmptyInput);
    CHECK_THROWS_AS(metrics::geo_mean_token_prob({0.1}), metrics::PositiveLogprob);

    SUBCASE("lies between the extreme token probabilities") {
        rng::Engine eng(29);
        for (int rep = 0; rep < 100; ++rep) {
            std::vector<double> lps;
            const std::size_t n = 1 + eng.bounded(20);
            double lo = 1.0, hi = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double p = 0.01 + 0.99 * eng.uniform();
                lps.push_back(std::log(p));
                lo = std::min(lo, p);
                hi = std::max(hi, p);
            }
            const double g = metrics::geo_mean_token_prob(lps);
            CHECK(g >= lo - 1e-12);
            CHECK(g <= hi + 1e-12);
        }
    }
}

TEST_CASE("precision/recall/F1 bridge") {
    SUBCASE("published operating point") {
        const auto prf = metrics::prf_bridge(0.410, 9683.0 / 14267.0);
        CHECK(100.0 * prf.precision == doctest::Approx(59.0).epsilon(0.002));
        CHECK(100.0 * prf.recall == doctest::Approx(40.1).epsilon(0.003));
        CHECK(100.0 * prf.f1 == doctest::Approx(47.7).epsilon(0.002));
    }
    SUBCASE("boundary cases") {
        const auto perfect = metrics::prf_bridge(0.0, 1.0);
        CHECK(perfect.precision == 1.0);
        CHECK(perfect.recall == 1.0);
        CHECK(perfect.f1 == 1.0);
        CHECK(perfect.e_surf == 0.0);

        const auto bad = metrics::prf_bridge(1.0, 0.42);
        CHECK(bad.precision == 0.0);
        CHECK(bad.recall == 0.0);
        CHECK(bad.f1 == 0.0);
        CHECK(bad.e_surf == 0.42);
    }
    SUBCASE("identity e_surf = coverage - recall") {
        rng::Engine eng(5);
        for (int i = 0; i < 200; ++i) {
            const double far = eng.uniform();
            const double cov = eng.uniform();
            const auto prf = metrics::prf_bridge(far, cov);
            CHECK(std::fabs(prf.e_surf - (cov - prf.recall)) < 1e-12);
        }
    }
}

TEST_CASE("far_overall dominates coverage * far_answered") {
    rng::Engine eng(41);
    for (int rep = 0; rep < 100; ++rep) {
        OutcomeCounts c;
        c.n_total = 200;
        c.n_answered = 1 + static_cast<std::int64_t>(eng.bounded(199));
        c.n_abstained = c.n_total - c.n_answered;
        c.n_incorrect_answered = static_cast<std::int64_t>(
            eng.bounded(static_cast<std::uint64_t>(c.n_answered + 1)));
        c.n_incorrect_overall =
            c.n_incorrect_answered + static_cast<std::int64_t>(eng.bounded(
                                         static_cast<std::uint64_t>(c.n_abstained + 1)));
        c.validate();
        const auto rates = metrics::far_rates(c);
        CHECK(rates.far_overall >= metrics::coverage(c) * rates.far_answered - 1e-12);
    }
}

TEST_CASE("compute_report covers the metric set and omits undefined fields") {
    std::vector<metrics::ScoredTrial> trials;
    for (int i = 0; i < 10; ++i) {
        metrics::ScoredTrial t;
        t.question_id = "q" + std::to_string(i);
        t.channel = Channel::FirstRound;
        t.confidence = 1.0;
        t.correct = true;
        trials.push_back(t);
    }
    OutcomeCounts c;
    c.n_total = 10;
    c.n_answered = 10;
    const auto rep = metrics::compute_report(trials, c, RewardConfig::scheme_b(1, 1, 0.4));
    REQUIRE(rep.far_answered.has_value());
    CHECK(*rep.far_answered == 0.0);
    CHECK_FALSE(rep.aer.has_value()); // no errors at all
    REQUIRE(rep.total_reward.has_value());
    CHECK(*rep.total_reward == 10.0);
    REQUIRE(rep.brier_answered.has_value());
    CHECK(*rep.brier_answered == 0.0);
    CHECK_FALSE(rep.pearson_r.has_value()); // no token confidences
}
