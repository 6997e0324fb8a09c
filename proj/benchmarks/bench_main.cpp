#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "selans/dataset.hpp"
#include "selans/metrics.hpp"
#include "selans/protocol.hpp"
#include "selans/random.hpp"
#include "selans/riskctl.hpp"

namespace {

using namespace selans;

std::vector<riskctl::CalibrationPoint> make_points(std::size_t n) {
    rng::Engine eng(1);
    std::vector<riskctl::CalibrationPoint> points;
    points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = eng.uniform();
        points.push_back({u, eng.bernoulli(0.6 * u)});
    }
    return points;
}

void BM_NormalizeAnswer(benchmark::State& state) {
    const std::string text = "  The Quick, Brown — Fox; (jumps)  over the LAZY dog!  ";
    for (auto _ : state) benchmark::DoNotOptimize(dataset::normalize_answer(text));
}
BENCHMARK(BM_NormalizeAnswer);

void BM_MatchAnswer(benchmark::State& state) {
    const std::vector<std::string> refs = {"Dublin, Ireland", "Dublin"};
    for (auto _ : state)
        benchmark::DoNotOptimize(dataset::match_answer("the city of Dublin", refs));
}
BENCHMARK(BM_MatchAnswer);

void BM_RenderPrompt(benchmark::State& state) {
    dataset::QuestionRecord q;
    q.id = "bench";
    q.question = "What is the capital of France?";
    q.references = {"Paris"};
    const auto cfg = protocol::RewardConfig::scheme_b(1.0, 1.0, 0.4, true);
    for (auto _ : state) benchmark::DoNotOptimize(protocol::render_prompt(q, cfg));
}
BENCHMARK(BM_RenderPrompt);

void BM_ParseResponse(benchmark::State& state) {
    const std::string raw =
        "Answer: I don't know\nConfidence:\nBest Guess: Paris\nBest Guess Confidence: 0.3127";
    for (auto _ : state) benchmark::DoNotOptimize(protocol::parse_response(raw));
}
BENCHMARK(BM_ParseResponse);

void BM_Ece(benchmark::State& state) {
    rng::Engine eng(2);
    std::vector<metrics::Score> scores;
    for (std::int64_t i = 0; i < state.range(0); ++i) {
        const double p = eng.uniform();
        scores.push_back({p, eng.bernoulli(p)});
    }
    for (auto _ : state) benchmark::DoNotOptimize(metrics::ece(scores));
}
BENCHMARK(BM_Ece)->Arg(1000)->Arg(14267);

void BM_BetaInvQuantile(benchmark::State& state) {
    for (auto _ : state)
        benchmark::DoNotOptimize(riskctl::beta_inv_quantile(0.95, 21.0, 20.0));
}
BENCHMARK(BM_BetaInvQuantile);

void BM_SelectBonferroni(benchmark::State& state) {
    const auto points = make_points(static_cast<std::size_t>(state.range(0)));
    const auto grid = riskctl::ThresholdGrid::centesimal();
    for (auto _ : state)
        benchmark::DoNotOptimize(riskctl::select_bonferroni(points, grid, 0.3, 0.05));
}
BENCHMARK(BM_SelectBonferroni)->Arg(2854)->Arg(14267);

void BM_SelectMultistart(benchmark::State& state) {
    const auto points = make_points(static_cast<std::size_t>(state.range(0)));
    const auto grid = riskctl::ThresholdGrid::centesimal();
    const auto starts = riskctl::default_starts(grid.size());
    for (auto _ : state)
        benchmark::DoNotOptimize(riskctl::select_multistart(points, grid, 0.3, 0.05, starts));
}
BENCHMARK(BM_SelectMultistart)->Arg(2854)->Arg(14267);

} // namespace

BENCHMARK_MAIN();
