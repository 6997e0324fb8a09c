#include "selans/riskctl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "selans/random.hpp"

namespace selans::riskctl {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kQuantileTol = 1e-10;
constexpr int kQuantileMaxIter = 200;

// Lentz continued fraction for the incomplete beta, Numerical Recipes style.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    const double eps = std::numeric_limits<double>::epsilon();
    const double fpmin = std::numeric_limits<double>::min() / eps;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) <= eps) return h;
    }
    throw NonConvergence(kMaxIter);
}

std::vector<CalibrationPoint> sorted_by_u(std::vector<CalibrationPoint> points) {
    std::sort(points.begin(), points.end(),
              [](const CalibrationPoint& a, const CalibrationPoint& b) { return a.u < b.u; });
    return points;
}

// Prefix counts over a u-sorted copy: one pass per selection run instead of a
// rescan per grid point.
class PrefixCounts {
public:
    explicit PrefixCounts(const std::vector<CalibrationPoint>& points)
        : sorted_(sorted_by_u(points)) {
        error_prefix_.reserve(sorted_.size() + 1);
        error_prefix_.push_back(0);
        for (const auto& p : sorted_)
            error_prefix_.push_back(error_prefix_.back() + (p.error ? 1 : 0));
    }

    AcceptCounts at(double u) const {
        auto it = std::upper_bound(
            sorted_.begin(), sorted_.end(), u,
            [](double value, const CalibrationPoint& p) { return value < p.u; });
        const auto n = static_cast<std::size_t>(it - sorted_.begin());
        return {static_cast<std::int64_t>(n), error_prefix_[n]};
    }

private:
    std::vector<CalibrationPoint> sorted_;
    std::vector<std::int64_t> error_prefix_;
};

} // namespace

ThresholdGrid::ThresholdGrid(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw RiskControlError("threshold grid is empty");
    double prev = -1.0;
    for (double v : values_) {
        if (v < 0.0 || v > 1.0) throw RiskControlError("grid value outside [0,1]");
        if (v <= prev) throw RiskControlError("grid values must be strictly increasing");
        prev = v;
    }
}

ThresholdGrid ThresholdGrid::centesimal() { return even(100); }

ThresholdGrid ThresholdGrid::even(std::int64_t denominator) {
    if (denominator < 1) throw RiskControlError("grid denominator must be positive");
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(denominator) + 1);
    for (std::int64_t i = 0; i <= denominator; ++i)
        values.push_back(static_cast<double>(i) / static_cast<double>(denominator));
    return ThresholdGrid(std::move(values));
}

ThresholdGrid ThresholdGrid::from_values(std::vector<double> values) {
    return ThresholdGrid(std::move(values));
}

AcceptCounts accept_counts(const std::vector<CalibrationPoint>& points, double u) {
    AcceptCounts out;
    for (const auto& p : points) {
        if (p.u <= u) {
            out.n += 1;
            if (p.error) out.k += 1;
        }
    }
    return out;
}

double cfar(const std::vector<CalibrationPoint>& points, double u) {
    const AcceptCounts c = accept_counts(points, u);
    if (c.n == 0) return 0.0;
    return static_cast<double>(c.k) / static_cast<double>(c.n);
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) throw RiskControlError("beta parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log1p(-x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double beta_inv_quantile(double q, double a, double b) {
    if (!(q > 0.0 && q < 1.0)) throw RiskControlError("quantile level must lie in (0,1)");
    if (a <= 0.0 || b <= 0.0) throw RiskControlError("beta parameters must be positive");

    // I_x is continuous and strictly increasing on [0,1], so plain bisection
    // is a guaranteed bracket; 200 halvings go far below the 1e-10 target.
    double lo = 0.0, hi = 1.0;
    double mid = 0.5;
    for (int iter = 0; iter < kQuantileMaxIter; ++iter) {
        mid = 0.5 * (lo + hi);
        const double val = regularized_incomplete_beta(a, b, mid);
        if (val < q)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= kQuantileTol * 0.01) return 0.5 * (lo + hi);
    }
    if (hi - lo > kQuantileTol) throw NonConvergence(kQuantileMaxIter);
    return mid;
}

double cp_ucb(std::int64_t k, std::int64_t n, double alpha) {
    if (k < 0 || n < 0 || k > n) throw RiskControlError("cp_ucb requires 0 <= k <= n");
    if (!(alpha > 0.0 && alpha < 1.0)) throw RiskControlError("alpha must lie in (0,1)");
    if (n == 0 || k == n) return 1.0;
    return beta_inv_quantile(1.0 - alpha, static_cast<double>(k) + 1.0,
                             static_cast<double>(n - k));
}

double binom_pvalue_le(std::int64_t k, std::int64_t n, double r) {
    if (k < 0 || n < 0 || k > n) throw RiskControlError("binom_pvalue_le requires 0 <= k <= n");
    if (r < 0.0 || r > 1.0) throw RiskControlError("r must lie in [0,1]");
    if (n == 0 || k == n) return 1.0;
    if (r <= 0.0) return 1.0; // B = 0 almost surely, so B <= k always
    if (r >= 1.0) return 0.0; // B = n almost surely and k < n here
    // Pr(B <= k) = I_{1-r}(n-k, k+1).
    return regularized_incomplete_beta(static_cast<double>(n - k), static_cast<double>(k) + 1.0,
                                       1.0 - r);
}

CertifiedThreshold select_bonferroni(const std::vector<CalibrationPoint>& points,
                                     const ThresholdGrid& grid, double risk_target,
                                     double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw RiskControlError("delta must lie in (0,1)");
    if (risk_target < 0.0 || risk_target > 1.0)
        throw RiskControlError("risk target must lie in [0,1]");

    const PrefixCounts counts(points);
    const double alpha = delta / static_cast<double>(grid.size());

    CertifiedThreshold result;
    result.risk_target = risk_target;
    result.delta = delta;
    result.method = SelectionMethod::Bonferroni;
    result.audit.reserve(grid.size());

    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double u = grid.value(i);
        const AcceptCounts c = counts.at(u);
        GridPointAudit entry;
        entry.u = u;
        entry.n = c.n;
        entry.k = c.k;
        entry.ucb = cp_ucb(c.k, c.n, alpha);
        entry.certified = *entry.ucb <= risk_target;
        if (entry.certified) result.u_hat = u; // grid is increasing, so the last stands
        result.audit.push_back(entry);
    }
    return result;
}

std::vector<std::size_t> default_starts(std::size_t grid_size, std::size_t count) {
    if (grid_size == 0) throw RiskControlError("grid is empty");
    count = std::min(std::max<std::size_t>(count, 1), grid_size);
    std::vector<std::size_t> starts;
    starts.reserve(count);
    for (std::size_t l = 0; l < count; ++l) {
        const std::size_t idx = l * grid_size / count;
        if (starts.empty() || idx > starts.back()) starts.push_back(idx);
    }
    return starts;
}

CertifiedThreshold select_multistart(const std::vector<CalibrationPoint>& points,
                                     const ThresholdGrid& grid, double risk_target,
                                     double delta, const std::vector<std::size_t>& starts) {
    if (!(delta > 0.0 && delta < 1.0)) throw RiskControlError("delta must lie in (0,1)");
    if (risk_target < 0.0 || risk_target > 1.0)
        throw RiskControlError("risk target must lie in [0,1]");
    if (starts.empty()) throw RiskControlError("multistart needs at least one start index");
    for (std::size_t i = 0; i < starts.size(); ++i) {
        if (starts[i] >= grid.size()) throw RiskControlError("start index outside grid");
        if (i > 0 && starts[i] <= starts[i - 1])
            throw RiskControlError("start indices must be strictly increasing");
    }

    const PrefixCounts counts(points);
    const double level = delta / static_cast<double>(starts.size());

    CertifiedThreshold result;
    result.risk_target = risk_target;
    result.delta = delta;
    result.method = SelectionMethod::Multistart;
    result.starts = starts.size();

    result.audit.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const AcceptCounts c = counts.at(grid.value(i));
        result.audit[i].u = grid.value(i);
        result.audit[i].n = c.n;
        result.audit[i].k = c.k;
        result.audit[i].visited = false;
    }

    std::vector<bool> certified(grid.size(), false);
    for (std::size_t start : starts) {
        PathAudit path;
        path.start_index = start;
        for (std::size_t j = start; j < grid.size(); ++j) {
            GridPointAudit& entry = result.audit[j];
            entry.visited = true;
            if (!entry.p_value)
                entry.p_value = binom_pvalue_le(entry.k, entry.n, risk_target);
            if (*entry.p_value <= level) {
                entry.certified = true;
                certified[j] = true;
                path.certified_indices.push_back(j);
            } else {
                path.stop_index = j;
                break;
            }
        }
        result.paths.push_back(std::move(path));
    }

    for (std::size_t i = grid.size(); i-- > 0;) {
        if (certified[i]) {
            result.u_hat = grid.value(i);
            break;
        }
    }
    return result;
}

SplitResult split_calibration(const std::vector<CalibrationPoint>& points, double ratio,
                              std::uint64_t seed) {
    if (points.empty()) throw RiskControlError("cannot split an empty point set");
    if (!(ratio > 0.0 && ratio < 1.0)) throw RiskControlError("split ratio must lie in (0,1)");

    std::vector<CalibrationPoint> shuffled = points;
    rng::Engine eng(seed);
    rng::shuffle(shuffled, eng);

    const auto n_cal = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(points.size())));
    SplitResult out;
    out.calibration.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_cal));
    out.validation.assign(shuffled.begin() + static_cast<long>(n_cal), shuffled.end());
    return out;
}

ValidationResult validate_threshold(const std::vector<CalibrationPoint>& validation,
                                    const CertifiedThreshold& threshold) {
    ValidationResult out;
    if (threshold.reject_all() || validation.empty()) return out;

    const AcceptCounts c = accept_counts(validation, *threshold.u_hat);
    const auto n_val = static_cast<double>(validation.size());
    out.acceptance_rate = static_cast<double>(c.n) / n_val;
    out.acceptance_ci95 =
        1.959964 * std::sqrt(out.acceptance_rate * (1.0 - out.acceptance_rate) / n_val);
    if (c.n > 0) {
        const double rate = static_cast<double>(c.k) / static_cast<double>(c.n);
        out.cfar = rate;
        out.cfar_ci95 = 1.959964 * std::sqrt(rate * (1.0 - rate) / static_cast<double>(c.n));
    }
    return out;
}

RiskGenerator::RiskGenerator(Kind kind, double level) : kind_(kind), level_(level) {
    if (level < 0.0 || level > 1.0) throw RiskControlError("risk level must lie in [0,1]");
}

CalibrationPoint RiskGenerator::sample(std::uint64_t& state) const {
    const double u =
        static_cast<double>(rng::splitmix64(state) >> 11) * 0x1.0p-53;
    double e_prob = 0.0;
    switch (kind_) {
    case Kind::Monotone: e_prob = u; break;
    case Kind::Flat: e_prob = level_; break;
    case Kind::NonMonotone: e_prob = 0.5 - 0.3 * std::cos(2.0 * kPi * u); break;
    }
    const double draw =
        static_cast<double>(rng::splitmix64(state) >> 11) * 0x1.0p-53;
    return {u, draw < e_prob};
}

double RiskGenerator::true_risk(double u) const {
    if (u <= 0.0) return 0.0; // Pr(U <= 0) = 0, convention R = 0
    switch (kind_) {
    case Kind::Monotone: return u / 2.0;
    case Kind::Flat: return level_;
    case Kind::NonMonotone:
        return 0.5 - 0.3 * std::sin(2.0 * kPi * u) / (2.0 * kPi * u);
    }
    return 0.0;
}

ValidityResult monte_carlo_validity(const RiskGenerator& generator, SelectionMethod method,
                                    double risk_target, double delta, std::int64_t trials,
                                    std::uint64_t seed, std::int64_t calibration_size) {
    if (trials <= 0) throw RiskControlError("trial count must be positive");
    if (calibration_size <= 0) throw RiskControlError("calibration size must be positive");

    const ThresholdGrid grid = ThresholdGrid::centesimal();
    const std::vector<std::size_t> starts = default_starts(grid.size());

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const auto n_workers =
        static_cast<std::size_t>(std::min<std::int64_t>(trials, static_cast<std::int64_t>(hw)));

    std::vector<std::int64_t> violations(n_workers, 0);
    std::vector<std::int64_t> selections(n_workers, 0);

    auto run_range = [&](std::size_t worker, std::int64_t begin, std::int64_t end) {
        for (std::int64_t t = begin; t < end; ++t) {
            std::uint64_t state =
                rng::derive_seed(seed, static_cast<std::uint64_t>(t));
            std::vector<CalibrationPoint> points;
            points.reserve(static_cast<std::size_t>(calibration_size));
            for (std::int64_t i = 0; i < calibration_size; ++i)
                points.push_back(generator.sample(state));

            const CertifiedThreshold sel =
                method == SelectionMethod::Bonferroni
                    ? select_bonferroni(points, grid, risk_target, delta)
                    : select_multistart(points, grid, risk_target, delta, starts);
            if (!sel.reject_all()) {
                selections[worker] += 1;
                if (generator.true_risk(*sel.u_hat) > risk_target) violations[worker] += 1;
            }
        }
    };

    std::vector<std::thread> pool;
    const std::int64_t chunk = (trials + static_cast<std::int64_t>(n_workers) - 1) /
                               static_cast<std::int64_t>(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
        const std::int64_t begin = static_cast<std::int64_t>(w) * chunk;
        const std::int64_t end = std::min(trials, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back(run_range, w, begin, end);
    }
    for (auto& th : pool) th.join();

    ValidityResult out;
    out.trials = trials;
    for (std::size_t w = 0; w < n_workers; ++w) {
        out.violations += violations[w];
        out.selections += selections[w];
    }
    out.violation_rate = static_cast<double>(out.violations) / static_cast<double>(trials);
    return out;
}

std::string cfar_curve_csv(const std::vector<CalibrationPoint>& points,
                           const ThresholdGrid& grid, double delta) {
    const PrefixCounts counts(points);
    const double alpha = delta / static_cast<double>(grid.size());
    std::string out = "u,n,k,cfar,ucb\n";
    char buf[160];
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double u = grid.value(i);
        const AcceptCounts c = counts.at(u);
        const double rate =
            c.n == 0 ? 0.0 : static_cast<double>(c.k) / static_cast<double>(c.n);
        std::snprintf(buf, sizeof buf, "%.6g,%lld,%lld,%.10g,%.10g\n", u,
                      static_cast<long long>(c.n), static_cast<long long>(c.k), rate,
                      cp_ucb(c.k, c.n, alpha));
        out += buf;
    }
    return out;
}

} // namespace selans::riskctl
