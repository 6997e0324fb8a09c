#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "selans/errors.hpp"

namespace selans::riskctl {

class RiskControlError : public DataError {
public:
    using DataError::DataError;
};

class NonConvergence : public RiskControlError {
public:
    explicit NonConvergence(int iterations)
        : RiskControlError("quantile search did not converge after " +
                           std::to_string(iterations) + " iterations") {}
};

/// One calibration observation: reported uncertainty u (1 - confidence) and
/// whether the final answer was wrong.
struct CalibrationPoint {
    double u = 0.0;
    bool error = false;
};

/// A prespecified, strictly increasing set of uncertainty thresholds in
/// [0,1]. Values are stored as scaled integers so decimal grids stay exact
/// and acceptance checks never hinge on float equality.
class ThresholdGrid {
public:
    /// {0, 0.01, ..., 1.00} — the default 101-point grid.
    static ThresholdGrid centesimal();

    /// Evenly spaced decimals with the given step denominator: values
    /// i/denominator for i in 0..denominator.
    static ThresholdGrid even(std::int64_t denominator);

    /// Arbitrary strictly increasing values in [0,1].
    static ThresholdGrid from_values(std::vector<double> values);

    std::size_t size() const { return values_.size(); }
    double value(std::size_t i) const { return values_[i]; }
    const std::vector<double>& values() const { return values_; }

private:
    explicit ThresholdGrid(std::vector<double> values);
    std::vector<double> values_;
};

struct AcceptCounts {
    std::int64_t n = 0; // points with u_i <= u
    std::int64_t k = 0; // of those, errors
};

AcceptCounts accept_counts(const std::vector<CalibrationPoint>& points, double u);

/// Empirical cumulative false-answer rate at cutoff u; 0 when nothing is
/// accepted. At u = 1 this equals the overall forced-answer FAR.
double cfar(const std::vector<CalibrationPoint>& points, double u);

/// Regularized incomplete beta I_x(a,b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

/// q-quantile of Beta(a,b): the x with I_x(a,b) = q, found by bracketed
/// bisection to absolute tolerance 1e-10 (iteration cap 200).
double beta_inv_quantile(double q, double a, double b);

/// One-sided Clopper-Pearson upper confidence bound on a binomial proportion
/// from k errors in n trials; 1 when n = 0 or k = n.
double cp_ucb(std::int64_t k, std::int64_t n, double alpha);

/// Exact one-sided binomial p-value Pr(B <= k) for B ~ Binomial(n, r);
/// 1 when n = 0. Small values are evidence the true rate is below r.
double binom_pvalue_le(std::int64_t k, std::int64_t n, double r);

enum class SelectionMethod { Bonferroni, Multistart };

struct GridPointAudit {
    double u = 0.0;
    std::int64_t n = 0;
    std::int64_t k = 0;
    std::optional<double> ucb;     // Bonferroni bound (per-point alpha)
    std::optional<double> p_value; // multistart path test
    bool certified = false;
    bool visited = true; // multistart paths skip unvisited grid points
};

struct PathAudit {
    std::size_t start_index = 0;
    std::optional<std::size_t> stop_index; // first non-rejection; absent if the path ran out
    std::vector<std::size_t> certified_indices;
};

/// Output of a selection run. Reject-all is the explicit absence of u_hat,
/// never a sentinel value.
struct CertifiedThreshold {
    std::optional<double> u_hat;
    double risk_target = 0.0;
    double delta = 0.0;
    SelectionMethod method = SelectionMethod::Bonferroni;
    std::size_t starts = 0; // L, multistart only
    std::vector<GridPointAudit> audit;
    std::vector<PathAudit> paths; // multistart only

    bool reject_all() const { return !u_hat.has_value(); }
};

/// Simultaneous CP-UCB selection: per-point level delta/M over the whole
/// grid, then the most permissive threshold whose bound clears the target.
CertifiedThreshold select_bonferroni(const std::vector<CalibrationPoint>& points,
                                     const ThresholdGrid& grid, double risk_target,
                                     double delta);

/// Evenly spaced start indices for the multistart scan (default L = 10).
std::vector<std::size_t> default_starts(std::size_t grid_size, std::size_t count = 10);

/// Multistart fixed-sequence selection: from each prespecified start index,
/// scan towards larger thresholds at per-path level delta/L, stopping at the
/// first non-rejection; the answer is the largest threshold certified on any
/// path.
CertifiedThreshold select_multistart(const std::vector<CalibrationPoint>& points,
                                     const ThresholdGrid& grid, double risk_target,
                                     double delta, const std::vector<std::size_t>& starts);

struct SplitResult {
    std::vector<CalibrationPoint> calibration;
    std::vector<CalibrationPoint> validation;
};

/// Seeded uniform shuffle; the first ceil(ratio * N) points calibrate.
SplitResult split_calibration(const std::vector<CalibrationPoint>& points, double ratio,
                              std::uint64_t seed);

struct ValidationResult {
    double acceptance_rate = 0.0;
    double acceptance_ci95 = 0.0;
    std::optional<double> cfar;
    std::optional<double> cfar_ci95;
};

/// Holdout check of a selected threshold: acceptance rate and the error rate
/// among accepted answers, with Wald intervals.
ValidationResult validate_threshold(const std::vector<CalibrationPoint>& validation,
                                    const CertifiedThreshold& threshold);

/// Synthetic (U, E) populations with analytically known conditional risk
/// R(u) = Pr(E = 1 | U <= u), for checking the selection guarantees.
/// U is uniform on [0,1]; the per-point error probability e(u) is:
///   Monotone:    e(u) = u                 -> R(u) = u/2
///   Flat:        e(u) = level             -> R(u) = level
///   NonMonotone: e(u) = 0.5 - 0.3cos(2piu) -> R(u) = 0.5 - 0.3 sin(2piu)/(2piu)
class RiskGenerator {
public:
    enum class Kind { Monotone, Flat, NonMonotone };

    explicit RiskGenerator(Kind kind, double level = 0.3);

    CalibrationPoint sample(std::uint64_t& state) const; // splitmix64 state
    double true_risk(double u) const;
    Kind kind() const { return kind_; }

private:
    Kind kind_;
    double level_;
};

struct ValidityResult {
    std::int64_t trials = 0;
    std::int64_t violations = 0;
    std::int64_t selections = 0; // trials where a threshold was selected
    double violation_rate = 0.0;
};

/// Monte Carlo check of the finite-sample guarantee: repeatedly draw a
/// calibration set, select a threshold, and count a violation whenever a
/// threshold is selected whose true conditional risk exceeds the target.
/// Trials run in parallel on per-trial seeds derived from the master seed.
ValidityResult monte_carlo_validity(const RiskGenerator& generator, SelectionMethod method,
                                    double risk_target, double delta, std::int64_t trials,
                                    std::uint64_t seed, std::int64_t calibration_size = 500);

/// CSV export of the CFAR curve over a grid: u, n, k, cfar, ucb per line.
std::string cfar_curve_csv(const std::vector<CalibrationPoint>& points,
                           const ThresholdGrid& grid, double delta);

} // namespace selans::riskctl
