#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "degboot/bootstrap.hpp"
#include "degboot/derivative.hpp"
#include "degboot/error.hpp"
#include "degboot/moments.hpp"
#include "degboot/resample.hpp"
#include "degboot/rng.hpp"
#include "degboot/sphereopt.hpp"

namespace degboot {

/// Tuning constants and diagnostics attached to a test result.
struct TuningRecord {
    std::string kappa_rule;  // empty when not applicable
    double kappa = 0.0;
    std::string estimator;
    std::string scheme = "iid";
    std::optional<double> radius;
    std::optional<double> step;
    bool complement_restricted = false;
    bool optimizer_converged = true;
    std::size_t set_points = 0;
};

struct TestOutcome {
    double statistic = 0.0;
    double crit_value = 0.0;
    bool reject = false;
    double alpha = 0.05;
    int b = 0;
    TuningRecord tuning;
    std::optional<SphereVec> minimizer;
    std::vector<double> draws;  // sorted bootstrap replicates
};

inline TestOutcome decide(double statistic, BootstrapDraws draws, double alpha, TuningRecord tuning) {
    TestOutcome out;
    out.statistic = statistic;
    out.crit_value = critical_value(draws, alpha);
    out.reject = statistic > out.crit_value;
    out.alpha = alpha;
    out.b = draws.b;
    out.tuning = std::move(tuning);
    out.draws = std::move(draws.values);
    return out;
}

/// Numerical settings of the CH test that are not statistical tuning.
struct ChTestOptions {
    SphereOptions sphere;
    /// Used for the perturbed minimizations of the numerical estimator, which
    /// start near the unperturbed solution and need fewer restarts.
    SphereOptions perturbed{16, 1e-10, 500, 0};
    std::size_t set_resolution = 0;  // 0: 720 for k = 2, 4000 for k = 3, 1500 k otherwise
    std::size_t inner_starts = 3;
    unsigned workers = 1;            // threads for the bootstrap loop
};

inline std::size_t default_set_resolution(Eigen::Index k) {
    if (k == 2) return 720;
    if (k == 3) return 4000;
    return static_cast<std::size_t>(1500 * k);
}

/// One (kappa rule, estimator) pair of the CH test.
struct ChTestConfig {
    KappaRule rule;
    DerivEstimator::Kind estimator = DerivEstimator::Kind::structural_ch;
    bool restrict_to_complement = false;  // structural only

    /// Column label used in tables: "structural", "structural_restricted" or "numerical".
    [[nodiscard]] std::string label() const {
        return to_string(estimator) + (restrict_to_complement ? "_restricted" : "");
    }
};

/**
 * Common CH feature test for several tuning configurations at once.
 *
 * The statistic T min_gamma ||theta-hat(gamma)||_W^2 and every bootstrap
 * model are computed once and shared by all configurations; only the
 * derivative estimator differs. Results follow the order of `configs`.
 */
inline std::vector<TestOutcome> ch_feature_tests(const PanelData& panel, std::span<const ChTestConfig> configs, int b,
                                                 double alpha, const BootstrapScheme& scheme, const RandomStream& rng,
                                                 const ChTestOptions& opts = {},
                                                 const std::optional<Matrix>& weight = std::nullopt) {
    panel.validate();
    scheme.validate();
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    detail::require(b >= 1, "B must be at least 1");
    detail::require(!configs.empty(), "ch test: no configurations");
    if (scheme.kind == BootstrapScheme::Kind::moving_block)
        detail::require(*scheme.block_len <= static_cast<std::size_t>(panel.size()), "block length exceeds sample size");

    const QuadMomentModel model = fit_quadratic_moments(panel, weight);
    const auto t = static_cast<double>(model.sample_size());
    const SphereMinResult fit = minimize_on_sphere(model, opts.sphere);
    const double statistic = t * fit.value;
    const std::size_t resolution = opts.set_resolution ? opts.set_resolution : default_set_resolution(model.k());

    struct Prepared {
        IdentifiedSetEstimate gamma_set;
        std::optional<ChDrawContext> ctx;
        TuningRecord tuning;
    };
    std::vector<Prepared> prepared(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c) {
        const double kappa = configs[c].rule.value(t);
        Prepared& p = prepared[c];
        p.tuning.kappa_rule = configs[c].rule.name;
        p.tuning.kappa = kappa;
        p.tuning.estimator = configs[c].label();
        p.tuning.scheme = scheme.describe();
        p.tuning.optimizer_converged = fit.converged;
        DerivEstimator est;
        if (configs[c].estimator == DerivEstimator::Kind::structural_ch) {
            est = DerivEstimator::structural(kappa);
            est.restrict_to_complement = configs[c].restrict_to_complement;
            p.tuning.complement_restricted = est.restrict_to_complement;
            p.gamma_set = estimate_identified_set(model, kappa, resolution, opts.sphere);
            p.tuning.radius = est.ball_radius();
            p.tuning.set_points = p.gamma_set.points.size();
        } else if (configs[c].estimator == DerivEstimator::Kind::numerical) {
            detail::require(!configs[c].restrict_to_complement, "ch test: complement restriction needs the structural estimator");
            // the step follows the same rule as kappa
            est = DerivEstimator::numerical(kappa);
            p.tuning.step = kappa;
        } else {
            throw ValidationError("ch test: estimator must be structural or numerical");
        }
        p.ctx.emplace(model, p.gamma_set, est, fit.value, opts.perturbed, opts.inner_starts);
    }

    // replicate r of every configuration uses the same resample, drawn from rng.split(r)
    std::vector<std::vector<double>> draws(configs.size(), std::vector<double>(static_cast<std::size_t>(b)));
    parallel_for_index(static_cast<std::size_t>(b), opts.workers, [&](std::size_t r) {
        RandomStream stream = rng.split(r);
        const QuadMomentModel star = bootstrap_model(panel, scheme, stream, weight);
        for (std::size_t c = 0; c < configs.size(); ++c) draws[c][r] = prepared[c].ctx->draw(star);
    });

    std::vector<TestOutcome> out;
    out.reserve(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c) {
        TestOutcome o = decide(statistic, BootstrapDraws::from_values(std::move(draws[c]), scheme), alpha,
                               std::move(prepared[c].tuning));
        o.minimizer = fit.minimizer;
        out.push_back(std::move(o));
    }
    return out;
}

/// Common CH feature test; rejects when T phi(theta-hat) exceeds the bootstrap critical value.
inline TestOutcome ch_feature_test(const PanelData& panel, const KappaRule& kappa_rule, DerivEstimator::Kind est_kind,
                                   int b, double alpha, const BootstrapScheme& scheme, const RandomStream& rng,
                                   const ChTestOptions& opts = {}, bool restrict_to_complement = false) {
    const ChTestConfig config{kappa_rule, est_kind, restrict_to_complement};
    return ch_feature_tests(panel, std::span<const ChTestConfig>(&config, 1), b, alpha, scheme, rng, opts).front();
}

enum class SquaredMeanMethod { standard, babu, modified };

inline std::string to_string(SquaredMeanMethod m) {
    switch (m) {
        case SquaredMeanMethod::standard: return "standard";
        case SquaredMeanMethod::babu: return "babu";
        case SquaredMeanMethod::modified: return "modified";
    }
    return "unknown";
}

inline SquaredMeanMethod parse_squared_mean_method(const std::string& text) {
    if (text == "standard") return SquaredMeanMethod::standard;
    if (text == "babu") return SquaredMeanMethod::babu;
    if (text == "modified") return SquaredMeanMethod::modified;
    throw ValidationError("unknown squared-mean method '" + text + "' (expected standard, babu or modified)");
}

namespace detail {

inline double sample_mean(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

/// Mean of an iid resample of x drawn from `stream`.
inline double resampled_mean(std::span<const double> x, RandomStream& stream) {
    const auto idx = resample_indices(BootstrapScheme::iid(), x.size(), stream);
    double s = 0.0;
    for (std::size_t i : idx) s += x[i];
    return s / static_cast<double>(x.size());
}

}  // namespace detail

/**
 * Bootstrap draws for the squared mean. Replicate r resamples with
 * rng.split(r) whatever the method, so the three methods see identical
 * resamples for a given rng.
 */
inline std::vector<double> squared_mean_draws(std::span<const double> sample, SquaredMeanMethod method, int b,
                                              const RandomStream& rng) {
    detail::require(sample.size() >= 2, "squared mean: sample must have at least 2 points");
    const double xbar = detail::sample_mean(sample);
    const auto n = static_cast<long long>(sample.size());
    return run_replicates(b, rng, [&](RandomStream& stream) {
        const double xstar = detail::resampled_mean(sample, stream);
        switch (method) {
            case SquaredMeanMethod::standard:
                return standard_second_order_draw(xstar * xstar, xbar * xbar, static_cast<double>(n));
            case SquaredMeanMethod::babu: return babu_corrected_draw_squared_mean(xstar, xbar, n);
            case SquaredMeanMethod::modified: return modified_draw_squared_mean(xstar, xbar, n);
        }
        return 0.0;
    });
}

/// Test of theta^2 = null_value with statistic n (xbar^2 - null_value).
inline TestOutcome squared_mean_test(std::span<const double> sample, double null_value, SquaredMeanMethod method, int b,
                                     double alpha, const RandomStream& rng) {
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    const double xbar = detail::sample_mean(sample);
    const auto n = static_cast<double>(sample.size());
    TuningRecord tuning;
    tuning.estimator = to_string(method);
    return decide(n * (xbar * xbar - null_value),
                  BootstrapDraws::from_values(squared_mean_draws(sample, method, b, rng)), alpha, std::move(tuning));
}

/// Test of max(theta, 0)^2 = 0 with the moment-selection derivative in the bootstrap.
inline TestOutcome moment_ineq_test(std::span<const double> sample, const KappaRule& kappa_rule, int b, double alpha,
                                    const RandomStream& rng) {
    detail::require(sample.size() >= 2, "moment inequality: sample must have at least 2 points");
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    const double xbar = detail::sample_mean(sample);
    const auto n = static_cast<double>(sample.size());
    const double kappa_n = kappa_rule.value(n);
    const double root_n = std::sqrt(n);
    const double pos = std::max(xbar, 0.0);
    auto values = run_replicates(b, rng, [&](RandomStream& stream) {
        const double xstar = detail::resampled_mean(sample, stream);
        return gms_deriv_moment_ineq(xbar, kappa_n, root_n * (xstar - xbar));
    });
    TuningRecord tuning;
    tuning.kappa_rule = kappa_rule.name;
    tuning.kappa = kappa_n;
    tuning.estimator = to_string(DerivEstimator::Kind::gms_moment_ineq);
    return decide(n * pos * pos, BootstrapDraws::from_values(std::move(values)), alpha, std::move(tuning));
}

enum class Regime { first_order, second_order };

inline std::string to_string(Regime r) { return r == Regime::first_order ? "first_order" : "second_order"; }

/// r phi-hat when r phi-hat / kappa > 1, else r^2 phi-hat.
inline std::pair<double, Regime> adaptive_statistic(double phi_hat, double r_n, double kappa_n) {
    detail::require(kappa_n > 0.0, "adaptive statistic: kappa_n must be positive");
    const double first = r_n * phi_hat;
    if (first / kappa_n > 1.0) return {first, Regime::first_order};
    return {r_n * r_n * phi_hat, Regime::second_order};
}

}  // namespace degboot
