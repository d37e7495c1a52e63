#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "degboot/derivative.hpp"
#include "degboot/error.hpp"
#include "degboot/moments.hpp"
#include "degboot/parallel.hpp"
#include "degboot/resample.hpp"
#include "degboot/rng.hpp"
#include "degboot/sphereopt.hpp"

namespace degboot {

/// Sorted bootstrap replicates of a statistic, with the scheme that produced them.
struct BootstrapDraws {
    std::vector<double> values;
    BootstrapScheme scheme;
    int b = 0;

    static BootstrapDraws from_values(std::vector<double> values, BootstrapScheme scheme = BootstrapScheme::iid()) {
        detail::require(!values.empty(), "bootstrap draws: need at least one replicate");
        for (double v : values) detail::require(!std::isnan(v), "bootstrap draws: NaN replicate");
        std::sort(values.begin(), values.end());
        BootstrapDraws d;
        d.b = static_cast<int>(values.size());
        d.values = std::move(values);
        d.scheme = std::move(scheme);
        return d;
    }
};

/// The ceil((1 - alpha) B)-th order statistic (1-indexed).
inline double critical_value(const BootstrapDraws& draws, double alpha) {
    detail::require(alpha > 0.0 && alpha < 1.0, "critical value: alpha must lie in (0, 1)");
    detail::require(!draws.values.empty(), "critical value: no draws");
    const auto b = static_cast<double>(draws.values.size());
    // (1 - 0.05) * 200 is 190.00000000000003 in binary; the slack keeps the integer case exact
    auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * b - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, draws.values.size());
    return draws.values[rank - 1];
}

/// r^2 (phi* - phi-hat).
inline double standard_second_order_draw(double phi_star, double phi_hat, double r_sq) {
    return r_sq * (phi_star - phi_hat);
}

/// n (theta* - theta-hat)^2: the squared-mean draw with the first-order term 2 theta-hat h removed.
inline double babu_corrected_draw_squared_mean(double theta_star, double theta_hat, long long n) {
    detail::require(n >= 1, "babu draw: n must be positive");
    const double z = std::sqrt(static_cast<double>(n)) * (theta_star - theta_hat);
    return z * z;
}

/// Known derivative h -> h^2 composed with sqrt(n) (theta* - theta-hat).
inline double modified_draw_squared_mean(double theta_star, double theta_hat, long long n) {
    detail::require(n >= 1, "modified draw: n must be positive");
    return closed_form_deriv_squared_mean(std::sqrt(static_cast<double>(n)) * (theta_star - theta_hat));
}

/**
 * Data-dependent pieces of the CH modified bootstrap that do not change
 * across replicates: the fitted model, the set estimate, the inner ball
 * solver and, for the numerical estimator, the unperturbed minimum.
 */
class ChDrawContext {
  public:
    ChDrawContext(const QuadMomentModel& model, const IdentifiedSetEstimate& gamma_set, DerivEstimator est,
                  double phi_hat, SphereOptions sphere_opts = {}, std::size_t inner_starts = 3)
        : model_(&model), gamma_set_(&gamma_set), est_(est), phi_hat_(phi_hat), sphere_opts_(sphere_opts),
          inner_starts_(inner_starts) {
        est_.validate();
        detail::require(est_.kind == DerivEstimator::Kind::structural_ch || est_.kind == DerivEstimator::Kind::numerical,
                        "CH draws support the structural and numerical estimators only");
        if (est_.kind == DerivEstimator::Kind::structural_ch) solver_.emplace(make_structural_solver(model, gamma_set, est_));
    }

    [[nodiscard]] const DerivEstimator& estimator() const noexcept { return est_; }

    /// One draw: the estimator applied to the direction sqrt(T) (G* - G) vec(gamma gamma^T).
    [[nodiscard]] double draw(const QuadMomentModel& model_star) const {
        const QuadMomentModel& model = *model_;
        detail::require(model_star.m() == model.m() && model_star.k() == model.k(), "modified draw: dimension mismatch");
        detail::require(model_star.sample_size() == model.sample_size(), "modified draw: sample sizes differ");
        if (est_.kind == DerivEstimator::Kind::structural_ch) {
            const DirectionFn h = DirectionFn::bootstrap(model, model_star);
            return structural_deriv_ch(*solver_, *gamma_set_, h, inner_starts_);
        }
        return numerical_deriv_ch(model, model_star, phi_hat_, *est_.step, sphere_opts_);
    }

  private:
    const QuadMomentModel* model_;
    const IdentifiedSetEstimate* gamma_set_;
    DerivEstimator est_;
    double phi_hat_;
    SphereOptions sphere_opts_;
    std::size_t inner_starts_;
    std::optional<BallQuarticSolver> solver_;
};

/// Modified bootstrap draw for the CH functional.
inline double modified_draw_ch(const QuadMomentModel& model, const QuadMomentModel& model_star,
                               const IdentifiedSetEstimate& gamma_set, const DerivEstimator& est) {
    const double phi_hat = est.kind == DerivEstimator::Kind::numerical ? minimize_on_sphere(model).value : 0.0;
    const ChDrawContext ctx(model, gamma_set, est, phi_hat);
    return ctx.draw(model_star);
}

/**
 * Runs `b` replicates of fn(replicate_stream) where replicate r gets
 * rng.split(r); results come back in replicate order regardless of workers.
 */
template <class Fn>
std::vector<double> run_replicates(int b, const RandomStream& rng, Fn&& fn, unsigned workers = 1) {
    detail::require(b >= 1, "bootstrap: B must be at least 1");
    std::vector<double> out(static_cast<std::size_t>(b));
    parallel_for_index(out.size(), workers, [&](std::size_t r) {
        RandomStream stream = rng.split(r);
        out[r] = fn(stream);
    });
    return out;
}

}  // namespace degboot
