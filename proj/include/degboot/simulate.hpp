#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "degboot/error.hpp"
#include "degboot/rng.hpp"

namespace degboot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Gaussian GARCH(1,1) parameters: sigma2_t = omega + alpha f_t^2 + beta sigma2_{t-1}.
struct GarchParams {
    double omega = 0.0;
    double alpha = 0.0;
    double beta = 0.0;

    void validate() const {
        detail::require(omega > 0.0, "garch: omega must be positive");
        detail::require(alpha >= 0.0 && beta >= 0.0, "garch: alpha and beta must be nonnegative");
        detail::require(alpha + beta < 1.0, "garch: alpha + beta must be < 1 (covariance stationarity)");
    }

    [[nodiscard]] double unconditional_variance() const { return omega / (1.0 - alpha - beta); }
};

/// Factor model Y_t = loadings * F_t + U_t with independent GARCH factors.
struct DesignSpec {
    std::string name;
    Matrix loadings;  // k x p
    std::vector<GarchParams> garch;
    double idio_var = 0.5;

    [[nodiscard]] Eigen::Index k() const { return loadings.rows(); }
    [[nodiscard]] Eigen::Index p() const { return loadings.cols(); }

    void validate() const {
        detail::require(loadings.rows() >= 1 && loadings.cols() >= 1, "design: loadings must be nonempty");
        detail::require(static_cast<Eigen::Index>(garch.size()) == loadings.cols(),
                        "design: number of GARCH specs must equal the number of factors");
        detail::require(loadings.cols() <= loadings.rows(), "design: more factors than assets");
        detail::require(loadings.allFinite(), "design: loadings must be finite");
        Eigen::ColPivHouseholderQR<Matrix> qr(loadings);
        qr.setThreshold(1e-12);
        detail::require(qr.rank() == loadings.cols(), "design: loadings must have full column rank");
        detail::require(idio_var > 0.0, "design: idiosyncratic variance must be positive");
        for (const auto& g : garch) g.validate();
    }
};

/// Aligned rows: y.row(t) holds Y_{t+1}, z.row(t) holds the instruments Z_t.
struct PanelData {
    Matrix y;  // T x k
    Matrix z;  // T x m

    [[nodiscard]] Eigen::Index size() const { return y.rows(); }
    [[nodiscard]] Eigen::Index k() const { return y.cols(); }
    [[nodiscard]] Eigen::Index m() const { return z.cols(); }

    void validate() const {
        detail::require(y.rows() == z.rows(), "panel: y and z must have the same number of rows");
        detail::require(y.rows() >= 2, "panel: need at least two observations");
        detail::require(y.cols() >= 1 && z.cols() >= 1, "panel: need at least one outcome and one instrument");
        detail::require(y.allFinite() && z.allFinite(), "panel: non-finite entries");
    }
};

/// Burn-in used by the factor-model simulator.
inline constexpr int kPanelBurnIn = 100;

/**
 * Simulate a GARCH(1,1) path of `length` values after discarding `burn_in`.
 * The conditional variance starts at the unconditional variance.
 */
inline std::vector<double> simulate_garch_path(const GarchParams& params, std::size_t length, std::size_t burn_in,
                                               RandomStream& rng) {
    params.validate();
    detail::require(length >= 1, "garch: length must be at least 1");
    std::vector<double> out;
    out.reserve(length);
    double sigma2 = params.unconditional_variance();
    const std::size_t total = length + burn_in;
    for (std::size_t t = 0; t < total; ++t) {
        const double f = std::sqrt(sigma2) * rng.normal();
        sigma2 = params.omega + params.alpha * f * f + params.beta * sigma2;
        if (t >= burn_in) out.push_back(f);
    }
    return out;
}

/**
 * Simulate the CH factor-model panel.
 *
 * Draws horizon + 101 observations, drops the first 100, and pairs the
 * instruments Z_t = (Y_{1,t}^2, ..., Y_{k,t}^2) with Y_{t+1}. Factor j uses
 * substream j, the idiosyncratic shocks use substream p.
 */
inline PanelData simulate_ch_panel(const DesignSpec& design, Eigen::Index horizon, const RandomStream& rng) {
    design.validate();
    detail::require(horizon >= 2, "panel: horizon must be at least 2");
    const Eigen::Index k = design.k();
    const Eigen::Index p = design.p();
    const Eigen::Index total = horizon + 1;

    Matrix factors(total, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        RandomStream stream = rng.split(static_cast<std::uint64_t>(j));
        const auto path = simulate_garch_path(design.garch[static_cast<std::size_t>(j)], static_cast<std::size_t>(total),
                                              kPanelBurnIn, stream);
        for (Eigen::Index t = 0; t < total; ++t) factors(t, j) = path[static_cast<std::size_t>(t)];
    }

    RandomStream noise = rng.split(static_cast<std::uint64_t>(p));
    // burn-in draws for the idiosyncratic shocks are generated and dropped too
    const double sd = std::sqrt(design.idio_var);
    for (Eigen::Index t = 0; t < kPanelBurnIn * k; ++t) (void)noise.normal();
    Matrix shocks(total, k);
    for (Eigen::Index t = 0; t < total; ++t)
        for (Eigen::Index i = 0; i < k; ++i) shocks(t, i) = sd * noise.normal();

    const Matrix y_all = factors * design.loadings.transpose() + shocks;

    PanelData panel;
    panel.y = y_all.bottomRows(horizon);
    panel.z = y_all.topRows(horizon).array().square().matrix();
    return panel;
}

/// iid N(mean, sd^2) draws.
inline std::vector<double> simulate_scalar_iid(double mean, double sd, std::size_t n, RandomStream& rng) {
    detail::require(sd > 0.0, "scalar: sd must be positive");
    detail::require(n >= 1, "scalar: n must be at least 1");
    std::vector<double> out(n);
    for (auto& x : out) x = mean + sd * rng.normal();
    return out;
}

/// Named simulation designs D1-D5.
inline DesignSpec preset_design(const std::string& name) {
    const GarchParams g1{0.2, 0.2, 0.6};
    const GarchParams g2{0.2, 0.4, 0.4};
    const GarchParams g3{0.1, 0.1, 0.8};
    DesignSpec d;
    d.name = name;
    if (name == "D1") {
        d.loadings = Matrix::Ones(2, 1);
        d.garch = {g1};
    } else if (name == "D2") {
        d.loadings = Matrix::Identity(2, 2);
        d.garch = {g1, g2};
    } else if (name == "D3") {
        d.loadings = Matrix::Ones(3, 1);
        d.garch = {g1};
    } else if (name == "D4") {
        d.loadings.resize(3, 2);
        d.loadings << 1, -1, 1, 0, 1, 1;
        d.garch = {g1, g2};
    } else if (name == "D5") {
        d.loadings = Matrix::Identity(3, 3);
        d.garch = {g1, g2, g3};
    } else {
        throw ValidationError("unknown design '" + name + "' (expected D1..D5)");
    }
    return d;
}

/// Stable small integer for seed derivation; 0 for custom designs.
inline std::uint64_t design_id(const std::string& name) {
    if (name.size() == 2 && name[0] == 'D' && name[1] >= '1' && name[1] <= '5')
        return static_cast<std::uint64_t>(name[1] - '0');
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ull;
    return h;
}

}  // namespace degboot
