#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "degboot/error.hpp"
#include "degboot/rng.hpp"

namespace degboot {

/// Canonical representative of {v, -v}: first coordinate with |c| > 1e-12 is positive.
inline Eigen::VectorXd canonical_sign(Eigen::VectorXd v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-12) {
            if (v(i) < 0.0) v = -v;
            break;
        }
    }
    return v;
}

/// Angle between the lines spanned by two unit vectors, in [0, pi/2].
inline double projective_angle(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::acos(std::min(1.0, std::abs(a.dot(b))));
}

/// Orthonormal basis (k x (k-1)) of the tangent space at a unit vector.
inline Eigen::MatrixXd tangent_basis(const Eigen::VectorXd& gamma) {
    const Eigen::Index k = gamma.size();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gamma);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
    return q.rightCols(k - 1);
}

/**
 * Deterministic point sets on the unit sphere in R^k.
 * k = 2: equally spaced angles; k = 3: Fibonacci lattice; k > 3: seeded Gaussian directions.
 */
struct SphereGrid {
    std::vector<Eigen::VectorXd> points;
    double spacing = 0.0;  // typical nearest-neighbour angular distance

    /// Full-sphere grid with `n` points.
    static SphereGrid full(Eigen::Index k, std::size_t n) {
        detail::require(k >= 1 && n >= 1, "sphere grid: bad size");
        SphereGrid g;
        g.points.reserve(n);
        if (k == 1) {
            g.points.push_back(Eigen::VectorXd::Constant(1, 1.0));
            g.points.push_back(Eigen::VectorXd::Constant(1, -1.0));
            g.spacing = std::numbers::pi;
            return g;
        }
        if (k == 2) {
            const double step = 2.0 * std::numbers::pi / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double a = step * static_cast<double>(i);
                Eigen::VectorXd v(2);
                v << std::cos(a), std::sin(a);
                g.points.push_back(v);
            }
            g.spacing = step;
            return g;
        }
        if (k == 3) {
            const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
            for (std::size_t i = 0; i < n; ++i) {
                const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
                const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
                const double a = golden * static_cast<double>(i);
                Eigen::VectorXd v(3);
                v << r * std::cos(a), r * std::sin(a), z;
                g.points.push_back(v);
            }
            g.spacing = std::sqrt(4.0 * std::numbers::pi / static_cast<double>(n));
            return g;
        }
        RandomStream rng(derive_seed(0x5eed, static_cast<std::uint64_t>(k), n));
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::VectorXd v(k);
            do {
                for (Eigen::Index j = 0; j < k; ++j) v(j) = rng.normal();
            } while (v.norm() < 1e-8);
            g.points.push_back(v / v.norm());
        }
        // surface measure of S^{k-1} divided among n points, to the 1/(k-1) power
        const double area = 2.0 * std::pow(std::numbers::pi, 0.5 * static_cast<double>(k)) / std::tgamma(0.5 * static_cast<double>(k));
        g.spacing = std::pow(area / static_cast<double>(n), 1.0 / static_cast<double>(k - 1));
        return g;
    }

    /// Roughly `n` points covering one representative of each antipodal pair.
    static SphereGrid hemisphere(Eigen::Index k, std::size_t n) {
        detail::require(k >= 1 && n >= 1, "sphere grid: bad size");
        SphereGrid g;
        if (k == 1) {
            g.points.push_back(Eigen::VectorXd::Constant(1, 1.0));
            g.spacing = std::numbers::pi;
            return g;
        }
        if (k == 2) {
            const double step = std::numbers::pi / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double a = step * (static_cast<double>(i) + 0.5);
                Eigen::VectorXd v(2);
                v << std::cos(a), std::sin(a);
                g.points.push_back(v);
            }
            g.spacing = step;
            return g;
        }
        SphereGrid full_grid = full(k, 2 * n);
        for (auto& p : full_grid.points)
            if (k == 3 ? p(2) > 0.0 : p(0) > 0.0) g.points.push_back(p);
        g.spacing = full_grid.spacing;
        return g;
    }
};

}  // namespace degboot
