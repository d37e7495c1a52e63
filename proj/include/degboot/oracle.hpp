#pragma once

// Slow reference computations used to cross-check the fast paths.

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "degboot/derivative.hpp"
#include "degboot/error.hpp"
#include "degboot/moments.hpp"
#include "degboot/sphereopt.hpp"

namespace degboot::oracle {

/// theta-hat(gamma) by its defining sum (1/T) sum_t Z_t {(gamma^T Y_{t+1})^2 - c-hat(gamma)}.
inline Vector direct_theta(const PanelData& panel, const Vector& gamma) {
    const Eigen::Index t = panel.size();
    double c_hat = 0.0;
    for (Eigen::Index s = 0; s < t; ++s) {
        const double u = panel.y.row(s).dot(gamma);
        c_hat += u * u;
    }
    c_hat /= static_cast<double>(t);
    Vector theta = Vector::Zero(panel.m());
    for (Eigen::Index s = 0; s < t; ++s) {
        const double u = panel.y.row(s).dot(gamma);
        theta += panel.z.row(s).transpose() * (u * u - c_hat);
    }
    return theta / static_cast<double>(t);
}

/**
 * min over the k = 2 ball ||v|| <= radius of ||h + G vec(v v^T)||_W^2 by a
 * Cartesian grid, then repeated local re-gridding around the best few cells.
 */
inline double ball_grid_min(const QuadMomentModel& model, const Vector& h, double radius, int n = 401, int zoom_levels = 6) {
    detail::require(model.k() == 2, "ball grid oracle supports k = 2 only");
    auto value = [&](double a, double b) {
        if (a * a + b * b > radius * radius) return std::numeric_limits<double>::infinity();
        Vector v(2);
        v << a, b;
        return model.wnorm2(h + model.g_mat() * vec_outer(v));
    };
    const double step = 2.0 * radius / (n - 1);
    struct Cell {
        double val, a, b;
    };
    std::vector<Cell> cells;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double a = -radius + step * i;
            const double b = -radius + step * j;
            cells.push_back({value(a, b), a, b});
        }
    // boundary of the ball, where constrained minima often sit
    const int n_circle = 8 * n;
    for (int i = 0; i < n_circle; ++i) {
        const double ang = 2.0 * std::numbers::pi * i / n_circle;
        const double a = radius * std::cos(ang) * (1.0 - 1e-15);
        const double b = radius * std::sin(ang) * (1.0 - 1e-15);
        cells.push_back({value(a, b), a, b});
    }
    std::sort(cells.begin(), cells.end(), [](const Cell& x, const Cell& y) { return x.val < y.val; });
    double best = cells.front().val;
    std::vector<Cell> seeds;
    for (const auto& c : cells) {
        bool far = true;
        for (const auto& s : seeds)
            if (std::hypot(c.a - s.a, c.b - s.b) < 4.0 * step) far = false;
        if (far) seeds.push_back(c);
        if (seeds.size() == 6) break;
    }
    for (Cell c : seeds) {
        double hstep = step;
        for (int level = 0; level < zoom_levels; ++level) {
            hstep /= 5.0;
            Cell lb = c;
            for (int i = -10; i <= 10; ++i)
                for (int j = -10; j <= 10; ++j) {
                    double a = c.a + hstep * i;
                    double b = c.b + hstep * j;
                    const double r = std::hypot(a, b);
                    if (r > radius) {
                        a *= radius / r;
                        b *= radius / r;
                    }
                    const double v = value(a, b);
                    if (v < lb.val) lb = {v, a, b};
                }
            c = lb;
        }
        best = std::min(best, c.val);
    }
    return best;
}

/// Brute-force counterpart of structural_deriv_ch for k = 2.
inline double structural_deriv_grid(const QuadMomentModel& model, std::span<const SphereVec> points, const DirectionFn& h,
                                    double radius) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : points) best = std::min(best, ball_grid_min(model, h(g), radius));
    return best;
}

/// Random symmetric k x k matrices with standard normal entries.
inline std::vector<Matrix> random_deltas(Eigen::Index k, Eigen::Index m, RandomStream& rng) {
    std::vector<Matrix> out;
    for (Eigen::Index j = 0; j < m; ++j) {
        Matrix a(k, k);
        for (Eigen::Index r = 0; r < k; ++r)
            for (Eigen::Index c = 0; c < k; ++c) a(r, c) = rng.normal();
        out.push_back(0.5 * (a + a.transpose()));
    }
    return out;
}

/// Random panel with T rows, k outcomes and m instruments.
inline PanelData random_panel(Eigen::Index t, Eigen::Index k, Eigen::Index m, RandomStream& rng) {
    PanelData p;
    p.y.resize(t, k);
    p.z.resize(t, m);
    for (Eigen::Index r = 0; r < t; ++r) {
        for (Eigen::Index c = 0; c < k; ++c) p.y(r, c) = rng.normal();
        for (Eigen::Index c = 0; c < m; ++c) p.z(r, c) = rng.normal() * rng.normal();
    }
    return p;
}

/// Uniform random point on the unit sphere in R^k.
inline Vector random_unit(Eigen::Index k, RandomStream& rng) {
    Vector v(k);
    do {
        for (Eigen::Index i = 0; i < k; ++i) v(i) = rng.normal();
    } while (v.norm() < 1e-8);
    return v / v.norm();
}

/// |a - b| / max(|b|, 1e-12).
inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

}  // namespace degboot::oracle
