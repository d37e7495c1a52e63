#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "degboot/error.hpp"
#include "degboot/moments.hpp"
#include "degboot/sphere_grid.hpp"

namespace degboot {

/// Best point found by a sphere minimization.
struct SphereMinResult {
    SphereVec minimizer;
    double value = 0.0;
    int starts_used = 0;
    bool converged = false;
};

/// Finite stand-in for the estimated identified set.
struct IdentifiedSetEstimate {
    std::vector<SphereVec> points;  // closed under sign flip, global minimizer first
    double threshold = 0.0;         // kappa^2
    double phi_min = 0.0;
    double spacing = 0.0;           // angular spacing of the scan grid
};

struct SphereOptions {
    int n_starts = 121;
    double tol = 1e-10;
    int max_iter = 500;
    std::size_t warm_grid = 0;  // 0 picks a default for k <= 3
};

namespace detail {

/**
 * Evaluates q(gamma) = theta^T W theta with theta_j = gamma^T Delta_j gamma, plus derivatives.
 * Holds scratch buffers, so one instance must not be shared between threads.
 */
class SphereCriterion {
  public:
    explicit SphereCriterion(const QuadMomentModel& model)
        : model_(model), th_(model.m()), wth_(model.m()), mix_(model.k(), model.k()) {}

    [[nodiscard]] Vector theta(const Vector& g) const {
        fill_theta(g);
        return th_;
    }

    [[nodiscard]] double value(const Vector& g) const {
        fill_theta(g);
        if (model_.identity_weight()) return th_.squaredNorm();
        wth_.noalias() = model_.weight() * th_;
        return th_.dot(wth_);
    }

    /// Euclidean gradient 4 sum_j (W theta)_j Delta_j gamma.
    double value_grad(const Vector& g, Vector& grad) const {
        fill_theta(g);
        if (model_.identity_weight())
            wth_ = th_;
        else
            wth_.noalias() = model_.weight() * th_;
        mix_.setZero();
        for (Eigen::Index j = 0; j < model_.m(); ++j) mix_ += wth_(j) * model_.delta(j);
        grad.resize(g.size());
        grad.noalias() = 4.0 * (mix_ * g);
        return th_.dot(wth_);
    }

    /// Euclidean Hessian 4 sum_j (W theta)_j Delta_j + 8 sum_{jl} W_jl (Delta_j g)(Delta_l g)^T.
    [[nodiscard]] Matrix hessian(const Vector& g) const {
        const Eigen::Index k = g.size();
        const Eigen::Index m = model_.m();
        const Vector th = theta(g);
        const Vector wth = model_.identity_weight() ? th : Vector(model_.weight() * th);
        Matrix dg(k, m);
        for (Eigen::Index j = 0; j < m; ++j) dg.col(j) = model_.delta(j) * g;
        Matrix h = Matrix::Zero(k, k);
        for (Eigen::Index j = 0; j < m; ++j) h += (4.0 * wth(j)) * model_.delta(j);
        if (model_.identity_weight())
            h += 8.0 * dg * dg.transpose();
        else
            h += 8.0 * dg * model_.weight() * dg.transpose();
        return h;
    }

  private:
    void fill_theta(const Vector& g) const {
        const Eigen::Index k = g.size();
        for (Eigen::Index j = 0; j < model_.m(); ++j) {
            const Matrix& d = model_.delta(j);
            double acc = 0.0;
            for (Eigen::Index c = 0; c < k; ++c) {
                double col = 0.0;
                for (Eigen::Index r = 0; r < k; ++r) col += d(r, c) * g(r);
                acc += col * g(c);
            }
            th_(j) = acc;
        }
    }

    const QuadMomentModel& model_;
    mutable Vector th_;
    mutable Vector wth_;
    mutable Matrix mix_;
};

inline Vector retract(const Vector& v) { return v / v.norm(); }

struct LocalResult {
    Vector gamma;
    double value;
    bool converged;
};

/**
 * Riemannian descent from one start: Newton direction in the tangent space when
 * the projected Hessian is positive definite, projected gradient otherwise,
 * Armijo backtracking along the normalization retraction.
 */
inline LocalResult descend(const SphereCriterion& crit, Vector gamma, double tol, int max_iter) {
    gamma = retract(gamma);
    Vector grad;
    double q = crit.value_grad(gamma, grad);
    double step_scale = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        const Vector rgrad = grad - grad.dot(gamma) * gamma;
        const double gnorm = rgrad.norm();
        if (gnorm <= tol) return {gamma, q, true};

        Vector dir = -rgrad;
        bool newton = false;
        if (gamma.size() >= 2) {
            const Matrix basis = tangent_basis(gamma);
            Matrix hr = basis.transpose() * crit.hessian(gamma) * basis;
            hr.diagonal().array() -= grad.dot(gamma);
            Eigen::LLT<Matrix> llt(hr);
            if (llt.info() == Eigen::Success) {
                const Vector step = llt.solve(-(basis.transpose() * grad));
                if (step.allFinite()) {
                    dir = basis * step;
                    newton = true;
                }
            }
        }
        double slope = rgrad.dot(dir);
        if (!(slope < 0.0)) {
            dir = -rgrad;
            slope = -gnorm * gnorm;
            newton = false;
        }

        double eta = newton ? 1.0 : step_scale;
        bool accepted = false;
        Vector trial;
        double q_trial = 0.0;
        for (int bt = 0; bt < 60; ++bt) {
            trial = retract(gamma + eta * dir);
            q_trial = crit.value(trial);
            if (q_trial <= q + 1e-4 * eta * slope) {
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if (!accepted) {
            // no representable decrease left: at the floating-point floor
            return {gamma, q, gnorm <= std::sqrt(tol)};
        }
        if (!newton) step_scale = std::min(1e6, 2.0 * eta);
        gamma = trial;
        q = crit.value_grad(gamma, grad);
    }
    const Vector rgrad = grad - grad.dot(gamma) * gamma;
    return {gamma, q, rgrad.norm() <= tol};
}

inline std::size_t default_warm_grid(Eigen::Index k) {
    if (k == 2) return 360;
    if (k == 3) return 1000;
    return 0;
}

/// Lexicographic comparison of coordinate vectors.
inline bool lex_less(const Vector& a, const Vector& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a(i) < b(i)) return true;
        if (a(i) > b(i)) return false;
    }
    return false;
}

}  // namespace detail

/**
 * Minimizes gamma -> ||theta(gamma)||_W^2 over the unit sphere.
 *
 * Local descent runs from `n_starts` deterministic low-discrepancy starts
 * (one per antipodal pair) plus the best point of a coarse warm-up grid.
 * Among equal minima the lexicographically smallest coordinate vector is
 * reported.
 */
inline SphereMinResult minimize_on_sphere(const QuadMomentModel& model, const SphereOptions& opts) {
    detail::require(opts.n_starts >= 1, "minimize_on_sphere: n_starts must be >= 1");
    detail::require(opts.tol > 0.0, "minimize_on_sphere: tol must be positive");
    const Eigen::Index k = model.k();
    const detail::SphereCriterion crit(model);

    std::vector<Vector> starts = SphereGrid::hemisphere(k, static_cast<std::size_t>(opts.n_starts)).points;
    if (static_cast<int>(starts.size()) > opts.n_starts) starts.resize(static_cast<std::size_t>(opts.n_starts));
    const std::size_t warm = opts.warm_grid ? opts.warm_grid : detail::default_warm_grid(k);
    if (warm > 0) {
        const auto grid = SphereGrid::hemisphere(k, warm);
        double best = std::numeric_limits<double>::infinity();
        const Vector* best_pt = nullptr;
        for (const auto& p : grid.points) {
            const double v = crit.value(p);
            if (v < best) {
                best = v;
                best_pt = &p;
            }
        }
        if (best_pt) starts.push_back(*best_pt);
    }

    std::vector<detail::LocalResult> results;
    results.reserve(starts.size());
    for (const auto& s : starts) results.push_back(detail::descend(crit, s, opts.tol, opts.max_iter));

    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : results) best = std::min(best, r.value);
    const double tie = best + 1e-13 * (1.0 + best);
    const detail::LocalResult* chosen = nullptr;
    Vector chosen_vec;
    for (const auto& r : results) {
        if (r.value > tie) continue;
        for (const Vector& cand : {Vector(r.gamma), Vector(-r.gamma)}) {
            if (!chosen || detail::lex_less(cand, chosen_vec)) {
                chosen = &r;
                chosen_vec = cand;
            }
        }
    }
    // report the exact value at the reported point
    SphereVec minimizer = SphereVec::normalize(chosen_vec);
    return {minimizer, crit.value(minimizer.coords()), static_cast<int>(starts.size()), chosen->converged};
}

inline SphereMinResult minimize_on_sphere(const QuadMomentModel& model, int n_starts = 121, double tol = 1e-10) {
    SphereOptions opts;
    opts.n_starts = n_starts;
    opts.tol = tol;
    return minimize_on_sphere(model, opts);
}

/**
 * Brute-force grid minimum (k = 2 or 3 only).
 *
 * With zoom_levels > 0 the best few well-separated grid cells are re-gridded
 * on successively finer tangent-plane lattices; still derivative free, and
 * accurate enough to check the local solver to tight relative tolerances.
 */
inline SphereMinResult grid_oracle_sphere(const QuadMomentModel& model, std::size_t resolution, int zoom_levels = 0) {
    const Eigen::Index k = model.k();
    detail::require(k == 2 || k == 3, "grid oracle supports k = 2 or 3 only");
    detail::require(resolution >= 100, "grid oracle: resolution must be >= 100");
    const detail::SphereCriterion crit(model);
    const SphereGrid grid = SphereGrid::full(k, resolution);

    std::vector<double> values(grid.points.size());
    for (std::size_t i = 0; i < grid.points.size(); ++i) values[i] = crit.value(grid.points[i]);
    int evaluated = static_cast<int>(values.size());

    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    Vector best_pt = grid.points[order.front()];
    double best = values[order.front()];

    if (zoom_levels > 0) {
        constexpr int kCandidates = 8;
        constexpr int kHalfWidth = 10;
        std::vector<Vector> seeds;
        for (std::size_t idx : order) {
            const Vector& p = grid.points[idx];
            bool separated = true;
            for (const auto& s : seeds)
                if (projective_angle(p, s) < 3.0 * grid.spacing) separated = false;
            if (separated) seeds.push_back(p);
            if (static_cast<int>(seeds.size()) == kCandidates) break;
        }
        for (Vector center : seeds) {
            double center_val = crit.value(center);
            double h = grid.spacing;
            for (int level = 0; level < zoom_levels; ++level) {
                h /= 5.0;
                const Matrix basis = tangent_basis(center);
                Vector level_best = center;
                double level_val = center_val;
                if (k == 2) {
                    for (int a = -kHalfWidth; a <= kHalfWidth; ++a) {
                        const Vector p = detail::retract(center + (h * a) * basis.col(0));
                        const double v = crit.value(p);
                        ++evaluated;
                        if (v < level_val) {
                            level_val = v;
                            level_best = p;
                        }
                    }
                } else {
                    for (int a = -kHalfWidth; a <= kHalfWidth; ++a) {
                        for (int b = -kHalfWidth; b <= kHalfWidth; ++b) {
                            const Vector p = detail::retract(center + (h * a) * basis.col(0) + (h * b) * basis.col(1));
                            const double v = crit.value(p);
                            ++evaluated;
                            if (v < level_val) {
                                level_val = v;
                                level_best = p;
                            }
                        }
                    }
                }
                center = level_best;
                center_val = level_val;
            }
            if (center_val < best) {
                best = center_val;
                best_pt = center;
            }
        }
    }
    return {SphereVec::normalize(best_pt), best, evaluated, true};
}

/**
 * Finite representation of {gamma : q(gamma) - phi_min <= kappa^2}.
 *
 * Scans a full-sphere grid, keeps passing points, and thins them greedily in
 * ascending criterion order so that kept representatives are more than two
 * grid spacings apart (as lines through the origin). The refined global
 * minimizer is always the first representative. Each representative is
 * emitted with its sign flip.
 */
inline IdentifiedSetEstimate estimate_identified_set(const QuadMomentModel& model, double kappa, std::size_t resolution,
                                                     const SphereOptions& opts = {}) {
    detail::require(kappa > 0.0, "identified set: kappa must be positive");
    detail::require(resolution >= 1, "identified set: resolution must be positive");
    const Eigen::Index k = model.k();
    const detail::SphereCriterion crit(model);
    const SphereMinResult global = minimize_on_sphere(model, opts);

    IdentifiedSetEstimate out;
    out.threshold = kappa * kappa;
    out.phi_min = global.value;

    const SphereGrid grid = SphereGrid::full(k, resolution);
    out.spacing = grid.spacing;
    const double merge = 2.0 * grid.spacing;

    struct Candidate {
        double excess;
        Vector point;
    };
    std::vector<Candidate> passing;
    for (const auto& p : grid.points) {
        const double excess = crit.value(p) - out.phi_min;
        if (excess <= out.threshold) passing.push_back({excess, canonical_sign(p)});
    }
    std::stable_sort(passing.begin(), passing.end(),
                     [](const Candidate& a, const Candidate& b) { return a.excess < b.excess; });

    std::vector<Vector> reps;
    reps.push_back(canonical_sign(global.minimizer.coords()));
    for (const auto& c : passing) {
        bool far = true;
        for (const auto& r : reps) {
            if (projective_angle(c.point, r) <= merge) {
                far = false;
                break;
            }
        }
        if (far) reps.push_back(c.point);
    }
    out.points.reserve(2 * reps.size());
    for (const auto& r : reps) {
        SphereVec s = SphereVec::normalize(r);
        out.points.push_back(s);
        out.points.push_back(s.flipped());
    }
    return out;
}

}  // namespace degboot
