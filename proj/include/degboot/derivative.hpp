#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "degboot/error.hpp"
#include "degboot/moments.hpp"
#include "degboot/sphereopt.hpp"

namespace degboot {

/// Shrinking tuning sequence kappa_T = T^(-exponent).
struct KappaRule {
    double exponent = 1.0 / 3.0;
    std::string name = "T^-1/3";

    static KappaRule quarter() { return {0.25, "T^-1/4"}; }
    static KappaRule third() { return {1.0 / 3.0, "T^-1/3"}; }
    static KappaRule two_fifths() { return {0.4, "T^-2/5"}; }

    /// User exponent; must lie in (0, 1/2) so that sqrt(T) * kappa_T diverges.
    static KappaRule custom(double exponent) {
        detail::require(exponent > 0.0 && exponent < 0.5, "kappa rule exponent must lie in (0, 1/2)");
        char buf[64];
        std::snprintf(buf, sizeof buf, "T^-%.6g", exponent);
        return {exponent, buf};
    }

    /// Accepts "T^-1/4", "T^-1/3", "T^-2/5" or "T^-<decimal>".
    static KappaRule parse(const std::string& text) {
        if (text == "T^-1/4") return quarter();
        if (text == "T^-1/3") return third();
        if (text == "T^-2/5") return two_fifths();
        if (text.rfind("T^-", 0) == 0) {
            const std::string num = text.substr(3);
            std::size_t pos = 0;
            double e = 0.0;
            try {
                e = std::stod(num, &pos);
            } catch (const std::exception&) {
                throw ValidationError("bad kappa rule '" + text + "'");
            }
            detail::require(pos == num.size(), "bad kappa rule '" + text + "'");
            return custom(e);
        }
        throw ValidationError("bad kappa rule '" + text + "' (expected T^-1/4, T^-1/3, T^-2/5 or T^-<x>)");
    }

    [[nodiscard]] double value(double sample_size) const { return std::pow(sample_size, -exponent); }
};

/// Which second-derivative estimator to use, with its tuning constants.
struct DerivEstimator {
    enum class Kind { structural_ch, numerical, closed_form_squared_mean, gms_moment_ineq, cvm_known, jtest_structural };

    Kind kind = Kind::structural_ch;
    std::optional<double> kappa;   // set-estimation slack (structural)
    std::optional<double> step;    // numerical differentiation step
    std::optional<double> radius;  // ball radius for the inner minimization
    /// Also require |v^T lambda| <= kappa^(1/2) for every lambda in the set
    /// estimate, confining v near the orthogonal complement of the set.
    bool restrict_to_complement = false;

    static DerivEstimator structural(double kappa) {
        DerivEstimator e{Kind::structural_ch, kappa, std::nullopt, std::nullopt};
        e.validate();
        return e;
    }
    static DerivEstimator numerical(double step) {
        DerivEstimator e{Kind::numerical, std::nullopt, step, std::nullopt};
        e.validate();
        return e;
    }

    void validate() const {
        if (kind == Kind::structural_ch) detail::require(kappa.has_value(), "structural estimator requires kappa");
        if (kind == Kind::numerical) detail::require(step.has_value(), "numerical estimator requires a step");
        if (kappa) detail::require(*kappa > 0.0, "kappa must be positive");
        if (step) detail::require(*step > 0.0, "step must be positive");
        if (radius) detail::require(*radius > 0.0, "radius must be positive");
        if (restrict_to_complement)
            detail::require(kind == Kind::structural_ch, "complement restriction applies to the structural estimator only");
    }

    /// Ball radius; kappa^(-1/2) unless set explicitly.
    [[nodiscard]] double ball_radius() const {
        if (radius) return *radius;
        detail::require(kappa.has_value(), "ball radius needs kappa or an explicit radius");
        return 1.0 / std::sqrt(*kappa);
    }
};

inline std::string to_string(DerivEstimator::Kind kind) {
    switch (kind) {
        case DerivEstimator::Kind::structural_ch: return "structural";
        case DerivEstimator::Kind::numerical: return "numerical";
        case DerivEstimator::Kind::closed_form_squared_mean: return "closed_form_squared_mean";
        case DerivEstimator::Kind::gms_moment_ineq: return "gms_moment_ineq";
        case DerivEstimator::Kind::cvm_known: return "cvm_known";
        case DerivEstimator::Kind::jtest_structural: return "jtest_structural";
    }
    return "unknown";
}

/// Parses the CH estimator names: structural (CF1) or numerical (CF2).
inline DerivEstimator::Kind parse_ch_estimator(const std::string& text) {
    if (text == "structural" || text == "CF1") return DerivEstimator::Kind::structural_ch;
    if (text == "numerical" || text == "CF2") return DerivEstimator::Kind::numerical;
    throw ValidationError("unknown estimator '" + text + "' (expected structural or numerical)");
}

/**
 * Perturbation direction gamma -> h(gamma) in R^m.
 *
 * Bootstrap directions are quadratic, h(gamma) = H vec(gamma gamma^T) with
 * H = sqrt(T) (G* - G); those are even in gamma, which lets callers skip
 * antipodal duplicates.
 */
class DirectionFn {
  public:
    DirectionFn(std::function<Vector(const SphereVec&)> fn, bool even) : fn_(std::move(fn)), even_(even) {}

    static DirectionFn quadratic(Matrix h_mat) {
        auto shared = std::make_shared<const Matrix>(std::move(h_mat));
        return DirectionFn([shared](const SphereVec& g) -> Vector { return *shared * vec_outer(g.coords()); }, true);
    }

    /// sqrt(T) (G* - G) vec(gamma gamma^T).
    static DirectionFn bootstrap(const QuadMomentModel& model, const QuadMomentModel& model_star) {
        detail::require(model.m() == model_star.m() && model.k() == model_star.k(), "direction: dimension mismatch");
        detail::require(model.sample_size() == model_star.sample_size(), "direction: sample sizes differ");
        const double root_t = std::sqrt(static_cast<double>(model.sample_size()));
        return quadratic(root_t * (model_star.g_mat() - model.g_mat()));
    }

    static DirectionFn zero(Eigen::Index m) {
        return DirectionFn([m](const SphereVec&) -> Vector { return Vector::Zero(m); }, true);
    }

    [[nodiscard]] Vector operator()(const SphereVec& g) const { return fn_(g); }
    [[nodiscard]] bool even() const noexcept { return even_; }

  private:
    std::function<Vector(const SphereVec&)> fn_;
    bool even_;
};

/**
 * Solves min_{||v|| <= r} ||h + G vec(v v^T)||_W^2 for a fixed model.
 *
 * Writing v = sqrt(s) d with ||d|| = 1 makes the objective a convex quadratic
 * in s in [0, r^2] for each direction d, solved in closed form. A fixed
 * direction set (a sphere lattice plus eigenvectors of every Delta_j) is
 * scanned, then the best few candidates are polished by projected gradient
 * descent in v. v = 0 is always a candidate, so the result never exceeds
 * ||h||_W^2.
 *
 * With a complement set L and slack c the feasible region shrinks to
 * {||v|| <= r, |v^T l| <= c for all l in L}. It is still star-shaped around
 * 0, so each direction keeps a closed-form radial optimum.
 */
class BallQuarticSolver {
  public:
    struct Solution {
        double value;
        Vector v;
    };

    BallQuarticSolver(const QuadMomentModel& model, double radius, std::size_t n_directions = 0,
                      std::span<const SphereVec> complement = {}, double slack = 0.0)
        : model_(&model), radius_(radius), slack_(slack) {
        detail::require(radius > 0.0 && std::isfinite(radius), "ball solver: radius must be positive");
        if (!complement.empty()) {
            detail::require(slack > 0.0, "ball solver: complement slack must be positive");
            lambdas_.resize(model.k(), static_cast<Eigen::Index>(complement.size()));
            for (std::size_t i = 0; i < complement.size(); ++i) {
                detail::require(complement[i].dim() == model.k(), "ball solver: complement dimension mismatch");
                lambdas_.col(static_cast<Eigen::Index>(i)) = complement[i].coords();
            }
        }
        const Eigen::Index k = model.k();
        const Eigen::Index m = model.m();
        if (n_directions == 0) n_directions = k == 2 ? 180 : (k == 3 ? 400 : static_cast<std::size_t>(128 * k));
        std::vector<Vector> dirs = SphereGrid::hemisphere(k, n_directions).points;
        for (const auto& d : model.deltas()) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(d);
            for (Eigen::Index c = 0; c < k; ++c) dirs.push_back(es.eigenvectors().col(c).normalized());
        }
        const auto n = static_cast<Eigen::Index>(dirs.size());
        dirs_.resize(k, n);
        g_.resize(m, n);
        wg_.resize(m, n);
        b_.resize(n);
        s_max_.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            dirs_.col(i) = dirs[static_cast<std::size_t>(i)];
            s_max_(i) = max_step(dirs_.col(i));
            Vector gd(m);
            for (Eigen::Index j = 0; j < m; ++j) gd(j) = dirs_.col(i).dot(model.delta(j) * dirs_.col(i));
            g_.col(i) = gd;
            wg_.col(i) = model.identity_weight() ? gd : Vector(model.weight() * gd);
            b_(i) = gd.dot(wg_.col(i));
        }
    }

    [[nodiscard]] double radius() const noexcept { return radius_; }
    [[nodiscard]] bool restricted() const noexcept { return lambdas_.cols() > 0; }

    /// Largest s with sqrt(s) d feasible, for a unit direction d.
    [[nodiscard]] double max_step(const Vector& d) const {
        double s = radius_ * radius_;
        if (restricted()) {
            const double worst = (lambdas_.transpose() * d).cwiseAbs().maxCoeff();
            if (worst > 0.0) s = std::min(s, (slack_ / worst) * (slack_ / worst));
        }
        return s;
    }

    /// Scan stage only: exact radial optimum along each stored direction.
    /// Fills `best` with (value, direction index, s) for the lowest `keep` entries.
    struct ScanHit {
        double value;
        Eigen::Index dir;
        double s;
    };

    void scan(const Vector& h, std::size_t keep, std::vector<ScanHit>& best) const {
        best.clear();
        const double hh = model_->wnorm2(h);
        const Vector a_all = wg_.transpose() * h;
        best.push_back({hh, -1, 0.0});
        for (Eigen::Index i = 0; i < a_all.size(); ++i) {
            const double a = a_all(i);
            const double b = b_(i);
            if (!(b > 0.0) || a >= 0.0) continue;
            const double s = std::min(-a / b, s_max_(i));
            const double val = hh + s * (2.0 * a + s * b);
            if (best.size() < keep || val < best.back().value) {
                ScanHit hit{val, i, s};
                auto pos = std::upper_bound(best.begin(), best.end(), hit,
                                            [](const ScanHit& x, const ScanHit& y) { return x.value < y.value; });
                best.insert(pos, hit);
                if (best.size() > keep) best.pop_back();
            }
        }
    }

    /// Objective at v.
    [[nodiscard]] double objective(const Vector& h, const Vector& v) const { return model_->wnorm2(residual(h, v)); }

    /// Local refinement from a scan hit; never returns a worse value than the hit.
    [[nodiscard]] Solution polish(const Vector& h, const ScanHit& hit) const {
        if (hit.dir < 0) return {hit.value, Vector::Zero(model_->k())};
        Vector v = std::sqrt(hit.s) * dirs_.col(hit.dir);
        double f = objective(h, v);
        double eta = 1.0 / (1.0 + 4.0 * max_delta_norm() * (radius_ * radius_ + std::sqrt(model_->wnorm2(h))));
        const Eigen::Index m = model_->m();
        for (int it = 0; it < 200; ++it) {
            const Vector r = residual(h, v);
            const Vector wr = model_->identity_weight() ? r : Vector(model_->weight() * r);
            Vector grad = Vector::Zero(v.size());
            for (Eigen::Index j = 0; j < m; ++j) grad.noalias() += (4.0 * wr(j)) * (model_->delta(j) * v);
            if (grad.norm() <= 1e-14 * (1.0 + f)) break;
            bool moved = false;
            for (int bt = 0; bt < 50; ++bt) {
                Vector trial = project(v - eta * grad);
                const double ft = objective(h, trial);
                if (ft < f - 1e-4 * (v - trial).squaredNorm() / eta || (ft < f && bt > 30)) {
                    const double gain = f - ft;
                    v = std::move(trial);
                    f = ft;
                    eta *= 2.0;
                    moved = gain > 1e-16 * (1.0 + f);
                    break;
                }
                eta *= 0.5;
            }
            if (!moved) break;
        }
        // exact radial re-solve along the final direction
        const double nv = v.norm();
        if (nv > 0.0) {
            const Vector d = v / nv;
            Vector gd(m);
            for (Eigen::Index j = 0; j < m; ++j) gd(j) = d.dot(model_->delta(j) * d);
            const double a = model_->winner(gd, h);
            const double b = model_->wnorm2(gd);
            if (b > 0.0 && a < 0.0) {
                const double s = std::min(-a / b, max_step(d));
                const Vector v2 = std::sqrt(s) * d;
                const double f2 = objective(h, v2);
                if (f2 < f) {
                    v = v2;
                    f = f2;
                }
            }
        }
        if (f > hit.value) return {hit.value, std::sqrt(hit.s) * dirs_.col(hit.dir)};
        return {f, v};
    }

    /// Full solve: scan then polish the best `polish_starts` candidates.
    [[nodiscard]] Solution solve(const Vector& h, std::size_t polish_starts = 3) const {
        std::vector<ScanHit> hits;
        scan(h, std::max<std::size_t>(polish_starts, 1), hits);
        Solution best{model_->wnorm2(h), Vector::Zero(model_->k())};
        for (const auto& hit : hits) {
            Solution s = polish(h, hit);
            if (s.value < best.value) best = std::move(s);
        }
        return best;
    }

  private:
    [[nodiscard]] Vector residual(const Vector& h, const Vector& v) const {
        Vector r = h;
        for (Eigen::Index j = 0; j < model_->m(); ++j) r(j) += v.dot(model_->delta(j) * v);
        return r;
    }

    // Exact projection onto the ball; with a complement set the point is then
    // pulled radially into the slabs, which keeps it feasible.
    [[nodiscard]] Vector project(Vector v) const {
        const double n = v.norm();
        if (n > radius_) v *= radius_ / n;
        if (restricted()) {
            const double worst = (lambdas_.transpose() * v).cwiseAbs().maxCoeff();
            if (worst > slack_) v *= slack_ / worst;
        }
        return v;
    }

    [[nodiscard]] double max_delta_norm() const {
        double s = 0.0;
        for (const auto& d : model_->deltas()) s += d.norm();
        return s;
    }

    const QuadMomentModel* model_;
    double radius_;
    double slack_;
    Matrix lambdas_;  // k x L complement constraints, empty if unrestricted
    Vector s_max_;    // per-direction feasible range for s
    Matrix dirs_;  // k x n
    Matrix g_;     // m x n, G vec(d d^T)
    Matrix wg_;    // m x n, W G vec(d d^T)
    Vector b_;     // ||G vec(d d^T)||_W^2
};

/// Inner solver for a structural estimator, honouring its complement restriction.
inline BallQuarticSolver make_structural_solver(const QuadMomentModel& model, const IdentifiedSetEstimate& gamma_set,
                                               const DerivEstimator& est) {
    if (!est.restrict_to_complement) return BallQuarticSolver(model, est.ball_radius());
    return BallQuarticSolver(model, est.ball_radius(), 0, gamma_set.points, std::sqrt(*est.kappa));
}

/**
 * Structural estimate of the CH second derivative:
 * min over gamma in the set, min over ||v|| <= radius, of ||h(gamma) + G vec(v v^T)||_W^2.
 *
 * `inner_starts` is the number of scan candidates (pooled across all set
 * points) that are locally polished.
 */
inline double structural_deriv_ch(const BallQuarticSolver& solver, const IdentifiedSetEstimate& gamma_set,
                                  const DirectionFn& h, std::size_t inner_starts = 3) {
    if (gamma_set.points.empty()) throw NumericalError("structural derivative: empty identified set");
    struct Pooled {
        BallQuarticSolver::ScanHit hit;
        std::size_t point;
    };
    std::vector<Pooled> pool;
    std::vector<BallQuarticSolver::ScanHit> hits;
    std::vector<Vector> h_values(gamma_set.points.size());
    const std::size_t keep = std::max<std::size_t>(inner_starts, 1);
    for (std::size_t i = 0; i < gamma_set.points.size(); ++i) {
        // an even direction takes the same value at a point and its sign flip
        if (h.even() && i > 0 && gamma_set.points[i].coords() == -gamma_set.points[i - 1].coords()) continue;
        h_values[i] = h(gamma_set.points[i]);
        solver.scan(h_values[i], keep, hits);
        for (const auto& hit : hits) {
            if (pool.size() < keep || hit.value < pool.back().hit.value) {
                Pooled p{hit, i};
                auto pos = std::upper_bound(pool.begin(), pool.end(), p, [](const Pooled& x, const Pooled& y) {
                    return x.hit.value < y.hit.value;
                });
                pool.insert(pos, p);
                if (pool.size() > keep) pool.pop_back();
            }
        }
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pool) best = std::min(best, solver.polish(h_values[p.point], p.hit).value);
    return std::max(best, 0.0);
}

inline double structural_deriv_ch(const QuadMomentModel& model, const IdentifiedSetEstimate& gamma_set,
                                  const DerivEstimator& est, const DirectionFn& h, std::size_t inner_starts = 3) {
    est.validate();
    detail::require(est.kind == DerivEstimator::Kind::structural_ch, "structural_deriv_ch: estimator kind must be structural_ch");
    return structural_deriv_ch(make_structural_solver(model, gamma_set, est), gamma_set, h, inner_starts);
}

/// (phi_at(step) - phi_at(0)) / step^2.
template <class PhiAt>
double numerical_deriv(PhiAt&& phi_at, double step) {
    detail::require(step > 0.0, "numerical_deriv: step must be positive");
    return (phi_at(step) - phi_at(0.0)) / (step * step);
}

/// Numerical estimate for the CH functional, reusing the sphere minimizer.
/// `phi_hat` is the unperturbed minimum; the perturbed model is G + t sqrt(T) (G* - G).
inline double numerical_deriv_ch(const QuadMomentModel& model, const QuadMomentModel& model_star, double phi_hat,
                                 double step, const SphereOptions& opts = {}) {
    const double root_t = std::sqrt(static_cast<double>(model.sample_size()));
    auto phi_at = [&](double t) {
        if (t == 0.0) return phi_hat;
        return minimize_on_sphere(model.shifted_toward(model_star, t * root_t), opts).value;
    };
    return numerical_deriv(phi_at, step);
}

/// Known second derivative of theta -> theta^2: h^2.
inline double closed_form_deriv_squared_mean(double h) { return h * h; }

/// Moment-selection estimate of the derivative of theta -> max(theta, 0)^2.
inline double gms_deriv_moment_ineq(double xbar, double kappa_n, double h) {
    detail::require(kappa_n > 0.0, "gms: kappa_n must be positive");
    if (xbar > kappa_n) return h * h;
    if (xbar < -kappa_n) return 0.0;
    const double hp = std::max(h, 0.0);
    return hp * hp;
}

/// Integral of h^2 against known probability weights.
inline double cvm_deriv(std::span<const double> h, std::span<const double> weights) {
    detail::require(h.size() == weights.size(), "cvm: h and weights must have equal length");
    double total = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        detail::require(weights[i] >= 0.0, "cvm: weights must be nonnegative");
        total += weights[i];
        acc += weights[i] * h[i] * h[i];
    }
    detail::require(std::abs(total - 1.0) <= 1e-9, "cvm: weights must sum to 1");
    return acc;
}

/// Result of min ||b - A x||^2 subject to ||x|| <= radius.
struct BallLsqResult {
    Vector x;
    double value;
    double multiplier;  // Lagrange multiplier, 0 if the ball is inactive
};

/**
 * Ball-constrained linear least squares.
 *
 * Uses the SVD. If the minimum-norm unconstrained solution lies in the ball it
 * is returned; otherwise the secular equation ||x(lambda)|| = radius with
 * x(lambda) = (A^T A + lambda I)^{-1} A^T b is solved by safeguarded Newton on
 * 1/||x(lambda)|| - 1/radius.
 */
inline BallLsqResult ball_constrained_lsq(const Matrix& a, const Vector& b, double radius) {
    detail::require(a.rows() == b.size(), "ball lsq: dimension mismatch");
    detail::require(radius > 0.0, "ball lsq: radius must be positive");
    const Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sigma = svd.singularValues();
    const Vector c = svd.matrixU().transpose() * b;
    const double tol = sigma.size() ? sigma(0) * 1e-12 * static_cast<double>(std::max(a.rows(), a.cols())) : 0.0;

    auto coeffs = [&](double lambda) {
        Vector y = Vector::Zero(sigma.size());
        for (Eigen::Index i = 0; i < sigma.size(); ++i)
            if (sigma(i) > tol) y(i) = sigma(i) * c(i) / (sigma(i) * sigma(i) + lambda);
        return y;
    };

    Vector y = coeffs(0.0);
    double lambda = 0.0;
    if (y.norm() > radius) {
        // 1/||y(lambda)|| is concave increasing in lambda; Newton from the left converges monotonically
        double lo = 0.0;
        double hi = 1.0;
        while (coeffs(hi).norm() > radius) hi *= 2.0;
        lambda = 0.0;
        for (int it = 0; it < 200; ++it) {
            const Vector yl = coeffs(lambda);
            const double nrm = yl.norm();
            const double f = 1.0 / nrm - 1.0 / radius;
            if (std::abs(nrm - radius) <= 1e-14 * radius) break;
            if (f < 0.0)
                lo = lambda;
            else
                hi = lambda;
            // d||y||/dlambda = -sum sigma^2 c^2 / (sigma^2 + lambda)^3 / ||y||
            double dn = 0.0;
            for (Eigen::Index i = 0; i < sigma.size(); ++i)
                if (sigma(i) > tol) {
                    const double den = sigma(i) * sigma(i) + lambda;
                    dn -= sigma(i) * sigma(i) * c(i) * c(i) / (den * den * den);
                }
            dn /= nrm;
            const double df = -dn / (nrm * nrm);
            double next = df > 0.0 ? lambda - f / df : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
            lambda = next;
        }
        y = coeffs(lambda);
        // land exactly on the sphere
        const double n = y.norm();
        if (n > 0.0) y *= radius / n;
    }
    Vector x = svd.matrixV() * y;
    return {x, (b - a * x).squaredNorm(), lambda};
}

/// Symmetric square root of a positive definite weight.
inline Matrix weight_sqrt(const Matrix& w) {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(w);
    detail::require(es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.0,
                    "weight must be symmetric positive definite");
    return es.operatorSqrt();
}

/**
 * Structural estimate for the over-identification functional:
 * min over listed points of min_{||v|| <= radius} (h - J v)^T W (h - J v).
 */
inline double jtest_structural_deriv(std::span<const Vector> points, const std::function<Matrix(const Vector&)>& jac_hat,
                                     const Matrix& weight, double radius,
                                     const std::function<Vector(const Vector&)>& h) {
    detail::require(!points.empty(), "jtest derivative: need at least one point");
    const Matrix wroot = weight_sqrt(weight);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : points) {
        const Matrix j = jac_hat(p);
        const Vector hv = h(p);
        detail::require(j.rows() == hv.size() && j.rows() == weight.rows(), "jtest derivative: dimension mismatch");
        const BallLsqResult r = ball_constrained_lsq(wroot * j, wroot * hv, radius);
        best = std::min(best, r.value);
    }
    return std::max(best, 0.0);
}

}  // namespace degboot
