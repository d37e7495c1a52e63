#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "degboot/error.hpp"
#include "degboot/resample.hpp"
#include "degboot/simulate.hpp"

namespace degboot {

/// Point on the unit sphere in R^k.
class SphereVec {
  public:
    static constexpr double kNormTol = 1e-12;

    explicit SphereVec(Vector coords) : coords_(std::move(coords)) {
        detail::require(coords_.size() >= 1, "sphere vector must be nonempty");
        detail::require(std::abs(coords_.norm() - 1.0) <= kNormTol, "sphere vector must have unit norm");
    }

    /// Projects any nonzero vector onto the sphere.
    static SphereVec normalize(const Vector& v) {
        const double n = v.norm();
        detail::require(n > 0.0 && std::isfinite(n), "cannot normalize a zero or non-finite vector");
        Vector u = v / n;
        // one correction pass keeps the norm within a few ulps of 1
        u /= u.norm();
        return SphereVec(std::move(u));
    }

    [[nodiscard]] const Vector& coords() const noexcept { return coords_; }
    [[nodiscard]] Eigen::Index dim() const noexcept { return coords_.size(); }
    [[nodiscard]] double operator[](Eigen::Index i) const { return coords_(i); }
    [[nodiscard]] SphereVec flipped() const { return SphereVec(Vector(-coords_)); }

  private:
    Vector coords_;
};

/// vec(A) for a column vector outer product: vec(g g^T), column-major.
inline Vector vec_outer(const Vector& g) {
    const Eigen::Index k = g.size();
    Vector out(k * k);
    for (Eigen::Index c = 0; c < k; ++c)
        for (Eigen::Index r = 0; r < k; ++r) out(c * k + r) = g(r) * g(c);
    return out;
}

/**
 * Quadratic-form representation of the sample moment function.
 *
 * theta(gamma) = G vec(gamma gamma^T), with row j of G equal to vec(Delta_j)^T,
 * and the weighted criterion is theta^T W theta. Immutable once built.
 */
class QuadMomentModel {
  public:
    QuadMomentModel() = default;

    /// Builds from symmetric matrices Delta_1..Delta_m. Weight defaults to identity.
    static QuadMomentModel from_deltas(std::vector<Matrix> deltas, Eigen::Index sample_size,
                                       const std::optional<Matrix>& weight = std::nullopt) {
        detail::require(!deltas.empty(), "model: need at least one moment");
        const Eigen::Index k = deltas.front().rows();
        detail::require(k >= 1, "model: empty Delta matrix");
        for (const auto& d : deltas) {
            detail::require(d.rows() == k && d.cols() == k, "model: Delta matrices must all be k x k");
            detail::require(d.allFinite(), "model: non-finite Delta entry");
            detail::require((d - d.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + d.cwiseAbs().maxCoeff()),
                            "model: Delta matrices must be symmetric");
        }
        QuadMomentModel model;
        const auto m = static_cast<Eigen::Index>(deltas.size());
        model.g_mat_.resize(m, k * k);
        for (Eigen::Index j = 0; j < m; ++j)
            model.g_mat_.row(j) = Eigen::Map<const Vector>(deltas[static_cast<std::size_t>(j)].data(), k * k).transpose();
        model.deltas_ = std::move(deltas);
        model.sample_size_ = sample_size;
        model.weight_ = weight ? *weight : Matrix::Identity(m, m);
        model.check_weight();
        model.identity_weight_ = model.weight_.isIdentity(0.0);
        return model;
    }

    [[nodiscard]] const std::vector<Matrix>& deltas() const noexcept { return deltas_; }
    [[nodiscard]] const Matrix& delta(Eigen::Index j) const { return deltas_[static_cast<std::size_t>(j)]; }
    [[nodiscard]] const Matrix& g_mat() const noexcept { return g_mat_; }
    [[nodiscard]] const Matrix& weight() const noexcept { return weight_; }
    [[nodiscard]] bool identity_weight() const noexcept { return identity_weight_; }
    [[nodiscard]] Eigen::Index sample_size() const noexcept { return sample_size_; }
    [[nodiscard]] Eigen::Index m() const noexcept { return g_mat_.rows(); }
    [[nodiscard]] Eigen::Index k() const noexcept { return deltas_.empty() ? 0 : deltas_.front().rows(); }

    /// Squared W-norm of an m-vector.
    [[nodiscard]] double wnorm2(const Vector& r) const {
        if (identity_weight_) return r.squaredNorm();
        return r.dot(weight_ * r);
    }

    /// W-inner product of two m-vectors.
    [[nodiscard]] double winner(const Vector& a, const Vector& b) const {
        if (identity_weight_) return a.dot(b);
        return a.dot(weight_ * b);
    }

    /// Model whose Delta_j are base.Delta_j + scale * (other.Delta_j - base.Delta_j).
    [[nodiscard]] QuadMomentModel shifted_toward(const QuadMomentModel& other, double scale) const {
        detail::require(other.m() == m() && other.k() == k(), "model: dimension mismatch");
        std::vector<Matrix> d(deltas_.size());
        for (std::size_t j = 0; j < d.size(); ++j) d[j] = deltas_[j] + scale * (other.deltas_[j] - deltas_[j]);
        return from_deltas(std::move(d), sample_size_, weight_);
    }

  private:
    void check_weight() const {
        const Eigen::Index m = g_mat_.rows();
        detail::require(weight_.rows() == m && weight_.cols() == m, "model: weight must be m x m");
        detail::require(weight_.allFinite(), "model: non-finite weight");
        detail::require((weight_ - weight_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + weight_.cwiseAbs().maxCoeff()),
                        "model: weight must be symmetric");
        Eigen::LLT<Matrix> llt(weight_);
        detail::require(llt.info() == Eigen::Success, "model: weight must be positive definite");
        const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
        detail::require(diag.minCoeff() > 0.0, "model: weight must be positive definite");
    }

    std::vector<Matrix> deltas_;
    Matrix g_mat_;
    Matrix weight_;
    Eigen::Index sample_size_ = 0;
    bool identity_weight_ = true;
};

namespace detail {

// Mean computed around the first element so a constant column has an exact mean.
inline double shifted_mean(const Eigen::Ref<const Vector>& x) {
    const double x0 = x(0);
    return x0 + (x.array() - x0).sum() / static_cast<double>(x.size());
}

inline QuadMomentModel fit_rows(const Matrix& y, const Matrix& z, const std::optional<Matrix>& weight) {
    const Eigen::Index t = y.rows();
    const Eigen::Index k = y.cols();
    const Eigen::Index m = z.cols();
    const double inv_t = 1.0 / static_cast<double>(t);
    std::vector<Matrix> deltas(static_cast<std::size_t>(m));
    Vector zc(t);
    for (Eigen::Index j = 0; j < m; ++j) {
        const double zbar = shifted_mean(z.col(j));
        zc = z.col(j).array() - zbar;
        Matrix d = Matrix::Zero(k, k);
        for (Eigen::Index c = 0; c < k; ++c) {
            for (Eigen::Index r = 0; r <= c; ++r) {
                double acc = 0.0;
                for (Eigen::Index s = 0; s < t; ++s) acc += zc(s) * y(s, r) * y(s, c);
                d(r, c) = acc * inv_t;
                d(c, r) = d(r, c);
            }
        }
        deltas[static_cast<std::size_t>(j)] = std::move(d);
    }
    return QuadMomentModel::from_deltas(std::move(deltas), t, weight);
}

}  // namespace detail

/**
 * Fits Delta_j = (1/T) sum_t Z_t^(j) Y_{t+1} Y_{t+1}^T - zbar_j * (1/T) sum_t Y_{t+1} Y_{t+1}^T,
 * computed in the equivalent centered form (1/T) sum_t (Z_t^(j) - zbar_j) Y_{t+1} Y_{t+1}^T.
 */
inline QuadMomentModel fit_quadratic_moments(const PanelData& panel, const std::optional<Matrix>& weight = std::nullopt) {
    panel.validate();
    return detail::fit_rows(panel.y, panel.z, weight);
}

/// Rows (Z_t, Y_{t+1}) gathered at the given indices; the pair always moves together.
inline PanelData gather_rows(const PanelData& panel, std::span<const std::size_t> idx) {
    PanelData out;
    out.y.resize(static_cast<Eigen::Index>(idx.size()), panel.k());
    out.z.resize(static_cast<Eigen::Index>(idx.size()), panel.m());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        detail::require(idx[i] < static_cast<std::size_t>(panel.size()), "resample index out of range");
        out.y.row(static_cast<Eigen::Index>(i)) = panel.y.row(static_cast<Eigen::Index>(idx[i]));
        out.z.row(static_cast<Eigen::Index>(i)) = panel.z.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

/// theta(gamma) = G vec(gamma gamma^T).
inline Vector eval_theta(const QuadMomentModel& model, const SphereVec& gamma) {
    detail::require(gamma.dim() == model.k(), "eval_theta: dimension mismatch");
    return model.g_mat() * vec_outer(gamma.coords());
}

/// theta(gamma)^T W theta(gamma).
inline double eval_phi(const QuadMomentModel& model, const SphereVec& gamma) {
    return model.wnorm2(eval_theta(model, gamma));
}

/// Bootstrap analog: resample aligned rows per the scheme, then refit (c-hat is recomputed).
inline QuadMomentModel bootstrap_model(const PanelData& panel, const BootstrapScheme& scheme, RandomStream& rng,
                                       const std::optional<Matrix>& weight = std::nullopt) {
    panel.validate();
    const auto idx = resample_indices(scheme, static_cast<std::size_t>(panel.size()), rng);
    const PanelData star = gather_rows(panel, idx);
    return detail::fit_rows(star.y, star.z, weight ? weight : std::optional<Matrix>{});
}

}  // namespace degboot
