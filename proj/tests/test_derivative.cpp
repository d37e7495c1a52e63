#include <catch_amalgamated.hpp>

#include <degboot/derivative.hpp>
#include <degboot/oracle.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

using namespace degboot;

namespace {

IdentifiedSetEstimate single_point(const Vector& g) {
    IdentifiedSetEstimate set;
    const SphereVec s = SphereVec::normalize(g);
    set.points = {s, s.flipped()};
    return set;
}

DirectionFn constant_direction(const Vector& h) {
    return DirectionFn([h](const SphereVec&) -> Vector { return h; }, true);
}

// Brute force over a polar grid of the disc; independent of the library's solver and oracle.
double polar_grid_min(const QuadMomentModel& model, const Vector& h, double radius) {
    double best = model.wnorm2(h);
    constexpr int kRadial = 400;
    constexpr int kAngular = 1440;
    for (int i = 1; i <= kRadial; ++i) {
        const double rho = radius * i / kRadial;
        for (int a = 0; a < kAngular; ++a) {
            const double ang = std::numbers::pi * a / kAngular;  // v and -v give the same value
            Vector v(2);
            v << rho * std::cos(ang), rho * std::sin(ang);
            Vector r = h;
            for (Eigen::Index j = 0; j < model.m(); ++j) r(j) += v.dot(model.delta(j) * v);
            best = std::min(best, model.wnorm2(r));
        }
    }
    return best;
}

}  // namespace

TEST_CASE("estimator descriptors validate their tuning") {
    CHECK_THROWS_AS(DerivEstimator::structural(0.0), ValidationError);
    CHECK_THROWS_AS(DerivEstimator::numerical(-1.0), ValidationError);
    DerivEstimator bad{DerivEstimator::Kind::structural_ch, std::nullopt, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK(DerivEstimator::structural(0.25).ball_radius() == 2.0);
    auto e = DerivEstimator::structural(0.25);
    e.radius = 7.0;
    CHECK(e.ball_radius() == 7.0);
    CHECK(parse_ch_estimator("CF1") == DerivEstimator::Kind::structural_ch);
    CHECK(parse_ch_estimator("numerical") == DerivEstimator::Kind::numerical);
    CHECK_THROWS_AS(parse_ch_estimator("exact"), ValidationError);
}

TEST_CASE("kappa rules") {
    CHECK(KappaRule::quarter().value(10000.0) == Catch::Approx(0.1));
    CHECK(KappaRule::third().value(1000.0) == Catch::Approx(0.1));
    CHECK(KappaRule::two_fifths().value(32.0) == Catch::Approx(0.25));
    CHECK(KappaRule::parse("T^-1/4").exponent == 0.25);
    CHECK(KappaRule::parse("T^-0.3").exponent == Catch::Approx(0.3));
    CHECK_THROWS_AS(KappaRule::parse("T^-0.7"), ValidationError);
    CHECK_THROWS_AS(KappaRule::parse("sqrt"), ValidationError);
}

TEST_CASE("structural: zero direction gives zero") {
    RandomStream rng(1);
    const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(3, 2, rng), 100);
    const auto set = estimate_identified_set(model, 0.5, 500);
    CHECK(structural_deriv_ch(model, set, DerivEstimator::structural(0.1), DirectionFn::zero(2)) == 0.0);
}

TEST_CASE("structural: vanishing G leaves the direction untouched") {
    const auto model = QuadMomentModel::from_deltas({Matrix::Zero(2, 2), Matrix::Zero(2, 2)}, 100);
    Vector h(2);
    h << 0.7, -1.1;
    const auto set = single_point(Vector::Unit(2, 0));
    const double d = structural_deriv_ch(model, set, DerivEstimator::structural(0.1), constant_direction(h));
    CHECK(d == Catch::Approx(h.squaredNorm()).epsilon(1e-14));
}

TEST_CASE("structural: indefinite Delta absorbs the direction") {
    Matrix delta(2, 2);
    delta << 1.0, 0.0, 0.0, -1.0;
    const auto model = QuadMomentModel::from_deltas({delta}, 100);
    Vector g0(2);
    g0 << 1.0, -1.0;
    const auto set = single_point(g0);
    const Vector h = Vector::Constant(1, -1.0);
    auto est = DerivEstimator::structural(0.01);
    est.radius = 10.0;
    const double fast = structural_deriv_ch(model, set, est, constant_direction(h));
    CHECK(polar_grid_min(model, h, 10.0) < 1e-3);
    CHECK(fast < 1e-12);
}

TEST_CASE("structural: agrees with a polar grid on random toys") {
    RandomStream rng(7);
    for (int i = 0; i < 12; ++i) {
        const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(2, 3, rng), 100);
        const auto star = QuadMomentModel::from_deltas(oracle::random_deltas(2, 3, rng), 100);
        const auto set = estimate_identified_set(model, 0.3, 60);
        const auto est = DerivEstimator::structural(0.3);
        const auto h = DirectionFn::quadratic(star.g_mat());
        const double fast = structural_deriv_ch(model, set, est, h);
        double slow = std::numeric_limits<double>::infinity();
        for (const auto& p : set.points) slow = std::min(slow, polar_grid_min(model, h(p), est.ball_radius()));
        // the polar grid is coarse, so it can only be slightly worse than the solver
        CHECK(fast <= slow * (1.0 + 1e-9) + 1e-12);
        CHECK(fast >= slow - 5e-3 * (1.0 + slow));
    }
}

TEST_CASE("structural: monotone in radius and in the set") {
    RandomStream rng(8);
    for (int i = 0; i < 8; ++i) {
        const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(3, 3, rng), 100);
        const auto star = QuadMomentModel::from_deltas(oracle::random_deltas(3, 3, rng), 100);
        const auto h = DirectionFn::quadratic(0.5 * star.g_mat());
        const auto small_set = estimate_identified_set(model, 0.2, 1500);
        const auto big_set = estimate_identified_set(model, 0.6, 1500);
        double previous = std::numeric_limits<double>::infinity();
        for (double r : {0.1, 0.5, 1.0, 2.0}) {
            auto est = DerivEstimator::structural(0.2);
            est.radius = r;
            const double d = structural_deriv_ch(model, small_set, est, h, 6);
            CHECK(d <= previous * (1.0 + 1e-9) + 1e-13);
            previous = d;
            // every point of the small set is within reach of the big set's scan
            CHECK(structural_deriv_ch(model, big_set, est, h, 6) <= d * (1.0 + 1e-6) + 1e-9);
        }
    }
}

TEST_CASE("structural: never exceeds the uncorrected value and stays nonnegative") {
    RandomStream rng(9);
    for (int i = 0; i < 10; ++i) {
        const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(2, 2, rng), 100);
        const auto star = QuadMomentModel::from_deltas(oracle::random_deltas(2, 2, rng), 100);
        const auto set = estimate_identified_set(model, 0.4, 200);
        const auto h = DirectionFn::quadratic(star.g_mat());
        double plain = std::numeric_limits<double>::infinity();
        for (const auto& p : set.points) plain = std::min(plain, h(p).squaredNorm());
        const double d = structural_deriv_ch(model, set, DerivEstimator::structural(0.4), h);
        CHECK(d >= 0.0);
        CHECK(d <= plain + 1e-12);
    }
}

TEST_CASE("structural: confining v to the complement never lowers the estimate") {
    RandomStream rng(10);
    for (int i = 0; i < 10; ++i) {
        const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(3, 2, rng), 100);
        const auto star = QuadMomentModel::from_deltas(oracle::random_deltas(3, 2, rng), 100);
        const auto set = estimate_identified_set(model, 0.3, 1500);
        const auto h = DirectionFn::quadratic(star.g_mat());
        auto est = DerivEstimator::structural(0.3);
        const double full = structural_deriv_ch(model, set, est, h, 8);
        est.restrict_to_complement = true;
        const double restricted = structural_deriv_ch(model, set, est, h, 8);
        CHECK(restricted >= full * (1.0 - 1e-6) - 1e-9);
    }
}

TEST_CASE("structural: feasible steps respect both constraints") {
    RandomStream rng(11);
    const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(3, 2, rng), 100);
    const auto set = estimate_identified_set(model, 0.3, 1500);
    const double slack = 0.4;
    const BallQuarticSolver solver(model, 2.0, 0, set.points, slack);
    CHECK(solver.restricted());
    for (int i = 0; i < 50; ++i) {
        const Vector d = oracle::random_unit(3, rng);
        const double s = solver.max_step(d);
        const Vector v = std::sqrt(s) * d;
        CHECK(v.norm() <= 2.0 * (1.0 + 1e-12));
        for (const auto& p : set.points) CHECK(std::abs(v.dot(p.coords())) <= slack * (1.0 + 1e-12));
    }
    CHECK_THROWS_AS(structural_deriv_ch(solver, IdentifiedSetEstimate{}, DirectionFn::zero(2)), NumericalError);
}

TEST_CASE("numerical differentiation of the squared mean") {
    const double h = 0.8;
    auto square_at = [&](double theta_hat) {
        return [theta_hat, h](double t) {
            const double x = theta_hat + t * h;
            return x * x;
        };
    };
    for (double t : {0.5, 0.1, 0.01}) CHECK(numerical_deriv(square_at(0.0), t) == Catch::Approx(h * h).epsilon(1e-14));
    const double theta_hat = 0.3;
    for (double t : {0.5, 0.1, 0.01}) {
        const double expected = 2.0 * theta_hat * h / t + h * h;
        CHECK(numerical_deriv(square_at(theta_hat), t) == Catch::Approx(expected).epsilon(1e-10));
    }
    CHECK(numerical_deriv([](double) { return 3.0; }, 0.2) == 0.0);
    CHECK_THROWS_AS(numerical_deriv([](double) { return 0.0; }, 0.0), ValidationError);
}

TEST_CASE("numerical CH estimator: unchanged resample gives zero") {
    RandomStream rng(12);
    const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(2, 3, rng), 400);
    const double phi = minimize_on_sphere(model).value;
    CHECK(numerical_deriv_ch(model, model, phi, 0.2) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("numerical CH estimator matches its defining ratio") {
    RandomStream rng(13);
    const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(2, 3, rng), 400);
    const auto star = QuadMomentModel::from_deltas(oracle::random_deltas(2, 3, rng), 400);
    const double phi = minimize_on_sphere(model).value;
    const double t = 0.05;
    // the perturbed model written out entry by entry
    std::vector<Matrix> shifted;
    for (Eigen::Index j = 0; j < 3; ++j) shifted.push_back(model.delta(j) + t * 20.0 * (star.delta(j) - model.delta(j)));
    const double perturbed = grid_oracle_sphere(QuadMomentModel::from_deltas(shifted, 400), 4000, 6).value;
    CHECK(numerical_deriv_ch(model, star, phi, t) == Catch::Approx((perturbed - phi) / (t * t)).epsilon(1e-5));
}

TEST_CASE("closed-form squared-mean derivative") {
    CHECK(closed_form_deriv_squared_mean(0.0) == 0.0);
    CHECK(closed_form_deriv_squared_mean(3.0) == 9.0);
    CHECK(closed_form_deriv_squared_mean(-2.0) == 4.0);
    for (double t : {-3.0, 0.5, 2.0}) CHECK(closed_form_deriv_squared_mean(t * 1.5) == t * t * closed_form_deriv_squared_mean(1.5));
}

TEST_CASE("moment-selection derivative") {
    CHECK(gms_deriv_moment_ineq(0.5, 0.1, -1.0) == 1.0);
    CHECK(gms_deriv_moment_ineq(0.05, 0.1, -1.0) == 0.0);
    CHECK(gms_deriv_moment_ineq(0.05, 0.1, 2.0) == 4.0);
    CHECK(gms_deriv_moment_ineq(-0.5, 0.1, 7.0) == 0.0);
    CHECK(gms_deriv_moment_ineq(0.3, 0.1, 0.0) == 0.0);
    for (double xbar : {0.5, 0.05, -0.5})
        for (double t : {0.5, 2.0}) CHECK(gms_deriv_moment_ineq(xbar, 0.1, t * 0.75) == t * t * gms_deriv_moment_ineq(xbar, 0.1, 0.75));
    CHECK_THROWS_AS(gms_deriv_moment_ineq(0.0, 0.0, 1.0), ValidationError);
}

TEST_CASE("integrated-square derivative") {
    const std::vector<double> w(8, 0.125);
    CHECK(cvm_deriv(std::vector<double>(8, 0.0), w) == 0.0);
    CHECK(cvm_deriv(std::vector<double>(8, 1.7), w) == Catch::Approx(1.7 * 1.7));
    std::vector<double> half(8, 0.0);
    for (int i = 0; i < 4; ++i) half[static_cast<std::size_t>(i)] = 1.0;
    double direct = 0.0;
    for (std::size_t i = 0; i < 8; ++i) direct += w[i] * half[i] * half[i];
    CHECK(cvm_deriv(half, w) == direct);
    CHECK(direct == 0.5);
    std::vector<double> neg = w;
    neg[0] = -0.125;
    neg[1] = 0.375;
    CHECK_THROWS_AS(cvm_deriv(half, neg), ValidationError);
    CHECK_THROWS_AS(cvm_deriv(half, std::vector<double>(8, 0.1)), ValidationError);
    CHECK_THROWS_AS(cvm_deriv(half, std::vector<double>(3, 1.0 / 3.0)), ValidationError);
}

TEST_CASE("ball-constrained least squares") {
    RandomStream rng(14);
    Matrix a(5, 2);
    for (Eigen::Index r = 0; r < 5; ++r)
        for (Eigen::Index c = 0; c < 2; ++c) a(r, c) = rng.normal();
    Vector b(5);
    for (Eigen::Index r = 0; r < 5; ++r) b(r) = rng.normal();

    const Vector x_free = (a.transpose() * a).ldlt().solve(a.transpose() * b);
    const auto big = ball_constrained_lsq(a, b, 1e6);
    CHECK((big.x - x_free).norm() < 1e-10);
    CHECK(big.multiplier == 0.0);

    const double r = 0.25 * x_free.norm();
    const auto small = ball_constrained_lsq(a, b, r);
    CHECK(small.x.norm() == Catch::Approx(r).epsilon(1e-10));
    CHECK(small.multiplier > 0.0);
    // compare against a scan of the constraint circle, where the optimum must lie
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 200000; ++i) {
        const double ang = 2.0 * std::numbers::pi * i / 200000.0;
        Vector x(2);
        x << r * std::cos(ang), r * std::sin(ang);
        best = std::min(best, (b - a * x).squaredNorm());
    }
    CHECK(small.value <= best + 1e-12);
    CHECK(small.value >= best - 1e-8);
}

TEST_CASE("ball-constrained least squares with a rank-deficient matrix") {
    Matrix a(3, 2);
    a << 1, 2, 2, 4, 3, 6;
    Vector b(3);
    b << 1, 0, 2;
    const auto res = ball_constrained_lsq(a, b, 100.0);
    const Vector u = a.col(0) / a.col(0).norm();
    CHECK(res.value == Catch::Approx((b - u * u.dot(b)).squaredNorm()).epsilon(1e-10));
    // minimum-norm solution is parallel to (1, 2)
    CHECK(std::abs(res.x(1) - 2.0 * res.x(0)) < 1e-10);
}

TEST_CASE("over-identification derivative") {
    Matrix j(4, 2);
    j << 1, 0, 0, 1, 1, 1, 2, -1;
    Vector hv(4);
    hv << 0.3, -1.0, 2.0, 0.5;
    const std::vector<Vector> pts = {Vector::Zero(2)};
    auto jac = [&](const Vector&) { return j; };
    auto h = [&](const Vector&) { return hv; };
    const Matrix eye = Matrix::Identity(4, 4);

    const Matrix proj = eye - j * (j.transpose() * j).inverse() * j.transpose();
    CHECK(jtest_structural_deriv(pts, jac, eye, 1e6, h) == Catch::Approx((proj * hv).squaredNorm()).epsilon(1e-10));
    CHECK(jtest_structural_deriv(pts, jac, eye, 1e6, [](const Vector&) { return Vector(Vector::Zero(4)); }) == 0.0);

    auto zero_jac = [](const Vector&) { return Matrix(Matrix::Zero(4, 2)); };
    const std::vector<Vector> two = {Vector::Zero(2), Vector::Ones(2)};
    auto h2 = [&](const Vector& p) { return Vector(p(0) > 0.5 ? Vector(0.5 * hv) : hv); };
    Matrix w = Matrix::Identity(4, 4);
    w(0, 0) = 3.0;
    const Vector half = 0.5 * hv;
    CHECK(jtest_structural_deriv(two, zero_jac, w, 1.0, h2) == Catch::Approx(half.dot(w * half)).epsilon(1e-12));

    // the radius binds: the value can only go up as the ball shrinks
    double previous = 0.0;
    for (double r : {10.0, 1.0, 0.3, 0.05}) {
        const double d = jtest_structural_deriv(pts, jac, eye, r, h);
        CHECK(d >= previous - 1e-12);
        previous = d;
    }
    CHECK_THROWS_AS(jtest_structural_deriv(std::vector<Vector>{}, jac, eye, 1.0, h), ValidationError);
}
