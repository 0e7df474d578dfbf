#include "tonelab/franks.hpp"
#include "tonelab/presets.hpp"
#include "tonelab/spectrum.hpp"

#include <doctest.h>

#include <random>

using namespace tonelab;

namespace {

Vec v2(double a, double b)
{
    Vec v(2);
    v << a, b;
    return v;
}

Mat random_sym(int n, std::mt19937_64& rng, double s = 1.0)
{
    std::normal_distribution<double> N(0.0, s);
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) A(i, j) = A(j, i) = N(rng);
    return A;
}

// K with eigenvalues spread at least `gap` apart, and its eigenvectors.
std::pair<Mat, Mat> random_K(int n, std::mt19937_64& rng, double gap = 0.3)
{
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec lam(n);
    double x = -2.0 * U(rng);
    for (int i = 0; i < n; ++i) lam(i) = x, x += gap + U(rng);
    const Mat Q = Eigen::HouseholderQR<Mat>(random_sym(n, rng)).householderQ();
    return {Q * lam.asDiagonal() * Q.transpose(), Q};
}

// d with zero diagonal in the eigenbasis Q, the convention of solve_commutator.
Mat random_d(int n, const Mat& Q, std::mt19937_64& rng)
{
    Mat dt = random_sym(n, rng);
    dt.diagonal().setZero();
    return sym(Q * dt * Q.transpose());
}

PerturbationParams random_w(int n, const Mat& Q, std::mt19937_64& rng)
{
    PerturbationParams w{random_sym(n, rng), random_sym(n, rng), random_sym(n, rng), Mat::Zero(n, n)};
    if (n > 1) w.d = random_d(n, Q, rng);
    return w;
}

struct Pendulum {
    LagrangianModel model = pendulum();
    ConstantsLedger ledger;
    ClosedOrbit ell, hyp;
    std::optional<SegmentContext> ectx, hctx;

    Pendulum()
    {
        ledger = estimate_constants(model, 0.5, 0.0, 8);
        ell = find_closed_orbit_shooting(model, 0.5, PhaseState::tangent(v2(0.53, 0), v2(0.03, 1.1)));
        hyp = find_closed_orbit_shooting(model, 0.5, PhaseState::tangent(v2(0.01, 0.1), v2(0.02, 0.894)));
        ectx.emplace(prepare_orbit_segment(model, ell, 1.5 * ledger.k0, ledger));
        hctx.emplace(prepare_orbit_segment(model, hyp, 1.5 * ledger.k0, ledger));
    }
};

const Pendulum& pend()
{
    static const Pendulum p;
    return p;
}

struct FreeTorus {
    LagrangianModel model = free_torus();
    ConstantsLedger ledger;
    std::optional<SegmentContext> ctx;

    FreeTorus()
    {
        ledger = estimate_constants(model, 0.5, 0.0, 8);
        OrbitSegment seg{PhaseState::tangent(v2(0.1, 0.3), v2(0.8, 0.6)), 1.5 * ledger.k0};
        ctx.emplace(prepare_segment(model, 0.5, seg, ledger));
    }
};

const FreeTorus& torus()
{
    static const FreeTorus f;
    return f;
}

PerturbationParams unit(int n, int k)
{
    const int D = PerturbationParams::dimension(n);
    return PerturbationParams::from_vector(n, Vec::Unit(D, k));
}

}  // namespace

TEST_CASE("h_n examples")
{
    CHECK(h_n(Mat::Constant(1, 1, -7.3)) == 1.0);
    Mat A = Eigen::Vector2d(1, 3).asDiagonal();
    CHECK(h_n(A) == doctest::Approx(4.0));
    CHECK(h_n(Mat(Eigen::Vector2d(2, 2).asDiagonal())) == doctest::Approx(0.0));
}

TEST_CASE("commutator equation")
{
    Mat K = Eigen::Vector2d(1, 2).asDiagonal();
    Mat e(2, 2);
    e << 0, 1, -1, 0;
    const Mat d = solve_commutator(K, e);
    Mat expect(2, 2);
    expect << 0, -1, -1, 0;
    CHECK((d - expect).norm() < 1e-14);
    CHECK((K * d - d * K - e).norm() < 1e-14);
    CHECK(solve_commutator(K, Mat::Zero(2, 2)).norm() == 0.0);
    Mat K2 = Eigen::Vector2d(2, 2).asDiagonal();
    try {
        solve_commutator(K2, e);
        FAIL("expected near-resonance");
    } catch (const NumericalError& err) {
        CHECK(err.kind() == "near-resonance");
    }
    CHECK_THROWS_AS(solve_commutator(K, Mat::Identity(2, 2)), ValidationError);
}

TEST_CASE("commutator bound and residual hold on random systems")
{
    std::mt19937_64 rng(11);
    for (int n : {2, 3, 4})
        for (int trial = 0; trial < 100; ++trial) {
            auto [K, Q] = random_K(n, rng, 1e-3 + 0.5 * (trial % 5));
            Mat e = random_sym(n, rng);
            e = 0.5 * (e - e.transpose()).eval();
            Mat r = random_sym(n, rng);
            e += r - r.transpose();
            const Mat d = solve_commutator(K, e);
            CHECK((K * d - d * K - e).norm() < 1e-9 * (1 + e.norm() / 1e-3));
            const Vec lam = Eigen::SelfAdjointEigenSolver<Mat>(K).eigenvalues();
            double gap = 1e300;
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) gap = std::min(gap, std::abs(lam(i) - lam(j)));
            CHECK(d.norm() <= e.norm() / gap * (1 + 1e-12));
            CHECK((d - d.transpose()).norm() == 0.0);
            CHECK((Q.transpose() * d * Q).diagonal().cwiseAbs().maxCoeff() < 1e-12 * (1 + d.norm()));
        }
}

TEST_CASE("T-system examples")
{
    const Mat K = Mat::Constant(1, 1, 2.0);
    LieAlgebraTarget t{Mat::Zero(1, 1), Mat::Zero(1, 1), Mat::Constant(1, 1, 1.0)};
    auto w = solve_T_system(K, t);
    CHECK(w.a(0, 0) == doctest::Approx(-2.0));
    CHECK(w.b(0, 0) == 0.0);
    CHECK(w.c(0, 0) == doctest::Approx(-0.5));
    CHECK(w.d(0, 0) == 0.0);
    t = {Mat::Constant(1, 1, 1.0), Mat::Zero(1, 1), Mat::Zero(1, 1)};
    w = solve_T_system(K, t);
    CHECK(w.to_vector() == Eigen::Vector3d(1, 0, 0));

    PerturbationParams p = PerturbationParams::zero(1);
    p.a(0, 0) = 1;
    auto T = assemble_T(K, p);
    CHECK(T.alpha(0, 0) == 1.0);
    CHECK(T.beta(0, 0) == 0.0);
    CHECK(T.gamma(0, 0) == 0.0);
    CHECK(assemble_T(K, PerturbationParams::zero(1)).matrix().norm() == 0.0);

    Mat K2 = Eigen::Vector2d(1, 3).asDiagonal(), K3 = Eigen::Vector2d(2, 2).asDiagonal();
    LieAlgebraTarget t2{Mat::Zero(2, 2), Mat::Zero(2, 2), Mat::Zero(2, 2)};
    t2.beta(0, 1) = 1.0;
    CHECK_NOTHROW(solve_T_system(K2, t2));
    CHECK_THROWS_AS(solve_T_system(K3, t2), NumericalError);
}

TEST_CASE("T-system round trip")
{
    std::mt19937_64 rng(21);
    for (int n : {1, 2, 3})
        for (int trial = 0; trial < 100; ++trial) {
            auto [K, Q] = random_K(n, rng);
            const PerturbationParams w = random_w(n, Q, rng);
            const PerturbationParams back = solve_T_system(K, assemble_T(K, w));
            CHECK((back.to_vector() - w.to_vector()).cwiseAbs().maxCoeff() < 1e-10);
            // and the other way round: assemble_T(solve_T_system(t)) = t
            const Mat T = assemble_T(K, w).matrix();
            CHECK((assemble_T(K, solve_T_system(K, LieAlgebraTarget::from_matrix(T))).matrix() - T).norm() < 1e-10);
        }
}

TEST_CASE("assemble_T is linear and lands in sp(n)")
{
    std::mt19937_64 rng(22);
    for (int n : {1, 2, 3})
        for (int trial = 0; trial < 30; ++trial) {
            auto [K, Q] = random_K(n, rng);
            const auto w1 = random_w(n, Q, rng), w2 = random_w(n, Q, rng);
            const Mat s = assemble_T(K, w1 + w2 * 0.7).matrix();
            const Mat parts = assemble_T(K, w1).matrix() + 0.7 * assemble_T(K, w2).matrix();
            CHECK((s - parts).norm() < 1e-13 * (1 + s.norm()));
            const Mat J = canonical_J(n);
            CHECK((s.transpose() * J + J * s).norm() < 1e-12 * (1 + s.norm()));
        }
}

TEST_CASE("parameter packing")
{
    std::mt19937_64 rng(23);
    for (int n : {1, 2, 3}) {
        CHECK(PerturbationParams::dimension(n) == 2 * n * n + n);
        auto [K, Q] = random_K(n, rng);
        PerturbationParams w = random_w(n, Q, rng);
        // the packing drops diag(d), so use a raw zero-diagonal d
        w.d.diagonal().setZero();
        const auto v = w.to_vector();
        CHECK(v.size() == PerturbationParams::dimension(n));
        CHECK((PerturbationParams::from_vector(n, v).to_vector() - v).norm() == 0.0);
    }
    CHECK_THROWS_AS(PerturbationParams::from_vector(2, Vec::Zero(3)), ValidationError);
}

TEST_CASE("cutoff family")
{
    CHECK(cutoff_1d(0.0)[0] == 1.0);
    CHECK(cutoff_1d(0.25)[0] == 1.0);
    CHECK(cutoff_1d(-0.5)[0] == 0.0);
    CHECK(cutoff_1d(0.7)[0] == 0.0);
    const auto [b1, b2] = cutoff_bounds();
    for (double s = -0.6; s <= 0.6; s += 0.0137) {
        const auto c = cutoff_1d(s);
        CHECK(c[0] >= 0.0);
        CHECK(c[0] <= 1.0);
        const double h = 1e-5;
        CHECK(std::abs((cutoff_1d(s + h)[0] - cutoff_1d(s - h)[0]) / (2 * h) - c[1]) < 1e-5 * (1 + b1));
        CHECK(std::abs((cutoff_1d(s + h)[1] - cutoff_1d(s - h)[1]) / (2 * h) - c[2]) < 1e-4 * (1 + b2));
        CHECK(std::abs(c[1]) <= b1 * (1 + 1e-9));
        CHECK(std::abs(c[2]) <= b2 * (1 + 1e-9));
    }
    CHECK(smooth_step(0.0)[0] == 0.0);
    CHECK(smooth_step(1.0)[0] == 1.0);
    CHECK(smooth_step(0.5)[0] == doctest::Approx(0.5));
}

TEST_CASE("bump profile invariants")
{
    const auto& P = pend().ectx->profile;
    const auto& L = pend().ledger;
    CHECK(std::abs(P.delta_integral() - 1.0) < 1e-10);
    CHECK(P.one_minus_h_integral() < L.rho);
    CHECK(P.h(P.tau)[0] == 1.0);
    CHECK(P.lambda_width == L.lambda_width);
    CHECK(P.delta(P.support_lo() - 1e-9)[0] == 0.0);
    CHECK(P.delta(P.support_hi() + 1e-9)[0] == 0.0);
    CHECK(P.delta_sup(0) == doctest::Approx(L.delta_c0).epsilon(1e-6));
    Vec y = Vec::Constant(1, 0.24 * P.eps);
    CHECK(P.alpha(y) == 1.0);
    y(0) = -0.5 * P.eps;
    CHECK(P.alpha(y) == 0.0);
    // derivatives of delta against differences
    for (double s = -0.9; s <= 0.9; s += 0.3) {
        const double t = P.tau + s * P.lambda_width, h = 1e-4 * P.lambda_width;
        const auto d = P.delta(t), dp = P.delta(t + h), dm = P.delta(t - h);
        for (int k = 0; k < 5; ++k) CHECK(std::abs((dp[k] - dm[k]) / (2 * h) - d[k + 1]) < 1e-5 * P.delta_sup(k + 1));
    }
    const auto back = BumpProfile::from_json(P.to_json());
    CHECK(back.delta(P.tau + 0.3 * P.lambda_width)[2] == P.delta(P.tau + 0.3 * P.lambda_width)[2]);
    CHECK(back.h(0.01)[0] == P.h(0.01)[0]);

    CHECK_THROWS_AS(make_profile(0.1, 0.01, 0.5, 0.6, 0.0, 0.2), ValidationError);
    CHECK_THROWS_AS(make_profile(0.005, 0.01, 0.5, 0.6, 1e-3, 0.2), ValidationError);
    const auto q = make_profile(0.1, 0.01, 0.5, 0.6, 1e-3, 0.2);
    CHECK(std::abs(q.delta_integral() - 1.0) < 1e-10);
    CHECK(q.one_minus_h_integral() < 1e-3);
}

TEST_CASE("built potentials vanish on the orbit and stay in the tube")
{
    const auto& ctx = *pend().ectx;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    PerturbationParams w = PerturbationParams::zero(1);
    w.a(0, 0) = 0.7, w.b(0, 0) = -0.3 * ctx.profile.lambda_width, w.c(0, 0) = 1e-9;
    const auto f = build_potential(ctx.profile, w, ctx.chart);
    const auto zero = build_potential(ctx.profile, PerturbationParams::zero(1), ctx.chart);
    const auto& P = ctx.profile;
    int outside = 0;
    for (int k = 0; k < 1000; ++k) {
        const double t = P.tau + 1.05 * U(rng) * P.lambda_width;
        Vec y0 = Vec::Zero(1);
        const Vec x0 = ctx.chart->point(t, y0);
        const ScalarJet j0 = f.eval(x0);
        CHECK(std::abs(j0.value) < 1e-12);
        CHECK(j0.grad.norm() < 1e-9 * (1 + f.orbit_hessian(t).norm()));
        Vec y = Vec::Constant(1, 0.8 * P.eps * U(rng));
        const Vec x = ctx.chart->point(t, y);
        const ScalarJet j = f.eval(x);
        if (std::abs(y(0)) >= 0.5 * P.eps || std::abs(t - P.tau) >= P.lambda_width) {
            ++outside;
            CHECK(j.value == 0.0);
            CHECK(j.grad.norm() == 0.0);
        }
        CHECK(zero.eval(x).value == 0.0);
    }
    CHECK(outside > 100);
    // far from the tube
    CHECK(f.eval(v2(0.9, 0.9)).value == 0.0);
}

TEST_CASE("orbit Hessian of the potential is twice beta")
{
    const auto& ctx = *pend().ectx;
    const auto& P = ctx.profile;
    for (int k = 0; k < 3; ++k) {
        PerturbationParams w = PerturbationParams::zero(1);
        if (k == 0) w.a(0, 0) = 1.0;
        if (k == 1) w.b(0, 0) = P.lambda_width;
        if (k == 2) w.c(0, 0) = P.lambda_width * P.lambda_width;
        const auto f = build_potential(P, w, ctx.chart);
        for (double s : {-0.7, -0.2, 0.0, 0.4, 0.8}) {
            const double t = P.tau + s * P.lambda_width;
            const Mat H = f.orbit_hessian(t);
            CHECK((H - 2.0 * P.beta(w, t)[0]).norm() == 0.0);
            // second difference of u along the transverse chart direction
            const double h = 1e-3 * P.eps;
            Vec yp = Vec::Constant(1, h), ym = Vec::Constant(1, -h), y0 = Vec::Zero(1);
            const double upp = (f.eval(ctx.chart->point(t, yp)).value - 2 * f.eval(ctx.chart->point(t, y0)).value +
                                f.eval(ctx.chart->point(t, ym)).value) /
                               (h * h);
            CHECK(std::abs(upp - H(0, 0)) < 1e-6 * (1 + std::abs(H(0, 0))));
        }
    }
}

TEST_CASE("Hessian in configuration coordinates along the transverse field")
{
    // E^T (d^2 u) E reproduces the chart Hessian on the orbit
    const auto& ctx = *pend().ectx;
    const auto& P = ctx.profile;
    PerturbationParams w = PerturbationParams::zero(1);
    w.a(0, 0) = 0.4;
    const auto f = build_potential(P, w, ctx.chart);
    for (double s : {-0.5, 0.0, 0.5}) {
        const double t = P.tau + s * P.lambda_width;
        Vec g, gd, gdd;
        Mat E, Ed, Edd;
        ctx.chart->at(t, g, gd, gdd, E, Ed, Edd);
        const ScalarJet j = f.eval(g);
        const Mat H = E.transpose() * j.hess * E;
        CHECK((H - f.orbit_hessian(t)).norm() < 1e-8 * (1 + f.orbit_hessian(t).norm()));
    }
}

TEST_CASE("C2 bound with the ledger constant")
{
    const auto& ctx = *pend().ectx;
    const auto& P = ctx.profile;
    const double k7 = ctx.ledger.k7;
    for (int k = 0; k < 3; ++k) {
        PerturbationParams w = unit(1, k);
        const auto f = build_potential(P, w, ctx.chart);
        double b0 = 0, b1 = 0, b2 = 0;
        for (int i = 0; i <= 4000; ++i) {
            const double t = P.support_lo() + (P.support_hi() - P.support_lo()) * i / 4000.0;
            const auto B = P.beta(w, t);
            b0 = std::max(b0, B[0].norm());
            b1 = std::max({b1, B[0].norm(), B[1].norm()});
            b2 = std::max({b2, B[0].norm(), B[1].norm(), B[2].norm()});
        }
        const double lhs = f.chart_c2_norm();
        CHECK(lhs > 0.0);
        CHECK(lhs <= k7 * (b0 + P.eps * b1 + P.eps * P.eps * b2));
    }
}

TEST_CASE("perturbed curvature")
{
    const auto& ctx = *pend().hctx;
    const auto& P = ctx.profile;
    CurvaturePath K;
    K.times.push_back(0.0);
    for (int i = -20; i <= 20; ++i) K.times.push_back(P.tau + 0.05 * i * P.lambda_width);
    K.times.push_back(P.t0);
    const double k = -4 * kPi * kPi * 0.1;
    for (size_t i = 0; i < K.times.size(); ++i) K.K.push_back(Mat::Constant(1, 1, k));

    const auto zero = build_potential(P, PerturbationParams::zero(1), ctx.chart);
    const auto same = perturbed_curvature(K, zero);
    for (size_t i = 0; i < K.times.size(); ++i) CHECK(same.K[i](0, 0) == k);

    PerturbationParams w = PerturbationParams::zero(1);
    w.a(0, 0) = -k / (2.0 * P.delta(P.tau)[0]);
    const auto f = build_potential(P, w, ctx.chart);
    const auto Ku = perturbed_curvature(K, f);
    CHECK(std::abs(Ku.K[21](0, 0)) < 1e-12);
    CHECK(Ku.K.front()(0, 0) == k);
    CHECK(Ku.K.back()(0, 0) == k);

    // the hyperbolic pendulum orbit itself carries K = -4 pi^2 eps
    CHECK(ctx.K.at(P.tau)(0, 0) == doctest::Approx(k).epsilon(1e-4));

    CurvaturePath short_K = K;
    short_K.times.back() *= 0.5;
    CHECK_THROWS_AS(perturbed_curvature(short_K, f), ValidationError);
}

TEST_CASE("perturbed curvature stays symmetric in higher dimension")
{
    // no chart needed for n = 2 symmetry: the sum of symmetric matrices
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat A = random_sym(2, rng), B = random_sym(2, rng);
        const Mat S = sym(A + B);
        CHECK((S - S.transpose()).norm() == 0.0);
    }
}

TEST_CASE("ledger on the free torus")
{
    const auto& L = torus().ledger;
    CHECK(L.k1 == doctest::Approx(1e-3));
    const double T = 2 * L.k0;
    Mat shear(2, 2);
    shear << 1, T, 0, 1;
    CHECK(L.k2 == doctest::Approx(1.1 * op_norm(shear)).epsilon(1e-3));
    CHECK(L.k5 == doctest::Approx(1 + L.k1));
    CHECK(L.phi_n == 1.0);
    CHECK_NOTHROW(L.check());
}

TEST_CASE("ledger on the pendulum")
{
    const auto& L = pend().ledger;
    CHECK(L.k1 > 4 * kPi * kPi * 0.1);
    CHECK(L.k1 < 1.1 * 1.1 * 4 * kPi * kPi * 0.1);
    CHECK(L.k5 == doctest::Approx(1 + L.k1));
    CHECK(L.lambda_width < L.k0 / 8);
    CHECK(1 / (L.k2 * L.k2) - 2 * L.k2 * L.k3 > 0.0);
    CHECK(L.k6 > 0.0);
    CHECK(L.k6 == doctest::Approx((1 / (L.k2 * L.k2) - 2 * L.k2 * L.k3 - L.rho * L.k2 * L.k2 * L.delta_c0) /
                                  (L.k2 * L.k5)));
    CHECK(L.provenance.count("k2"));

    const auto back = ConstantsLedger::from_json(L.to_json());
    CHECK(back.k6 == L.k6);
    CHECK(back.lambda_width == L.lambda_width);
    CHECK(back.provenance == L.provenance);
    CHECK_NOTHROW(back.check());

    auto bad = L;
    bad.k6 *= 2;
    CHECK_THROWS_AS(bad.check(), NumericalError);
    bad = L;
    bad.lambda_width = L.k0;
    CHECK_THROWS_AS(bad.check(), NumericalError);
}

TEST_CASE("directional derivative: zero and closed form on the free torus")
{
    const auto& ctx = *torus().ctx;
    const auto zero = PerturbationParams::zero(1);
    const auto z = directional_derivative_F(ctx, zero, zero);
    CHECK(z.fd.norm() == 0.0);
    CHECK(z.variational.norm() == 0.0);
    CHECK_THROWS_AS(directional_derivative_F(ctx, zero, unit(1, 0), 0.0), ValidationError);

    const auto& P = ctx.profile;
    CHECK(ctx.K.at(P.tau).norm() < 1e-9);
    // second moment of delta about tau
    double s2 = 0.0;
    const int N = 20000;
    const double h = 2 * P.lambda_width / N;
    for (int i = 1; i < N; ++i) {
        const double s = P.support_lo() + i * h;
        s2 += (s - P.tau) * (s - P.tau) * P.delta(s)[0] * h;
    }
    Mat X(2, 2);
    X << 1, P.t0, 0, 1;
    std::mt19937_64 rng(51);
    std::normal_distribution<double> N01(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const double a = N01(rng), b = N01(rng) * P.lambda_width, c = N01(rng) * P.lambda_width * P.lambda_width;
        PerturbationParams xi = PerturbationParams::zero(1);
        xi.a(0, 0) = a, xi.b(0, 0) = b, xi.c(0, 0) = c;
        const double tau = P.tau;
        Mat M(2, 2);
        M << 2 * (a * tau - b), 2 * (a * (tau * tau + s2) - 2 * b * tau + 2 * c), -2 * a, -2 * (a * tau - b);
        const Mat Z = X * M;
        const auto r = directional_derivative_F(ctx, zero, xi);
        CHECK((r.variational - Z).norm() < 1e-7 * Z.norm());
        CHECK((r.fd - Z).norm() < 1e-6 * Z.norm());
        CHECK(r.relative_difference < 1e-4);
    }
}

TEST_CASE("derivative lower bound on the hyperbolic pendulum segment")
{
    const auto& ctx = *pend().hctx;
    std::mt19937_64 rng(52);
    std::normal_distribution<double> N01(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        Vec v(3);
        for (int k = 0; k < 3; ++k) v(k) = N01(rng);
        auto xi = PerturbationParams::from_vector(1, v);
        xi = xi * (1.0 / xi.norm());
        const auto r = directional_derivative_F(ctx, PerturbationParams::zero(1), xi);
        CHECK(op_norm(r.variational) >= ctx.ledger.k6);
        CHECK(r.relative_difference < 1e-4);
    }
}

TEST_CASE("full and reduced segment maps agree")
{
    const auto& ctx = *pend().ectx;
    const Mat R0 = segment_map(ctx, PerturbationParams::zero(1));
    CHECK((segment_map_full(ctx, PerturbationParams::zero(1)) - R0).norm() < 1e-12);
    CHECK((ctx.rest * R0 - ctx.base_dP).norm() < 1e-12);
    const double lam = ctx.profile.lambda_width;
    for (auto [k, s] : std::vector<std::pair<int, double>>{{0, 1e-3}, {1, 1e-3 * lam}, {2, 1e-1 * lam * lam * lam}}) {
        const auto w = unit(1, k) * s;
        const Mat R = segment_map(ctx, w), F = segment_map_full(ctx, w);
        CHECK((R - R0).norm() > 1e-13);
        // 2e-14 is the accuracy of the full flow at w = 0
        CHECK((F - R).norm() < 1e-4 * (R - R0).norm() + 2e-14);
    }
    // the c column, the hardest one, against the quad-precision differences
    const auto dc = directional_derivative_F(ctx, PerturbationParams::zero(1), unit(1, 2));
    CHECK(dc.relative_difference < 1e-4);
    const auto cols = variational_jacobian(ctx, PerturbationParams::zero(1));
    CHECK((cols[2] - dc.variational).norm() < 1e-12 * cols[2].norm());
}

TEST_CASE("realization examples")
{
    const auto& ctx = *pend().ectx;
    const auto re = realize_target(ctx, ctx.base_dP, 1.0);
    CHECK(re.params.norm() < 1e-12);
    CHECK(re.error < 1e-12);
    CHECK(re.orbit_drift < 1e-8);
    CHECK_THROWS_AS(realize_target(ctx, ctx.base_dP, 0.0), ValidationError);
    Mat bad = ctx.base_dP;
    bad(0, 0) += 1e-3;
    CHECK_THROWS_AS(realize_target(ctx, bad, 1.0), ValidationError);

    const double budget = 1e4;
    const auto R = reachable_radius_estimate(ctx, budget, 1);
    REQUIRE(R.delta_hat > 0.0);
    CHECK(R.delta_hat >= R.floor);
    const Mat near = target_at_distance(ctx.base_dP, R.worst_direction, 0.5 * R.delta_hat);
    const auto ok = realize_target(ctx, near, budget);
    CHECK(ok.error < 1e-6);
    CHECK(ok.error < 1e-2 * 0.5 * R.delta_hat);
    CHECK(ok.c2_norm < budget);
    CHECK(ok.orbit_drift < 1e-8);

    const Mat far = target_at_distance(ctx.base_dP, R.worst_direction, 2 * R.delta_hat);
    try {
        realize_target(ctx, far, budget);
        FAIL("target at twice the radius was realized");
    } catch (const RealizationFailure& e) {
        CHECK((e.kind() == "no-convergence" || e.kind() == "c2-budget"));
        CHECK(e.best_error > 0.0);
    }

    const auto none = reachable_radius_estimate(ctx, 0.0, 3);
    CHECK(none.delta_hat == 0.0);
    CHECK(none.radii.size() == 3);
}

TEST_CASE("pushing the elliptic trace across -2")
{
    const auto& p = pend();
    const auto& ctx = *p.ectx;
    PerturbationParams dir = PerturbationParams::zero(1);
    dir.a(0, 0) = 1.0;
    const Mat A = trace_target_along(ctx, dir, -2.2);
    CHECK(A.trace() == doctest::Approx(-2.2).epsilon(1e-10));
    const auto re = realize_target(ctx, A, 1e6);
    CHECK(re.error < 1e-6);
    CHECK(re.orbit_drift < 1e-8);
    const LagrangianModel mu = p.model.with_potential(std::make_shared<PotentialField>(re.field), "+u");
    const Mat dp = linearized_poincare(mu, p.ell);
    CHECK(classify_spectrum(dp).kind == SpectralKind::Hyperbolic);
    CHECK(classify_spectrum(ctx.base_dP).kind == SpectralKind::Elliptic);
}

TEST_CASE("beta export")
{
    const auto& ctx = *pend().ectx;
    const auto f = build_potential(ctx.profile, unit(1, 0), ctx.chart);
    const std::string csv = f.beta_csv(10);
    CHECK(csv.rfind("t,beta_11", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);
}

TEST_CASE("genericity functional")
{
    const auto P1 = phi_n_estimate(pendulum(), 0.5, 4, 11);
    CHECK(P1.value == 1.0);
    CHECK(genericity_test(free_torus(), nullptr, 0.5, 4));

    const auto P0 = phi_n_estimate(free_torus(3), 0.5, 4, 11);
    CHECK(P0.value < 1e-12);
    CHECK(!genericity_test(free_torus(3), nullptr, 0.5, 4));

    const auto Pw = phi_n_estimate(two_wave(), 0.5, 4, 11);
    CHECK(Pw.value > 1e-8);
    CHECK(Pw.failures == 0);

    auto u = std::make_shared<TrigSeries>(3);
    u->add({1, 0, 0}, 0.01);
    u->add({0, 1, 0}, 0.02);
    CHECK(genericity_test(free_torus(3), u, 0.5, 4));
}

TEST_CASE("reachable radius is uniform over the segment length")
{
    const auto& p = pend();
    const double budget = 1e4;
    const auto a = prepare_orbit_segment(p.model, p.ell, p.ledger.k0, p.ledger);
    const auto b = prepare_orbit_segment(p.model, p.ell, 2 * p.ledger.k0, p.ledger);
    const auto Ra = reachable_radius_estimate(a, budget, 2);
    const auto Rb = reachable_radius_estimate(b, budget, 2);
    REQUIRE(Ra.delta_hat > 0.0);
    REQUIRE(Rb.delta_hat > 0.0);
    CHECK(Ra.delta_hat / Rb.delta_hat < 3.0);
    CHECK(Rb.delta_hat / Ra.delta_hat < 3.0);
    CHECK(Ra.delta_hat >= Ra.floor);
    CHECK(Rb.delta_hat >= Rb.floor);
}

TEST_CASE("reachable radius above the analytic floor on other presets")
{
    const auto R = reachable_radius_estimate(*torus().ctx, 1e4, 2);
    CHECK(R.delta_hat > 0.0);
    CHECK(R.delta_hat >= R.floor);

    const auto m = magnetic();
    const auto L = estimate_constants(m, 0.5, 0.0, 8);
    OrbitSegment seg{PhaseState::tangent(Vec::Constant(2, 0.13), v2(0.8, 0.6)), 1.5 * L.k0};
    const auto ctx = prepare_segment(m, 0.5, seg, L);
    const auto Rm = reachable_radius_estimate(ctx, 1e4, 2);
    CHECK(Rm.delta_hat > 0.0);
    CHECK(Rm.delta_hat >= Rm.floor);
}
