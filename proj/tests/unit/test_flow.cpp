#include "tonelab/flow.hpp"
#include "tonelab/presets.hpp"

#include <doctest.h>

using namespace tonelab;

namespace {

Vec v2(double a, double b)
{
    Vec v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST_CASE("vector field examples")
{
    auto f = vector_field(free_torus(), PhaseState::cotangent(v2(0, 0), v2(1, 0)));
    CHECK((f.dx - v2(1, 0)).norm() < 1e-15);
    CHECK(f.dy.norm() < 1e-15);
    auto g = vector_field(pendulum(), PhaseState::cotangent(v2(0.25, 0), v2(0, 0)));
    CHECK(g.dy(0) == doctest::Approx(0.2 * kPi).epsilon(1e-13));

    // Tangent and cotangent fields agree through the Legendre map.  The
    // derivative of p = G v + A along the flow is computed by hand.
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    double worst = 0.0;
    for (auto m : {pendulum(), magnetic(0.3), two_wave()}) {
        const int d = m.dim();
        for (int t = 0; t < 40; ++t) {
            Vec x(d), v(d);
            for (int i = 0; i < d; ++i) x(i) = U(rng), v(i) = U(rng);
            auto ft = vector_field(m, PhaseState::tangent(x, v));
            auto fc = vector_field(m, legendre(m, PhaseState::tangent(x, v)));
            PointJet j = m.jet(x);
            Vec pdot = j.G * ft.dy + j.DA * v;
            for (int k = 0; k < d; ++k) pdot += v(k) * j.dG[k] * v;
            worst = std::max({worst, (ft.dx - fc.dx).norm(), (pdot - fc.dy).norm()});
        }
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("integrate: straight line, relative equilibrium, reversal")
{
    auto tr = integrate(free_torus(), PhaseState::cotangent(v2(0, 0), v2(0.6, 0.8)), 2.0);
    CHECK((wrap01(tr.final_state().x) - v2(0.2, 0.6)).norm() < 1e-10);

    const double s = std::sqrt(1.2);
    auto m = pendulum();
    auto z0 = PhaseState::tangent(v2(0.5, 0), v2(0, s));
    auto end = to_tangent(m, flow_to(m, z0, 1.0 / s));
    CHECK((end.x - v2(0.5, 1.0)).norm() < 1e-8);
    CHECK((end.y - z0.y).norm() < 1e-8);

    auto start = PhaseState::tangent(v2(0.13, 0.4), v2(0.7, -0.3));
    auto fwd = flow_to(m, start, 3.0);
    auto back = to_tangent(m, flow_to(m, fwd, -3.0));
    CHECK((back.x - start.x).norm() < 1e-7);
    CHECK((back.y - start.y).norm() < 1e-7);

    CHECK_THROWS_AS(integrate(m, start, 1.0, 1e-3), ValidationError);
}

TEST_CASE("energy conservation and group property")
{
    std::mt19937_64 rng(4);
    for (auto m : {pendulum(), magnetic(), two_wave(), free_torus(3)}) {
        for (int t = 0; t < 5; ++t) {
            auto s = sample_energy_level(m, 0.5, rng);
            const double H = 4.0;
            auto tr = integrate(m, s, H, 1e-10);
            CHECK(tr.energy_drift < 10 * 1e-10 * (1 + H));
            auto a = flow_to(m, flow_to(m, s, 1.3), 2.1).stacked();
            auto b = flow_to(m, s, 3.4).stacked();
            CHECK((a - b).norm() < 1e-9);
        }
    }
}

TEST_CASE("linearized flow")
{
    auto lf = integrate_linearized(free_torus(), PhaseState::cotangent(v2(0, 0), v2(0.3, 0.2)), 1.7);
    Mat expect = Mat::Identity(4, 4);
    expect.topRightCorner(2, 2) = 1.7 * Mat::Identity(2, 2);
    CHECK((lf.matrices.back() - expect).norm() < 1e-12);
    CHECK((lf.matrices.front() - Mat::Identity(4, 4)).norm() == 0.0);

    auto m = pendulum();
    auto s = PhaseState::tangent(v2(0.5, 0), v2(0, std::sqrt(1.2)));
    auto z = to_cotangent(m, s).stacked();
    auto [zend, M] = flow_and_jacobian(m, z, 0.9);
    CHECK(symplectic_defect(M) < 1e-7);
    CHECK((M - flow_jacobian_fd(m, z, 0.9)).norm() < 1e-5);
}

TEST_CASE("harmonic oscillator block")
{
    // H = p^2/2 + V with V = -eps cos(2 pi x1): transverse K = 4 pi^2 eps at x1 = 0
    const double eps = 0.05;
    auto V = std::make_shared<TrigSeries>(2);
    V->add({1, 0}, -eps);
    LagrangianModel m(TorusSpace(2), std::make_shared<TrigMetric>(TrigMetric::identity(2)), nullptr, V);
    const double k = 4 * kPi * kPi * eps, w = std::sqrt(k), t = 1.1;
    auto [z, M] = flow_and_jacobian(m, to_cotangent(m, PhaseState::tangent(v2(0, 0), v2(0, 1))).stacked(), t);
    CHECK(M(0, 0) == doctest::Approx(std::cos(w * t)).epsilon(1e-10));
    CHECK(M(0, 2) == doctest::Approx(std::sin(w * t) / w).epsilon(1e-10));
    CHECK(M(2, 0) == doctest::Approx(-w * std::sin(w * t)).epsilon(1e-10));
    CHECK(M(2, 2) == doctest::Approx(std::cos(w * t)).epsilon(1e-10));
}

TEST_CASE("symplectic integrator conserves energy over long runs")
{
    auto m = pendulum();
    std::mt19937_64 rng(1);
    auto s = sample_energy_level(m, 0.5, rng);
    auto tr = integrate_symplectic(m, s, 200.0, 0.01, 100);
    CHECK(tr.energy_drift < 1e-6);
}

TEST_CASE("injectivity time")
{
    auto r = injectivity_time(free_torus(), 0.5, 40);
    // |v| = 1 on c = 0.5; straight lines never come back before ~ 1
    CHECK(r.k0 >= 0.25 * 0.95);
    auto p = injectivity_time(pendulum(), 0.5, 40);
    CHECK(p.k0 > 0.0);
    CHECK_THROWS_AS(injectivity_time(pendulum(), 0.1, 10), ValidationError);
}

TEST_CASE("trajectory csv")
{
    auto tr = integrate(free_torus(), PhaseState::cotangent(v2(0, 0), v2(1, 0)), 1.0, 1e-12, 4);
    std::string csv = trajectory_csv(free_torus(), tr);
    CHECK(csv.rfind("t,x1,x2,p1,p2,E", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}
