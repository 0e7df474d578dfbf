#include "tonelab/presets.hpp"

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

// Random metric/magnetic/potential on T^2 with G bounded away from singular.
LagrangianModel random_model(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    auto G = std::make_shared<TrigMetric>(2);
    TrigSeries g11(2, 1.5), g22(2, 1.5), g12(2, 0.2 * U(rng));
    g11.add({1, 0}, 0.3 * U(rng), 0.3 * U(rng));
    g22.add({0, 1}, 0.3 * U(rng));
    g12.add({1, 1}, 0.2 * U(rng));
    G->set(0, 0, g11);
    G->set(1, 1, g22);
    G->set(0, 1, g12);
    auto A = std::make_shared<TrigCovector>(2);
    TrigSeries a0(2), a1(2);
    a0.add({0, 1}, U(rng), U(rng));
    a1.add({1, 0}, U(rng));
    A->set(0, a0);
    A->set(1, a1);
    auto V = std::make_shared<TrigSeries>(2);
    V->add({1, 1}, U(rng), U(rng));
    return LagrangianModel(TorusSpace(2), G, A, V);
}

}  // namespace

TEST_CASE("energy examples")
{
    CHECK(energy(free_torus(), PhaseState::tangent(v2(0.3, 0.1), v2(1, 0))) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(energy(pendulum(), PhaseState::tangent(v2(0, 0), v2(0, 0))) == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(energy(pendulum(), PhaseState::tangent(v2(0.5, 0), v2(0, 1.0954451))) ==
          doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("e0 examples")
{
    CHECK(std::abs(e0(free_torus()).value) < 1e-14);
    auto r = e0(pendulum());
    CHECK(r.value == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.formula_gap < 1e-10);
    auto V = std::make_shared<TrigSeries>(2);
    // sin(a)sin(b) = (cos(a-b) - cos(a+b))/2
    V->add({1, -1}, 0.1);
    V->add({1, 1}, -0.1);
    LagrangianModel m(TorusSpace(2), std::make_shared<TrigMetric>(TrigMetric::identity(2)), nullptr, V);
    CHECK(e0(m).value == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("legendre examples and round trip")
{
    auto p = legendre(free_torus(), PhaseState::tangent(v2(0, 0), v2(2, 3)));
    CHECK(p.rep == Rep::Cotangent);
    CHECK((p.y - v2(2, 3)).norm() < 1e-15);
    Mat G(2, 2);
    G << 2, 0, 0, 1;
    LagrangianModel m(TorusSpace(2), std::make_shared<TrigMetric>(TrigMetric::constant(G)), nullptr, nullptr);
    CHECK((legendre(m, PhaseState::tangent(v2(0, 0), v2(1, 1))).y - v2(2, 1)).norm() < 1e-15);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    double worst = 0.0, worst_h = 0.0;
    for (int t = 0; t < 100; ++t) {
        auto mod = random_model(rng);
        auto s = PhaseState::tangent(v2(U(rng), U(rng)), v2(U(rng), U(rng)));
        auto back = legendre(mod, legendre(mod, s));
        worst = std::max(worst, (back.y - s.y).norm());
        worst_h = std::max(worst_h, std::abs(hamiltonian_value(mod, legendre(mod, s)) - energy(mod, s)));
    }
    CHECK(worst < 1e-10);
    CHECK(worst_h < 1e-10);
}

TEST_CASE("hamiltonian and fenchel")
{
    CHECK(hamiltonian_value(free_torus(), PhaseState::cotangent(v2(0, 0), v2(1, 0))) == doctest::Approx(0.5));
    CHECK(hamiltonian_value(pendulum(), PhaseState::cotangent(v2(0, 0), v2(0, 0))) == doctest::Approx(0.1));
    CHECK(fenchel_gap(free_torus(), v2(0, 0), v2(1, 0), v2(0, 1)) == doctest::Approx(1.0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    double lo = 1.0, on_graph = 0.0;
    for (int t = 0; t < 200; ++t) {
        auto mod = random_model(rng);
        Vec x = v2(U(rng), U(rng)), v = v2(U(rng), U(rng)), p = v2(U(rng), U(rng));
        lo = std::min(lo, fenchel_gap(mod, x, v, p));
        on_graph = std::max(on_graph, std::abs(fenchel_gap(mod, x, v, legendre(mod, PhaseState::tangent(x, v)).y)));
    }
    CHECK(lo >= -1e-10);
    CHECK(on_graph < 1e-10);
}

TEST_CASE("energy at rest is the fiber minimum")
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (auto m : {pendulum(), two_wave(), free_torus(3)}) {
        const int d = m.dim();
        for (int t = 0; t < 50; ++t) {
            Vec x(d), v(d);
            for (int i = 0; i < d; ++i) x(i) = U(rng), v(i) = U(rng);
            CHECK(energy(m, PhaseState::tangent(x, v)) >= energy(m, PhaseState::tangent(x, Vec::Zero(d))));
        }
    }
}

TEST_CASE("action examples")
{
    const double T = 2.5;
    LoopPath straight;
    for (int i = 0; i <= 20; ++i) {
        straight.times.push_back(T * i / 20.0);
        straight.samples.push_back(v2(i / 20.0, 0.0));
    }
    straight.winding = Eigen::Vector2i(1, 0);
    auto a = action(free_torus(), straight);
    CHECK(a.value == doctest::Approx(1.0 / (2 * T)).epsilon(1e-10));
    CHECK_FALSE(a.accuracy_warning);

    LoopPath point;
    for (int i = 0; i <= 4; ++i) {
        point.times.push_back(T * i / 4.0);
        point.samples.push_back(v2(0, 0));
    }
    point.winding = Eigen::Vector2i(0, 0);
    CHECK(action(pendulum(), point).value == doctest::Approx(-0.1 * T).epsilon(1e-12));
    CHECK(std::abs(action(pendulum(), point, 0.1).value) < 1e-12);

    LoopPath zero = point;
    for (auto& t : zero.times) t = 0.0;
    CHECK_THROWS_AS(action(pendulum(), zero), ValidationError);
}

TEST_CASE("critical value brackets")
{
    auto f = critical_value_estimate(free_torus(), false);
    CHECK(std::abs(f.lower) < 1e-6);
    CHECK(std::abs(f.upper) < 1e-6);
    auto p = critical_value_estimate(pendulum(), true);
    CHECK(p.lower == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(p.upper <= 0.1 + 1e-3);
    CHECK(p.upper >= p.lower);
    auto m = critical_value_estimate(magnetic(), false);
    CHECK(m.upper >= 0.0);
    CHECK(m.upper >= m.lower);
}

TEST_CASE("tonelli check")
{
    auto r = tonelli_check(free_torus());
    CHECK(r.pass);
    CHECK(r.margin == doctest::Approx(1.0));
    auto G = std::make_shared<TrigMetric>(2);
    G->set(0, 0, TrigSeries(2, 1.0));
    TrigSeries g22(2, 1.0);
    g22.add({1, 0}, 0.0, 0.5);
    G->set(1, 1, g22);
    CHECK(tonelli_check(LagrangianModel(TorusSpace(2), G, nullptr, nullptr)).margin == doctest::Approx(0.5));
    auto B = std::make_shared<TrigMetric>(2);
    B->set(0, 0, TrigSeries(2, 1.0));
    TrigSeries s(2);
    s.add({1, 0}, 0.0, 1.0);
    B->set(1, 1, s);
    try {
        tonelli_check(LagrangianModel(TorusSpace(2), B, nullptr, nullptr));
        FAIL("expected a convexity violation");
    } catch (const ConvexityViolation& e) {
        CHECK_FALSE(e.report.pass);
        bool at0 = false, at_half = false;
        for (const Vec& x : e.report.offenders) {
            if (std::abs(x(0)) < 1e-12) at0 = true;
            if (std::abs(x(0) - 0.5) < 1e-12) at_half = true;
        }
        CHECK(at0);
        CHECK(at_half);
    }
    CHECK_THROWS_AS(tonelli_check(free_torus(), 4), ValidationError);
    for (auto& info : list_presets())
        if (!info.synthetic) CHECK(tonelli_check(make_preset(info.name)).pass);
}
