#include "tonelab/orbit.hpp"
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

const double kEps = 0.1, kC = 0.5;
const double kHypTrace = 2 * std::cosh(kTwoPi * std::sqrt(kEps / (2 * (kC - kEps))));
const double kEllTrace = 2 * std::cos(kTwoPi * std::sqrt(kEps / (2 * (kC + kEps))));

ClosedOrbit hyperbolic() { return find_closed_orbit_shooting(pendulum(), kC, PhaseState::tangent(v2(0.01, 0.1), v2(0.02, 0.894))); }
ClosedOrbit elliptic() { return find_closed_orbit_shooting(pendulum(), kC, PhaseState::tangent(v2(0.53, 0), v2(0.03, 1.1))); }

}  // namespace

TEST_CASE("poincare return examples")
{
    auto m = free_torus();
    const double s = 0.7;
    auto start = PhaseState::cotangent(v2(0.3, 0), v2(0, s));
    auto sec = make_section(m, start);
    auto hit = poincare_return(m, sec, start, 10.0);
    CHECK(hit.time == doctest::Approx(1.0 / s).epsilon(1e-12));
    CHECK(hit.winding == Eigen::Vector2i(0, 1));

    auto p = pendulum();
    auto ell = PhaseState::tangent(v2(0.5, 0), v2(0, std::sqrt(1.2)));
    auto hp = poincare_return(p, make_section(p, ell), ell, 5.0);
    CHECK(std::abs(hp.time - 1.0 / std::sqrt(1.2)) < 1e-9);

    auto off = to_cotangent(p, ell);
    auto sec2 = make_section(p, off);
    off.y(1) += 1e-5;
    CHECK_THROWS_AS(poincare_return(p, sec2, off, 5.0), ValidationError);
    // a contractible pendulum libration-like state that never crosses in time
    CHECK_THROWS_AS(poincare_return(m, sec, start, 0.5), NumericalError);
}

TEST_CASE("shooting on the pendulum")
{
    auto h = hyperbolic();
    CHECK(h.residual < 1e-8);
    CHECK(std::abs(h.energy - kC) < 1e-8);
    CHECK(std::abs(wrap_centered(h.initial.x)(0)) < 1e-7);
    CHECK(h.period == doctest::Approx(1 / std::sqrt(0.8)).epsilon(1e-8));
    CHECK(h.spectral.kind == SpectralKind::Hyperbolic);
    CHECK(std::abs(h.dP.trace() - kHypTrace) < 1e-3);
    CHECK(symplectic_defect(h.dP) < 1e-7);

    auto e = elliptic();
    CHECK(e.residual < 1e-8);
    CHECK(std::abs(wrap_centered(e.initial.x)(0) + 0.5) < 1e-7);
    CHECK(e.period == doctest::Approx(1 / std::sqrt(1.2)).epsilon(1e-8));
    CHECK(e.spectral.name() == "1-elliptic");
    CHECK(std::abs(e.dP.trace() - kEllTrace) < 1e-3);
}

TEST_CASE("free torus shooting is immediate and degenerate")
{
    auto m = free_torus();
    auto o = find_closed_orbit_shooting(m, 0.5, PhaseState::cotangent(v2(0.2, 0.3), v2(0, 1)));
    CHECK(o.iterations <= 1);
    CHECK(o.degenerate);
    CHECK(o.spectral.kind == SpectralKind::Parabolic);
    CHECK((o.dP - (Mat(2, 2) << 1, 1, 0, 1).finished()).norm() < 1e-9);
    CHECK_THROWS_AS(find_closed_orbit_shooting(pendulum(), 0.1, PhaseState::cotangent(v2(0, 0), v2(0, 1))),
                    ValidationError);
}

TEST_CASE("two dP pipelines agree")
{
    for (auto o : {hyperbolic(), elliptic()}) {
        Mat a = linearized_poincare(pendulum(), o);
        Mat b = linearized_poincare_section(pendulum(), o);
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("hyperbolic orbit stays hyperbolic across energies")
{
    for (int k = 0; k < 8; ++k) {
        const double c = 0.3 + 0.7 * k / 7.0;
        const double s = std::sqrt(2 * (c - kEps));
        auto o = find_closed_orbit_shooting(pendulum(), c, PhaseState::tangent(v2(0.01, 0), v2(0, s)), Eigen::Vector2i(0, 1));
        CHECK(o.spectral.kind == SpectralKind::Hyperbolic);
        CHECK(std::abs(o.dP.trace() - 2 * std::cosh(kTwoPi * std::sqrt(kEps / (2 * (c - kEps))))) < 1e-3);
    }
}

TEST_CASE("multiple shooting for long periods")
{
    auto o = find_closed_orbit_shooting(pendulum(), kC, PhaseState::tangent(v2(0.52, 0), v2(0.01, 1.1)),
                                        Eigen::Vector2i(0, 6));
    CHECK(o.method == "multiple-shooting");
    CHECK(o.period == doctest::Approx(6 / std::sqrt(1.2)).epsilon(1e-8));
    CHECK(o.residual < 1e-8);
}

TEST_CASE("action finder")
{
    auto f = find_closed_orbit_action(free_torus(), 0.5, Eigen::Vector2i(1, 0));
    CHECK(f.period == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(f.action.value() == doctest::Approx(1.0).epsilon(1e-8));
    auto p = find_closed_orbit_action(pendulum(), kC, Eigen::Vector2i(0, 1));
    auto h = hyperbolic();
    auto e = elliptic();
    CHECK(std::min(orbit_distance(pendulum(), p, h), orbit_distance(pendulum(), p, e)) < 1e-6);
    CHECK_THROWS_AS(find_closed_orbit_action(pendulum(), kC, Eigen::Vector2i(0, 0)), ValidationError);
}

TEST_CASE("orbit json round trip")
{
    auto h = hyperbolic();
    auto back = orbit_from_json(orbit_to_json(h));
    CHECK((back.initial.stacked() - h.initial.stacked()).norm() == 0.0);
    CHECK(back.spectral.kind == h.spectral.kind);
    CHECK(back.winding == h.winding);
}
