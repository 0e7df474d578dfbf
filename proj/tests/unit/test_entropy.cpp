#include "tonelab/entropy.hpp"
#include "tonelab/presets.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace tonelab;

namespace {

Vec v2(double a, double b)
{
    Vec v(2);
    v << a, b;
    return v;
}

// Floquet exponent of the saddle line of the pendulum, per unit time.
const double kMu = kTwoPi * std::sqrt(0.1);

struct Orbits {
    LagrangianModel model = pendulum();
    ClosedOrbit hyp, hyp_back, ell;
    Orbits()
    {
        hyp = find_closed_orbit_shooting(model, 0.5, PhaseState::tangent(v2(0.01, 0.1), v2(0.02, 0.894)));
        hyp_back = find_closed_orbit_shooting(model, 0.5, PhaseState::tangent(v2(0.01, 0.6), v2(0.02, -0.894)));
        ell = find_closed_orbit_shooting(model, 0.5, PhaseState::tangent(v2(0.53, 0), v2(0.03, 1.1)));
    }
};
const Orbits& orbits()
{
    static const Orbits o;
    return o;
}

double log_radius_rate(const LagrangianModel& m, const ClosedOrbit& o)
{
    const Mat dP = linearized_poincare(m, o);
    return std::log(balanced_eigenvalues(dP).cwiseAbs().maxCoeff()) / o.period;
}

// Shared, it takes a while.
const EntropyEstimate& cat_estimate()
{
    static const EntropyEstimate e = bowen_entropy(CatSuspension(), {{0, 0}, {1, 1}, {400, 400}}, {0.05, 0.1, 0.2},
                                                   {0, 1, 2, 3, 4, 5, 6, 7}, 200000);
    return e;
}

}  // namespace

TEST_CASE("lyapunov exponent examples")
{
    const auto& o = orbits();
    const auto fr = lyapunov_exponent(free_torus(), PhaseState::tangent(v2(0.1, 0.2), v2(0.6, 0.8)), 1000, 10);
    CHECK(std::abs(fr.value) < 0.01);
    const auto h = lyapunov_exponent(o.model, o.hyp, 200, 1.0);
    CHECK(h.value == doctest::Approx(kMu).epsilon(0.01));
    const auto e = lyapunov_exponent(o.model, o.ell, 400, 1.0);
    CHECK(std::abs(e.value) < 0.02);
    CHECK(h.times.size() == 200);
    CHECK(h.running.back() == doctest::Approx(h.value));
}

TEST_CASE("lyapunov exponent errors")
{
    const auto& o = orbits();
    CHECK_THROWS_AS(lyapunov_exponent(o.model, o.hyp, 10, 1.0), ValidationError);
    // at the saddle equilibrium the growth is exactly e^{mu t}, e^{360 mu}
    // is beyond the double range
    try {
        lyapunov_exponent(o.model, PhaseState::cotangent(v2(0, 0.3), v2(0, 0)), 50 * 360.0, 360.0);
        FAIL("expected overflow");
    } catch (const NumericalError& err) {
        CHECK(err.kind() == "step");
    }
}

TEST_CASE("closed orbit lyapunov matches the monodromy")
{
    const auto& o = orbits();
    for (const ClosedOrbit* orb : {&o.hyp, &o.hyp_back, &o.ell}) {
        const double ref = log_radius_rate(o.model, *orb);
        const double lyap = lyapunov_exponent(o.model, *orb, 400, 1.0).value;
        CHECK(std::abs(lyap - ref) <= 0.01 * std::max(std::abs(ref), 1.0));
    }
}

TEST_CASE("linear regime selection")
{
    std::vector<double> x{0, 1, 2, 3, 4, 5};
    std::vector<double> y{0, 2, 4, 6, 8, 10};
    std::vector<bool> all(6, true);
    auto r = largest_linear_regime(x, y, all, 1e-9, 3);
    CHECK(r.found);
    CHECK(r.first == 0);
    CHECK(r.last == 5);
    CHECK(r.slope == doctest::Approx(2));
    // a kink: the longer straight piece wins
    y = {0, 1, 2, 3, 5, 7};
    r = largest_linear_regime(x, y, all, 1e-9, 3);
    CHECK(r.first == 0);
    CHECK(r.last == 3);
    CHECK(r.slope == doctest::Approx(1));
    // equal lengths: the later one
    std::vector<double> x5{0, 1, 2, 3, 4}, y5{0, 1, 2, 4, 6};
    r = largest_linear_regime(x5, y5, std::vector<bool>(5, true), 1e-9, 3);
    CHECK(r.first == 2);
    CHECK(r.slope == doctest::Approx(2));
    // unusable points split windows
    y = {0, 2, 4, 6, 8, 10};
    std::vector<bool> some{true, true, false, true, true, true};
    r = largest_linear_regime(x, y, some, 1e-9, 3);
    CHECK(r.first == 3);
    CHECK(r.last == 5);
    some = {true, false, true, false, true, true};
    CHECK_FALSE(largest_linear_regime(x, y, some, 1e-9, 3).found);
}

TEST_CASE("cat suspension orbit")
{
    CatSuspension cat;
    CHECK(cat.entropy() == doctest::Approx(std::log((3 + std::sqrt(5.0)) / 2)));
    std::vector<double> out;
    cat.orbit(v2(0.1, 0.3), {0, 0.5, 1, 2.5}, out);
    CHECK(out[2] == doctest::Approx(0.1));
    CHECK(out[4] == doctest::Approx(0.5));  // 2*0.1 + 0.3
    CHECK(out[5] == doctest::Approx(0.4));
    CHECK(out[6] == doctest::Approx(0.4));  // (1.4, 0.9) mod 1
    CHECK(out[7] == doctest::Approx(0.9));
    CHECK_THROWS_AS(CatSuspension((Eigen::Matrix2i() << 1, 1, 0, 1).finished()), ValidationError);
    CHECK_THROWS_AS(CatSuspension((Eigen::Matrix2i() << 2, 0, 0, 1).finished()), ValidationError);
}

TEST_CASE("bowen entropy of the cat suspension")
{
    const auto& e = cat_estimate();
    const double h = std::log((3 + std::sqrt(5.0)) / 2);
    CHECK(e.method == "bowen");
    CHECK(e.value == doctest::Approx(h).epsilon(0.2));
    CHECK(e.value >= 0);
    CHECK(e.curves.size() == 3);
}

TEST_CASE("spanning counts shrink as delta grows")
{
    const auto& e = cat_estimate();
    for (size_t a = 1; a < e.curves.size(); ++a)
        for (size_t b = 0; b < e.curves[a].T.size(); ++b) CHECK(e.curves[a].N[b] <= e.curves[a - 1].N[b]);
    // and the spanning sets are real: never larger than what greedy found
    for (const auto& c : e.curves)
        for (size_t b = 0; b < c.T.size(); ++b) CHECK(c.N[b] <= c.greedy[b]);
}

TEST_CASE("spanning counts, random small runs")
{
    // hand-rolled generator: random grid sizes, deltas and a start offset
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> n(40, 90);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int trial = 0; trial < 6; ++trial) {
        const int k = n(rng);
        std::vector<double> deltas{0.12 + 0.1 * U(rng), 0.25 + 0.2 * U(rng), 0.5 + 0.3 * U(rng)};
        BowenOptions opt;
        opt.seed = static_cast<unsigned>(trial);
        EntropyEstimate e;
        try {
            e = bowen_entropy(CatSuspension(), {{0, 0}, {1, 1}, {k, k}}, deltas, {0, 1, 2, 3, 4}, 10000, opt);
        } catch (const NumericalError&) {
            continue;  // no resolved regime on a tiny grid is allowed
        }
        CHECK(e.value >= 0);
        for (size_t a = 1; a < e.curves.size(); ++a)
            for (size_t b = 0; b < 5; ++b) CHECK(e.curves[a].N[b] <= e.curves[a - 1].N[b]);
        for (const auto& c : e.curves)
            for (long v : c.N) CHECK(v >= 1);
    }
}

TEST_CASE("bowen trivial cases and errors")
{
    // delta beyond the diameter: one ball always suffices
    const auto e = bowen_entropy(CatSuspension(), {{0, 0}, {1, 1}, {30, 30}}, {1.0}, {0, 1, 2, 3, 4}, 10000);
    for (long v : e.curves[0].N) CHECK(v == 1);
    CHECK(e.value == 0.0);
    try {
        bowen_entropy(CatSuspension(), {{0, 0}, {1, 1}, {10, 10}}, {0.05}, {0, 1}, 10000);
        FAIL("expected resolution error");
    } catch (const ValidationError& err) {
        CHECK(err.kind() == "resolution");
    }
    try {
        bowen_entropy(CatSuspension(), {{0, 0}, {1, 1}, {200, 200}}, {0.1}, {0, 1}, 1000);
        FAIL("expected budget error");
    } catch (const ValidationError& err) {
        CHECK(err.kind() == "grid-budget");
    }
    // budget split evenly when no shape is given
    const auto f = bowen_entropy(CatSuspension(), {{0, 0}, {1, 1}, {}}, {1.0}, {0, 1, 2}, 400);
    CHECK(f.grid_points == 400);
}

TEST_CASE("bowen entropy of the free torus energy level")
{
    EnergyLevelFlow f(free_torus(), 0.5);
    std::vector<double> Ts;
    for (int k = 0; k <= 16; ++k) Ts.push_back(10.0 * k);
    const auto e = bowen_entropy(f, {{0.5, 0.5, 0}, {0.5, 0.5, 0.05}, {1, 1, 480}}, {0.1, 0.2}, Ts, 1000);
    CHECK(e.value < 0.02);
    CHECK(e.value >= 0);
    CHECK_THROWS_AS(EnergyLevelFlow(pendulum(), 0.05), ValidationError);
    CHECK_THROWS_AS(EnergyLevelFlow(free_torus(3), 0.5), ValidationError);
}

TEST_CASE("energy level states")
{
    EnergyLevelFlow f(pendulum(), 0.5);
    Vec pt(3);
    pt << 0.3, 0.7, 1.1;
    const PhaseState s = f.state(pt);
    CHECK(energy(pendulum(), to_tangent(pendulum(), s)) == doctest::Approx(0.5));
    std::vector<double> out;
    f.orbit(pt, {0, 1, 2}, out);
    CHECK(out.size() == 12);
    const PhaseState s2 = PhaseState::cotangent(v2(out[8], out[9]), v2(out[10], out[11]));
    CHECK(energy(pendulum(), to_tangent(pendulum(), s2)) == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("cat registry counts the fixed points of A^m")
{
    const auto reg = cat_registry(10);
    std::vector<long> orb(11, 0);
    for (const auto& o : reg.orbits) ++orb[static_cast<int>(o.period)];
    const double lam = (3 + std::sqrt(5.0)) / 2;
    for (int m = 1; m <= 10; ++m) {
        long fix = 0;
        for (int k = 1; k <= m; ++k)
            if (m % k == 0) fix += k * orb[k];
        CHECK(fix == std::lround(std::pow(lam, m) + std::pow(lam, -m) - 2));
    }
    CHECK_THROWS_AS(cat_registry(0), ValidationError);
}

TEST_CASE("periodic growth entropy examples")
{
    const double h = std::log((3 + std::sqrt(5.0)) / 2);
    const auto cat = periodic_growth_entropy(cat_registry(12), 12);
    CHECK(cat.method == "periodic-growth");
    CHECK(cat.value == doctest::Approx(h).epsilon(0.2));
    const auto fr = periodic_growth_entropy(free_torus_registry(0.5, 200), 200);
    CHECK(fr.value < 0.02);
    OrbitRegistry two;
    two.add(orbits().hyp);
    two.add(orbits().ell);
    try {
        periodic_growth_entropy(two, 10);
        FAIL("expected insufficient data");
    } catch (const ValidationError& err) {
        CHECK(err.kind() == "insufficient-data");
    }
}

TEST_CASE("free torus registry")
{
    const auto reg = free_torus_registry(0.5, 1.5);
    // primitive vectors of length <= 1.5: (+-1,0), (0,+-1), (+-1,+-1)
    CHECK(reg.orbits.size() == 8);
}

TEST_CASE("splitting certificate on the pendulum saddle line")
{
    const auto& o = orbits();
    const auto cert = verify_splitting(o.model, {o.hyp});
    CHECK(cert.lambda == doctest::Approx(kMu).epsilon(0.01));
    CHECK(cert.C >= 1.0);
    CHECK(cert.worst_cone_ratio < 1.0);
    CHECK(cert.invariance_defect < 1e-6);
    for (size_t i = 0; i < cert.t_checks.size(); ++i) {
        CHECK(cert.stable_norm[i] <= cert.C * std::exp(-cert.lambda * cert.t_checks[i]) * (1 + 1e-12));
        CHECK(cert.unstable_norm[i] <= cert.C * std::exp(-cert.lambda * cert.t_checks[i]) * (1 + 1e-12));
    }
    CHECK(cert.samples.size() == 16);
    const auto j = certificate_to_json(cert);
    CHECK(j["lambda"].get<double>() == cert.lambda);
}

TEST_CASE("splitting over random finite sets of hyperbolic orbits")
{
    const auto& o = orbits();
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> pick(0, 1), count(1, 4);
    std::uniform_real_distribution<double> ap(0.2, 2.0);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<ClosedOrbit> set;
        const int k = count(rng);
        for (int i = 0; i < k; ++i) set.push_back(pick(rng) ? o.hyp : o.hyp_back);
        const auto cert = verify_splitting(o.model, set, ap(rng), {0.75, 1.5, 2.25, 3.0}, 8);
        CHECK(cert.lambda > 1.8);
        CHECK(cert.worst_cone_ratio < 1.0);
    }
}

TEST_CASE("splitting preconditions")
{
    const auto& o = orbits();
    CHECK_THROWS_AS(verify_splitting(o.model, {o.hyp, o.ell}), ValidationError);
    const auto flat = find_closed_orbit_action(free_torus(), 0.5, Eigen::Vector2i(1, 0));
    CHECK_THROWS_AS(verify_splitting(free_torus(), {flat}), ValidationError);
    CHECK_THROWS_AS(verify_splitting(o.model, {}), ValidationError);
}

TEST_CASE("estimate export")
{
    const auto e = bowen_entropy(CatSuspension(), {{0, 0}, {1, 1}, {30, 30}}, {0.8, 1.0}, {0, 1, 2, 3}, 10000);
    const std::string csv = spanning_csv(e);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 4);
    CHECK(csv.rfind("delta,T,N\n", 0) == 0);
    const auto j = estimate_to_json(e);
    CHECK(j["method"] == "bowen");
    CHECK(j["curves"].size() == 2);
    CHECK(j["curves"][0]["N"].size() == 4);
}
