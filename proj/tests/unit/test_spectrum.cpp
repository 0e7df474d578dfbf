#include "tonelab/families.hpp"

#include <doctest.h>

#include <random>

using namespace tonelab;

namespace {

Mat m2(double a, double b, double c, double d)
{
    Mat m(2, 2);
    m << a, b, c, d;
    return m;
}

Mat rot(double th) { return m2(std::cos(th), -std::sin(th), std::sin(th), std::cos(th)); }

// Block-diagonal symplectic matrix from 2x2 blocks (x_i, p_i) pairs.
Mat blocks(const std::vector<Mat>& b)
{
    const int n = static_cast<int>(b.size());
    Mat A = Mat::Zero(2 * n, 2 * n);
    for (int i = 0; i < n; ++i) {
        A(i, i) = b[i](0, 0);
        A(i, n + i) = b[i](0, 1);
        A(n + i, i) = b[i](1, 0);
        A(n + i, n + i) = b[i](1, 1);
    }
    return A;
}

// Random element of Sp(n) as a product of exponentials.
Mat random_sp(int n, std::mt19937_64& rng, double scale)
{
    std::normal_distribution<double> N;
    Mat S(2 * n, 2 * n);
    for (int i = 0; i < 2 * n; ++i)
        for (int j = 0; j < 2 * n; ++j) S(i, j) = scale * N(rng);
    return expm(canonical_J(n) * sym(S));
}

}  // namespace

TEST_CASE("classify examples")
{
    CHECK(classify_spectrum(m2(2, 0, 0, 0.5)).kind == SpectralKind::Hyperbolic);
    auto e = classify_spectrum(rot(1.8138));
    CHECK(e.kind == SpectralKind::Elliptic);
    CHECK(e.q == 1);
    CHECK(e.name() == "1-elliptic");
    CHECK(e.rotation[0] == doctest::Approx(1.8138 / kTwoPi));
    CHECK(classify_spectrum(m2(1, 1, 0, 1)).kind == SpectralKind::Parabolic);
    CHECK(classify_spectrum(m2(-1, 0.3, 0, -1)).kind == SpectralKind::Parabolic);
    CHECK(classify_spectrum(blocks({rot(0.7), m2(1, 2, 0, 1)})).kind == SpectralKind::Mixed);
    CHECK(classify_spectrum(blocks({rot(0.7), m2(3, 0, 0, 1.0 / 3)})).name() == "1-elliptic");
    CHECK(classify_spectrum(rot(kPi / 2)).root_of_unity == 4);
    CHECK_THROWS_AS(classify_spectrum(m2(2, 0, 0, 2)), ValidationError);
}

TEST_CASE("n = 1 classification follows the trace")
{
    std::mt19937_64 rng(6);
    for (int t = 0; t < 300; ++t) {
        Mat A = random_sp(1, rng, 0.8);
        const double tr = A.trace();
        auto c = classify_spectrum(A);
        if (std::abs(tr) > 2 + 1e-6) CHECK(c.kind == SpectralKind::Hyperbolic);
        else if (std::abs(tr) < 2 - 1e-6) CHECK(c.kind == SpectralKind::Elliptic);
    }
    // on the boundary within the band
    CHECK(classify_spectrum(m2(1, 0.5, 1e-9, 1 + 5e-10)).kind == SpectralKind::Parabolic);
}

TEST_CASE("eigenvalues come in symplectic quadruples")
{
    std::mt19937_64 rng(9);
    for (int n = 1; n <= 3; ++n)
        for (int t = 0; t < 40; ++t) {
            Mat A = random_sp(n, rng, 0.5);
            CVec ev = balanced_eigenvalues(A);
            for (int i = 0; i < ev.size(); ++i) {
                double best_inv = 1e9, best_conj = 1e9;
                for (int j = 0; j < ev.size(); ++j) {
                    best_inv = std::min(best_inv, std::abs(ev(j) - 1.0 / ev(i)));
                    best_conj = std::min(best_conj, std::abs(ev(j) - std::conj(ev(i))));
                }
                CHECK(best_inv < 1e-6 * std::max(1.0, std::abs(1.0 / ev(i))));
                CHECK(best_conj < 1e-6 * std::max(1.0, std::abs(ev(i))));
            }
        }
}

TEST_CASE("balancing helps badly scaled matrices")
{
    Mat A = m2(2, 1e6, 1e-6, 1);
    Vec D = balance_scaling(A);
    Mat B = D.cwiseInverse().asDiagonal() * A * D.asDiagonal();
    CHECK(std::abs(B(0, 1)) < 10.0);
    CHECK(std::abs(B(1, 0)) < 10.0);
    CVec ev = balanced_eigenvalues(A);
    CHECK(std::abs(ev(0) * ev(1) - 1.0) < 1e-12);
}

TEST_CASE("4-elementary")
{
    CHECK_FALSE(is_4_elementary(std::vector<double>{0.25}));
    CHECK(is_4_elementary(std::vector<double>{std::sqrt(2.0) - 1}));
    CHECK_FALSE(is_4_elementary(std::vector<double>{0.1, 0.2}));
    CHECK(is_4_elementary(std::vector<double>{0.1234, 0.3711}));
    CHECK_THROWS_AS(is_4_elementary(classify_spectrum(m2(2, 0, 0, 0.5))), ValidationError);
    CHECK_FALSE(is_4_elementary(classify_spectrum(rot(kPi / 2))));
    CHECK(classify_spectrum(rot(kTwoPi * (std::sqrt(2.0) - 1))).four_elementary.value());
}

namespace {

// e^{i(w + c|z|^2)} z to third order, optionally conjugated.
ComplexJet3 twist_oracle(double w, double c)
{
    const Complex lambda = std::polar(1.0, w);
    ComplexJet3 f;
    f.at(1, 0) = lambda;
    f.at(2, 1) = Complex(0, c) * lambda;
    return f;
}

// Symplectic kick (x, y) -> (x, y + a x^2 + b x^3) and its inverse.
ComplexJet3 kick(double a, double b)
{
    ComplexJet3 X;
    X.at(1, 0) = 0.5;
    X.at(0, 1) = 0.5;
    const ComplexJet3 g = (X * X) * Complex(a) + (X * X * X) * Complex(b);
    return ComplexJet3::identity() + g * Complex(0, 1);
}

ComplexJet3 linear(const Mat& M)
{
    PlanarJet3 j;
    j.at(0, 1, 0) = M(0, 0);
    j.at(0, 0, 1) = M(0, 1);
    j.at(1, 1, 0) = M(1, 0);
    j.at(1, 0, 1) = M(1, 1);
    return to_complex(j);
}

}  // namespace

TEST_CASE("jet algebra round trips")
{
    ComplexJet3 f = twist_oracle(0.9, 0.4);
    PlanarJet3 r = to_real(f);
    ComplexJet3 back = to_complex(r);
    for (int i = 0; i < 10; ++i) CHECK(std::abs(back.c[i] - f.c[i]) < 1e-14);
    const Complex z(0.013, -0.021);
    CHECK(std::abs(kick(0.3, -0.2).compose(kick(-0.3, 0.2)).eval(z) - z) < 1e-10);
}

TEST_CASE("birkhoff twist oracle")
{
    for (double c : {-1.0, 0.3, 2.0}) {
        const double w = 1.1;
        auto r = birkhoff_twist_q1(to_real(twist_oracle(w, c)));
        CHECK(r.rotation == doctest::Approx(w / kTwoPi).epsilon(1e-12));
        CHECK(std::abs(r.beta - c / kTwoPi) < 1e-10);
        CHECK(r.weakly_monotonous);
        // conjugated by a nonlinear kick and an area-preserving linear map
        Mat L = m2(2.0, 0.7, 0.0, 0.5);
        ComplexJet3 S = kick(0.4, -0.3).compose(linear(L));
        ComplexJet3 Si = linear(L.inverse()).compose(kick(-0.4, 0.3));
        auto r2 = birkhoff_twist_q1(to_real(Si.compose(twist_oracle(w, c).compose(S))));
        CHECK(std::abs(r2.beta - c / kTwoPi) < 1e-10);
        CHECK(std::abs(r2.beta_imag) < 1e-10);
    }
    auto lin = birkhoff_twist_q1(to_real(twist_oracle(1.1, 0.0)));
    CHECK(std::abs(lin.beta) < 1e-14);
    CHECK_FALSE(lin.weakly_monotonous);
    CHECK_THROWS_AS(birkhoff_twist_q1(to_real(twist_oracle(kPi / 2, 0.3))), NumericalError);
    // clockwise rotation keeps its orientation: a = -w/2pi, same twist
    auto neg = birkhoff_twist_q1(to_real(twist_oracle(-1.1, 0.3)));
    CHECK(neg.rotation == doctest::Approx(-1.1 / kTwoPi));
    CHECK(std::abs(neg.beta - 0.3 / kTwoPi) < 1e-10);
}

TEST_CASE("uniform hyperbolicity")
{
    PeriodicFamily c{{{m2(2, 0, 0, 0.5)}}};
    auto r = check_uniform_hyperbolicity(c, 1.0, 0.5);
    CHECK(r.pass);
    CHECK(r.min_K == doctest::Approx(1.0));
    PeriodicFamily rf{{{rot(0.4)}}};
    auto rr = check_uniform_hyperbolicity(rf, 10.0, 0.9);
    CHECK_FALSE(rr.pass);
    CHECK(rr.failure == "not-hyperbolic");
    PeriodicFamily two{{{m2(3, 0, 0, 1.0 / 3), m2(0.5, 0, 0, 2)}}};
    const double lam = std::sqrt(2.0 / 3.0);
    auto r2 = check_uniform_hyperbolicity(two, 10.0, lam);
    CHECK(r2.pass);
    CHECK(r2.min_K == doctest::Approx(std::sqrt(6.0)).epsilon(1e-12));
    CHECK(check_uniform_hyperbolicity(two, r2.min_K, lam).pass);
    CHECK_FALSE(check_uniform_hyperbolicity(two, 0.99 * r2.min_K, lam).pass);
    // rotated splitting: conjugate by a rotation, constants measured in a skew basis
    Mat Q = rot(0.3);
    PeriodicFamily skew{{{Q * m2(2, 0, 0, 0.5) * Q.transpose()}}};
    CHECK(check_uniform_hyperbolicity(skew, 1.0, 0.5).pass);
}

TEST_CASE("stable hyperbolicity probe")
{
    PeriodicFamily c{{{m2(2, 0, 0, 0.5)}}};
    auto p = stable_hyperbolicity_probe(c, 0.01, 1000);
    CHECK(p.input_hyperbolic);
    CHECK(p.fraction_hyperbolic == 1.0);
    auto z = stable_hyperbolicity_probe(c, 0.0, 50);
    CHECK(z.fraction_hyperbolic == 1.0);
    PeriodicFamily par{{{m2(1, 1, 0, 1)}}};
    auto q = stable_hyperbolicity_probe(par, 0.01, 200);
    CHECK_FALSE(q.input_hyperbolic);
    CHECK(q.fraction_hyperbolic < 1.0);
    CHECK(q.smallest_destabilizing < 0.01);
}

TEST_CASE("family json")
{
    PeriodicFamily two{{{m2(3, 0, 0, 1.0 / 3), m2(0.5, 0, 0, 2)}}};
    auto back = PeriodicFamily::from_json(two.to_json());
    CHECK((back.sequences[0][1] - two.sequences[0][1]).norm() == 0.0);
    CHECK(two.bound() == doctest::Approx(3.0));
}
