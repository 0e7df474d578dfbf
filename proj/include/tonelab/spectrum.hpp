#pragma once

#include "tonelab/errors.hpp"
#include "tonelab/linalg.hpp"

#include <array>
#include <optional>
#include <string>

namespace tonelab {

// Eigenvalues after Parlett-Reinsch balancing.
CVec balanced_eigenvalues(const Mat& A);
// The balancing itself: returns D with D^-1 A D balanced (D diagonal, powers of 2).
Vec balance_scaling(const Mat& A);

enum class SpectralKind { Hyperbolic, Elliptic, Parabolic, Mixed };

// Parabolic: every unit eigenvalue is +-1.  Elliptic: every unit eigenvalue is
// non-real (2q of them).  Mixed: both kinds present.  Hyperbolic: none.
struct SpectralClass {
    SpectralKind kind = SpectralKind::Hyperbolic;
    int q = 0;
    CVec eigenvalues;
    std::vector<double> rotation;  // angle/(2 pi) in (0, 1/2) for the elliptic pairs
    int root_of_unity = 0;         // smallest order <= 12 among elliptic pairs, 0 if none
    double margin = 0.0;           // distance of the nearest eigenvalue to a class change
    double tol = 1e-7;
    std::optional<bool> four_elementary;
    std::optional<bool> weakly_monotonous;

    std::string name() const;  // "hyperbolic", "2-elliptic", ...
};

SpectralClass classify_spectrum(const Mat& A, double tol = 1e-7, double defect_limit = 1e-6);

// No product of elliptic eigenvalues with 1 <= sum |m_i| <= 4 equals 1.
bool is_4_elementary(const SpectralClass& c, double angle_tol = 1e-7);
bool is_4_elementary(const std::vector<double>& rotation, double angle_tol = 1e-7);

// Degree-3 Taylor jet of a planar map fixing the origin.  coeff[c][monomial]
// for components c = x, y; monomials x^i y^j ordered by total degree then by
// decreasing power of x: 1, x, y, x^2, xy, y^2, x^3, x^2y, xy^2, y^3.
struct PlanarJet3 {
    std::array<std::array<double, 10>, 2> coeff{};
    static int index(int i, int j);
    double& at(int comp, int i, int j) { return coeff[comp][index(i, j)]; }
    double at(int comp, int i, int j) const { return coeff[comp][index(i, j)]; }
    Mat linear() const;
};

// Truncated polynomial in (z, zbar) up to total degree 3.
struct ComplexJet3 {
    std::array<Complex, 10> c{};  // same monomial order in (z, zbar)
    Complex& at(int j, int k) { return c[PlanarJet3::index(j, k)]; }
    Complex at(int j, int k) const { return c[PlanarJet3::index(j, k)]; }

    ComplexJet3 operator+(const ComplexJet3& o) const;
    ComplexJet3 operator-(const ComplexJet3& o) const;
    ComplexJet3 operator*(const ComplexJet3& o) const;  // truncated
    ComplexJet3 operator*(Complex s) const;
    ComplexJet3 conj() const;                            // the polynomial of conj(f)
    // f(g(w, wbar), conj g(w, wbar)), truncated; g has no constant term.
    ComplexJet3 compose(const ComplexJet3& g) const;
    static ComplexJet3 identity();
    Complex eval(Complex z) const;
};

// z-component F_x + i F_y of a real jet and back.
ComplexJet3 to_complex(const PlanarJet3& j);
PlanarJet3 to_real(const ComplexJet3& f);

struct BirkhoffResult {
    double rotation = 0.0;   // a_1, in turns
    double beta = 0.0;       // beta_11
    double beta_imag = 0.0;  // should vanish for area-preserving input
    bool weakly_monotonous = false;
    ComplexJet3 normal_form;  // lambda z + g21 z^2 zbar + (higher, dropped)
};

BirkhoffResult birkhoff_twist_q1(const PlanarJet3& jet, double tol = 1e-8, double resonance_tol = 1e-7);

}  // namespace tonelab
