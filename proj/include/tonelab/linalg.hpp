#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

namespace tonelab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using Complex = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Canonical form [[0, I], [-I, 0]] on R^{2m}.
Mat canonical_J(int m);

// ||A^T J A - J|| in the spectral norm.
double symplectic_defect(const Mat& A);

// Spectral (largest singular value) norm.
double op_norm(const Mat& A);

// omega(z, w) = z^T J w.
double omega(const Vec& z, const Vec& w);

// Coordinates mod 1 into [0,1).
Vec wrap01(const Vec& x);

// Componentwise representative of x in [-1/2, 1/2).
Vec wrap_centered(const Vec& x);

// Flat-torus distance between configuration points.
double torus_distance(const Vec& x, const Vec& y);

Mat sym(const Mat& A);

// Matrix exponential (Pade, via Eigen's unsupported module).
Mat expm(const Mat& A);

}  // namespace tonelab
