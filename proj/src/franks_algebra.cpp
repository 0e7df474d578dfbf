#include "tonelab/franks.hpp"

#include <sstream>

namespace tonelab {

double h_n(const Mat& A)
{
    const int n = static_cast<int>(A.rows());
    if (n <= 1) return 1.0;
    const Vec lam = Eigen::SelfAdjointEigenSolver<Mat>(sym(A), Eigen::EigenvaluesOnly).eigenvalues();
    double p = 1.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) p *= (lam(i) - lam(j)) * (lam(i) - lam(j));
    return p;
}

PerturbationParams PerturbationParams::zero(int n)
{
    const Mat Z = Mat::Zero(n, n);
    return {Z, Z, Z, Z};
}

Vec PerturbationParams::to_vector() const
{
    const int m = n();
    Vec v(dimension(m));
    int k = 0;
    for (const Mat* M : {&a, &b, &c})
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j) v(k++) = (*M)(i, j);
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) v(k++) = d(i, j);
    return v;
}

PerturbationParams PerturbationParams::from_vector(int m, const Vec& v)
{
    if (v.size() != dimension(m)) throw validation("dimension", "parameter vector has the wrong length");
    PerturbationParams w = zero(m);
    int k = 0;
    for (Mat* M : {&w.a, &w.b, &w.c})
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j) (*M)(i, j) = (*M)(j, i) = v(k++);
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) w.d(i, j) = w.d(j, i) = v(k++);
    return w;
}

double PerturbationParams::norm() const
{
    return std::max({op_norm(a), op_norm(b), op_norm(c), op_norm(d)});
}

PerturbationParams PerturbationParams::operator+(const PerturbationParams& o) const
{
    return {a + o.a, b + o.b, c + o.c, d + o.d};
}

PerturbationParams PerturbationParams::operator*(double s) const { return {a * s, b * s, c * s, d * s}; }

Mat LieAlgebraTarget::matrix() const
{
    const int n = static_cast<int>(alpha.rows());
    Mat T(2 * n, 2 * n);
    T << beta, gamma, alpha, -beta.transpose();
    return T;
}

LieAlgebraTarget LieAlgebraTarget::from_matrix(const Mat& T)
{
    const int n = static_cast<int>(T.rows()) / 2;
    LieAlgebraTarget t;
    t.beta = 0.5 * (T.topLeftCorner(n, n) - T.bottomRightCorner(n, n).transpose());
    t.gamma = sym(T.topRightCorner(n, n));
    t.alpha = sym(T.bottomLeftCorner(n, n));
    return t;
}

LieAlgebraTarget assemble_T(const Mat& K, const PerturbationParams& w)
{
    if (K.rows() != w.a.rows()) throw validation("dimension", "K and parameters differ in size");
    LieAlgebraTarget t;
    t.alpha = w.a - (K * w.c + w.c * K);
    t.gamma = -2.0 * w.c;
    t.beta = w.b - K * w.d - 3.0 * w.d * K;
    return t;
}

// In the eigenbasis K = Q diag(lam) Q^T the commutator is diagonal:
// (lam_i - lam_j) d~_ij = e~_ij.  d is taken with zero diagonal there, which is
// the zero-diagonal condition in coordinates where K is diagonal.
Mat solve_commutator(const Mat& K, const Mat& e, double gap_tol)
{
    const int n = static_cast<int>(K.rows());
    if (n < 2) throw validation("dimension", "the commutator equation needs n >= 2");
    if ((e + e.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1 + e.cwiseAbs().maxCoeff()))
        throw validation("domain", "right-hand side must be antisymmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(K));
    const Vec lam = es.eigenvalues();
    const Mat& Q = es.eigenvectors();
    double gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) gap = std::min(gap, std::abs(lam(i) - lam(j)));
    if (!(gap > gap_tol)) {
        std::ostringstream os;
        os << "eigenvalue gap " << gap << " below " << gap_tol;
        throw numerical("near-resonance", os.str());
    }
    const Mat et = Q.transpose() * e * Q;
    Mat dt = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) dt(i, j) = et(i, j) / (lam(i) - lam(j));
    return sym(Q * dt * Q.transpose());
}

PerturbationParams solve_T_system(const Mat& K, const LieAlgebraTarget& t, double gap_tol)
{
    const int n = static_cast<int>(K.rows());
    PerturbationParams w = PerturbationParams::zero(n);
    w.c = -0.5 * t.gamma;
    w.a = t.alpha - 0.5 * (K * t.gamma + t.gamma * K);
    if (n == 1) {
        w.b = t.beta;
        return w;
    }
    w.d = solve_commutator(K, 0.5 * (t.beta - t.beta.transpose()), gap_tol);
    w.b = 0.5 * (t.beta + t.beta.transpose()) + 2.0 * (K * w.d + w.d * K);
    return w;
}

}  // namespace tonelab
