#include "tonelab/linalg.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace tonelab {

Mat canonical_J(int m)
{
    Mat J = Mat::Zero(2 * m, 2 * m);
    J.topRightCorner(m, m).setIdentity();
    J.bottomLeftCorner(m, m) = -Mat::Identity(m, m);
    return J;
}

double symplectic_defect(const Mat& A)
{
    const int m = static_cast<int>(A.rows()) / 2;
    const Mat J = canonical_J(m);
    return op_norm(A.transpose() * J * A - J);
}

double op_norm(const Mat& A)
{
    if (A.size() == 0) return 0.0;
    Eigen::JacobiSVD<Mat> svd(A);
    return svd.singularValues()(0);
}

double omega(const Vec& z, const Vec& w)
{
    const int m = static_cast<int>(z.size()) / 2;
    return z.head(m).dot(w.tail(m)) - z.tail(m).dot(w.head(m));
}

Vec wrap01(const Vec& x)
{
    Vec r(x.size());
    for (int i = 0; i < x.size(); ++i) {
        r(i) = x(i) - std::floor(x(i));
        if (r(i) >= 1.0) r(i) -= 1.0;
    }
    return r;
}

Vec wrap_centered(const Vec& x)
{
    Vec r(x.size());
    for (int i = 0; i < x.size(); ++i) r(i) = x(i) - std::floor(x(i) + 0.5);
    return r;
}

double torus_distance(const Vec& x, const Vec& y)
{
    return wrap_centered(x - y).norm();
}

Mat sym(const Mat& A) { return 0.5 * (A + A.transpose()); }

Mat expm(const Mat& A) { return A.exp(); }

}  // namespace tonelab
