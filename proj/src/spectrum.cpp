#include "tonelab/spectrum.hpp"

#include <algorithm>
#include <sstream>

namespace tonelab {

Vec balance_scaling(const Mat& A0)
{
    // Parlett-Reinsch, 1-norm variant with radix 2.
    Mat A = A0;
    const int n = static_cast<int>(A.rows());
    Vec D = Vec::Ones(n);
    bool done = false;
    while (!done) {
        done = true;
        for (int i = 0; i < n; ++i) {
            double c = 0.0, r = 0.0;
            for (int j = 0; j < n; ++j)
                if (j != i) {
                    c += std::abs(A(j, i));
                    r += std::abs(A(i, j));
                }
            if (c == 0.0 || r == 0.0) continue;
            double g = r / 2.0, f = 1.0;
            const double s = c + r;
            while (c < g) {
                f *= 2.0;
                c *= 4.0;
            }
            g = r * 2.0;
            while (c >= g) {
                f /= 2.0;
                c /= 4.0;
            }
            if ((c + r) / f < 0.95 * s) {
                done = false;
                D(i) *= f;
                A.row(i) /= f;
                A.col(i) *= f;
            }
        }
    }
    return D;
}

CVec balanced_eigenvalues(const Mat& A)
{
    if (!A.allFinite()) throw numerical("eigen", "non-finite matrix entries");
    const Vec D = balance_scaling(A);
    const Mat B = D.cwiseInverse().asDiagonal() * A * D.asDiagonal();
    Eigen::EigenSolver<Mat> es(B, false);
    if (es.info() != Eigen::Success) throw numerical("eigen", "eigenvalue iteration did not converge");
    return es.eigenvalues();
}

std::string SpectralClass::name() const
{
    switch (kind) {
        case SpectralKind::Hyperbolic: return "hyperbolic";
        case SpectralKind::Parabolic: return "parabolic";
        case SpectralKind::Mixed: return "mixed";
        case SpectralKind::Elliptic: return std::to_string(q) + "-elliptic";
    }
    return "?";
}

SpectralClass classify_spectrum(const Mat& A, double tol, double defect_limit)
{
    if (A.rows() != A.cols() || A.rows() % 2 != 0) throw validation("dimension", "symplectic matrices are 2n x 2n");
    const double defect = symplectic_defect(A);
    if (defect > defect_limit) {
        std::ostringstream os;
        os << "symplectic defect " << defect << " above " << defect_limit;
        throw validation("symplectic-defect", os.str());
    }
    SpectralClass c;
    c.tol = tol;
    c.eigenvalues = balanced_eigenvalues(A);
    int n_par = 0, n_ell = 0;
    c.margin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < c.eigenvalues.size(); ++i) {
        const Complex l = c.eigenvalues(i);
        // s = l + 1/l is real in [-2, 2] exactly on the circle and is well
        // conditioned at +-1 where l itself splits like a square root.
        const Complex s = l + 1.0 / l;
        const double to_par = std::min(std::abs(s - 2.0), std::abs(s + 2.0));
        const double to_circle = std::abs(std::abs(l) - 1.0);
        if (to_par < tol) {
            ++n_par;
            c.margin = std::min(c.margin, tol - to_par);
        } else if (to_circle < tol) {
            ++n_ell;
            c.margin = std::min(c.margin, to_par);
            if (l.imag() > 0) c.rotation.push_back(std::arg(l) / kTwoPi);
        } else {
            c.margin = std::min(c.margin, to_circle);
        }
    }
    std::sort(c.rotation.begin(), c.rotation.end());
    c.q = static_cast<int>(c.rotation.size());
    if (n_par && n_ell) c.kind = SpectralKind::Mixed;
    else if (n_par) c.kind = SpectralKind::Parabolic;
    else if (n_ell) c.kind = SpectralKind::Elliptic;
    else c.kind = SpectralKind::Hyperbolic;
    for (double r : c.rotation)
        for (int k = 1; k <= 12; ++k) {
            const double x = k * r;
            if (std::abs(x - std::round(x)) * kTwoPi < tol) {
                if (c.root_of_unity == 0 || k < c.root_of_unity) c.root_of_unity = k;
                break;
            }
        }
    if (c.kind == SpectralKind::Elliptic) c.four_elementary = is_4_elementary(c.rotation, tol);
    return c;
}

bool is_4_elementary(const std::vector<double>& rot, double angle_tol)
{
    const int q = static_cast<int>(rot.size());
    if (q == 0) throw validation("domain", "4-elementary is defined for q-elliptic spectra only");
    std::vector<int> m(static_cast<size_t>(q), -4);
    while (true) {
        int l1 = 0;
        double s = 0.0;
        for (int i = 0; i < q; ++i) {
            l1 += std::abs(m[i]);
            s += m[i] * rot[i];
        }
        if (l1 >= 1 && l1 <= 4 && std::abs(s - std::round(s)) * kTwoPi < angle_tol) return false;
        int i = q - 1;
        while (i >= 0 && ++m[i] > 4) m[i--] = -4;
        if (i < 0) break;
    }
    return true;
}

bool is_4_elementary(const SpectralClass& c, double angle_tol)
{
    if (c.kind != SpectralKind::Elliptic) throw validation("domain", "spectrum is " + c.name() + ", not q-elliptic");
    return is_4_elementary(c.rotation, angle_tol);
}

// ---------------------------------------------------------------------------
// Jets

int PlanarJet3::index(int i, int j)
{
    const int deg = i + j;
    // offsets of degree blocks: 0 -> 0, 1 -> 1, 2 -> 3, 3 -> 6
    return deg * (deg + 1) / 2 + j;
}

Mat PlanarJet3::linear() const
{
    Mat L(2, 2);
    L << at(0, 1, 0), at(0, 0, 1), at(1, 1, 0), at(1, 0, 1);
    return L;
}

ComplexJet3 ComplexJet3::operator+(const ComplexJet3& o) const
{
    ComplexJet3 r;
    for (int i = 0; i < 10; ++i) r.c[i] = c[i] + o.c[i];
    return r;
}

ComplexJet3 ComplexJet3::operator-(const ComplexJet3& o) const
{
    ComplexJet3 r;
    for (int i = 0; i < 10; ++i) r.c[i] = c[i] - o.c[i];
    return r;
}

ComplexJet3 ComplexJet3::operator*(Complex s) const
{
    ComplexJet3 r;
    for (int i = 0; i < 10; ++i) r.c[i] = c[i] * s;
    return r;
}

ComplexJet3 ComplexJet3::operator*(const ComplexJet3& o) const
{
    ComplexJet3 r;
    for (int a = 0; a <= 3; ++a)
        for (int b = 0; a + b <= 3; ++b)
            for (int e = 0; a + b + e <= 3; ++e)
                for (int f = 0; a + b + e + f <= 3; ++f) r.at(a + e, b + f) += at(a, b) * o.at(e, f);
    return r;
}

ComplexJet3 ComplexJet3::conj() const
{
    ComplexJet3 r;
    for (int j = 0; j <= 3; ++j)
        for (int k = 0; j + k <= 3; ++k) r.at(k, j) = std::conj(at(j, k));
    return r;
}

ComplexJet3 ComplexJet3::identity()
{
    ComplexJet3 r;
    r.at(1, 0) = 1.0;
    return r;
}

ComplexJet3 ComplexJet3::compose(const ComplexJet3& g) const
{
    const ComplexJet3 gb = g.conj();
    // powers g^j and gbar^k
    std::array<ComplexJet3, 4> gp, gbp;
    gp[0].at(0, 0) = 1.0;
    gbp[0].at(0, 0) = 1.0;
    for (int j = 1; j <= 3; ++j) {
        gp[j] = gp[j - 1] * g;
        gbp[j] = gbp[j - 1] * gb;
    }
    ComplexJet3 r;
    for (int j = 0; j <= 3; ++j)
        for (int k = 0; j + k <= 3; ++k)
            if (at(j, k) != Complex(0.0)) r = r + (gp[j] * gbp[k]) * at(j, k);
    return r;
}

Complex ComplexJet3::eval(Complex z) const
{
    Complex s = 0.0;
    for (int j = 0; j <= 3; ++j)
        for (int k = 0; j + k <= 3; ++k) s += at(j, k) * std::pow(z, j) * std::pow(std::conj(z), k);
    return s;
}

ComplexJet3 to_complex(const PlanarJet3& jet)
{
    // x = (z + zb)/2, y = (z - zb)/(2i)
    ComplexJet3 X, Y;
    X.at(1, 0) = 0.5;
    X.at(0, 1) = 0.5;
    Y.at(1, 0) = Complex(0, -0.5);
    Y.at(0, 1) = Complex(0, 0.5);
    std::array<ComplexJet3, 4> xp, yp;
    xp[0].at(0, 0) = 1.0;
    yp[0].at(0, 0) = 1.0;
    for (int i = 1; i <= 3; ++i) {
        xp[i] = xp[i - 1] * X;
        yp[i] = yp[i - 1] * Y;
    }
    ComplexJet3 r;
    for (int i = 0; i <= 3; ++i)
        for (int j = 0; i + j <= 3; ++j) {
            const Complex coef(jet.at(0, i, j), jet.at(1, i, j));
            if (coef != Complex(0.0)) r = r + (xp[i] * yp[j]) * coef;
        }
    return r;
}

PlanarJet3 to_real(const ComplexJet3& f)
{
    // z = x + iy;  F = f(z, zb), real part -> x comp, imag -> y comp
    ComplexJet3 Z;  // as polynomial in (x, y) we reuse the container with (x, y) exponents
    std::array<ComplexJet3, 4> zp, zbp;
    Z.at(1, 0) = 1.0;
    Z.at(0, 1) = Complex(0, 1);
    ComplexJet3 Zb;
    Zb.at(1, 0) = 1.0;
    Zb.at(0, 1) = Complex(0, -1);
    zp[0].at(0, 0) = 1.0;
    zbp[0].at(0, 0) = 1.0;
    for (int i = 1; i <= 3; ++i) {
        zp[i] = zp[i - 1] * Z;
        zbp[i] = zbp[i - 1] * Zb;
    }
    ComplexJet3 r;
    for (int j = 0; j <= 3; ++j)
        for (int k = 0; j + k <= 3; ++k)
            if (f.at(j, k) != Complex(0.0)) r = r + (zp[j] * zbp[k]) * f.at(j, k);
    PlanarJet3 out;
    for (int i = 0; i < 10; ++i) {
        out.coeff[0][i] = r.c[i].real();
        out.coeff[1][i] = r.c[i].imag();
    }
    return out;
}

BirkhoffResult birkhoff_twist_q1(const PlanarJet3& jet, double tol, double resonance_tol)
{
    if (jet.at(0, 0, 0) != 0.0 || jet.at(1, 0, 0) != 0.0)
        throw validation("jet", "the jet must fix the origin");
    const Mat L = jet.linear();
    if (std::abs(L.determinant() - 1.0) > 1e-8) throw validation("jet", "linear part is not area preserving");
    Eigen::EigenSolver<Mat> es(L);
    int k = es.eigenvalues()(0).imag() > 0 ? 0 : 1;
    Complex lambda = es.eigenvalues()(k);
    if (std::abs(lambda.imag()) < resonance_tol || std::abs(std::abs(lambda) - 1.0) > 1e-7)
        throw validation("domain", "fixed point is not 1-elliptic");
    Eigen::Vector2cd e = es.eigenvectors().col(k);
    // In the basis (Re e, -Im e) the linear part is rotation by arg(lambda).
    Mat P(2, 2);
    P.col(0) = e.real();
    P.col(1) = -e.imag();
    if (P.determinant() < 0) {
        lambda = std::conj(lambda);
        P.col(1) = -P.col(1);
    }
    P /= std::sqrt(P.determinant());
    const Mat Pi = P.inverse();

    // Conjugate by P: F~ = P^-1 F P.  Both as complex jets.
    auto linear_jet = [](const Mat& M) {
        PlanarJet3 j;
        j.at(0, 1, 0) = M(0, 0);
        j.at(0, 0, 1) = M(0, 1);
        j.at(1, 1, 0) = M(1, 0);
        j.at(1, 0, 1) = M(1, 1);
        return to_complex(j);
    };
    ComplexJet3 F = linear_jet(Pi).compose(to_complex(jet).compose(linear_jet(P)));
    if (std::abs(F.at(1, 0) - lambda) > 1e-8 || std::abs(F.at(0, 1)) > 1e-8)
        throw numerical("birkhoff", "linear normalization failed");
    F.at(1, 0) = lambda;  // drop the rounding
    F.at(0, 1) = 0.0;

    auto divisor = [&](int j, int kk) { return std::pow(lambda, j) * std::pow(std::conj(lambda), kk) - lambda; };
    auto eliminate = [&](int degree) {
        ComplexJet3 h;
        for (int j = 0; j <= degree; ++j) {
            const int kk = degree - j;
            if (j == 2 && kk == 1) continue;
            const Complex den = divisor(j, kk);
            if (std::abs(den) < resonance_tol) {
                std::ostringstream os;
                os << "resonant term z^" << j << " zbar^" << kk << " (lambda = " << lambda << ")";
                throw NumericalError("resonance", os.str());
            }
            h.at(j, kk) = F.at(j, kk) / den;
        }
        // Phi = id + h; Phi^-1 to order 3 by fixed point.
        const ComplexJet3 Phi = ComplexJet3::identity() + h;
        ComplexJet3 inv = ComplexJet3::identity();
        for (int it = 0; it < 3; ++it) inv = ComplexJet3::identity() - h.compose(inv);
        F = inv.compose(F.compose(Phi));
    };
    eliminate(2);
    eliminate(3);

    BirkhoffResult r;
    r.rotation = std::arg(lambda) / kTwoPi;
    const Complex b = F.at(2, 1) / (Complex(0, kTwoPi) * lambda);
    r.beta = b.real();
    r.beta_imag = b.imag();
    r.weakly_monotonous = std::abs(r.beta) > tol;
    r.normal_form = F;
    return r;
}

}  // namespace tonelab
