#include "tonelab/franks.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <sstream>

namespace tonelab {

namespace {

// Truncated Taylor series, c[k] = f^(k) / k!.
template <int N>
struct Taylor {
    std::array<double, N + 1> c{};

    static Taylor constant(double v)
    {
        Taylor t;
        t.c[0] = v;
        return t;
    }
    static Taylor variable(double v, double slope)
    {
        Taylor t;
        t.c[0] = v;
        if (N >= 1) t.c[1] = slope;
        return t;
    }
    Taylor operator+(const Taylor& o) const
    {
        Taylor r;
        for (int k = 0; k <= N; ++k) r.c[k] = c[k] + o.c[k];
        return r;
    }
    Taylor operator-(const Taylor& o) const
    {
        Taylor r;
        for (int k = 0; k <= N; ++k) r.c[k] = c[k] - o.c[k];
        return r;
    }
    Taylor operator*(const Taylor& o) const
    {
        Taylor r;
        for (int k = 0; k <= N; ++k)
            for (int i = 0; i <= k; ++i) r.c[k] += c[i] * o.c[k - i];
        return r;
    }
    Taylor operator*(double s) const
    {
        Taylor r = *this;
        for (double& v : r.c) v *= s;
        return r;
    }
    Taylor recip() const
    {
        Taylor r;
        r.c[0] = 1.0 / c[0];
        for (int k = 1; k <= N; ++k) {
            double s = 0.0;
            for (int i = 1; i <= k; ++i) s += c[i] * r.c[k - i];
            r.c[k] = -s / c[0];
        }
        return r;
    }
    Taylor exp() const
    {
        Taylor r;
        r.c[0] = std::exp(c[0]);
        for (int k = 1; k <= N; ++k) {
            double s = 0.0;
            for (int i = 1; i <= k; ++i) s += i * c[i] * r.c[k - i];
            r.c[k] = s / k;
        }
        return r;
    }
    double derivative(int k) const
    {
        double f = 1.0;
        for (int i = 2; i <= k; ++i) f *= i;
        return c[k] * f;
    }
};

// exp(-1/r) for r > 0, flushed to zero where it underflows anyway.
template <int N>
Taylor<N> flat(const Taylor<N>& r)
{
    if (r.c[0] < 2e-3) return Taylor<N>{};
    return (r.recip() * -1.0).exp();
}

template <int N>
Taylor<N> smooth_step_t(const Taylor<N>& r)
{
    if (r.c[0] <= 0.0) return Taylor<N>{};
    if (r.c[0] >= 1.0) return Taylor<N>::constant(1.0);
    const Taylor<N> f = flat(r), g = flat(Taylor<N>::constant(1.0) - r);
    return f * (f + g).recip();
}

// g(s) = exp(-1/(1-s^2)) on (-1, 1), derivatives in s.
Taylor<5> raw_bump(double s, double slope)
{
    if (std::abs(s) >= 1.0) return Taylor<5>{};
    const Taylor<5> x = Taylor<5>::variable(s, slope);
    return flat(Taylor<5>::constant(1.0) - x * x);
}

double bump_integral()
{
    static const double I = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [](double s) { return raw_bump(s, 1.0).c[0]; }, -1.0, 1.0, 15, 1e-15);
    return I;
}

// sup_s |g^(k)(s)| for k = 0..5.
const std::array<double, 6>& bump_sups()
{
    static const std::array<double, 6> sups = [] {
        std::array<double, 6> m{};
        const int N = 40000;
        for (int i = 0; i <= N; ++i) {
            const Taylor<5> g = raw_bump(-1.0 + 2.0 * i / N, 1.0);
            for (int k = 0; k <= 5; ++k) m[k] = std::max(m[k], std::abs(g.derivative(k)));
        }
        return m;
    }();
    return sups;
}

double step_sup(int k)
{
    static const std::array<double, 3> sups = [] {
        std::array<double, 3> m{};
        const int N = 40000;
        for (int i = 0; i <= N; ++i) {
            const Taylor<2> s = smooth_step_t(Taylor<2>::variable(static_cast<double>(i) / N, 1.0));
            for (int q = 0; q <= 2; ++q) m[q] = std::max(m[q], std::abs(s.derivative(q)));
        }
        return m;
    }();
    return sups[k];
}

}  // namespace

std::array<double, 3> smooth_step(double r)
{
    const Taylor<2> s = smooth_step_t(Taylor<2>::variable(r, 1.0));
    return {s.derivative(0), s.derivative(1), s.derivative(2)};
}

std::array<double, 3> cutoff_1d(double s)
{
    const double a = std::abs(s);
    if (a <= 0.25) return {1.0, 0.0, 0.0};
    if (a >= 0.5) return {0.0, 0.0, 0.0};
    const auto p = smooth_step(2.0 - 4.0 * a);
    const double sg = s > 0 ? 1.0 : -1.0;
    return {p[0], -4.0 * sg * p[1], 16.0 * p[2]};
}

std::pair<double, double> cutoff_bounds()
{
    // chi' = -4 psi', chi'' = 16 psi''
    return {4.0 * step_sup(1), 16.0 * step_sup(2)};
}

// ---------------------------------------------------------------------------
// Profile

std::array<double, 6> BumpProfile::delta(double t) const
{
    const Taylor<5> g = raw_bump((t - tau) / lambda_width, 1.0 / lambda_width);
    std::array<double, 6> r{};
    for (int k = 0; k <= 5; ++k) r[k] = norm_const * g.derivative(k);
    return r;
}

std::array<double, 3> BumpProfile::h(double t) const
{
    using T2 = Taylor<2>;
    const T2 x = T2::variable(t, 1.0);
    T2 v = smooth_step_t(x * (1.0 / ramp)) * smooth_step_t((T2::constant(domain) - x) * (1.0 / ramp));
    for (const auto& [a, b] : exclusions) {
        const T2 up = smooth_step_t((x - T2::constant(a - ramp)) * (1.0 / ramp));
        const T2 dn = smooth_step_t((T2::constant(b + ramp) - x) * (1.0 / ramp));
        v = v * (T2::constant(1.0) - up * dn);
    }
    return {v.derivative(0), v.derivative(1), v.derivative(2)};
}

double BumpProfile::alpha(const Vec& y, Vec* grad, Mat* hess) const
{
    const int n = static_cast<int>(y.size());
    std::vector<std::array<double, 3>> chi(n);
    for (int i = 0; i < n; ++i) {
        chi[i] = cutoff_1d(y(i) / eps);
        chi[i][1] /= eps;
        chi[i][2] /= eps * eps;
    }
    auto prod_except = [&](int i, int j) {
        double p = 1.0;
        for (int k = 0; k < n; ++k)
            if (k != i && k != j) p *= chi[k][0];
        return p;
    };
    const double a = prod_except(-1, -1);
    if (grad) {
        grad->resize(n);
        for (int i = 0; i < n; ++i) (*grad)(i) = chi[i][1] * prod_except(i, -1);
    }
    if (hess) {
        hess->resize(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                (*hess)(i, j) = i == j ? chi[i][2] * prod_except(i, -1) : chi[i][1] * chi[j][1] * prod_except(i, j);
    }
    return a;
}

std::array<Mat, 3> BumpProfile::beta(const PerturbationParams& w, double t) const
{
    const int n = w.n();
    if (t <= support_lo() || t >= support_hi()) return {Mat::Zero(n, n), Mat::Zero(n, n), Mat::Zero(n, n)};
    const auto dl = delta(t);
    const auto hh = h(t);
    std::array<Mat, 3> m;
    for (int k = 0; k < 3; ++k) m[k] = w.a * dl[k] + w.b * dl[k + 1] + w.c * dl[k + 2] + w.d * dl[k + 3];
    return {hh[0] * m[0], hh[1] * m[0] + hh[0] * m[1], hh[2] * m[0] + 2 * hh[1] * m[1] + hh[0] * m[2]};
}

double BumpProfile::delta_sup(int k) const
{
    return norm_const * bump_sups()[k] / std::pow(lambda_width, k);
}

double BumpProfile::h_ck(int k) const
{
    double m = 1.0;
    for (int j = 1; j <= k; ++j) m = std::max(m, step_sup(j) / std::pow(ramp, j));
    return m;
}

double BumpProfile::one_minus_h_integral() const
{
    std::vector<double> bp{0.0, t0};
    for (double x : {ramp, domain - ramp, domain}) bp.push_back(x);
    for (const auto& [a, b] : exclusions)
        for (double x : {a - ramp, a, b, b + ramp}) bp.push_back(x);
    std::sort(bp.begin(), bp.end());
    double s = 0.0;
    for (size_t i = 0; i + 1 < bp.size(); ++i) {
        const double lo = std::clamp(bp[i], 0.0, t0), hi = std::clamp(bp[i + 1], 0.0, t0);
        if (hi > lo)
            s += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                [this](double t) { return 1.0 - h(t)[0]; }, lo, hi, 10, 1e-14);
    }
    return s;
}

double BumpProfile::delta_integral() const
{
    const double lo = std::max(0.0, support_lo()), hi = std::min(t0, support_hi());
    if (hi <= lo) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [this](double t) { return delta(t)[0]; }, lo, hi, 15, 1e-15);
}

json BumpProfile::to_json() const
{
    json ex = json::array();
    for (const auto& [a, b] : exclusions) ex.push_back({a, b});
    return {{"tau", tau},   {"lambda_width", lambda_width}, {"t0", t0},   {"domain", domain},
            {"ramp", ramp}, {"eps", eps},                   {"exclusions", ex}, {"norm_const", norm_const}};
}

BumpProfile BumpProfile::from_json(const json& j)
{
    BumpProfile p;
    p.tau = j.at("tau");
    p.lambda_width = j.at("lambda_width");
    p.t0 = j.at("t0");
    p.domain = j.at("domain");
    p.ramp = j.at("ramp");
    p.eps = j.at("eps");
    for (const auto& e : j.at("exclusions")) p.exclusions.emplace_back(e[0], e[1]);
    p.norm_const = j.at("norm_const");
    return p;
}

BumpProfile make_profile(double tau, double lambda_width, double t0, double domain, double rho, double eps,
                         std::vector<std::pair<double, double>> exclusions)
{
    if (!(lambda_width > 0) || tau - lambda_width < 0 || tau + lambda_width > t0)
        throw validation("profile", "bump support must lie inside the segment");
    if (!(rho > 0) || !(eps > 0) || t0 > domain * (1 + 1e-12))
        throw validation("profile", "rho and eps must be positive and t0 <= 2 k0");
    BumpProfile p;
    p.tau = tau;
    p.lambda_width = lambda_width;
    p.t0 = t0;
    p.domain = domain;
    p.eps = eps;
    p.exclusions = std::move(exclusions);
    p.norm_const = 1.0 / (lambda_width * bump_integral());
    // Each end ramp costs ramp/2 of the integral of 1 - h, each window its
    // width plus one ramp.
    double win = 0.0;
    for (const auto& [a, b] : p.exclusions) win += b - a;
    const double budget = 0.5 * rho - win;
    if (!(budget > 0)) throw validation("profile", "crossing windows leave no room under rho");
    p.ramp = std::min(budget / (1.0 + p.exclusions.size()), 0.25 * t0);
    const double gap = p.one_minus_h_integral();
    if (!(gap < rho)) {
        std::ostringstream os;
        os << "integral of 1 - h is " << gap << ", not below rho = " << rho;
        throw validation("profile", os.str());
    }
    return p;
}

// ---------------------------------------------------------------------------
// Chart

void TubeChart::at(double t, Vec& gam, Vec& gam_d, Vec& gam_dd, Mat& e, Mat& e_d, Mat& e_dd) const
{
    const size_t N = times.size();
    t = std::clamp(t, times.front(), times.back());
    size_t i = static_cast<size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
    i = std::clamp<size_t>(i, 1, N - 1) - 1;
    const double h = times[i + 1] - times[i];
    const double s = (t - times[i]) / h, s2 = s * s, s3 = s2 * s, s4 = s3 * s, s5 = s4 * s;
    const double H[6] = {1 - 10 * s3 + 15 * s4 - 6 * s5,       s - 6 * s3 + 8 * s4 - 3 * s5,
                         0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5, 0.5 * s3 - s4 + 0.5 * s5,
                         -4 * s3 + 7 * s4 - 3 * s5,            10 * s3 - 15 * s4 + 6 * s5};
    const double D[6] = {-30 * s2 + 60 * s3 - 30 * s4,       1 - 18 * s2 + 32 * s3 - 15 * s4,
                         s - 4.5 * s2 + 6 * s3 - 2.5 * s4,   1.5 * s2 - 4 * s3 + 2.5 * s4,
                         -12 * s2 + 28 * s3 - 15 * s4,       30 * s2 - 60 * s3 + 30 * s4};
    const double DD[6] = {-60 * s + 180 * s2 - 120 * s3, -36 * s + 96 * s2 - 60 * s3, 1 - 9 * s + 18 * s2 - 10 * s3,
                          3 * s - 12 * s2 + 10 * s3,     -24 * s + 84 * s2 - 60 * s3, 60 * s - 180 * s2 + 120 * s3};
    auto quintic = [&](const double* w, double scale) -> Vec {
        return (w[0] * g[i] + w[1] * h * gd[i] + w[2] * h * h * gdd[i] + w[3] * h * h * gdd[i + 1] +
                w[4] * h * gd[i + 1] + w[5] * g[i + 1]) /
               scale;
    };
    gam = quintic(H, 1.0);
    gam_d = quintic(D, h);
    gam_dd = quintic(DD, h * h);
    const double c[4] = {2 * s3 - 3 * s2 + 1, s3 - 2 * s2 + s, -2 * s3 + 3 * s2, s3 - s2};
    const double cd[4] = {6 * s2 - 6 * s, 3 * s2 - 4 * s + 1, -6 * s2 + 6 * s, 3 * s2 - 2 * s};
    const double cdd[4] = {12 * s - 6, 6 * s - 4, -12 * s + 6, 6 * s - 2};
    auto cubic = [&](const double* w, double scale) -> Mat {
        return (w[0] * E[i] + w[1] * h * Ed[i] + w[2] * E[i + 1] + w[3] * h * Ed[i + 1]) / scale;
    };
    e = cubic(c, 1.0);
    e_d = cubic(cd, h);
    e_dd = cubic(cdd, h * h);
}

Vec TubeChart::point(double t, const Vec& y) const
{
    Vec a, b, c;
    Mat e, ed, edd;
    at(t, a, b, c, e, ed, edd);
    return a + e * y;
}

std::optional<std::pair<double, Vec>> TubeChart::invert(const Vec& x) const
{
    const Vec center = g[g.size() / 2];
    const Vec xl = center + wrap_centered(x - center);
    size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < g.size(); ++k) {
        const double dk = (g[k] - xl).squaredNorm();
        if (dk < bd) bd = dk, best = k;
    }
    double t = times[best];
    Vec y = Vec::Zero(n());
    Vec gam, gd_, gdd_;
    Mat e, ed, edd;
    for (int it = 0; it < 40; ++it) {
        at(t, gam, gd_, gdd_, e, ed, edd);
        const Vec r = gam + e * y - xl;
        if (r.norm() < 1e-14 * (1.0 + xl.norm())) return std::make_pair(t, y);
        Mat J(d, d);
        J.col(0) = gd_ + ed * y;
        J.rightCols(n()) = e;
        const Vec dq = J.partialPivLu().solve(r);
        if (!dq.allFinite()) return std::nullopt;
        t -= dq(0);
        y -= dq.tail(n());
        if (t < times.front() - 1e-12 || t > times.back() + 1e-12) return std::nullopt;
    }
    at(t, gam, gd_, gdd_, e, ed, edd);
    if ((gam + e * y - xl).norm() < 1e-11) return std::make_pair(t, y);
    return std::nullopt;
}

TubeChart make_chart(const LagrangianModel& model, const AdaptedFrame& frame, double t_lo, double t_hi)
{
    const int d = model.dim();
    TubeChart ch;
    ch.d = d;
    const auto& T = frame.times;
    size_t i0 = static_cast<size_t>(std::lower_bound(T.begin(), T.end(), t_lo) - T.begin());
    size_t i1 = static_cast<size_t>(std::upper_bound(T.begin(), T.end(), t_hi) - T.begin());
    i0 = i0 >= 2 ? i0 - 2 : 0;
    i1 = std::min(i1 + 2, T.size());
    if (i1 < i0 + 2) throw validation("segment", "chart range holds fewer than two frame samples");
    for (size_t k = i0; k < i1; ++k) {
        const Vec& z = frame.states[k];
        const Mat& F = frame.covectors[k];
        const PointJet pj = model.jet(z.head(d));
        const HamJet hj = hamiltonian_jet(model, pj, z.tail(d));
        Mat Gdot = Mat::Zero(d, d);
        for (int q = 0; q < d; ++q) Gdot += hj.v(q) * pj.dG[q];
        const Mat Ndot = -pj.Ginv * Gdot * pj.Ginv;
        ch.times.push_back(T[k]);
        ch.g.push_back(z.head(d));
        ch.gd.push_back(hj.v);
        ch.gdd.push_back(hj.Hpx * hj.v - pj.Ginv * hj.Hx);
        ch.E.push_back(pj.Ginv * F);
        ch.Ed.push_back(Ndot * F + pj.Ginv * covector_derivative(model, z, F));
    }
    return ch;
}

// ---------------------------------------------------------------------------
// Potential

PotentialField::PotentialField(BumpProfile profile, PerturbationParams params, std::shared_ptr<const TubeChart> chart)
    : profile_(std::move(profile)), params_(std::move(params)), chart_(std::move(chart))
{
    if (!chart_ || params_.n() != chart_->n()) throw validation("dimension", "parameters do not match the chart");
    const auto& g = chart_->g;
    center_ = g[g.size() / 2];
    double reach = 0.0, emax = 0.0;
    for (size_t k = 0; k < g.size(); ++k) {
        reach = std::max(reach, (g[k] - center_).norm());
        emax = std::max(emax, op_norm(chart_->E[k]));
    }
    reject_radius_ = reach + 0.5 * std::sqrt(chart_->n()) * profile_.eps * emax * 1.01 + 1e-9;
    // The tube is thin along the orbit: a slab normal to the orbit direction
    // at the centre contains it.
    const size_t c = g.size() / 2;
    axis_ = g[std::min(c + 1, g.size() - 1)] - g[c > 0 ? c - 1 : 0];
    axis_ /= axis_.norm();
    slab_half_ = 0.0;
    for (size_t k = 0; k < g.size(); ++k) {
        const double side = 0.5 * profile_.eps * (axis_.transpose() * chart_->E[k]).cwiseAbs().sum();
        slab_half_ = std::max(slab_half_, std::abs(axis_.dot(g[k] - center_)) + side);
    }
    slab_half_ = 1.01 * slab_half_ + 1e-9;
}

ScalarJet PotentialField::chart_jet(double t, const Vec& y) const
{
    const int n = chart_->n(), d = n + 1;
    ScalarJet J{0.0, Vec::Zero(d), Mat::Zero(d, d)};
    const auto B = profile_.beta(params_, t);
    Vec ga;
    Mat ha;
    const double a = profile_.alpha(y, &ga, &ha);
    if (a == 0.0 && ga.isZero() && ha.isZero()) return J;
    const double P = y.dot(B[0] * y), Pt = y.dot(B[1] * y), Ptt = y.dot(B[2] * y);
    const Vec Py = 2.0 * B[0] * y, Pty = 2.0 * B[1] * y;
    J.value = a * P;
    J.grad(0) = a * Pt;
    J.grad.tail(n) = P * ga + a * Py;
    J.hess(0, 0) = a * Ptt;
    const Vec mix = Pt * ga + a * Pty;
    J.hess.block(1, 0, n, 1) = mix;
    J.hess.block(0, 1, 1, n) = mix.transpose();
    J.hess.bottomRightCorner(n, n) = P * ha + ga * Py.transpose() + Py * ga.transpose() + 2.0 * a * B[0];
    return J;
}

ScalarJet PotentialField::jet_at(double t, const Vec& y) const
{
    const int n = chart_->n(), d = n + 1;
    const ScalarJet U = chart_jet(t, y);
    ScalarJet J{U.value, Vec::Zero(d), Mat::Zero(d, d)};
    if (U.grad.isZero() && U.hess.isZero()) return J;
    Vec gam, gd, gdd;
    Mat e, ed, edd;
    chart_->at(t, gam, gd, gdd, e, ed, edd);
    Mat Jc(d, d);
    Jc.col(0) = gd + ed * y;
    Jc.rightCols(n) = e;
    const Eigen::PartialPivLU<Mat> lu(Jc);
    const Mat Dq = lu.inverse();  // d(t, y) / dx
    J.grad = Dq.transpose() * U.grad;
    J.hess = Dq.transpose() * U.hess * Dq;
    // second derivatives of the inverse chart
    const Vec Ptt = gdd + edd * y;
    for (int k = 0; k < d; ++k)
        for (int l = k; l < d; ++l) {
            const double tk = Dq(0, k), tl = Dq(0, l);
            Vec S = Ptt * tk * tl;
            for (int i = 0; i < n; ++i) S += ed.col(i) * (tk * Dq(1 + i, l) + Dq(1 + i, k) * tl);
            const double c = -U.grad.dot(lu.solve(S));
            J.hess(k, l) += c;
            if (l != k) J.hess(l, k) += c;
        }
    return J;
}

ScalarJet PotentialField::eval(const Vec& x) const
{
    const int d = chart_->d;
    ScalarJet zero{0.0, Vec::Zero(d), Mat::Zero(d, d)};
    const Vec xl = center_ + wrap_centered(x - center_);
    if ((xl - center_).norm() > reject_radius_) return zero;
    const auto q = chart_->invert(xl);
    if (!q) return zero;
    const auto& [t, y] = *q;
    if (t <= profile_.support_lo() || t >= profile_.support_hi()) return zero;
    if (y.cwiseAbs().maxCoeff() >= 0.5 * profile_.eps) return zero;
    return jet_at(t, y);
}

double PotentialField::step_limit(const Vec& x, double speed) const
{
    const double floor = 0.004 * profile_.lambda_width;
    const Vec dx = wrap_centered(x - center_);
    const double D = std::max(dx.norm() - reject_radius_, std::abs(axis_.dot(dx)) - slab_half_);
    if (D <= 0 || !(speed > 0)) return floor;
    return std::max(floor, 0.5 * D / speed);
}

Mat PotentialField::orbit_hessian(double t) const { return 2.0 * profile_.beta(params_, t)[0]; }

namespace {

template <class F>
double tube_sup(const BumpProfile& p, int n, int nt, int ny, F&& f)
{
    if (ny <= 0) ny = n == 1 ? 21 : n == 2 ? 11 : 7;
    double m = 0.0;
    Vec y(n);
    for (int i = 0; i <= nt; ++i) {
        const double t = p.support_lo() + (p.support_hi() - p.support_lo()) * i / nt;
        std::vector<int> idx(static_cast<size_t>(n), 0);
        while (true) {
            for (int k = 0; k < n; ++k) y(k) = p.eps * (-0.5 + static_cast<double>(idx[k]) / (ny - 1));
            const ScalarJet J = f(t, y);
            m = std::max({m, std::abs(J.value), J.grad.norm(), op_norm(J.hess)});
            int k = n - 1;
            while (k >= 0 && ++idx[k] == ny) idx[k--] = 0;
            if (k < 0) break;
        }
    }
    return m;
}

}  // namespace

double PotentialField::c2_norm(int nt, int ny) const
{
    return tube_sup(profile_, chart_->n(), nt, ny, [this](double t, const Vec& y) { return jet_at(t, y); });
}

double PotentialField::chart_c2_norm(int nt, int ny) const
{
    return tube_sup(profile_, chart_->n(), nt, ny, [this](double t, const Vec& y) { return chart_jet(t, y); });
}

std::string PotentialField::beta_csv(int samples) const
{
    const int n = chart_->n();
    std::ostringstream os;
    os.precision(17);
    os << "t";
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) os << ",beta_" << i + 1 << j + 1;
    os << '\n';
    for (int k = 0; k <= samples; ++k) {
        const double t = profile_.support_lo() + (profile_.support_hi() - profile_.support_lo()) * k / samples;
        const Mat B = profile_.beta(params_, t)[0];
        os << t;
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) os << ',' << B(i, j);
        os << '\n';
    }
    return os.str();
}

PotentialField build_potential(const BumpProfile& profile, const PerturbationParams& params,
                               std::shared_ptr<const TubeChart> chart)
{
    if (!chart) throw validation("support", "no chart for the potential");
    if (profile.support_lo() < chart->t_lo() || profile.support_hi() > chart->t_hi())
        throw validation("support", "bump support leaves the chart");
    // The tube must stay a chart: the transverse Jacobian may not degenerate
    // at its corners.
    const int n = chart->n();
    for (double t : {profile.support_lo(), profile.tau, profile.support_hi()}) {
        Vec gam, gd, gdd;
        Mat e, ed, edd;
        chart->at(t, gam, gd, gdd, e, ed, edd);
        Mat J0(chart->d, chart->d);
        J0.col(0) = gd;
        J0.rightCols(n) = e;
        const double s0 = Eigen::JacobiSVD<Mat>(J0).singularValues().minCoeff();
        for (int corner = 0; corner < (1 << n); ++corner) {
            Vec y(n);
            for (int i = 0; i < n; ++i) y(i) = (corner >> i & 1 ? 0.5 : -0.5) * profile.eps;
            Mat J = J0;
            J.col(0) += ed * y;
            const double s = Eigen::JacobiSVD<Mat>(J).singularValues().minCoeff();
            if (!(s > 0.5 * s0)) {
                std::ostringstream os;
                os << "tube of size " << profile.eps << " folds at t = " << t;
                throw validation("support", os.str());
            }
        }
    }
    return PotentialField(profile, params, std::move(chart));
}

CurvaturePath perturbed_curvature(const CurvaturePath& K, const PotentialField& field)
{
    if (K.n() != field.chart()->n()) throw validation("frame", "curvature path and potential differ in dimension");
    if (std::abs(K.duration() - field.profile().t0) > 1e-9 * (1 + K.duration()))
        throw validation("frame", "curvature path and potential live on different segments");
    CurvaturePath out = K;
    for (size_t k = 0; k < out.times.size(); ++k) out.K[k] = sym(out.K[k] + field.orbit_hessian(out.times[k]));
    return out;
}

}  // namespace tonelab
