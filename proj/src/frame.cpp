#include "tonelab/frame.hpp"

#include <algorithm>
#include <sstream>

namespace tonelab {

namespace {

struct Local {
    PointJet pj;
    HamJet hj;
};

Local local(const LagrangianModel& model, const Vec& z)
{
    const int d = model.dim();
    Local l;
    l.pj = model.jet(z.head(d));
    l.hj = hamiltonian_jet(model, l.pj, z.tail(d));
    return l;
}

// F' = F Omega + G v mu^T: keeps F^T N F = I, F^T v = 0 and the u_i isotropic.
Mat covector_rate(const Local& l, const Mat& F)
{
    const int d = static_cast<int>(F.rows());
    const Vec& v = l.hj.v;
    const Mat& N = l.pj.Ginv;
    Mat Gdot = Mat::Zero(d, d);
    for (int k = 0; k < d; ++k) Gdot += v(k) * l.pj.dG[k];
    const Mat Ndot = -N * Gdot * N;
    const Mat Hxp = l.hj.Hpx.transpose();
    const Mat P = F.transpose() * N * Hxp * F;
    const Mat Omega = -0.5 * F.transpose() * Ndot * F + 0.5 * (P.transpose() - P);
    const Vec vdot = l.hj.Hpx * v - N * l.hj.Hx;
    const double vGv = v.dot(l.pj.G * v);
    const Vec mu = -F.transpose() * vdot / vGv;
    return F * Omega + (l.pj.G * v) * mu.transpose();
}

Mat basis_from(const Local& l, const Mat& F)
{
    const int d = static_cast<int>(F.rows());
    const int n = static_cast<int>(F.cols());
    const Vec& v = l.hj.v;
    const Mat Fdot = covector_rate(l, F);
    const Mat Hxp = l.hj.Hpx.transpose();
    Mat B = Mat::Zero(2 * d, 2 * d);
    B.col(0) << v, -l.hj.Hx;
    for (int i = 0; i < n; ++i) {
        B.col(1 + i) << l.pj.Ginv * F.col(i), -Hxp * F.col(i) - Fdot.col(i);
        B.col(d + 1 + i).tail(d) = F.col(i);
    }
    Vec Y0 = Vec::Zero(2 * d);
    Y0.tail(d) = l.pj.G * v / v.dot(l.pj.G * v);
    Vec Y = Y0;
    for (int i = 0; i < n; ++i)
        Y -= omega(Y0, B.col(d + 1 + i)) * B.col(1 + i) - omega(Y0, B.col(1 + i)) * B.col(d + 1 + i);
    B.col(d) = Y;
    return B;
}

void check_speed(const Local& l)
{
    const double vGv = l.hj.v.dot(l.pj.G * l.hj.v);
    if (!(vGv > 1e-12)) throw numerical("regularity", "frame degenerates: velocity vanishes along the segment");
}

// (z, F) packed as z followed by F column-major.
Rhs extended_rhs(const LagrangianModel& model, int n)
{
    const int d = model.dim();
    return [&model, d, n](const State& y, State& dy, double) {
        Eigen::Map<const Vec> z(y.data(), 2 * d);
        Eigen::Map<const Mat> F(y.data() + 2 * d, d, n);
        const Local l = local(model, z);
        dy.resize(y.size());
        for (int i = 0; i < d; ++i) {
            dy[i] = l.hj.Hp(i);
            dy[d + i] = -l.hj.Hx(i);
        }
        Eigen::Map<Mat> dF(dy.data() + 2 * d, d, n);
        dF = covector_rate(l, F);
    };
}

double sup_abs(const Mat& A) { return A.size() ? A.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

double FrameResiduals::max() const { return std::max({gram, upper_left, upper_right, lower_right, k_asymmetry}); }

Mat initial_covectors(const LagrangianModel& model, const Vec& z)
{
    const int d = model.dim();
    const Local l = local(model, z);
    check_speed(l);
    const Vec& v = l.hj.v;
    const Vec Gv = l.pj.G * v;
    const double vGv = v.dot(Gv);
    int kstar = 0;
    v.cwiseAbs().maxCoeff(&kstar);
    Mat F(d, d - 1);
    int c = 0;
    for (int k = 0; k < d; ++k) {
        if (k == kstar) continue;
        Vec g = -v(k) / vGv * Gv;
        g(k) += 1.0;
        for (int j = 0; j < c; ++j) g -= F.col(j).dot(l.pj.Ginv * g) * F.col(j);
        F.col(c++) = g / std::sqrt(g.dot(l.pj.Ginv * g));
    }
    return F;
}

Mat frame_basis(const LagrangianModel& model, const Vec& z, const Mat& F)
{
    const Local l = local(model, z);
    check_speed(l);
    return basis_from(l, F);
}

Mat covector_derivative(const LagrangianModel& model, const Vec& z, const Mat& F)
{
    return covector_rate(local(model, z), F);
}

Vec reduced_coordinates(const Mat& B, const Vec& xi)
{
    const int d = static_cast<int>(B.rows()) / 2;
    const int n = d - 1;
    Vec r(2 * n);
    for (int i = 0; i < n; ++i) {
        r(i) = omega(xi, B.col(d + 1 + i));
        r(n + i) = -omega(xi, B.col(1 + i));
    }
    return r;
}

Mat reduce_map(const Mat& B_to, const Mat& M, const Mat& B_from)
{
    const int d = static_cast<int>(B_from.rows()) / 2;
    const int n = d - 1;
    Mat R(2 * n, 2 * n);
    for (int j = 0; j < n; ++j) {
        R.col(j) = reduced_coordinates(B_to, M * B_from.col(1 + j));
        R.col(n + j) = reduced_coordinates(B_to, M * B_from.col(d + 1 + j));
    }
    return R;
}

AdaptedFrame adapted_frame(const LagrangianModel& model, const OrbitSegment& segment, const FrameOptions& opt)
{
    const int d = model.dim();
    const int n = d - 1;
    if (!(segment.duration > 0.0) || !std::isfinite(segment.duration))
        throw validation("segment", "segment duration must be positive and finite");
    const PhaseState c0 = to_cotangent(model, segment.start);
    check_speed(local(model, c0.stacked()));
    if (opt.check_injective) {
        const double r = first_near_return(model, c0, segment.duration, InjectivityOptions{});
        if (r < segment.duration) {
            std::ostringstream os;
            os << "projected segment comes back to itself at t = " << r << " < " << segment.duration;
            throw validation("segment", os.str());
        }
    }
    AdaptedFrame fr;
    fr.segment = {c0, segment.duration};
    fr.n = n;
    const int N = std::max(opt.samples, static_cast<int>(std::ceil(segment.duration / opt.max_spacing)));
    for (int k = 0; k <= N; ++k) fr.times.push_back(segment.duration * k / N);

    const Vec z0 = c0.stacked();
    const Mat F0 = initial_covectors(model, z0);
    State y(static_cast<size_t>(2 * d + d * n));
    std::copy(z0.data(), z0.data() + 2 * d, y.begin());
    std::copy(F0.data(), F0.data() + d * n, y.begin() + 2 * d);
    const Rhs rhs = extended_rhs(model, n);
    const Mat J = canonical_J(d);
    const double h = opt.fd_step;

    auto unpack = [&](const State& s, Vec& z, Mat& F) {
        z = Eigen::Map<const Vec>(s.data(), 2 * d);
        F = Eigen::Map<const Mat>(s.data() + 2 * d, d, n);
    };

    OdeOptions oo = ode_options(opt.tol);
    apply_step_limit(oo, model);
    ode_integrate_times(rhs, y, 0.0, fr.times, oo, [&](size_t k, const State& s) {
        Vec z;
        Mat F;
        unpack(s, z, F);
        const Local l = local(model, z);
        check_speed(l);
        const Mat B = basis_from(l, F);
        const double t = fr.times[k];
        auto central = [&](double hh) -> Mat {
            State yp = s, ym = s;
            rk4_fixed(rhs, yp, t, t + hh, 2);
            rk4_fixed(rhs, ym, t, t - hh, 2);
            Vec zp, zm;
            Mat Fp, Fm;
            unpack(yp, zp, Fp);
            unpack(ym, zm, Fm);
            return (frame_basis(model, zp, Fp) - frame_basis(model, zm, Fm)) / (2 * hh);
        };
        // one Richardson step: the plain central difference leaves h^2 ~ 1e-8
        const Mat Bdot = (4.0 * central(0.5 * h) - central(h)) / 3.0;
        const Mat DX = hamiltonian_field_jacobian(model, z);
        const Mat Gen = B.lu().solve(DX * B - Bdot);
        Mat T(2 * n, 2 * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                T(i, j) = Gen(1 + i, 1 + j);
                T(i, n + j) = Gen(1 + i, d + 1 + j);
                T(n + i, j) = Gen(d + 1 + i, 1 + j);
                T(n + i, n + j) = Gen(d + 1 + i, d + 1 + j);
            }
        FrameResiduals& r = fr.residuals;
        r.gram = std::max(r.gram, sup_abs(B.transpose() * J * B - J));
        r.upper_left = std::max(r.upper_left, sup_abs(T.topLeftCorner(n, n)));
        r.upper_right = std::max(r.upper_right, sup_abs(T.topRightCorner(n, n) - Mat::Identity(n, n)));
        r.lower_right = std::max(r.lower_right, sup_abs(T.bottomRightCorner(n, n)));
        const Mat K = -T.bottomLeftCorner(n, n);
        r.k_asymmetry = std::max(r.k_asymmetry, sup_abs(K - K.transpose()));
        fr.states.push_back(z);
        fr.covectors.push_back(F);
        fr.basis.push_back(B);
        fr.generator.push_back(T);
    });
    fr.quality_warning = fr.residuals.max() > opt.warn_level;
    return fr;
}

Mat CurvaturePath::at(double t) const
{
    const size_t N = times.size();
    if (N == 1) return K.front();
    t = std::clamp(t, times.front(), times.back());
    size_t i = static_cast<size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
    i = std::clamp<size_t>(i, 1, N - 1) - 1;
    // Frame grids are uniform; fourth-order slopes there keep the Hermite
    // interpolant at O(h^4).  Catmull-Rom slopes left ~1e-7 on the magnetic preset.
    const bool uniform = N >= 5 && std::abs((times[N - 1] - times[0]) / (N - 1) - (times[1] - times[0])) <
                                       1e-9 * (times[N - 1] - times[0]);
    auto slope = [&](size_t k) -> Mat {
        if (uniform) {
            const double dt = (times[N - 1] - times[0]) / (N - 1);
            if (k >= 2 && k + 2 < N) return (K[k - 2] - 8.0 * K[k - 1] + 8.0 * K[k + 1] - K[k + 2]) / (12 * dt);
            if (k == 0) return (-25.0 * K[0] + 48.0 * K[1] - 36.0 * K[2] + 16.0 * K[3] - 3.0 * K[4]) / (12 * dt);
            if (k == 1) return (-3.0 * K[0] - 10.0 * K[1] + 18.0 * K[2] - 6.0 * K[3] + K[4]) / (12 * dt);
            if (k == N - 2)
                return (3.0 * K[N - 1] + 10.0 * K[N - 2] - 18.0 * K[N - 3] + 6.0 * K[N - 4] - K[N - 5]) / (12 * dt);
            return (25.0 * K[N - 1] - 48.0 * K[N - 2] + 36.0 * K[N - 3] - 16.0 * K[N - 4] + 3.0 * K[N - 5]) / (12 * dt);
        }
        const size_t a = k == 0 ? 0 : k - 1, b = std::min(k + 1, N - 1);
        return (K[b] - K[a]) / (times[b] - times[a]);
    };
    const double h = times[i + 1] - times[i];
    const double s = (t - times[i]) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * K[i] + h10 * h * slope(i) + h01 * K[i + 1] + h11 * h * slope(i + 1);
}

Mat jacobi_propagator(const std::function<Mat(double)>& K, int n, double t0, double t1, double tol)
{
    const int m = 2 * n;
    State y(static_cast<size_t>(m * m), 0.0);
    for (int i = 0; i < m; ++i) y[i * m + i] = 1.0;
    Rhs f = [&](const State& s, State& ds, double t) {
        Eigen::Map<const Mat> X(s.data(), m, m);
        ds.resize(s.size());
        Eigen::Map<Mat> dX(ds.data(), m, m);
        const Mat k = K(t);
        dX.topRows(n) = X.bottomRows(n);
        dX.bottomRows(n) = -k * X.topRows(n);
    };
    ode_integrate(f, y, t0, t1, ode_options(tol));
    return Eigen::Map<const Mat>(y.data(), m, m);
}

Mat reduced_propagator(const CurvaturePath& K, double t0, double t1, double tol)
{
    return jacobi_propagator([&K](double t) { return K.at(t); }, K.n(), t0, t1, tol);
}

CurvaturePath extract_curvature(const LagrangianModel& model, const AdaptedFrame& frame, double max_error)
{
    const int n = frame.n;
    auto shared = std::make_shared<const AdaptedFrame>(frame);
    CurvaturePath cp;
    cp.times = frame.times;
    cp.frame = shared;
    for (const Mat& T : frame.generator) cp.K.push_back(sym(-T.bottomLeftCorner(n, n)));

    const LinearizedFlow lf =
        integrate_linearized(model, frame.segment.start, frame.segment.duration, 1e-12, 0, frame.times);
    const int m = 2 * n;
    State y(static_cast<size_t>(m * m), 0.0);
    for (int i = 0; i < m; ++i) y[i * m + i] = 1.0;
    Rhs f = [&](const State& s, State& ds, double t) {
        Eigen::Map<const Mat> X(s.data(), m, m);
        ds.resize(s.size());
        Eigen::Map<Mat> dX(ds.data(), m, m);
        const Mat k = cp.at(t);
        dX.topRows(n) = X.bottomRows(n);
        dX.bottomRows(n) = -k * X.topRows(n);
    };
    double err = 0.0;
    ode_integrate_times(f, y, 0.0, frame.times, ode_options(1e-12), [&](size_t k, const State& s) {
        const Mat Xr = Eigen::Map<const Mat>(s.data(), m, m);
        const Mat Xf = reduce_map(frame.basis[k], lf.matrices[k], frame.basis[0]);
        err = std::max(err, sup_abs(Xr - Xf));
    });
    cp.validation_error = err;
    if (err > max_error) {
        std::ostringstream os;
        os << "reduced Jacobi propagation differs from the projected linearized flow by " << err;
        throw numerical("curvature-extraction", os.str());
    }
    return cp;
}

}  // namespace tonelab
