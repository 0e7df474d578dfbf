#include "tonelab/orbit.hpp"
#include "tonelab/optim.hpp"

#include <boost/math/tools/minima.hpp>

#include <sstream>

namespace tonelab {

namespace {

Rhs field_rhs(const LagrangianModel& model)
{
    const int d = model.dim();
    return [&model, d](const State& y, State& dy, double) {
        const Vec f = hamiltonian_field(model, Eigen::Map<const Vec>(y.data(), 2 * d));
        dy.assign(f.data(), f.data() + 2 * d);
    };
}

Vec grad_H(const LagrangianModel& model, const Vec& z)
{
    const int d = model.dim();
    const HamJet h = hamiltonian_jet(model, z.head(d), z.tail(d));
    Vec g(2 * d);
    g << h.Hx, h.Hp;
    return g;
}

double H_of(const LagrangianModel& model, const Vec& z) { return hamiltonian_value(model, PhaseState::from_stacked(z)); }

Vec shifted(const Vec& z, const Eigen::VectorXi& w)
{
    Vec r = z;
    r.head(w.size()) += w.cast<double>();
    return r;
}

}  // namespace

Mat PoincareSection::transverse() const
{
    const int d = dim();
    Mat T(2 * d, 2 * (d - 1));
    T << frame.middleCols(1, d - 1), frame.middleCols(d + 1, d - 1);
    return T;
}

double PoincareSection::value(const Vec& z, Eigen::VectorXi* shift) const
{
    const int d = dim();
    Eigen::VectorXi n(d);
    for (int i = 0; i < d; ++i) n(i) = static_cast<int>(std::lround(z(i) - anchor(i)));
    if (shift) *shift = n;
    return omega(shifted(z, -n) - anchor, Y());
}

Vec PoincareSection::coordinates(const Vec& z) const
{
    Eigen::VectorXi n;
    value(z, &n);
    return reduced_coordinates(frame, shifted(z, -n) - anchor);
}

Vec PoincareSection::point(const LagrangianModel& model, const Vec& zeta) const
{
    const Vec Yv = Y();
    Vec z = anchor + transverse() * zeta;
    for (int it = 0; it < 30; ++it) {
        const double r = H_of(model, z) - c;
        if (std::abs(r) < 1e-15 * std::max(1.0, std::abs(c))) break;
        z -= r / grad_H(model, z).dot(Yv) * Yv;
    }
    return z;
}

Mat PoincareSection::point_jacobian(const LagrangianModel& model, const Vec& zeta) const
{
    const Vec z = point(model, zeta);
    const Vec g = grad_H(model, z);
    const Vec Yv = Y();
    const Mat T = transverse();
    return T - Yv * (g.transpose() * T) / g.dot(Yv);
}

PoincareSection make_section(const LagrangianModel& model, const PhaseState& anchor, double half_width)
{
    const Vec z = to_cotangent(model, anchor).stacked();
    PoincareSection s;
    s.anchor = z;
    s.frame = frame_basis(model, z, initial_covectors(model, z));
    s.c = H_of(model, z);
    s.half_width = half_width;
    return s;
}

PoincareHit poincare_return(const LagrangianModel& model, const PoincareSection& section, const PhaseState& start,
                            double max_time, double tol)
{
    const int d = model.dim();
    const Vec z0 = to_cotangent(model, start).stacked();
    if (std::abs(H_of(model, z0) - section.c) > 1e-6)
        throw validation("energy", "start is off the energy level of the section");
    Eigen::VectorXi n0;
    const double s0 = section.value(z0, &n0);
    if (std::abs(s0) > 1e-6 || (shifted(z0, -n0) - section.anchor).norm() > section.half_width)
        throw validation("section", "start does not lie on the section");

    const Rhs f = field_rhs(model);
    OdeOptions opt = ode_options(tol);
    apply_step_limit(opt, model);
    State y(z0.data(), z0.data() + 2 * d);
    double t_prev = 0.0, s_prev = 0.0;  // the start itself never counts
    State y_prev = y;
    Eigen::VectorXi n_prev = n0;
    bool found = false;
    double t_hit = 0.0;
    OdeOptions step_opt = opt;
    step_opt.h_max = std::min(opt.h_max, 0.05);
    ode_integrate(f, y, 0.0, max_time, step_opt, [&](double t, const State& s) {
        const Vec z = Eigen::Map<const Vec>(s.data(), 2 * d);
        Eigen::VectorXi n;
        const double sv = section.value(z, &n);
        if (s_prev < 0.0 && sv >= 0.0 && n == n_prev &&
            (shifted(z, -n) - section.anchor).norm() < section.half_width) {
            found = true;
            t_hit = t;
            return false;
        }
        t_prev = t;
        s_prev = sv;
        y_prev = s;
        n_prev = n;
        return true;
    });
    if (!found) {
        std::ostringstream os;
        os << "no return to the section within t = " << max_time;
        throw numerical("non-return", os.str());
    }
    // Newton in tau from the last point before the crossing.
    const double s_hit = section.value(Eigen::Map<const Vec>(y.data(), 2 * d));
    double tau = t_prev + (t_hit - t_prev) * (-s_prev) / (s_hit - s_prev);
    Vec z;
    for (int it = 0; it < 12; ++it) {
        State w = y_prev;
        ode_integrate(f, w, t_prev, tau, opt);
        z = Eigen::Map<const Vec>(w.data(), 2 * d);
        const double sv = section.value(z);
        const double rate = omega(hamiltonian_field(model, z), section.Y());
        const double step = sv / rate;
        tau -= step;
        if (std::abs(step) < 1e-14 * std::max(1.0, tau)) break;
    }
    State w = y_prev;
    ode_integrate(f, w, t_prev, tau, opt);
    PoincareHit hit;
    hit.state = Eigen::Map<const Vec>(w.data(), 2 * d);
    hit.time = tau;
    section.value(hit.state, &hit.winding);
    return hit;
}

// ---------------------------------------------------------------------------
// Shooting

namespace {

struct ShootState {
    Vec zeta;
    double T;
    std::vector<Vec> inner;  // multiple shooting nodes z_1..z_{m-1}
};

struct Linearization {
    Vec r;
    Mat J;
};

Linearization shoot_eval(const LagrangianModel& model, const PoincareSection& sec, const ShootState& s,
                         const Eigen::VectorXi& W, bool need_jacobian)
{
    const int d = model.dim();
    const int n2 = 2 * (d - 1);
    const int m = static_cast<int>(s.inner.size()) + 1;
    const Vec nu = sec.point(model, s.zeta);
    const Mat Dnu = need_jacobian ? sec.point_jacobian(model, s.zeta) : Mat();
    const int cols = n2 + 1 + 2 * d * (m - 1);
    Linearization L;
    L.r.resize(2 * d * m);
    if (need_jacobian) L.J = Mat::Zero(2 * d * m, cols);
    const double h = s.T / m;
    for (int k = 0; k < m; ++k) {
        const Vec& zk = k == 0 ? nu : s.inner[k - 1];
        const Vec target = k + 1 < m ? s.inner[k] : shifted(nu, W);
        Vec phi;
        Mat M;
        if (need_jacobian) {
            std::tie(phi, M) = flow_and_jacobian(model, zk, h);
        } else {
            phi = flow_to(model, PhaseState::from_stacked(zk), h).stacked();
        }
        L.r.segment(2 * d * k, 2 * d) = phi - target;
        if (!need_jacobian) continue;
        auto rows = L.J.middleRows(2 * d * k, 2 * d);
        if (k == 0) rows.leftCols(n2) += M * Dnu;
        else rows.middleCols(n2 + 1 + 2 * d * (k - 1), 2 * d) += M;
        if (k + 1 < m) rows.middleCols(n2 + 1 + 2 * d * k, 2 * d) -= Mat::Identity(2 * d, 2 * d);
        else rows.leftCols(n2) -= Dnu;
        rows.col(n2) += hamiltonian_field(model, phi) / m;
    }
    return L;
}

ShootState apply(const ShootState& s, const Vec& step, int d)
{
    const int n2 = 2 * (d - 1);
    ShootState t = s;
    t.zeta -= step.head(n2);
    t.T -= step(n2);
    for (size_t k = 0; k < t.inner.size(); ++k) t.inner[k] -= step.segment(n2 + 1 + 2 * d * k, 2 * d);
    return t;
}

}  // namespace

ClosedOrbit find_closed_orbit_shooting(const LagrangianModel& model, double c, const PhaseState& seed,
                                       const std::optional<Eigen::VectorXi>& winding_hint, const ShootingOptions& opt)
{
    const int d = model.dim();
    const double e = e0(model, 32).value;
    if (!(c > e)) throw validation("energy-regime", "closed orbit search needs c > e0");
    const PhaseState s0 = to_cotangent(model, project_to_energy(model, seed, c));
    const PoincareSection sec = make_section(model, s0, opt.half_width);

    // Period and class from the first return of the seed.  With a hint that
    // the return does not match (unstable orbits drift away before they come
    // back), the period guess is the time the lift passes closest to x0 + W.
    double T = 0.0;
    Eigen::VectorXi W;
    bool have = false;
    try {
        const PoincareHit hit = poincare_return(model, sec, s0, opt.max_return_time);
        T = hit.time;
        W = hit.winding;
        have = !winding_hint || *winding_hint == W;
    } catch (const NumericalError& e) {
        if (e.kind() != "non-return" || !winding_hint) throw;
    }
    if (!have) {
        W = *winding_hint;
        const Vec target = s0.x + W.cast<double>();
        const double dt = 0.01;
        const int N = static_cast<int>(std::ceil(opt.max_return_time / dt));
        const FlowTrajectory tr = integrate(model, s0, N * dt, 1e-10, N);
        double best = std::numeric_limits<double>::infinity();
        for (size_t k = 1; k < tr.states.size(); ++k) {
            const double dist = (tr.states[k].x - target).norm();
            if (dist < best) best = dist, T = tr.times[k];
        }
        if (!(best < 0.5)) throw numerical("no-convergence", "seed never comes near the requested homotopy class");
    }

    ShootState st{Vec::Zero(2 * (d - 1)), T, {}};
    const int m = T > opt.multi_shoot_above ? std::max(4, static_cast<int>(std::ceil(T / opt.segment_length))) : 1;
    for (int k = 1; k < m; ++k) st.inner.push_back(flow_to(model, s0, k * T / m).stacked());

    ClosedOrbit orb;
    double res = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it <= opt.max_iter; ++it) {
        Linearization L = shoot_eval(model, sec, st, W, true);
        res = L.r.norm();
        if (res < opt.residual_tol) break;
        if (it == opt.max_iter) break;
        const Vec step = Eigen::CompleteOrthogonalDecomposition<Mat>(L.J).solve(L.r);
        double alpha = 1.0;
        ShootState best = apply(st, step, d);
        for (int b = 0; b < 10; ++b) {
            ShootState trial = apply(st, alpha * step, d);
            if (trial.T > 0 && shoot_eval(model, sec, trial, W, false).r.norm() < res) {
                best = trial;
                break;
            }
            alpha *= 0.5;
            best = trial;
        }
        st = best;
    }
    if (!(res < opt.residual_tol)) {
        std::ostringstream os;
        os << "shooting stalled with residual " << res << " after " << it << " iterations";
        throw numerical("no-convergence", os.str());
    }
    orb.initial = PhaseState::from_stacked(sec.point(model, st.zeta));
    orb.period = st.T;
    orb.energy = hamiltonian_value(model, orb.initial);
    orb.winding = W;
    orb.iterations = it;
    orb.method = m > 1 ? "multiple-shooting" : "shooting";
    orb.residual = (flow_to(model, orb.initial, orb.period).stacked() - shifted(orb.initial.stacked(), W)).norm();
    orb.dP = linearized_poincare(model, orb);
    orb.spectral = classify_spectrum(orb.dP);
    Eigen::JacobiSVD<Mat> svd(orb.dP - Mat::Identity(orb.dP.rows(), orb.dP.cols()));
    orb.dP_min_singular = svd.singularValues().minCoeff();
    orb.degenerate = orb.dP_min_singular < opt.degeneracy_tol;
    if (orb.degenerate) orb.warning = "dP - I is nearly singular: the orbit is not isolated";
    return orb;
}

// ---------------------------------------------------------------------------
// Free-time discrete action

namespace {

struct DiscreteLoop {
    const LagrangianModel& model;
    Vec wind;
    int N;
    double c;

    // unknowns: x_0..x_{N-1} (lift), log T
    double operator()(const Vec& q, Vec& g) const
    {
        const int d = model.dim();
        const double T = std::exp(q(N * d));
        const double h = T / N;
        g = Vec::Zero(q.size());
        double S = 0.0, dq = 0.0;
        for (int k = 0; k < N; ++k) {
            const Vec xk = q.segment(k * d, d);
            const Vec xn = k + 1 < N ? Vec(q.segment((k + 1) * d, d)) : Vec(q.segment(0, d) + wind);
            const Vec mid = 0.5 * (xk + xn);
            const Vec v = (xn - xk) / h;
            const PointJet pj = model.jet(mid);
            const Vec Gv = pj.G * v;
            const double L = 0.5 * v.dot(Gv) + pj.A.dot(v) - pj.V;
            Vec Lx = pj.DA.transpose() * v - pj.dV;
            for (int i = 0; i < d; ++i) Lx(i) += 0.5 * v.dot(pj.dG[i] * v);
            const Vec Lv = Gv + pj.A;
            S += h * (L + c);
            dq += h * (L - Lv.dot(v) + c);
            g.segment(k * d, d) += 0.5 * h * Lx - Lv;
            const int kn = k + 1 < N ? k + 1 : 0;
            g.segment(kn * d, d) += 0.5 * h * Lx + Lv;
        }
        g(N * d) = dq;
        return S;
    }
};

}  // namespace

ClosedOrbit find_closed_orbit_action(const LagrangianModel& model, double c, const Eigen::VectorXi& winding,
                                     const LoopBudget& budget, const ShootingOptions& opt)
{
    const int d = model.dim();
    if (winding.size() != d) throw validation("winding", "winding has the wrong dimension");
    if (winding.isZero()) throw validation("winding", "the action finder needs a non-zero homotopy class");
    const double e = e0(model, 32).value;
    if (!(c > e)) throw validation("energy-regime", "closed orbit search needs c > e0");
    const int N = budget.points;
    const Vec wind = winding.cast<double>();
    DiscreteLoop loop{model, wind, N, c};
    auto fg = [&](const Vec& q, Vec& g) { return loop(q, g); };

    MinResult best;
    best.f = std::numeric_limits<double>::infinity();
    const double T0 = wind.norm() / std::sqrt(2.0 * (c - e) + 1e-12);
    // offsets on a grid in the directions transverse to the winding
    const int per = std::max(1, budget.offsets);
    int total = 1;
    for (int i = 0; i < d; ++i) total *= per;
    for (int idx = 0; idx < total; ++idx) {
        Vec x0(d);
        int r = idx;
        for (int i = 0; i < d; ++i) {
            x0(i) = static_cast<double>(r % per) / per;
            r /= per;
        }
        Vec q(N * d + 1);
        for (int k = 0; k < N; ++k) q.segment(k * d, d) = x0 + wind * (static_cast<double>(k) / N);
        q(N * d) = std::log(T0);
        MinResult mr = bfgs(fg, q, budget.iterations, 1e-9, 0.01);
        if (mr.f < best.f) best = mr;
    }
    const double T = std::exp(best.x(N * d));
    std::string warn;
    if (T < 1e-3 || T > 1e3) warn = "loop length degenerated during minimization (c may lie below c_u)";
    const double h = T / N;
    const Vec x0 = best.x.segment(0, d);
    const Vec x1 = best.x.segment(d, d);
    const Vec xm = best.x.segment((N - 1) * d, d) - wind;
    const Vec v0 = (x1 - xm) / (2 * h);
    ClosedOrbit orb = find_closed_orbit_shooting(model, c, PhaseState::tangent(x0, v0), winding, opt);
    orb.method = "action+" + orb.method;
    orb.action = orbit_action(model, orb);
    if (!warn.empty()) orb.warning = orb.warning.empty() ? warn : orb.warning + "; " + warn;
    return orb;
}

// ---------------------------------------------------------------------------

Mat linearized_poincare(const LagrangianModel& model, const ClosedOrbit& orbit)
{
    if (!(orbit.residual < 1e-7)) throw validation("orbit", "orbit residual too large for a linearized return map");
    const Vec z = to_cotangent(model, orbit.initial).stacked();
    const Mat B = frame_basis(model, z, initial_covectors(model, z));
    const Mat M = flow_and_jacobian(model, z, orbit.period).second;
    const Mat dP = reduce_map(B, M, B);
    const double defect = symplectic_defect(dP);
    if (defect > 1e-7) {
        std::ostringstream os;
        os << "reduced monodromy has symplectic defect " << defect;
        throw numerical("symplectic-defect", os.str());
    }
    return dP;
}

Mat linearized_poincare_section(const LagrangianModel& model, const ClosedOrbit& orbit, double h)
{
    const PoincareSection sec = make_section(model, orbit.initial, 0.25);
    const int n2 = 2 * (model.dim() - 1);
    auto central = [&](double step) {
        Mat D(n2, n2);
        for (int j = 0; j < n2; ++j) {
            Vec col = Vec::Zero(n2);
            for (double sgn : {1.0, -1.0}) {
                Vec zeta = Vec::Zero(n2);
                zeta(j) = sgn * step;
                const Vec nu = sec.point(model, zeta);
                const PoincareHit hit =
                    poincare_return(model, sec, PhaseState::from_stacked(nu), 2 * orbit.period + 1);
                if (std::abs(hit.time - orbit.period) > 0.5 * orbit.period)
                    throw numerical("non-return", "perturbed point returned far from the orbit period");
                col += sgn * sec.coordinates(hit.state);
            }
            D.col(j) = col / (2 * step);
        }
        return D;
    };
    // Richardson on the central differences: O(h^4).
    return (4.0 * central(0.5 * h) - central(h)) / 3.0;
}

double orbit_distance(const LagrangianModel& model, const ClosedOrbit& a, const ClosedOrbit& b)
{
    const int d = model.dim();
    const Vec za = to_cotangent(model, a.initial).stacked();
    auto dist = [&](const Vec& z) {
        Vec diff = z - za;
        diff.head(d) = wrap_centered(diff.head(d));
        return diff.norm();
    };
    const int N = 400;
    const FlowTrajectory tr = integrate(model, b.initial, b.period, 1e-12, N);
    int kbest = 0;
    double dbest = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= N; ++k) {
        const double dk = dist(tr.states[k].stacked());
        if (dk < dbest) dbest = dk, kbest = k;
    }
    const double dt = b.period / N;
    const PhaseState base = tr.states[kbest];
    auto f = [&](double s) { return dist(flow_to(model, base, s).stacked()); };
    auto r = boost::math::tools::brent_find_minima(f, -dt, dt, 40);
    return std::min(dbest, r.second);
}

double orbit_action(const LagrangianModel& model, const ClosedOrbit& orbit, int samples)
{
    const FlowTrajectory tr = integrate(model, orbit.initial, orbit.period, 1e-12, samples);
    LoopPath path;
    path.times = tr.times;
    for (const auto& s : tr.states) path.samples.push_back(s.x);
    path.winding = orbit.winding;
    return action(model, path, orbit.energy).value;
}

json orbit_to_json(const ClosedOrbit& o)
{
    auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    json j;
    j["x"] = vec(o.initial.x);
    j["p"] = vec(o.initial.y);
    j["period"] = o.period;
    j["c"] = o.energy;
    j["winding"] = std::vector<int>(o.winding.data(), o.winding.data() + o.winding.size());
    j["residual"] = o.residual;
    j["trace"] = o.dP.trace();
    json ev = json::array();
    for (int i = 0; i < o.spectral.eigenvalues.size(); ++i)
        ev.push_back({o.spectral.eigenvalues(i).real(), o.spectral.eigenvalues(i).imag()});
    j["eigenvalues"] = ev;
    j["class"] = o.spectral.name();
    json dp = json::array();
    for (int i = 0; i < o.dP.rows(); ++i) dp.push_back(vec(o.dP.row(i).transpose()));
    j["dP"] = dp;
    j["degenerate"] = o.degenerate;
    j["method"] = o.method;
    if (o.action) j["action"] = *o.action;
    if (!o.warning.empty()) j["warning"] = o.warning;
    return j;
}

ClosedOrbit orbit_from_json(const json& j)
{
    auto vec = [](const json& a) {
        Vec v(a.size());
        for (size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
        return v;
    };
    ClosedOrbit o;
    o.initial = PhaseState::cotangent(vec(j.at("x")), vec(j.at("p")));
    o.period = j.at("period").get<double>();
    o.energy = j.at("c").get<double>();
    const auto w = j.at("winding").get<std::vector<int>>();
    o.winding = Eigen::Map<const Eigen::VectorXi>(w.data(), static_cast<int>(w.size()));
    o.residual = j.value("residual", 0.0);
    const auto& dp = j.at("dP");
    o.dP.resize(dp.size(), dp.size());
    for (size_t i = 0; i < dp.size(); ++i) o.dP.row(i) = vec(dp[i]).transpose();
    o.spectral = classify_spectrum(o.dP);
    o.degenerate = j.value("degenerate", false);
    o.method = j.value("method", std::string());
    if (j.contains("action")) o.action = j.at("action").get<double>();
    o.warning = j.value("warning", std::string());
    return o;
}

}  // namespace tonelab
