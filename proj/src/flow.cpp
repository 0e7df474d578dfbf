#include "tonelab/flow.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <sstream>

namespace tonelab {

PhaseVelocity vector_field(const LagrangianModel& model, const PhaseState& s)
{
    const PointJet j = model.jet(s.x);
    if (s.rep == Rep::Cotangent) {
        const HamJet h = hamiltonian_jet(model, j, s.y);
        return {h.Hp, -h.Hx, Rep::Cotangent};
    }
    // Euler-Lagrange solved for the acceleration.
    const int d = model.dim();
    const Vec& v = s.y;
    Vec rhs(d);
    for (int k = 0; k < d; ++k) rhs(k) = 0.5 * v.dot(j.dG[k] * v);
    rhs += j.DA.transpose() * v - j.dV;
    Mat Gdot = Mat::Zero(d, d);
    for (int l = 0; l < d; ++l) Gdot += v(l) * j.dG[l];
    rhs -= Gdot * v + j.DA * v;
    return {v, j.Ginv * rhs, Rep::Tangent};
}

Vec hamiltonian_field(const LagrangianModel& model, const Vec& z)
{
    const int d = model.dim();
    const HamJet h = hamiltonian_jet(model, z.head(d), z.tail(d));
    Vec f(2 * d);
    f << h.Hp, -h.Hx;
    return f;
}

Mat hamiltonian_field_jacobian(const LagrangianModel& model, const Vec& z)
{
    const int d = model.dim();
    const HamJet h = hamiltonian_jet(model, z.head(d), z.tail(d));
    Mat D(2 * d, 2 * d);
    D << h.Hpx, h.Hpp, -h.Hxx, -h.Hpx.transpose();
    return D;
}

OdeOptions ode_options(double tol)
{
    if (!(tol >= 1e-12 * (1 - 1e-9) && tol <= 1e-4)) throw validation("tolerance", "tol must lie in [1e-12, 1e-4]");
    OdeOptions o;
    // Local error is controlled a little below the requested global tolerance.
    o.rtol = o.atol = std::max(0.05 * tol, 2e-14);
    return o;
}

void apply_step_limit(OdeOptions& opt, const LagrangianModel& model)
{
    if (!model.limits_steps()) return;
    opt.h_cap = [model](const State& y) {
        const int d = model.dim();
        const Vec x = Eigen::Map<const Vec>(y.data(), d);
        Vec p = Eigen::Map<const Vec>(y.data() + d, d);
        if (model.magnetic_field()) p -= model.magnetic_field()->eval(x).A;
        const Vec v = model.metric_field()->value(x).ldlt().solve(p);
        return model.step_limit(x, v.norm());
    };
}

namespace {

Rhs hamilton_rhs(const LagrangianModel& model)
{
    const int d = model.dim();
    return [&model, d](const State& y, State& dy, double) {
        Eigen::Map<const Vec> x(y.data(), d), p(y.data() + d, d);
        const HamJet h = hamiltonian_jet(model, x, p);
        dy.resize(y.size());
        for (int i = 0; i < d; ++i) {
            dy[i] = h.Hp(i);
            dy[d + i] = -h.Hx(i);
        }
    };
}

Rhs linearized_rhs(const LagrangianModel& model)
{
    const int d = model.dim();
    const int m = 2 * d;
    return [&model, d, m](const State& y, State& dy, double) {
        Eigen::Map<const Vec> x(y.data(), d), p(y.data() + d, d);
        const HamJet h = hamiltonian_jet(model, x, p);
        dy.resize(y.size());
        for (int i = 0; i < d; ++i) {
            dy[i] = h.Hp(i);
            dy[d + i] = -h.Hx(i);
        }
        Mat D(m, m);
        D << h.Hpx, h.Hpp, -h.Hxx, -h.Hpx.transpose();
        Eigen::Map<const Mat> M(y.data() + m, m, m);
        Eigen::Map<Mat> dM(dy.data() + m, m, m);
        dM.noalias() = D * M;
    };
}

std::vector<double> sample_grid(double horizon, int samples, const std::vector<double>& given)
{
    if (!given.empty()) return given;
    if (samples < 1) samples = 1;
    std::vector<double> t(static_cast<size_t>(samples) + 1);
    for (int i = 0; i <= samples; ++i) t[i] = horizon * i / samples;
    t.back() = horizon;
    return t;
}

}  // namespace

FlowTrajectory integrate(const LagrangianModel& model, const PhaseState& s, double horizon, double tol, int samples,
                         const std::vector<double>& sample_times)
{
    if (!std::isfinite(horizon)) throw validation("horizon", "horizon must be finite");
    OdeOptions opt = ode_options(tol);
    apply_step_limit(opt, model);
    const int d = model.dim();
    const PhaseState c0 = to_cotangent(model, s);
    FlowTrajectory tr;
    tr.initial = c0;
    tr.tol = tol;
    tr.times = sample_grid(horizon, samples, sample_times);
    const Vec z0 = c0.stacked();
    State y(z0.data(), z0.data() + 2 * d);
    const double E0 = hamiltonian_value(model, c0);
    const Rhs f = hamilton_rhs(model);
    double t = 0.0;
    for (double ti : tr.times) {
        ode_integrate(f, y, t, ti, opt);
        t = ti;
        Eigen::Map<const Vec> z(y.data(), 2 * d);
        tr.states.push_back(PhaseState::from_stacked(z));
        tr.energy_drift = std::max(tr.energy_drift, std::abs(hamiltonian_value(model, tr.states.back()) - E0));
    }
    return tr;
}

PhaseState flow_to(const LagrangianModel& model, const PhaseState& s, double t, double tol)
{
    OdeOptions opt = ode_options(tol);
    apply_step_limit(opt, model);
    const int d = model.dim();
    const Vec z0 = to_cotangent(model, s).stacked();
    State y(z0.data(), z0.data() + 2 * d);
    ode_integrate(hamilton_rhs(model), y, 0.0, t, opt);
    return PhaseState::from_stacked(Eigen::Map<const Vec>(y.data(), 2 * d));
}

LinearizedFlow integrate_linearized(const LagrangianModel& model, const PhaseState& s, double horizon, double tol,
                                    int samples, const std::vector<double>& sample_times)
{
    OdeOptions opt = ode_options(tol);
    apply_step_limit(opt, model);
    const int d = model.dim();
    const int m = 2 * d;
    const PhaseState c0 = to_cotangent(model, s);
    LinearizedFlow lf;
    lf.base.initial = c0;
    lf.base.tol = tol;
    lf.base.times = sample_grid(horizon, samples, sample_times);
    State y(static_cast<size_t>(m + m * m), 0.0);
    const Vec z0 = c0.stacked();
    for (int i = 0; i < m; ++i) {
        y[i] = z0(i);
        y[m + i * m + i] = 1.0;
    }
    const double E0 = hamiltonian_value(model, c0);
    const Rhs f = linearized_rhs(model);
    double t = 0.0;
    for (double ti : lf.base.times) {
        ode_integrate(f, y, t, ti, opt);
        t = ti;
        lf.base.states.push_back(PhaseState::from_stacked(Eigen::Map<const Vec>(y.data(), m)));
        lf.matrices.push_back(Eigen::Map<const Mat>(y.data() + m, m, m));
        lf.base.energy_drift =
            std::max(lf.base.energy_drift, std::abs(hamiltonian_value(model, lf.base.states.back()) - E0));
    }
    return lf;
}

std::pair<Vec, Mat> flow_and_jacobian(const LagrangianModel& model, const Vec& z, double t, double tol)
{
    const LinearizedFlow lf = integrate_linearized(model, PhaseState::from_stacked(z), t, tol, 1, {t});
    return {lf.base.states.back().stacked(), lf.matrices.back()};
}

Mat flow_jacobian_fd(const LagrangianModel& model, const Vec& z, double t, double h, double tol)
{
    const int m = static_cast<int>(z.size());
    Mat J(m, m);
    for (int k = 0; k < m; ++k) {
        Vec zp = z, zm = z;
        zp(k) += h;
        zm(k) -= h;
        const Vec fp = flow_to(model, PhaseState::from_stacked(zp), t, tol).stacked();
        const Vec fm = flow_to(model, PhaseState::from_stacked(zm), t, tol).stacked();
        J.col(k) = (fp - fm) / (2 * h);
    }
    return J;
}

PhaseState FlowTrajectory::interpolate(const LagrangianModel& model, double t) const
{
    if (times.empty()) throw validation("trajectory", "empty trajectory");
    if (t <= times.front()) return states.front();
    if (t >= times.back()) return states.back();
    const size_t i = static_cast<size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin()) - 1;
    const double t0 = times[i], t1 = times[i + 1], h = t1 - t0, s = (t - t0) / h;
    const Vec z0 = states[i].stacked(), z1 = states[i + 1].stacked();
    const Vec f0 = hamiltonian_field(model, z0), f1 = hamiltonian_field(model, z1);
    const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
    return PhaseState::from_stacked(h00 * z0 + h10 * h * f0 + h01 * z1 + h11 * h * f1);
}

// ---------------------------------------------------------------------------

Vec gauss4_step(const LagrangianModel& model, const Vec& z, double h)
{
    static const double r3 = std::sqrt(3.0);
    const double a11 = 0.25, a12 = 0.25 - r3 / 6.0, a21 = 0.25 + r3 / 6.0, a22 = 0.25;
    Vec k1 = hamiltonian_field(model, z), k2 = k1;
    for (int it = 0; it < 100; ++it) {
        const Vec n1 = hamiltonian_field(model, z + h * (a11 * k1 + a12 * k2));
        const Vec n2 = hamiltonian_field(model, z + h * (a21 * k1 + a22 * k2));
        const double change = std::max((n1 - k1).lpNorm<Eigen::Infinity>(), (n2 - k2).lpNorm<Eigen::Infinity>());
        k1 = n1;
        k2 = n2;
        if (change <= 1e-15 * (1.0 + k1.lpNorm<Eigen::Infinity>())) break;
    }
    return z + 0.5 * h * (k1 + k2);
}

FlowTrajectory integrate_symplectic(const LagrangianModel& model, const PhaseState& s, double horizon, double dt,
                                    int record_every)
{
    if (!(dt > 0.0)) throw validation("step", "dt must be positive");
    const PhaseState c0 = to_cotangent(model, s);
    FlowTrajectory tr;
    tr.initial = c0;
    const long n = static_cast<long>(std::ceil(horizon / dt - 1e-12));
    const double h = horizon / static_cast<double>(std::max(1L, n));
    Vec z = c0.stacked();
    const double E0 = hamiltonian_value(model, c0);
    tr.times.push_back(0.0);
    tr.states.push_back(c0);
    for (long i = 1; i <= n; ++i) {
        z = gauss4_step(model, z, h);
        if (i % record_every == 0 || i == n) {
            tr.times.push_back(i * h);
            tr.states.push_back(PhaseState::from_stacked(z));
            tr.energy_drift = std::max(tr.energy_drift, std::abs(hamiltonian_value(model, tr.states.back()) - E0));
        }
    }
    return tr;
}

// ---------------------------------------------------------------------------

PhaseState project_to_energy(const LagrangianModel& model, const PhaseState& s, double c)
{
    PhaseState t = to_tangent(model, s);
    const double V = model.potential(t.x);
    const double kin = 0.5 * t.y.dot(model.metric(t.x) * t.y);
    if (!(c > V)) throw validation("energy-regime", "energy below the potential at the seed point");
    if (!(kin > 0.0)) throw validation("seed", "zero velocity seed cannot be rescaled to the energy level");
    t.y *= std::sqrt((c - V) / kin);
    return s.rep == Rep::Tangent ? t : legendre(model, t);
}

PhaseState sample_energy_level(const LagrangianModel& model, double c, std::mt19937_64& rng)
{
    const int d = model.dim();
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::normal_distribution<double> N(0.0, 1.0);
    Vec x(d), v(d);
    for (int i = 0; i < d; ++i) x(i) = U(rng);
    for (int i = 0; i < d; ++i) v(i) = N(rng);
    if (v.norm() < 1e-12) v(0) = 1.0;
    return legendre(model, project_to_energy(model, PhaseState::tangent(x, v), c));
}

double first_near_return(const LagrangianModel& model, const PhaseState& s, double horizon,
                         const InjectivityOptions& opt)
{
    const PhaseState t0 = to_tangent(model, s);
    const double speed = t0.y.norm();
    const double dt = std::min(0.4 * opt.approach / (1.5 * speed + 1e-12), std::max(horizon, 1e-12));
    const int n = static_cast<int>(std::ceil(horizon / dt));
    const FlowTrajectory tr = integrate(model, s, n * dt, 1e-10, n);
    std::vector<Vec> xs;
    std::vector<double> arc{0.0};
    for (size_t j = 0; j < tr.states.size(); ++j) {
        const Vec& xj = tr.states[j].x;
        if (j > 0) arc.push_back(arc.back() + wrap_centered(xj - xs.back()).norm());
        for (size_t i = 0; i + 1 < j; ++i) {
            if (arc[j] - arc[i] <= opt.arc_exclusion) break;
            if (torus_distance(xs[i], xj) < opt.approach) return tr.times[j];
        }
        xs.push_back(xj);
    }
    return tr.times.back();
}

InjectivityResult injectivity_time(const LagrangianModel& model, double c, int sample_budget,
                                   const InjectivityOptions& opt)
{
    const double e = e0(model, 32).value;
    if (!(c > e)) throw validation("energy-regime", "injectivity time needs c > e0");
    if (sample_budget < 1) throw validation("budget", "sample_budget must be positive");
    std::mt19937_64 rng(opt.seed);
    InjectivityResult r;
    r.min_return_time = std::numeric_limits<double>::infinity();
    for (int k = 0; k < sample_budget; ++k) {
        const PhaseState s = sample_energy_level(model, c, rng);
        const double speed = to_tangent(model, s).y.norm();
        const double t = first_near_return(model, s, opt.horizon_lengths / speed, opt);
        if (t < r.min_return_time) {
            r.min_return_time = t;
            r.worst_x = s.x;
            r.worst_p = s.y;
        }
    }
    r.samples = sample_budget;
    // Largest tau with injectivity on [0, tau/2] is twice the first return;
    // halving for safety leaves the first return itself.
    r.tau_inj = r.min_return_time;
    r.k0 = r.tau_inj / 4.0;
    return r;
}

std::string trajectory_csv(const LagrangianModel& model, const FlowTrajectory& tr)
{
    const int d = model.dim();
    std::ostringstream os;
    os << std::setprecision(17) << "t";
    for (int i = 0; i < d; ++i) os << ",x" << i + 1;
    for (int i = 0; i < d; ++i) os << ",p" << i + 1;
    os << ",E\n";
    for (size_t k = 0; k < tr.times.size(); ++k) {
        os << tr.times[k];
        for (int i = 0; i < d; ++i) os << ',' << tr.states[k].x(i);
        for (int i = 0; i < d; ++i) os << ',' << tr.states[k].y(i);
        os << ',' << hamiltonian_value(model, tr.states[k]) << '\n';
    }
    return os.str();
}

}  // namespace tonelab
