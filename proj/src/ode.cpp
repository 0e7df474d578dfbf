#include "tonelab/ode.hpp"

#include <boost/numeric/odeint/stepper/runge_kutta_fehlberg78.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tonelab {

namespace odeint = boost::numeric::odeint;

namespace {

using Stepper = odeint::runge_kutta_fehlberg78<State>;

double error_norm(const State& y0, const State& y1, const State& err, const OdeOptions& opt)
{
    double e = 0.0;
    for (size_t i = 0; i < y0.size(); ++i) {
        const double sc = opt.atol + opt.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
        e = std::max(e, std::abs(err[i]) / sc);
    }
    return e;
}

[[noreturn]] void underflow(double t, const State& y)
{
    std::ostringstream os;
    os << "step size underflow at t = " << t << ", state =";
    for (size_t i = 0; i < std::min<size_t>(y.size(), 8); ++i) os << ' ' << y[i];
    throw numerical("stiffness", os.str());
}

}  // namespace

double ode_integrate(const Rhs& f, State& y, double t0, double t1, const OdeOptions& opt, const StepObserver& obs)
{
    if (t1 == t0) return t0;
    const double dir = t1 > t0 ? 1.0 : -1.0;
    Stepper stepper;
    auto sys = [&](const State& x, State& dx, double t) { f(x, dx, t); };
    double t = t0;
    double h = std::min({opt.h0, opt.h_max, std::abs(t1 - t0)});
    State trial(y.size()), err(y.size());
    long steps = 0;
    while (dir * (t1 - t) > 0.0) {
        if (++steps > opt.max_steps) throw numerical("step-budget", "too many integration steps");
        if (opt.h_cap) h = std::min(h, opt.h_cap(y));
        const double remaining = std::abs(t1 - t);
        bool last = false;
        if (h >= remaining) {
            h = remaining;
            last = true;
        }
        trial = y;
        stepper.do_step(sys, trial, t, dir * h, err);
        bool finite = true;
        for (double v : trial)
            if (!std::isfinite(v)) finite = false;
        const double e = finite ? error_norm(y, trial, err, opt) : 1e10;
        if (e <= 1.0) {
            t = last ? t1 : t + dir * h;
            y.swap(trial);
            if (obs && !obs(t, y)) return t;
            const double fac = e == 0.0 ? 4.0 : std::clamp(0.9 * std::pow(e, -1.0 / 8.0), 0.2, 4.0);
            h = std::min(h * fac, opt.h_max);
        } else {
            h *= std::clamp(0.9 * std::pow(e, -1.0 / 7.0), 0.1, 0.5);
            if (h < opt.h_min * std::max(1.0, std::abs(t))) underflow(t, y);
        }
    }
    return t;
}

void ode_integrate_times(const Rhs& f, State& y, double t0, const std::vector<double>& times, const OdeOptions& opt,
                         const std::function<void(size_t, const State&)>& obs)
{
    double t = t0;
    for (size_t i = 0; i < times.size(); ++i) {
        ode_integrate(f, y, t, times[i], opt);
        t = times[i];
        obs(i, y);
    }
}

void rk4_fixed(const Rhs& f, State& y, double t0, double t1, int n)
{
    const size_t m = y.size();
    const double h = (t1 - t0) / n;
    State k1(m), k2(m), k3(m), k4(m), tmp(m);
    double t = t0;
    for (int s = 0; s < n; ++s) {
        f(y, k1, t);
        for (size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
        f(tmp, k2, t + 0.5 * h);
        for (size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
        f(tmp, k3, t + 0.5 * h);
        for (size_t i = 0; i < m; ++i) tmp[i] = y[i] + h * k3[i];
        f(tmp, k4, t + h);
        for (size_t i = 0; i < m; ++i) y[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
        t += h;
    }
}

}  // namespace tonelab
