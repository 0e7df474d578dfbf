#pragma once

#include "tonelab/errors.hpp"

#include <functional>
#include <vector>

namespace tonelab {

using State = std::vector<double>;
using Rhs = std::function<void(const State& y, State& dydt, double t)>;

struct OdeOptions {
    double rtol = 1e-12;
    double atol = 1e-12;
    double h0 = 1e-3;
    double h_min = 1e-13;  // relative to max(1, |t|)
    double h_max = 0.1;
    long max_steps = 2000000;
    // Optional state-dependent cap on the step, checked before every step.
    std::function<double(const State&)> h_cap;
};

// Observer gets every accepted step (t, y); returning false stops the run.
using StepObserver = std::function<bool(double t, const State& y)>;

// Adaptive Fehlberg 7(8) integration from t0 to t1 (either direction).
// Returns the time actually reached (t1 unless the observer stopped early).
double ode_integrate(const Rhs& f, State& y, double t0, double t1, const OdeOptions& opt,
                     const StepObserver& obs = nullptr);

// Lands exactly on each requested time (monotone) and reports the state there.
void ode_integrate_times(const Rhs& f, State& y, double t0, const std::vector<double>& times,
                         const OdeOptions& opt, const std::function<void(size_t, const State&)>& obs);

// Classic RK4 on a fixed grid with n steps; used for very short auxiliary hops.
void rk4_fixed(const Rhs& f, State& y, double t0, double t1, int n);

}  // namespace tonelab
