#pragma once

#include "tonelab/model.hpp"
#include "tonelab/ode.hpp"

#include <random>

namespace tonelab {

// (xdot, pdot) for a cotangent state, (xdot, vdot) for a tangent one.
struct PhaseVelocity {
    Vec dx;
    Vec dy;
    Rep rep = Rep::Cotangent;
};
PhaseVelocity vector_field(const LagrangianModel& model, const PhaseState& s);

// The Hamiltonian field on stacked z = (x, p) and its Jacobian
// DX_H = [[H_px, H_pp], [-H_xx, -H_xp]].
Vec hamiltonian_field(const LagrangianModel& model, const Vec& z);
Mat hamiltonian_field_jacobian(const LagrangianModel& model, const Vec& z);

struct FlowTrajectory {
    PhaseState initial;
    std::vector<double> times;
    std::vector<PhaseState> states;  // cotangent
    double energy_drift = 0.0;
    double tol = 0.0;

    const PhaseState& final_state() const { return states.back(); }
    // Cubic Hermite between stored samples.  Cheap, not integrator accurate.
    PhaseState interpolate(const LagrangianModel& model, double t) const;
};

struct LinearizedFlow {
    FlowTrajectory base;
    std::vector<Mat> matrices;  // M(t) per base time
};

OdeOptions ode_options(double tol);
// Installs the model's step cap on integrators whose state starts with (x, p).
void apply_step_limit(OdeOptions& opt, const LagrangianModel& model);

// When `sample_times` is empty the trajectory records `samples`+1 evenly
// spaced checkpoints; otherwise exactly the given (monotone) times.
FlowTrajectory integrate(const LagrangianModel& model, const PhaseState& s, double horizon, double tol = 1e-12,
                         int samples = 16, const std::vector<double>& sample_times = {});
// Just the end point.
PhaseState flow_to(const LagrangianModel& model, const PhaseState& s, double t, double tol = 1e-12);

LinearizedFlow integrate_linearized(const LagrangianModel& model, const PhaseState& s, double horizon,
                                    double tol = 1e-12, int samples = 16,
                                    const std::vector<double>& sample_times = {});
// Monodromy-type end point: (phi_t(s), d phi_t).
std::pair<Vec, Mat> flow_and_jacobian(const LagrangianModel& model, const Vec& z, double t, double tol = 1e-12);

// Central differences of the flow map, the independent cross-check.
Mat flow_jacobian_fd(const LagrangianModel& model, const Vec& z, double t, double h = 1e-6, double tol = 1e-12);

// Fixed-step 4th order Gauss-Legendre collocation (symplectic) for long runs.
Vec gauss4_step(const LagrangianModel& model, const Vec& z, double h);
FlowTrajectory integrate_symplectic(const LagrangianModel& model, const PhaseState& s, double horizon, double dt,
                                    int record_every = 1);

// Uniform-ish draw on E^{-1}(c): x uniform, velocity direction uniform in the
// kinetic metric.  Requires c > V(x), which c > e0 guarantees.
PhaseState sample_energy_level(const LagrangianModel& model, double c, std::mt19937_64& rng);

// Rescales the velocity of s so that its energy is c (tangent input kept
// tangent, cotangent kept cotangent).
PhaseState project_to_energy(const LagrangianModel& model, const PhaseState& s, double c);

struct InjectivityResult {
    double tau_inj = 0.0;
    double k0 = 0.0;
    double min_return_time = 0.0;  // the smallest first near-return over samples
    int samples = 0;
    Vec worst_x, worst_p;
};
struct InjectivityOptions {
    double approach = 0.02;       // near-return threshold on the torus
    double arc_exclusion = 0.1;   // ignore pairs closer than this along the arc
    double horizon_lengths = 3.0; // give up after this many unit lengths of travel
    unsigned seed = 11;
};
InjectivityResult injectivity_time(const LagrangianModel& model, double c, int sample_budget,
                                   const InjectivityOptions& opt = {});

// First time the projected orbit comes back within `approach` of itself,
// capped at `horizon`.
double first_near_return(const LagrangianModel& model, const PhaseState& s, double horizon,
                         const InjectivityOptions& opt);

// Trajectory export, CSV columns t, x..., p..., E.
std::string trajectory_csv(const LagrangianModel& model, const FlowTrajectory& tr);

}  // namespace tonelab
