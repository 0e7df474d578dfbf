#pragma once

#include "tonelab/frame.hpp"
#include "tonelab/spectrum.hpp"

#include <optional>

namespace tonelab {

// Section through the anchor: { z : omega(z - anchor - (n,0), Y) = 0 } near the
// anchor, n the lattice shift, with the transverse frame of the anchor.
struct PoincareSection {
    Vec anchor;   // cotangent, stacked
    Mat frame;    // 2d x 2d adapted basis at the anchor
    double c = 0.0;
    double half_width = 0.25;

    int dim() const { return static_cast<int>(anchor.size()) / 2; }
    Vec Y() const { return frame.col(dim()); }
    Mat transverse() const;  // 2d x 2n, columns u_1..u_n, w_1..w_n
    // Signed distance along the flow and the lattice shift used for it.
    double value(const Vec& z, Eigen::VectorXi* shift = nullptr) const;
    // Point of the energy level c with reduced coordinates zeta, reached
    // from anchor + transverse * zeta by a Newton correction along Y.
    Vec point(const LagrangianModel& model, const Vec& zeta) const;
    Mat point_jacobian(const LagrangianModel& model, const Vec& zeta) const;
    Vec coordinates(const Vec& z) const;  // reduced coordinates of z - anchor - shift
};

PoincareSection make_section(const LagrangianModel& model, const PhaseState& anchor, double half_width = 0.25);

struct PoincareHit {
    Vec state;  // cotangent, stacked, on the lift
    double time = 0.0;
    Eigen::VectorXi winding;
};

// First return of `start` to the section.  Throws "non-return" after max_time.
PoincareHit poincare_return(const LagrangianModel& model, const PoincareSection& section, const PhaseState& start,
                            double max_time, double tol = 1e-12);

struct ClosedOrbit {
    PhaseState initial;  // cotangent
    double period = 0.0;
    double energy = 0.0;
    Eigen::VectorXi winding;
    double residual = 0.0;
    Mat dP;
    SpectralClass spectral;
    bool degenerate = false;  // dP - I nearly singular
    double dP_min_singular = 0.0;
    std::optional<double> action;  // of L + c over one period
    int iterations = 0;
    std::string method;
    std::string warning;
};

struct ShootingOptions {
    int max_iter = 40;
    double residual_tol = 1e-9;
    double half_width = 0.25;
    double max_return_time = 50.0;
    double multi_shoot_above = 5.0;  // multiple shooting for longer periods
    double segment_length = 1.25;
    double degeneracy_tol = 1e-6;
};

ClosedOrbit find_closed_orbit_shooting(const LagrangianModel& model, double c, const PhaseState& seed,
                                       const std::optional<Eigen::VectorXi>& winding_hint = std::nullopt,
                                       const ShootingOptions& opt = {});

struct LoopBudget {
    int points = 48;
    int offsets = 4;  // straight-line starts per axis
    int iterations = 400;
};

ClosedOrbit find_closed_orbit_action(const LagrangianModel& model, double c, const Eigen::VectorXi& winding,
                                     const LoopBudget& budget = {}, const ShootingOptions& opt = {});

// Reduced monodromy in the anchor frame.
Mat linearized_poincare(const LagrangianModel& model, const ClosedOrbit& orbit);
// Central differences of the nonlinear return map on the section.
Mat linearized_poincare_section(const LagrangianModel& model, const ClosedOrbit& orbit, double h = 1e-4);

// Distance between the initial state of a and the orbit of b, minimized over
// the phase of b and lattice shifts.
double orbit_distance(const LagrangianModel& model, const ClosedOrbit& a, const ClosedOrbit& b);

// Action of L + c along one period.
double orbit_action(const LagrangianModel& model, const ClosedOrbit& orbit, int samples = 256);

json orbit_to_json(const ClosedOrbit& o);
ClosedOrbit orbit_from_json(const json& j);

}  // namespace tonelab
