#pragma once

#include "tonelab/orbit.hpp"

#include <json.hpp>

#include <memory>

namespace tonelab {

struct LyapunovOptions {
    // When positive the base point is re-anchored on the orbit of s every
    // period, so unstable closed orbits can be followed for long horizons.
    double period = 0.0;
    bool energy_tangent = true;  // start tangent to the energy level
    double tol = 1e-11;
    unsigned seed = 5;
};

struct LyapunovEstimate {
    double value = 0.0;
    std::vector<double> times;    // renormalization instants
    std::vector<double> running;  // log growth / t at those instants
};

LyapunovEstimate lyapunov_exponent(const LagrangianModel& model, const PhaseState& s, double horizon,
                                   double renorm_interval, const LyapunovOptions& opt = {});
LyapunovEstimate lyapunov_exponent(const LagrangianModel& model, const ClosedOrbit& orbit, double horizon,
                                   double renorm_interval);

// A flow whose states live in a chart split into a wrapped block (flat torus
// distance) and a free block (Euclidean); d is the product metric.
class FlowLike {
public:
    virtual ~FlowLike() = default;
    virtual std::string name() const = 0;
    virtual int region_dim() const = 0;   // coordinates of initial points
    virtual int wrapped_dim() const = 0;
    virtual int free_dim() const = 0;
    virtual double diameter() const = 0;  // of the whole phase space
    // Length in d of a unit step along each region axis (an upper bound).
    virtual std::vector<double> axis_scale() const = 0;
    // States at the given monotone times, wrapped block first, one row per time.
    virtual void orbit(const Vec& point, const std::vector<double>& times, std::vector<double>& out) const = 0;
};

// Suspension of a hyperbolic toral automorphism under the unit roof.  Initial
// points sit on the section s = 0, region coordinates are x in [0,1)^2.
class CatSuspension : public FlowLike {
public:
    explicit CatSuspension(Eigen::Matrix2i A = (Eigen::Matrix2i() << 2, 1, 1, 1).finished());
    std::string name() const override { return "cat-suspension"; }
    int region_dim() const override { return 2; }
    int wrapped_dim() const override { return 2; }
    int free_dim() const override { return 0; }
    double diameter() const override { return std::sqrt(0.5); }
    std::vector<double> axis_scale() const override { return {1.0, 1.0}; }
    void orbit(const Vec& point, const std::vector<double>& times, std::vector<double>& out) const override;
    double entropy() const;  // log of the expanding eigenvalue
    const Eigen::Matrix2i& matrix() const { return A_; }

private:
    Eigen::Matrix2i A_;
};

// The energy level E^{-1}(c) of a d = 2 model.  Region coordinates are
// (x1, x2, theta), theta the direction of the velocity.
class EnergyLevelFlow : public FlowLike {
public:
    EnergyLevelFlow(LagrangianModel model, double c, double tol = 1e-9);
    std::string name() const override { return model_.name(); }
    int region_dim() const override { return 3; }
    int wrapped_dim() const override { return 2; }
    int free_dim() const override { return 2; }
    double diameter() const override;
    std::vector<double> axis_scale() const override;
    void orbit(const Vec& point, const std::vector<double>& times, std::vector<double>& out) const override;
    PhaseState state(const Vec& point) const;

private:
    LagrangianModel model_;
    double c_, tol_, pmax_;
};

struct PhaseRegion {
    std::vector<double> lo, hi;
    std::vector<int> shape;  // grid points per axis; empty = even split of the budget
};

struct BowenOptions {
    double sample_dt = 0.25;       // distance checked at multiples of this and at each T
    double saturation = 0.25;      // counts above this fraction of the grid are unresolved
    double refine_tol = 0.1;       // half-density grid count may fall short by this fraction
    double linear_tol = 0.05;      // max residual in log N for a linear regime
    int min_regime = 3;
    // Grid points are moved by up to this fraction of a cell, reproducibly.
    // Exact lattices resonate with linear maps of the torus.
    double jitter = 1.0;
    unsigned seed = 3;
};

struct BowenCurve {
    double delta = 0.0;
    std::vector<double> T;
    std::vector<long> greedy;  // raw greedy counts
    std::vector<long> half;    // the same on the half-density subgrid
    std::vector<long> N;       // smallest spanning set found at this or a smaller delta
    std::vector<bool> resolved;
    int first = -1, last = -1;  // chosen regime, inclusive
    double slope = 0.0;
};

struct EntropyEstimate {
    std::string method;  // bowen | periodic-growth | lyapunov-proxy
    double value = 0.0;
    std::vector<double> deltas;
    double T_min = 0.0, T_max = 0.0;
    long grid_points = 0;
    std::vector<BowenCurve> curves;  // one per delta; a single one for periodic growth
    std::string note;
};

EntropyEstimate bowen_entropy(const FlowLike& flow, const PhaseRegion& region, std::vector<double> deltas,
                              std::vector<double> Ts, long grid_budget, const BowenOptions& opt = {});

struct RegistryEntry {
    double period = 0.0;
    std::string label;
};
struct OrbitRegistry {
    std::vector<RegistryEntry> orbits;
    void add(const ClosedOrbit& o);
};

// Closed orbits of the cat suspension with period <= max_period, one entry
// per orbit, found by enumerating the rational points fixed by A^m.
OrbitRegistry cat_registry(int max_period, const Eigen::Matrix2i& A = (Eigen::Matrix2i() << 2, 1, 1, 1).finished());
// Straight closed geodesics of the flat 2-torus on E^{-1}(c), one entry per
// primitive class (each is a whole invariant family).
OrbitRegistry free_torus_registry(double c, double T_max);

EntropyEstimate periodic_growth_entropy(const OrbitRegistry& registry, double T_max, const BowenOptions& opt = {});

// Slope of y against x by least squares over the longest contiguous window
// of usable points with max residual <= tol; later windows win ties.
struct LinearRegime {
    int first = -1, last = -1;
    double slope = 0.0;
    bool found = false;
};
LinearRegime largest_linear_regime(const std::vector<double>& x, const std::vector<double>& y,
                                   const std::vector<bool>& usable, double tol, int min_points);

struct SplittingSample {
    int orbit = 0;
    double phase = 0.0;
    Mat stable, unstable;  // orthonormal columns
};

struct SplittingCertificate {
    std::vector<int> orbits;
    double aperture = 0.0;
    std::vector<double> t_checks;
    std::vector<double> stable_norm;    // max over samples of |dphi_t on E^s|
    std::vector<double> unstable_norm;  // max over samples of |dphi_-t on E^u|
    double C = 0.0, lambda = 0.0;
    double worst_cone_ratio = 0.0;      // image aperture / aperture, < 1 required
    double invariance_defect = 0.0;
    std::vector<SplittingSample> samples;
};

class SplittingFailure : public NumericalError {
public:
    SplittingFailure(const std::string& kind, const std::string& what, int orbit, double phase, double t)
        : NumericalError(kind, what), orbit(orbit), phase(phase), t(t) {}
    int orbit;
    double phase, t;
};

SplittingCertificate verify_splitting(const LagrangianModel& model, const std::vector<ClosedOrbit>& orbits,
                                      double cone_aperture = 0.5,
                                      std::vector<double> t_checks = {0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4},
                                      int samples_per_orbit = 16);

nlohmann::json estimate_to_json(const EntropyEstimate& e);
nlohmann::json certificate_to_json(const SplittingCertificate& c);
// One line per (delta, T): delta,T,N
std::string spanning_csv(const EntropyEstimate& e);

}  // namespace tonelab
