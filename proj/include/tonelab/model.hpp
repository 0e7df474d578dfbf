#pragma once

#include "tonelab/errors.hpp"
#include "tonelab/fields.hpp"

#include <optional>
#include <string>

namespace tonelab {

// The configuration space R^d / Z^d.
struct TorusSpace {
    int dim = 2;
    explicit TorusSpace(int d = 2);
};

// Everything the model knows at one configuration point.
struct PointJet {
    Mat G, Ginv;
    std::vector<Mat> dG;
    std::vector<std::vector<Mat>> d2G;
    Vec A;
    Mat DA;
    std::vector<Mat> D2A;
    double V = 0.0;
    Vec dV;
    Mat d2V;
};

// Second-order jet of H at (x, p).  Hpx(i,j) = d^2H / dp_i dx_j = dv_i/dx_j.
struct HamJet {
    double H = 0.0;
    Vec Hx, Hp;
    Mat Hxx, Hpx, Hpp;
    Vec v;  // velocity H_p, kept under its own name for readability
};

// L(x,v) = 1/2 v^T G(x) v + A(x).v - V(x) on the flat torus.  Fields are
// shared and immutable, so copies are cheap and safe across threads.
class LagrangianModel {
public:
    LagrangianModel(TorusSpace space, std::shared_ptr<const MetricField> metric,
                    std::shared_ptr<const CovectorField> magnetic,
                    std::shared_ptr<const ScalarField> potential, std::string name = "custom");

    int dim() const { return space_.dim; }
    const std::string& name() const { return name_; }
    bool has_magnetic() const { return magnetic_ != nullptr; }

    PointJet jet(const Vec& x) const;
    Mat metric(const Vec& x) const;
    double potential(const Vec& x) const;
    ScalarJet potential_jet(const Vec& x) const;

    // The Mane perturbation L - u, i.e. potential V + u.
    LagrangianModel with_potential(std::shared_ptr<const ScalarField> u, const std::string& tag = "+u") const;

    // Config document, null if some field is not serializable.
    json to_json() const;
    static LagrangianModel from_json(const json& j);

    const std::shared_ptr<const MetricField>& metric_field() const { return metric_; }
    const std::shared_ptr<const CovectorField>& magnetic_field() const { return magnetic_; }
    const std::vector<std::shared_ptr<const ScalarField>>& potentials() const { return potentials_; }
    bool limits_steps() const;
    double step_limit(const Vec& x, double speed) const;

private:
    TorusSpace space_;
    std::shared_ptr<const MetricField> metric_;
    std::shared_ptr<const CovectorField> magnetic_;
    std::vector<std::shared_ptr<const ScalarField>> potentials_;
    std::string name_;
};

enum class Rep { Tangent, Cotangent };

// A point of TM or T*M.  x is kept as a lift in R^d so windings survive.
struct PhaseState {
    Vec x;
    Vec y;  // v in tangent representation, p in cotangent
    Rep rep = Rep::Cotangent;

    static PhaseState tangent(Vec x, Vec v) { return {std::move(x), std::move(v), Rep::Tangent}; }
    static PhaseState cotangent(Vec x, Vec p) { return {std::move(x), std::move(p), Rep::Cotangent}; }
    // Stacked (x, y).
    Vec stacked() const;
    static PhaseState from_stacked(const Vec& z, Rep rep = Rep::Cotangent);
};

// Closed curve sampled at monotone times; samples[last] = samples[0] + winding
// on the lift (samples may be given reduced mod 1).
struct LoopPath {
    std::vector<Vec> samples;
    std::vector<double> times;
    Eigen::VectorXi winding;
};

HamJet hamiltonian_jet(const LagrangianModel& model, const Vec& x, const Vec& p);
HamJet hamiltonian_jet(const LagrangianModel& model, const PointJet& pj, const Vec& p);

double lagrangian(const LagrangianModel& model, const Vec& x, const Vec& v);
double energy(const LagrangianModel& model, const PhaseState& s);
PhaseState legendre(const LagrangianModel& model, const PhaseState& s);
double hamiltonian_value(const LagrangianModel& model, const PhaseState& s);
double fenchel_gap(const LagrangianModel& model, const Vec& x, const Vec& v, const Vec& p);

// Cotangent state regardless of input representation.
PhaseState to_cotangent(const LagrangianModel& model, const PhaseState& s);
PhaseState to_tangent(const LagrangianModel& model, const PhaseState& s);

struct E0Result {
    double value = 0.0;
    Vec argmax;
    double value_from_lagrangian = 0.0;  // -min L(x,0), computed independently
    double formula_gap = 0.0;
};
E0Result e0(const LagrangianModel& model, int grid = 64);

struct ActionResult {
    double value = 0.0;
    double refinement_change = 0.0;
    bool accuracy_warning = false;
};
// Action of L + k along the periodic cubic interpolant of the path.
ActionResult action(const LagrangianModel& model, const LoopPath& path, double k = 0.0);

struct CriticalBudget {
    int grid = 32;               // sup-grid for subsolution bounds
    int subsolution_modes = 1;   // Fourier order of the trial functions
    int subsolution_iters = 400;
    int loop_starts = 6;
    int loop_modes = 2;
    int loop_iters = 150;
    int bisection_steps = 30;
    double width = 1e-3;
    unsigned seed = 7;
};
struct CriticalBracket {
    double lower = 0.0;
    double upper = 0.0;
    double e0 = 0.0;
    bool warning = false;
    std::string note;
};
CriticalBracket critical_value_estimate(const LagrangianModel& model, bool contractible_only,
                                        const CriticalBudget& budget = {});

struct TonelliReport {
    bool pass = true;
    double margin = 0.0;  // min over grid of the smallest eigenvalue of G
    Vec argmin;
    std::vector<Vec> offenders;
};
class ConvexityViolation : public ValidationError {
public:
    ConvexityViolation(const std::string& what, TonelliReport r)
        : ValidationError("convexity-violation", what), report(std::move(r)) {}
    TonelliReport report;
};
// Throws ConvexityViolation when some grid point has a non-positive metric.
TonelliReport tonelli_check(const LagrangianModel& model, int grid = 16);

// Iterates the points of a regular grid with n points per axis.
template <class F>
void for_each_grid_point(int d, int n, F&& f)
{
    std::vector<int> idx(static_cast<size_t>(d), 0);
    Vec x(d);
    while (true) {
        for (int i = 0; i < d; ++i) x(i) = static_cast<double>(idx[i]) / n;
        f(x);
        int i = d - 1;
        while (i >= 0 && ++idx[i] == n) idx[i--] = 0;
        if (i < 0) break;
    }
}

}  // namespace tonelab
