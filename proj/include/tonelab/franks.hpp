#pragma once

#include "tonelab/frame.hpp"
#include "tonelab/orbit.hpp"

#include <array>
#include <map>
#include <optional>

namespace tonelab {

// Product of squared eigenvalue gaps; identically 1 when n = 1.
double h_n(const Mat& A);

// w = (a, b, c, d): a, b, c symmetric, d symmetric with zero diagonal.
struct PerturbationParams {
    Mat a, b, c, d;

    static PerturbationParams zero(int n);
    int n() const { return static_cast<int>(a.rows()); }
    static int dimension(int n) { return 2 * n * n + n; }
    // Packs upper triangles (strict for d), in the order a, b, c, d.
    Vec to_vector() const;
    static PerturbationParams from_vector(int n, const Vec& v);
    // max of the operator norms
    double norm() const;
    PerturbationParams operator+(const PerturbationParams& o) const;
    PerturbationParams operator*(double s) const;
};

// T = [[beta, gamma], [alpha, -beta^T]] in sp(n).
struct LieAlgebraTarget {
    Mat alpha, beta, gamma;

    Mat matrix() const;
    // Nearest element of sp(n) in the block sense.
    static LieAlgebraTarget from_matrix(const Mat& T);
};

LieAlgebraTarget assemble_T(const Mat& K, const PerturbationParams& w);
// d with Kd - dK = e.  Throws "near-resonance" when two eigenvalues of K are
// closer than gap_tol.
Mat solve_commutator(const Mat& K, const Mat& e, double gap_tol = 1e-8);
PerturbationParams solve_T_system(const Mat& K, const LieAlgebraTarget& target, double gap_tol = 1e-8);

// Smooth step 0 -> 1 on [0, 1] (exp(-1/r) construction), value and two
// derivatives.
std::array<double, 3> smooth_step(double r);
// Cutoff chi(s): 1 on |s| <= 1/4, 0 on |s| >= 1/2.
std::array<double, 3> cutoff_1d(double s);
// sup |chi'| and sup |chi''|.
std::pair<double, double> cutoff_bounds();

struct BumpProfile {
    double tau = 0.0;
    double lambda_width = 0.0;
    double t0 = 0.0;       // segment length
    double domain = 0.0;   // 2 k0; h is supported inside (0, domain)
    double ramp = 0.0;     // width of the transitions of h
    double eps = 0.2;      // tube size: alpha_eps lives on [-eps/2, eps/2]^n
    std::vector<std::pair<double, double>> exclusions;  // h = 0 there
    double norm_const = 0.0;

    // delta and its first five derivatives at t.
    std::array<double, 6> delta(double t) const;
    // h, h', h''.
    std::array<double, 3> h(double t) const;
    // alpha_eps with gradient and Hessian in the transverse variables.
    double alpha(const Vec& y, Vec* grad = nullptr, Mat* hess = nullptr) const;
    // beta(w) and its first two t-derivatives.
    std::array<Mat, 3> beta(const PerturbationParams& w, double t) const;
    // ||delta^(k)||_{C^0} and the C^k norm (max over orders <= k).
    double delta_sup(int k) const;
    double delta_ck(int k) const { double m = 0; for (int j = 0; j <= k; ++j) m = std::max(m, delta_sup(j)); return m; }
    double h_ck(int k) const;
    double one_minus_h_integral() const;   // over [0, t0]
    double delta_integral() const;         // over [0, t0]
    double support_lo() const { return tau - lambda_width; }
    double support_hi() const { return tau + lambda_width; }
    json to_json() const;
    static BumpProfile from_json(const json& j);
};

// ramp is chosen so that the integral of 1 - h stays below rho.
BumpProfile make_profile(double tau, double lambda_width, double t0, double domain, double rho, double eps,
                         std::vector<std::pair<double, double>> exclusions = {});

// Configuration chart (t, y) -> gamma(t) + E(t) y around a piece of the
// segment, with E = G^-1 f the vectors dual to the frame covectors.  Quintic
// Hermite in gamma, cubic Hermite in E.
struct TubeChart {
    int d = 2;
    std::vector<double> times;
    std::vector<Vec> g, gd, gdd;
    std::vector<Mat> E, Ed;

    int n() const { return d - 1; }
    double t_lo() const { return times.front(); }
    double t_hi() const { return times.back(); }
    // gamma, gamma', gamma'' and E, E', E''.
    void at(double t, Vec& gam, Vec& gam_d, Vec& gam_dd, Mat& e, Mat& e_d, Mat& e_dd) const;
    Vec point(double t, const Vec& y) const;
    // Solves point(t, y) = x for x on the lift nearest the chart; nullopt if
    // Newton fails or the solution leaves [t_lo, t_hi].
    std::optional<std::pair<double, Vec>> invert(const Vec& x) const;
};

TubeChart make_chart(const LagrangianModel& model, const AdaptedFrame& frame, double t_lo, double t_hi);

// u(w) = alpha_eps(y) y^T beta(w)(t) y in the tube chart, zero elsewhere.
class PotentialField : public ScalarField {
public:
    PotentialField(BumpProfile profile, PerturbationParams params, std::shared_ptr<const TubeChart> chart);

    int dim() const override { return chart_->d; }
    ScalarJet eval(const Vec& x) const override;
    // The integrator must not step over the bump: steps shrink to lambda/250
    // inside the slab holding the tube.
    bool limits_steps() const override { return true; }
    double step_limit(const Vec& x, double speed) const override;
    // Jet in the configuration coordinates at chart point (t, y).
    ScalarJet jet_at(double t, const Vec& y) const;
    // Jet in the chart coordinates (t, y) themselves.
    ScalarJet chart_jet(double t, const Vec& y) const;
    // d^2 u / dy_i dy_j on the orbit.
    Mat orbit_hessian(double t) const;

    const BumpProfile& profile() const { return profile_; }
    const PerturbationParams& params() const { return params_; }
    const std::shared_ptr<const TubeChart>& chart() const { return chart_; }
    // sup over a tube grid of max(|u|, |grad u|, |hess u|).
    double c2_norm(int nt = 161, int ny = 0) const;
    // The same in chart coordinates, where the C2 bounds are stated.
    double chart_c2_norm(int nt = 161, int ny = 0) const;
    // CSV: t, beta_11, beta_12, ... (upper triangle).
    std::string beta_csv(int samples = 200) const;

private:
    BumpProfile profile_;
    PerturbationParams params_;
    std::shared_ptr<const TubeChart> chart_;
    Vec center_;
    Vec axis_;
    double slab_half_ = 0.0;
    double reject_radius_ = 0.0;  // nothing outside this ball around center_ lies in the tube
};

PotentialField build_potential(const BumpProfile& profile, const PerturbationParams& params,
                               std::shared_ptr<const TubeChart> chart);

CurvaturePath perturbed_curvature(const CurvaturePath& K, const PotentialField& field);

struct ConstantsLedger {
    int n = 1;
    double c = 0.0;
    double neighborhood_radius = 0.0;
    int samples = 0;
    double k0 = 0, k1 = 0, k2 = 0, k3 = 0, k4 = 0, k5 = 0, k6 = 0, k7 = 0;
    double lambda_width = 0, rho = 0, a0 = 0, eps1 = 0.2;
    double phi_n = 0, delta_c0 = 0;
    double sup_K = 0, sup_X = 0, sup_AX = 0;  // raw samples behind k1, k2, k3
    std::map<std::string, std::string> provenance;

    // k3 as a function of the bump half-width.
    double k3_at(double lambda) const { return 1.1 * lambda * sup_AX; }
    json to_json() const;
    static ConstantsLedger from_json(const json& j);
    // Throws "infeasible-ledger" on a broken invariant.
    void check() const;
};

ConstantsLedger estimate_constants(const LagrangianModel& model, double c, double neighborhood_radius,
                                   int sample_budget, unsigned seed = 3);

// Everything needed to perturb one segment [0, t0] starting at an anchor.
struct SegmentContext {
    LagrangianModel model;
    double c = 0.0;
    OrbitSegment segment;
    std::shared_ptr<const AdaptedFrame> frame;
    CurvaturePath K;
    std::shared_ptr<const TubeChart> chart;
    BumpProfile profile;
    ConstantsLedger ledger;
    std::optional<ClosedOrbit> orbit;
    Mat rotation;    // diag(Q, Q): the frame is turned so that K(tau) is diagonal
    Mat rest;        // reduced map from the segment end back to the anchor (I for bare segments)
    Mat pre, post;   // reduced propagators over [0, support start] and [support end, t0]
    Mat base_map;    // unperturbed reduced segment map
    Mat base_dP;     // rest * base_map

    SegmentContext(LagrangianModel m) : model(std::move(m)) {}
    int n() const { return K.n(); }
};

struct FranksOptions {
    double eps1 = 0.2;
    double crossing_margin = 1.0;  // multiples of the tube size kept free around other strands
};

SegmentContext prepare_segment(const LagrangianModel& model, double c, const OrbitSegment& segment,
                               const ConstantsLedger& ledger, const FranksOptions& opt = {});
SegmentContext prepare_orbit_segment(const LagrangianModel& model, const ClosedOrbit& orbit, double t0,
                                     const ConstantsLedger& ledger, const FranksOptions& opt = {});

// F(w): reduced segment map under K + d^2 u(w).
Mat segment_map(const SegmentContext& ctx, const PerturbationParams& w);
// The same map read off the full perturbed flow.
Mat segment_map_full(const SegmentContext& ctx, const PerturbationParams& w);
// Columns d_w F(e_k) for the packed basis, by the variational integral.
std::vector<Mat> variational_jacobian(const SegmentContext& ctx, const PerturbationParams& w);
// d_w F(xi) by the variational integral only.
Mat variational_derivative(const SegmentContext& ctx, const PerturbationParams& w, const PerturbationParams& xi);

struct DerivativeCheck {
    Mat fd;           // central differences of the reduced map, quad precision
    Mat variational;  // X(t0) int X^-1 B X
    double relative_difference = 0.0;
};
// Throws "inconsistency" when the two routes differ by more than 1e-3.
DerivativeCheck directional_derivative_F(const SegmentContext& ctx, const PerturbationParams& w,
                                         const PerturbationParams& xi, double fd_step = 1e-3);

struct Realization {
    PotentialField field;
    PerturbationParams params;
    Mat achieved;          // from the full perturbed flow
    double error = 0.0;    // |achieved - target|
    double reduced_error = 0.0;
    double c2_norm = 0.0;
    double eps = 0.0;
    double orbit_drift = 0.0;
    int iterations = 0;
};

class RealizationFailure : public NumericalError {
public:
    RealizationFailure(const std::string& kind, const std::string& what, PerturbationParams best, double err)
        : NumericalError(kind, what), best_params(std::move(best)), best_error(err) {}
    PerturbationParams best_params;
    double best_error;
};

// Gauss-Newton on w for rest * F(w) = target, then polished against the full
// perturbed flow.  Throws RealizationFailure "no-convergence" or "c2-budget".
Realization realize_target(const SegmentContext& ctx, const Mat& target, double eps_C2, int max_iter = 30);

// Reduced-model feasibility test used by the radius bisection.
bool reachable(const SegmentContext& ctx, const Mat& target, double eps_C2, int max_iter = 30);

// Symplectic target dP exp(s X) at operator-norm distance r from dP.
Mat target_at_distance(const Mat& dP, const Mat& X, double r);
// n = 1: the reduced map reached along s*dir, s in (0, s_max], whose trace
// equals the given value.  A target that is known to be reachable when the
// requested change is far beyond the reachable radius.
Mat trace_target_along(const SegmentContext& ctx, const PerturbationParams& dir, double trace, double s_max = 8.0);
// Random unit direction X in sp(n).
Mat random_sp_direction(int n, std::mt19937_64& rng);

struct RadiusEstimate {
    double delta_hat = 0.0;
    double floor = 0.0;  // k6 times the budget-derived parameter radius
    std::vector<double> radii;
    std::vector<Mat> directions;
    Mat worst_direction;
};
RadiusEstimate reachable_radius_estimate(const SegmentContext& ctx, double eps_C2, int trials, unsigned seed = 5);

// sup over the tube grid of |u(w)|_{C^2} for |w| <= 1, per unit of the packed basis.
double c2_per_unit(const SegmentContext& ctx, double eps);

struct PhiEstimate {
    double value = 0.0;
    PhaseState argmin;
    int samples = 0;
    int failures = 0;
    double k0 = 0.0;
};
PhiEstimate phi_n_estimate(const LagrangianModel& model, double c, int theta_samples, int t_grid = 41,
                           unsigned seed = 9);
bool genericity_test(const LagrangianModel& model, std::shared_ptr<const ScalarField> u, double c, int budget,
                     double threshold = 1e-8);

}  // namespace tonelab
