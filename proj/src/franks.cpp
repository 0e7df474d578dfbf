#include "tonelab/franks.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/multiprecision/float128.hpp>

#include <algorithm>
#include <sstream>

namespace tonelab {

namespace {

std::string num(double x)
{
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

Mat generator(const Mat& K)
{
    const int n = static_cast<int>(K.rows());
    Mat A = Mat::Zero(2 * n, 2 * n);
    A.topRightCorner(n, n) = Mat::Identity(n, n);
    A.bottomLeftCorner(n, n) = -K;
    return A;
}

// X' = [[0, I], [-K(t), 0]] X from t_a to t_b, reporting X at the given times.
void jacobi_run(const std::function<Mat(double)>& K, int n, Mat& X, double ta, double tb, double h_max,
                const std::vector<double>& times, const std::function<void(size_t, const Mat&)>& obs)
{
    const int m = 2 * n;
    State y(X.data(), X.data() + m * m);
    Rhs f = [&](const State& s, State& ds, double t) {
        Eigen::Map<const Mat> Xs(s.data(), m, m);
        ds.resize(s.size());
        Eigen::Map<Mat> dX(ds.data(), m, m);
        dX.topRows(n) = Xs.bottomRows(n);
        dX.bottomRows(n) = -K(t) * Xs.topRows(n);
    };
    OdeOptions oo = ode_options(1e-12);
    oo.h_max = std::min(oo.h_max, h_max);
    if (tb <= ta) return;
    std::vector<double> ts;
    for (double t : times)
        if (t > ta && t < tb) ts.push_back(t);
    ts.push_back(tb);
    ode_integrate_times(f, y, ta, ts, oo, [&](size_t k, const State& s) {
        if (k + 1 < ts.size() && obs) obs(k, Eigen::Map<const Mat>(s.data(), m, m));
    });
    X = Eigen::Map<const Mat>(y.data(), m, m);
}

void jacobi_fixed(const std::function<Mat(double)>& K, int n, Mat& X, double ta, double tb, int steps)
{
    const int m = 2 * n;
    State y(X.data(), X.data() + m * m);
    Rhs f = [&](const State& s, State& ds, double t) {
        Eigen::Map<const Mat> Xs(s.data(), m, m);
        ds.resize(s.size());
        Eigen::Map<Mat> dX(ds.data(), m, m);
        dX.topRows(n) = Xs.bottomRows(n);
        dX.bottomRows(n) = -K(t) * Xs.topRows(n);
    };
    if (tb > ta) rk4_fixed(f, y, ta, tb, steps);
    X = Eigen::Map<const Mat>(y.data(), m, m);
}

std::function<Mat(double)> perturbed_K(const SegmentContext& ctx, const PerturbationParams& w)
{
    return [&ctx, w](double t) -> Mat { return ctx.K.at(t) + 2.0 * ctx.profile.beta(w, t)[0]; };
}

// Reduced propagator of K + 2 beta(w), integrated piecewise so the bump is
// never stepped over.  Optionally records X at nodes inside the support.
Mat perturbed_propagator(const SegmentContext& ctx, const PerturbationParams& w, const std::vector<double>& nodes = {},
                         std::vector<Mat>* at_nodes = nullptr)
{
    const int n = ctx.n();
    const double lo = std::max(0.0, ctx.profile.support_lo()), hi = std::min(ctx.profile.t0, ctx.profile.support_hi());
    const auto K = perturbed_K(ctx, w);
    // Outside the support nothing depends on w; those pieces are integrated
    // once, so F(w) carries no step-selection noise from them.
    Mat X = ctx.pre.size() ? ctx.pre : Mat::Identity(2 * n, 2 * n);
    if (!ctx.pre.size()) jacobi_run(K, n, X, 0.0, lo, 0.1, {}, nullptr);
    if (at_nodes) at_nodes->clear();
    if (nodes.empty()) {
        // The c and d terms are large derivatives of the bump whose integrals
        // nearly cancel.  A uniform grid over the exact support keeps that
        // cancellation to rounding; adaptive steps do not.
        jacobi_fixed(K, n, X, lo, hi, 2000);
    } else {
        jacobi_run(K, n, X, lo, hi, 0.1 * ctx.profile.lambda_width, nodes,
                   [&](size_t, const Mat& Xs) { if (at_nodes) at_nodes->push_back(Xs); });
    }
    if (ctx.post.size()) return ctx.post * X;
    jacobi_run(K, n, X, hi, ctx.profile.t0, 0.1, {}, nullptr);
    return X;
}

std::vector<PerturbationParams> basis(int n)
{
    std::vector<PerturbationParams> B;
    const int D = PerturbationParams::dimension(n);
    for (int k = 0; k < D; ++k) B.push_back(PerturbationParams::from_vector(n, Vec::Unit(D, k)));
    return B;
}

// Composite 4-point Gauss-Legendre over the support.  The c and d terms make the
// integrand steep near the ends of the support, hence the many panels.
struct Quadrature {
    std::vector<double> t, w;
};

Quadrature support_rule(const BumpProfile& p, int panels = 512)
{
    using GL = boost::math::quadrature::gauss<double, 4>;
    const auto& xa = GL::abscissa();
    const auto& wa = GL::weights();
    Quadrature q;
    const double lo = p.support_lo(), hi = p.support_hi(), h = (hi - lo) / panels;
    for (int k = 0; k < panels; ++k) {
        const double mid = lo + (k + 0.5) * h;
        for (size_t i = 0; i < xa.size(); ++i) {
            if (xa[i] == 0.0) {
                q.t.push_back(mid);
                q.w.push_back(0.5 * h * wa[i]);
                continue;
            }
            for (double sg : {-1.0, 1.0}) {
                q.t.push_back(mid + sg * 0.5 * h * xa[i]);
                q.w.push_back(0.5 * h * wa[i]);
            }
        }
    }
    std::vector<size_t> idx(q.t.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return q.t[a] < q.t[b]; });
    Quadrature s;
    for (size_t i : idx) s.t.push_back(q.t[i]), s.w.push_back(q.w[i]);
    return s;
}

Vec flat(const Mat& M) { return Eigen::Map<const Vec>(M.data(), M.size()); }

// States and covectors on [lo, hi] at spacing h, transported from the
// nearest coarse sample, for a chart that resolves the bump.
AdaptedFrame fine_frame(const LagrangianModel& model, const AdaptedFrame& coarse, double lo, double hi, double h)
{
    const int d = model.dim(), n = coarse.n;
    AdaptedFrame fr;
    fr.n = n;
    fr.segment = coarse.segment;
    const int N = static_cast<int>(std::ceil((hi - lo) / h));
    for (int k = -2; k <= N + 2; ++k) fr.times.push_back(lo + (hi - lo) * k / N);
    const auto& T = coarse.times;
    size_t i0 = static_cast<size_t>(std::upper_bound(T.begin(), T.end(), fr.times.front()) - T.begin());
    i0 = i0 == 0 ? 0 : i0 - 1;
    State y(static_cast<size_t>(2 * d + d * n));
    std::copy(coarse.states[i0].data(), coarse.states[i0].data() + 2 * d, y.begin());
    std::copy(coarse.covectors[i0].data(), coarse.covectors[i0].data() + d * n, y.begin() + 2 * d);
    Rhs f = [&](const State& s, State& ds, double) {
        const Vec z = Eigen::Map<const Vec>(s.data(), 2 * d);
        const Mat F = Eigen::Map<const Mat>(s.data() + 2 * d, d, n);
        const Vec dz = hamiltonian_field(model, z);
        const Mat dF = covector_derivative(model, z, F);
        ds.resize(s.size());
        std::copy(dz.data(), dz.data() + 2 * d, ds.begin());
        std::copy(dF.data(), dF.data() + d * n, ds.begin() + 2 * d);
    };
    ode_integrate_times(f, y, T[i0], fr.times, ode_options(1e-12), [&](size_t, const State& s) {
        fr.states.push_back(Eigen::Map<const Vec>(s.data(), 2 * d));
        fr.covectors.push_back(Eigen::Map<const Mat>(s.data() + 2 * d, d, n));
    });
    return fr;
}

Mat rotate_frame(AdaptedFrame& fr, const Mat& Q)
{
    const int n = fr.n, d = n + 1;
    Mat Qh = Mat::Zero(2 * n, 2 * n);
    Qh.topLeftCorner(n, n) = Q;
    Qh.bottomRightCorner(n, n) = Q;
    for (size_t k = 0; k < fr.times.size(); ++k) {
        fr.covectors[k] = fr.covectors[k] * Q;
        Mat& B = fr.basis[k];
        B.middleCols(1, n) = Mat(B.middleCols(1, n) * Q);
        B.middleCols(d + 1, n) = Mat(B.middleCols(d + 1, n) * Q);
        fr.generator[k] = Qh.transpose() * fr.generator[k] * Qh;
    }
    return Qh;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ledger

json ConstantsLedger::to_json() const
{
    json p = json::object();
    for (const auto& [k, v] : provenance) p[k] = v;
    return {{"n", n},           {"c", c},         {"neighborhood_radius", neighborhood_radius},
            {"samples", samples}, {"k0", k0},       {"k1", k1},
            {"k2", k2},         {"k3", k3},       {"k4", k4},
            {"k5", k5},         {"k6", k6},       {"k7", k7},
            {"lambda_width", lambda_width},       {"rho", rho},
            {"a0", a0},         {"eps1", eps1},   {"phi_n", phi_n},
            {"delta_c0", delta_c0},               {"sup_K", sup_K},
            {"sup_X", sup_X},   {"sup_AX", sup_AX}, {"provenance", p}};
}

ConstantsLedger ConstantsLedger::from_json(const json& j)
{
    ConstantsLedger L;
    L.n = j.at("n");
    L.c = j.at("c");
    L.neighborhood_radius = j.at("neighborhood_radius");
    L.samples = j.at("samples");
    L.k0 = j.at("k0");
    L.k1 = j.at("k1");
    L.k2 = j.at("k2");
    L.k3 = j.at("k3");
    L.k4 = j.at("k4");
    L.k5 = j.at("k5");
    L.k6 = j.at("k6");
    L.k7 = j.at("k7");
    L.lambda_width = j.at("lambda_width");
    L.rho = j.at("rho");
    L.a0 = j.at("a0");
    L.eps1 = j.at("eps1");
    L.phi_n = j.at("phi_n");
    L.delta_c0 = j.at("delta_c0");
    L.sup_K = j.at("sup_K");
    L.sup_X = j.at("sup_X");
    L.sup_AX = j.at("sup_AX");
    for (const auto& [k, v] : j.at("provenance").items()) L.provenance[k] = v.get<std::string>();
    L.check();
    return L;
}

void ConstantsLedger::check() const
{
    auto fail = [](const std::string& what) { throw numerical("infeasible-ledger", what); };
    for (double v : {k0, k1, k2, k3, k4, k5, k6, k7, lambda_width, rho, a0, eps1})
        if (!(v > 0) || !std::isfinite(v)) fail("every constant must be positive and finite");
    if (!(k2 > 1)) fail("k2 must exceed 1");
    if (!(1.0 / (k2 * k2) - 2 * k2 * k3 > 0)) fail("1/k2^2 - 2 k2 k3 is not positive");
    if (!(lambda_width < k0 / 8)) fail("lambda must stay below k0/8");
    const double k6f = (1.0 / (k2 * k2) - 2 * k2 * k3 - rho * k2 * k2 * delta_c0) / (k2 * k5);
    if (std::abs(k6f - k6) > 1e-12 * std::abs(k6)) fail("k6 does not match its formula");
}

ConstantsLedger estimate_constants(const LagrangianModel& model, double c, double neighborhood_radius,
                                   int sample_budget, unsigned seed)
{
    if (sample_budget < 1) throw validation("budget", "need at least one sample");
    if (!(neighborhood_radius >= 0)) throw validation("domain", "neighbourhood radius must be non-negative");
    const int n = model.dim() - 1;
    const double r = neighborhood_radius;
    ConstantsLedger L;
    L.n = n;
    L.c = c;
    L.neighborhood_radius = r;
    L.samples = sample_budget;

    const InjectivityResult inj = injectivity_time(model, c, sample_budget);
    L.k0 = inj.k0;
    L.provenance["k0"] = "injectivity time / 4, minimum first near-return over " + std::to_string(inj.samples) +
                         " energy-level samples";

    std::mt19937_64 rng(seed);
    int used = 0;
    for (int s = 0; s < sample_budget; ++s) {
        const PhaseState th = sample_energy_level(model, c, rng);
        FrameOptions fo;
        fo.check_injective = false;
        AdaptedFrame fr;
        CurvaturePath K;
        try {
            fr = adapted_frame(model, {th, 2 * L.k0}, fo);
            K = extract_curvature(model, fr);
        } catch (const NumericalError&) {
            continue;
        }
        ++used;
        for (const Mat& k : K.K) L.sup_K = std::max(L.sup_K, op_norm(k));
        Mat X = Mat::Identity(2 * n, 2 * n);
        const std::vector<double> ts(K.times.begin() + 1, K.times.end());
        auto step = [&](const Mat& Xs, double t) {
            const double nx = op_norm(Xs);
            L.sup_X = std::max(L.sup_X, nx);
            L.sup_AX = std::max(L.sup_AX, (op_norm(generator(K.at(t))) + r) * nx);
        };
        step(X, 0.0);
        jacobi_run([&K](double t) { return K.at(t); }, n, X, 0.0, 2 * L.k0 + 1e-9, 0.1, ts,
                   [&](size_t k, const Mat& Xs) { step(Xs, ts[k]); });
    }
    if (used == 0) throw numerical("infeasible-ledger", "no sampled orbit gave a usable frame");

    // Growth allowed by perturbations of size r (Gronwall on the reduced equation).
    const double grow = std::exp(r * L.sup_X * L.sup_X * 2 * L.k0);
    L.k1 = std::max(1.1 * (L.sup_K + r), 1e-3);
    L.provenance["k1"] = "1.1 (sup |K| + r) over " + std::to_string(used) + " sampled frames on [0, 2k0], floor 1e-3";
    L.k2 = 1.1 * L.sup_X * grow;
    L.provenance["k2"] = "1.1 sup |X(t)| of the reduced propagator on [0, 2k0], times exp(r sup|X|^2 2k0)";
    L.sup_AX *= grow;

    L.lambda_width = 0.99 * L.k0 / 8;
    int halvings = 0;
    while (2 * L.k2 * L.k3_at(L.lambda_width) > 0.5 / (L.k2 * L.k2)) {
        L.lambda_width *= 0.5;
        if (++halvings > 60) throw numerical("infeasible-ledger", "no bump width satisfies 1/k2^2 - 2 k2 k3 > 0");
    }
    L.k3 = L.k3_at(L.lambda_width);
    L.provenance["k3"] = "1.1 lambda sup |A(t)| |X(t)|, a Lipschitz modulus of X over windows of width lambda";
    L.provenance["lambda_width"] = "0.99 k0/8 halved until 2 k2 k3 <= 1/(2 k2^2)";

    const PhiEstimate phi = phi_n_estimate(model, c, sample_budget, 41, seed + 1);
    L.phi_n = phi.value;
    if (!(L.phi_n > 0)) throw numerical("infeasible-ledger", "Phi_n estimate is not positive, a0 is undefined");
    L.a0 = std::sqrt(L.phi_n / 2.2);
    L.provenance["a0"] = n == 1 ? "sqrt(Phi_1 / 2.2), Phi_1 = 1 identically"
                                : "sqrt(Phi_n / 2.2) from the sampled Phi_n estimate";
    const int m = n * (n - 1) / 2;
    L.k4 = L.a0 / std::pow(2 * L.k1, m - 1);
    L.provenance["k4"] = "a0 / (2 k1)^(m-1), m = n(n-1)/2";
    L.k5 = n == 1 ? 1 + L.k1 : std::max({1 / L.k4, 1 + 4 * L.k1 / L.k4, 1 + L.k1});
    L.provenance["k5"] = n == 1 ? "1 + k1" : "max(1/k4, 1 + 4 k1/k4, 1 + k1)";

    const BumpProfile unit = make_profile(0.5 * L.k0, L.lambda_width, L.k0, 2 * L.k0, 1.0, L.eps1);
    L.delta_c0 = unit.delta_sup(0);
    L.rho = 0.25 / std::pow(L.k2, 4) / L.delta_c0;
    L.provenance["rho"] = "k2^-4 / (4 |delta|_C0)";
    L.k6 = (1.0 / (L.k2 * L.k2) - 2 * L.k2 * L.k3 - L.rho * L.k2 * L.k2 * L.delta_c0) / (L.k2 * L.k5);
    L.provenance["k6"] = "(k2^-2 - 2 k2 k3 - rho k2^2 |delta|_C0) / (k2 k5)";

    const auto [c1, c2] = cutoff_bounds();
    const double c2p = c2 + (n - 1) * c1 * c1;
    L.k7 = std::max({n * c2p / 4 + 2 * n * c1 + 2, std::pow(n, 1.5) * c1 / 4 + std::sqrt(n), n / 4.0});
    L.provenance["k7"] = "cutoff bound with sup|chi'| = " + num(c1) + ", sup|chi''| = " + num(c2);
    L.provenance["eps1"] = "fixed tube size 0.2, shrunk per realization to meet the C2 budget";
    L.check();
    return L;
}

// ---------------------------------------------------------------------------
// Segment context

namespace {

SegmentContext prepare_common(const LagrangianModel& model, double c, const OrbitSegment& seg,
                              const ConstantsLedger& ledger, const FranksOptions& opt,
                              const std::optional<ClosedOrbit>& orbit)
{
    ledger.check();
    const double t0 = seg.duration;
    if (t0 < ledger.k0 * (1 - 1e-9) || t0 > 2 * ledger.k0 * (1 + 1e-9))
        throw validation("segment", "segment length " + num(t0) + " is outside [k0, 2k0] = [" + num(ledger.k0) +
                                        ", " + num(2 * ledger.k0) + "]");
    if (model.dim() - 1 != ledger.n) throw validation("dimension", "ledger was estimated for another dimension");
    SegmentContext ctx(model);
    ctx.c = c;
    ctx.ledger = ledger;
    ctx.orbit = orbit;
    ctx.segment = {to_cotangent(model, seg.start), t0};
    const double lam = ledger.lambda_width;

    AdaptedFrame fr = adapted_frame(model, ctx.segment);
    const CurvaturePath K0 = extract_curvature(model, fr);
    const int n = K0.n();

    double tau = ledger.k0 / 4;
    if (n >= 2) {
        double best = -1;
        for (size_t k = 0; k < K0.times.size(); ++k) {
            const double t = K0.times[k];
            if (t < ledger.k0 / 4 || t > 3 * ledger.k0 / 4) continue;
            const double h = h_n(K0.K[k]);
            if (h > best) best = h, tau = t;
        }
    }
    Mat Q = Mat::Identity(n, n);
    if (n >= 2) Q = Eigen::SelfAdjointEigenSolver<Mat>(K0.at(tau)).eigenvectors();
    ctx.rotation = rotate_frame(fr, Q);
    auto frame = std::make_shared<const AdaptedFrame>(fr);
    ctx.frame = frame;
    ctx.K = K0;
    ctx.K.frame = frame;
    for (size_t k = 0; k < ctx.K.K.size(); ++k) ctx.K.K[k] = sym(Q.transpose() * K0.K[k] * Q);

    ctx.chart = std::make_shared<const TubeChart>(make_chart(model, fine_frame(model, fr, tau - lam, tau + lam, lam / 8),
                                                             tau - lam, tau + lam));

    std::vector<std::pair<double, double>> windows;
    if (orbit) {
        const double T = orbit->period;
        const int N = static_cast<int>(std::ceil(T / (0.5 * lam)));
        const FlowTrajectory tr = integrate(model, orbit->initial, T, 1e-12, N);
        const double reach = opt.crossing_margin * opt.eps1 * 0.5 * std::sqrt(n) * 2;
        const Vec center = ctx.chart->g[ctx.chart->g.size() / 2];
        for (size_t k = 0; k < tr.states.size(); ++k) {
            const Vec& x = tr.states[k].x;
            if (wrap_centered(x - center).norm() > reach + 2 * lam * 10) continue;
            const auto q = ctx.chart->invert(x);
            if (!q) continue;
            const auto& [t, y] = *q;
            const double s = tr.times[k];
            if (std::abs(s - t) < 4 * lam || std::abs(s - T - t) < 4 * lam) continue;  // the segment itself
            if (t <= tau - lam || t >= tau + lam) continue;
            if (y.cwiseAbs().maxCoeff() >= opt.crossing_margin * 0.5 * opt.eps1) continue;
            windows.emplace_back(std::max(0.0, t - 0.25 * lam), std::min(t0, t + 0.25 * lam));
        }
        std::sort(windows.begin(), windows.end());
        std::vector<std::pair<double, double>> merged;
        for (const auto& w : windows) {
            if (!merged.empty() && w.first <= merged.back().second)
                merged.back().second = std::max(merged.back().second, w.second);
            else
                merged.push_back(w);
        }
        windows = merged;
    }
    ctx.profile = make_profile(tau, lam, t0, 2 * ledger.k0, ledger.rho, opt.eps1, windows);
    {
        const double lo = std::max(0.0, ctx.profile.support_lo()), hi = std::min(t0, ctx.profile.support_hi());
        const auto K0 = [&ctx](double t) -> Mat { return ctx.K.at(t); };
        ctx.pre = ctx.post = Mat::Identity(2 * n, 2 * n);
        jacobi_run(K0, n, ctx.pre, 0.0, lo, 0.1, {}, nullptr);
        jacobi_run(K0, n, ctx.post, hi, t0, 0.1, {}, nullptr);
    }

    const Vec z0 = ctx.segment.start.stacked();
    const Vec zt = fr.states.back();
    if (orbit) {
        const Mat M = flow_and_jacobian(model, zt, orbit->period - t0).second;
        ctx.rest = reduce_map(fr.basis.front(), M, fr.basis.back());
        ctx.base_dP = ctx.rotation.transpose() * linearized_poincare(model, *orbit) * ctx.rotation;
    } else {
        ctx.rest = Mat::Identity(2 * n, 2 * n);
        ctx.base_dP = segment_map_full(ctx, PerturbationParams::zero(n));
    }
    ctx.base_map = segment_map(ctx, PerturbationParams::zero(n));
    (void)z0;
    return ctx;
}

}  // namespace

SegmentContext prepare_segment(const LagrangianModel& model, double c, const OrbitSegment& segment,
                               const ConstantsLedger& ledger, const FranksOptions& opt)
{
    return prepare_common(model, c, segment, ledger, opt, std::nullopt);
}

SegmentContext prepare_orbit_segment(const LagrangianModel& model, const ClosedOrbit& orbit, double t0,
                                     const ConstantsLedger& ledger, const FranksOptions& opt)
{
    if (!(t0 < orbit.period)) throw validation("segment", "segment must be shorter than the period");
    return prepare_common(model, orbit.energy, {orbit.initial, t0}, ledger, opt, orbit);
}

// ---------------------------------------------------------------------------
// Segment maps and derivatives

Mat segment_map(const SegmentContext& ctx, const PerturbationParams& w)
{
    return perturbed_propagator(ctx, w);
}

Mat segment_map_full(const SegmentContext& ctx, const PerturbationParams& w)
{
    const LagrangianModel mu =
        ctx.model.with_potential(std::make_shared<PotentialField>(ctx.profile, w, ctx.chart), "+u(w)");
    const Vec z0 = ctx.segment.start.stacked();
    const auto [zt, M] = flow_and_jacobian(mu, z0, ctx.segment.duration);
    return reduce_map(ctx.frame->basis.back(), M, ctx.frame->basis.front());
}

std::vector<Mat> variational_jacobian(const SegmentContext& ctx, const PerturbationParams& w)
{
    const int n = ctx.n();
    const Quadrature q = support_rule(ctx.profile);
    std::vector<Mat> Xs;
    const Mat Xt = perturbed_propagator(ctx, w, q.t, &Xs);
    if (Xs.size() != q.t.size()) throw numerical("inconsistency", "quadrature nodes were not all reached");
    const auto B = basis(n);
    std::vector<Mat> I(B.size(), Mat::Zero(2 * n, 2 * n));
    const Mat J = canonical_J(n);
    for (size_t i = 0; i < q.t.size(); ++i) {
        const Mat& X = Xs[i];
        const Mat Xinv = -J * X.transpose() * J;
        for (size_t k = 0; k < B.size(); ++k) {
            const Mat b = ctx.profile.beta(B[k], q.t[i])[0];
            if (b.isZero()) continue;
            // B X with B = [[0, 0], [-2 beta, 0]]
            Mat BX = Mat::Zero(2 * n, 2 * n);
            BX.bottomRows(n) = -2.0 * b * X.topRows(n);
            I[k] += q.w[i] * Xinv * BX;
        }
    }
    for (Mat& m : I) m = Xt * m;
    return I;
}

Mat variational_derivative(const SegmentContext& ctx, const PerturbationParams& w, const PerturbationParams& xi)
{
    const auto cols = variational_jacobian(ctx, w);
    const Vec v = xi.to_vector();
    Mat Z = Mat::Zero(cols.front().rows(), cols.front().cols());
    for (size_t k = 0; k < cols.size(); ++k) Z += v(static_cast<int>(k)) * cols[k];
    return Z;
}

namespace {

using Quad = boost::multiprecision::float128;

// Fixed-step RK4 of the reduced Jacobi equation in quad precision, K(t) +
// s B(t), run for s = +h and s = -h on the same grid.  On a fixed grid the
// difference quotient is smooth in h, so h can be taken far below the scale
// on which the bump derivatives make F nonlinear.
Mat reduced_fd_quad(const SegmentContext& ctx, const PerturbationParams& w, const PerturbationParams& xi, double h)
{
    const int n = ctx.n(), m = 2 * n;
    const BumpProfile& p = ctx.profile;
    const double lo = p.support_lo(), hi = p.support_hi(), t0 = p.t0;
    std::vector<double> grid;
    auto add = [&](double a, double b, int N) {
        for (int k = 0; k < N; ++k) grid.push_back(a + (b - a) * k / N);
    };
    add(0.0, lo, std::max(64, static_cast<int>(std::ceil(lo / 5e-4))));
    add(lo, hi, 2000);
    add(hi, t0, std::max(64, static_cast<int>(std::ceil((t0 - hi) / 5e-4))));
    grid.push_back(t0);

    const Quad hq = h;
    std::array<std::vector<Quad>, 2> X;
    for (auto& x : X) {
        x.assign(static_cast<size_t>(m * m), Quad(0));
        for (int i = 0; i < m; ++i) x[static_cast<size_t>(i * m + i)] = 1;
    }
    // column-major m x m; rhs: top = bottom rows, bottom = -K top rows
    auto rhs = [&](const std::vector<double>& Kd, const std::vector<double>& Bd, const Quad& s,
                   const std::vector<Quad>& x, std::vector<Quad>& dx) {
        dx.assign(x.size(), Quad(0));
        for (int c = 0; c < m; ++c)
            for (int i = 0; i < n; ++i) {
                dx[static_cast<size_t>(c * m + i)] = x[static_cast<size_t>(c * m + n + i)];
                Quad acc = 0;
                for (int j = 0; j < n; ++j)
                    acc += (Quad(Kd[static_cast<size_t>(j * n + i)]) + s * Quad(Bd[static_cast<size_t>(j * n + i)])) *
                           x[static_cast<size_t>(c * m + j)];
                dx[static_cast<size_t>(c * m + n + i)] = -acc;
            }
    };
    auto mats = [&](double t, std::vector<double>& Kd, std::vector<double>& Bd) {
        const Mat K = ctx.K.at(t) + 2.0 * p.beta(w, t)[0];
        const Mat B = 2.0 * p.beta(xi, t)[0];
        Kd.assign(K.data(), K.data() + K.size());
        Bd.assign(B.data(), B.data() + B.size());
    };
    std::vector<double> K0, B0, K1, B1, K2, B2;
    std::vector<Quad> k1, k2, k3, k4, tmp;
    mats(grid.front(), K0, B0);
    for (size_t g = 0; g + 1 < grid.size(); ++g) {
        const double ta = grid[g], tb = grid[g + 1];
        const Quad dt = Quad(tb) - Quad(ta);
        mats(0.5 * (ta + tb), K1, B1);
        mats(tb, K2, B2);
        for (int r = 0; r < 2; ++r) {
            const Quad s = r == 0 ? hq : -hq;
            auto& x = X[static_cast<size_t>(r)];
            rhs(K0, B0, s, x, k1);
            tmp = x;
            for (size_t i = 0; i < x.size(); ++i) tmp[i] += dt / 2 * k1[i];
            rhs(K1, B1, s, tmp, k2);
            tmp = x;
            for (size_t i = 0; i < x.size(); ++i) tmp[i] += dt / 2 * k2[i];
            rhs(K1, B1, s, tmp, k3);
            tmp = x;
            for (size_t i = 0; i < x.size(); ++i) tmp[i] += dt * k3[i];
            rhs(K2, B2, s, tmp, k4);
            for (size_t i = 0; i < x.size(); ++i) x[i] += dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
        }
        K0.swap(K2);
        B0.swap(B2);
    }
    Mat D(m, m);
    for (int i = 0; i < m * m; ++i)
        D.data()[i] = static_cast<double>((X[0][static_cast<size_t>(i)] - X[1][static_cast<size_t>(i)]) / (2 * hq));
    return D;
}

}  // namespace

DerivativeCheck directional_derivative_F(const SegmentContext& ctx, const PerturbationParams& w,
                                         const PerturbationParams& xi, double fd_step)
{
    if (xi.n() != ctx.n() || w.n() != ctx.n()) throw validation("dimension", "parameters do not match the segment");
    if (!(fd_step > 0)) throw validation("domain", "finite-difference step must be positive");
    DerivativeCheck r;
    r.variational = variational_derivative(ctx, w, xi);
    if (xi.to_vector().isZero()) {
        r.fd = Mat::Zero(r.variational.rows(), r.variational.cols());
        return r;
    }
    // The c and d terms carry lambda^-3 and lambda^-4, which sets the scale
    // of the linear regime.
    const double h = fd_step * std::pow(ctx.profile.lambda_width, 4) / xi.norm();
    r.fd = reduced_fd_quad(ctx, w, xi, h);
    r.relative_difference = op_norm(r.fd - r.variational) / std::max(op_norm(r.variational), 1e-300);
    if (r.relative_difference > 1e-3)
        throw numerical("inconsistency", "finite-difference and variational derivatives differ by " +
                                             num(r.relative_difference) + " (relative)");
    return r;
}

// ---------------------------------------------------------------------------
// Realization

namespace {

struct GNResult {
    PerturbationParams w;
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

Mat jacobian_matrix(const SegmentContext& ctx, const PerturbationParams& w)
{
    const auto cols = variational_jacobian(ctx, w);
    Mat Jm(4 * ctx.n() * ctx.n(), static_cast<int>(cols.size()));
    for (size_t k = 0; k < cols.size(); ++k) Jm.col(static_cast<int>(k)) = flat(ctx.rest * cols[k]);
    return Jm;
}

PerturbationParams tsystem_guess(const SegmentContext& ctx, const Mat& target)
{
    const int n = ctx.n();
    const Mat Fstar = ctx.rest.partialPivLu().solve(target);
    const Mat W = ctx.base_map.partialPivLu().solve(Fstar) - Mat::Identity(2 * n, 2 * n);
    std::vector<Mat> Xs;
    const std::vector<double> tt{ctx.profile.tau};
    perturbed_propagator(ctx, PerturbationParams::zero(n), tt, &Xs);
    const Mat& Xt = Xs.front();
    // The a-part of the integral is X^-1 [[0,0],[-2a,0]] X at tau; its image
    // under conjugation by X(tau) is -2 times the lower block, hence the -1/2.
    const Mat T = -0.5 * Xt * W * Xt.partialPivLu().inverse();
    const LieAlgebraTarget lt = LieAlgebraTarget::from_matrix(T);
    try {
        return solve_T_system(ctx.K.at(ctx.profile.tau), lt);
    } catch (const Error&) {
        return PerturbationParams::zero(n);
    }
}

GNResult reduced_gauss_newton(const SegmentContext& ctx, const Mat& target, int max_iter)
{
    const int n = ctx.n();
    // A wild trial step can blow the propagator up; it counts as no decrease.
    auto resid = [&](const PerturbationParams& w) -> Vec {
        try {
            Vec r = flat(ctx.rest * segment_map(ctx, w) - target);
            if (r.allFinite()) return r;
        } catch (const NumericalError&) {
        }
        return Vec::Constant(target.size(), std::numeric_limits<double>::infinity());
    };
    GNResult g;
    g.w = PerturbationParams::zero(n);
    Vec r = resid(g.w);
    {
        const PerturbationParams w1 = tsystem_guess(ctx, target);
        const Vec r1 = resid(w1);
        if (r1.norm() < r.norm()) g.w = w1, r = r1;
    }
    // Relative to the distance still to cover, with a floor near the
    // accuracy of the reduced propagator.
    const double floor = 2e-14 * (1 + target.norm());
    const double tol = std::max(floor, 1e-6 * resid(PerturbationParams::zero(n)).norm());
    int slow = 0;
    for (g.iterations = 0; g.iterations < max_iter && r.norm() > tol; ++g.iterations) {
        Mat Jm;
        try {
            Jm = jacobian_matrix(ctx, g.w);
        } catch (const NumericalError&) {
            break;
        }
        if (!Jm.allFinite()) break;
        const Vec dw = Jm.completeOrthogonalDecomposition().solve(-r);
        double s = 1.0;
        bool moved = false;
        for (int k = 0; k < 12; ++k, s *= 0.5) {
            const PerturbationParams wn =
                PerturbationParams::from_vector(n, g.w.to_vector() + s * dw);
            const Vec rn = resid(wn);
            if (rn.norm() < r.norm()) {
                slow = rn.norm() > 0.9 * r.norm() ? slow + 1 : 0;
                g.w = wn;
                r = rn;
                moved = true;
                break;
            }
        }
        // crawling far from the target: give up rather than spend max_iter
        if (!moved || slow >= 3) break;
    }
    g.residual = r.norm();
    g.converged = g.residual <= tol;
    return g;
}

// C2 norms of u(w) are linear in w before the sup, so the basis jets on the
// tube grid are computed once per tube size and combined.
class C2Gauge {
public:
    explicit C2Gauge(const SegmentContext& ctx) : ctx_(ctx), levels_(21) {}

    static double eps_at(const SegmentContext& ctx, int k) { return ctx.profile.eps * std::pow(0.5, k); }

    // Largest tube size meeting the budget, or -1.
    int first_within(const PerturbationParams& w, double budget)
    {
        for (int k = 0; k < static_cast<int>(levels_.size()); ++k) {
            const Level& L = level(k);
            if (!L.valid) continue;
            if (norm(L, w) < budget) return k;
        }
        return -1;
    }

    double unit_sum(int k)
    {
        const Level& L = level(k);
        if (!L.valid) return std::numeric_limits<double>::infinity();
        double s = 0.0;
        const int D = PerturbationParams::dimension(ctx_.n());
        for (int i = 0; i < D; ++i) s += norm(L, PerturbationParams::from_vector(ctx_.n(), Vec::Unit(D, i)));
        return s;
    }

private:
    struct Level {
        bool built = false, valid = false;
        std::vector<std::vector<ScalarJet>> jets;  // [basis][point]
    };

    const Level& level(int k)
    {
        Level& L = levels_[k];
        if (L.built) return L;
        L.built = true;
        BumpProfile p = ctx_.profile;
        p.eps = eps_at(ctx_, k);
        const auto B = basis(ctx_.n());
        try {
            for (const auto& b : B) {
                const PotentialField f = build_potential(p, b, ctx_.chart);
                std::vector<ScalarJet> js;
                const int n = ctx_.n(), nt = 161, ny = n == 1 ? 21 : n == 2 ? 11 : 7;
                Vec y(n);
                for (int i = 0; i <= nt; ++i) {
                    const double t = p.support_lo() + (p.support_hi() - p.support_lo()) * i / nt;
                    std::vector<int> idx(static_cast<size_t>(n), 0);
                    while (true) {
                        for (int q = 0; q < n; ++q) y(q) = p.eps * (-0.5 + static_cast<double>(idx[q]) / (ny - 1));
                        js.push_back(f.jet_at(t, y));
                        int q = n - 1;
                        while (q >= 0 && ++idx[q] == ny) idx[q--] = 0;
                        if (q < 0) break;
                    }
                }
                L.jets.push_back(std::move(js));
            }
            L.valid = true;
        } catch (const ValidationError&) {
            L.valid = false;
        }
        return L;
    }

    static double norm(const Level& L, const PerturbationParams& w)
    {
        const Vec v = w.to_vector();
        double m = 0.0;
        const size_t P = L.jets.front().size();
        for (size_t p = 0; p < P; ++p) {
            double val = 0.0;
            Vec g = Vec::Zero(L.jets.front()[p].grad.size());
            Mat H = Mat::Zero(g.size(), g.size());
            for (size_t k = 0; k < L.jets.size(); ++k) {
                const double c = v(static_cast<int>(k));
                if (c == 0.0) continue;
                val += c * L.jets[k][p].value;
                g += c * L.jets[k][p].grad;
                H += c * L.jets[k][p].hess;
            }
            m = std::max({m, std::abs(val), g.norm(), op_norm(H)});
        }
        return m;
    }

    const SegmentContext& ctx_;
    std::vector<Level> levels_;
};

double orbit_drift(const SegmentContext& ctx, const LagrangianModel& mu)
{
    const double T = ctx.orbit ? ctx.orbit->period : ctx.segment.duration;
    const FlowTrajectory a = integrate(ctx.model, ctx.segment.start, T, 1e-12, 32);
    const FlowTrajectory b = integrate(mu, ctx.segment.start, T, 1e-12, 32);
    double m = 0.0;
    for (size_t k = 0; k < a.states.size(); ++k)
        m = std::max(m, (a.states[k].stacked() - b.states[k].stacked()).norm());
    return m;
}

bool reachable_with(const SegmentContext& ctx, C2Gauge& gauge, const Mat& target, double eps_C2, int max_iter)
{
    if (!(eps_C2 > 0)) return false;
    const GNResult g = reduced_gauss_newton(ctx, target, max_iter);
    if (!g.converged) return false;
    return gauge.first_within(g.w, eps_C2) >= 0;
}

}  // namespace

Realization realize_target(const SegmentContext& ctx, const Mat& target, double eps_C2, int max_iter)
{
    const int n = ctx.n();
    if (target.rows() != 2 * n || target.cols() != 2 * n) throw validation("dimension", "target has the wrong size");
    if (!(eps_C2 > 0)) throw validation("domain", "C2 budget must be positive");
    if (symplectic_defect(target) > 1e-8) throw validation("domain", "target is not symplectic");

    GNResult g = reduced_gauss_newton(ctx, target, max_iter);
    if (!g.converged)
        throw RealizationFailure("no-convergence", "reduced Gauss-Newton stalled at residual " + num(g.residual), g.w,
                                 g.residual);

    // Tube size: largest eps1 / 2^k that meets the budget.
    std::optional<PotentialField> field;
    double c2 = std::numeric_limits<double>::infinity();
    BumpProfile p = ctx.profile;
    for (int k = 0; k <= 20; ++k) {
        p.eps = ctx.profile.eps * std::pow(0.5, k);
        try {
            PotentialField f = build_potential(p, g.w, ctx.chart);
            c2 = f.c2_norm();
            if (c2 < eps_C2) {
                field.emplace(std::move(f));
                break;
            }
        } catch (const ValidationError&) {
        }
    }
    if (!field)
        throw RealizationFailure("c2-budget", "C2 norm " + num(c2) + " exceeds the budget " + num(eps_C2) +
                                                  " for every tube size",
                                 g.w, g.residual);

    // Polish against the full flow; the reduced Jacobian is close enough.
    PerturbationParams w = g.w;
    double err_full = 0.0;
    int it = 0;
    for (; it < 8; ++it) {
        const Mat Ff = ctx.rest * segment_map_full(ctx, w) - target;
        err_full = Ff.norm();
        if (err_full < 1e-10) break;
        const Mat Jm = jacobian_matrix(ctx, w);
        const Vec dw = Jm.completeOrthogonalDecomposition().solve(-flat(Ff));
        w = PerturbationParams::from_vector(n, w.to_vector() + dw);
    }
    PotentialField f = build_potential(field->profile(), w, ctx.chart);
    c2 = f.c2_norm();
    if (!(c2 < eps_C2))
        throw RealizationFailure("c2-budget", "polished potential has C2 norm " + num(c2) + " above " + num(eps_C2), w,
                                 err_full);
    auto shared = std::make_shared<PotentialField>(f);
    const LagrangianModel mu = ctx.model.with_potential(shared, "+u(w)");

    Mat achieved;
    if (ctx.orbit) {
        ClosedOrbit o = *ctx.orbit;
        achieved = ctx.rotation.transpose() * linearized_poincare(mu, o) * ctx.rotation;
    } else {
        achieved = segment_map_full(ctx, w);
    }
    const double err = op_norm(achieved - target);
    if (!(err < 1e-6))
        throw RealizationFailure("no-convergence", "full-flow error " + num(err) + " after polishing", w, err);

    Realization R{f, w, achieved, err, op_norm(ctx.rest * segment_map(ctx, w) - target), c2, f.profile().eps,
                  orbit_drift(ctx, mu), g.iterations + it};
    return R;
}

bool reachable(const SegmentContext& ctx, const Mat& target, double eps_C2, int max_iter)
{
    C2Gauge gauge(ctx);
    return reachable_with(ctx, gauge, target, eps_C2, max_iter);
}

Mat target_at_distance(const Mat& dP, const Mat& X, double r)
{
    if (!(r > 0)) return dP;
    auto dist = [&](double s) { return op_norm(dP * expm(s * X) - dP); };
    double hi = r / std::max(op_norm(dP * X), 1e-12);
    for (int k = 0; k < 200 && dist(hi) < r; ++k) hi *= 2;
    double lo = 0.0;
    for (int k = 0; k < 80; ++k) {
        const double mid = 0.5 * (lo + hi);
        (dist(mid) < r ? lo : hi) = mid;
    }
    return dP * expm(0.5 * (lo + hi) * X);
}

Mat trace_target_along(const SegmentContext& ctx, const PerturbationParams& dir, double trace, double s_max)
{
    if (ctx.n() != 1) throw validation("dimension", "trace targets are for n = 1");
    auto tr = [&](double s) { return (ctx.rest * segment_map(ctx, dir * s)).trace(); };
    const double t0 = tr(0.0);
    if (t0 == trace) return ctx.base_dP;
    // march outwards until the trace is crossed, then bisect
    const double h = s_max / 64;
    double lo = 0.0, hi = -1.0;
    for (int k = 1; k <= 64; ++k)
        if ((tr(k * h) - trace) * (t0 - trace) <= 0) {
            lo = (k - 1) * h;
            hi = k * h;
            break;
        }
    if (hi < 0) throw numerical("no-convergence", "trace not crossed along the given direction");
    for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        ((tr(mid) - trace) * (t0 - trace) > 0 ? lo : hi) = mid;
    }
    return ctx.rest * segment_map(ctx, dir * hi);
}

Mat random_sp_direction(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> N(0.0, 1.0);
    Mat S(2 * n, 2 * n);
    for (int i = 0; i < 2 * n; ++i)
        for (int j = i; j < 2 * n; ++j) S(i, j) = S(j, i) = N(rng);
    const Mat X = canonical_J(n) * S;
    return X / op_norm(X);
}

double c2_per_unit(const SegmentContext& ctx, double eps)
{
    const int n = ctx.n();
    const int D = PerturbationParams::dimension(n);
    BumpProfile p = ctx.profile;
    p.eps = eps;
    double s = 0.0;
    for (int k = 0; k < D; ++k) s += build_potential(p, PerturbationParams::from_vector(n, Vec::Unit(D, k)), ctx.chart).c2_norm();
    return s;
}

RadiusEstimate reachable_radius_estimate(const SegmentContext& ctx, double eps_C2, int trials, unsigned seed)
{
    RadiusEstimate R;
    const int n = ctx.n();
    std::mt19937_64 rng(seed);
    for (int i = 0; i < trials; ++i) R.directions.push_back(random_sp_direction(n, rng));
    if (!(eps_C2 > 0) || trials < 1) {
        R.radii.assign(static_cast<size_t>(std::max(trials, 0)), 0.0);
        if (trials > 0) R.worst_direction = R.directions.front();
        return R;
    }
    C2Gauge gauge(ctx);
    const Mat& dP = ctx.base_dP;
    R.delta_hat = std::numeric_limits<double>::infinity();
    // Radii of different directions are usually within a small factor, so
    // each search starts where the previous one ended.
    double start = 1e-3;
    for (int i = 0; i < trials; ++i) {
        const Mat& X = R.directions[i];
        auto ok = [&](double r) { return reachable_with(ctx, gauge, target_at_distance(dP, X, r), eps_C2, 30); };
        double lo = 0.0, hi = 0.0, r = start;
        if (ok(r)) {
            lo = r;
            while (lo < 8.0) {
                r = 2 * lo;
                if (!ok(r)) break;
                lo = r;
            }
            hi = r;
        } else {
            hi = r;
            while (hi > 1e-15) {
                r = 0.5 * hi;
                if (ok(r)) {
                    lo = r;
                    break;
                }
                hi = r;
            }
        }
        if (lo > 0)
            for (int k = 0; k < 12; ++k) {
                const double mid = 0.5 * (lo + hi);
                (ok(mid) ? lo : hi) = mid;
            }
        R.radii.push_back(lo);
        if (lo > 0) start = lo;
        if (lo < R.delta_hat) {
            R.delta_hat = lo;
            R.worst_direction = X;
        }
    }
    double eta = 0.0;
    for (int k = 0; k <= 20; ++k) eta = std::max(eta, eps_C2 / gauge.unit_sum(k));
    const double rest_inv = op_norm(ctx.rest.partialPivLu().inverse());
    R.floor = ctx.ledger.k6 * eta / rest_inv;
    return R;
}

// ---------------------------------------------------------------------------
// Genericity

PhiEstimate phi_n_estimate(const LagrangianModel& model, double c, int theta_samples, int t_grid, unsigned seed)
{
    PhiEstimate P;
    const int n = model.dim() - 1;
    if (theta_samples < 1) throw validation("budget", "need at least one sample");
    if (n == 1) {
        P.value = 1.0;
        P.samples = theta_samples;
        return P;
    }
    const InjectivityResult inj = injectivity_time(model, c, theta_samples);
    P.k0 = inj.k0;
    std::mt19937_64 rng(seed);
    P.value = std::numeric_limits<double>::infinity();
    for (int s = 0; s < theta_samples; ++s) {
        const PhaseState th = sample_energy_level(model, c, rng);
        ++P.samples;
        try {
            FrameOptions fo;
            fo.check_injective = false;
            const AdaptedFrame fr = adapted_frame(model, {th, 0.5 * P.k0}, fo);
            const CurvaturePath K = extract_curvature(model, fr);
            double best = 0.0;
            for (int j = 0; j < t_grid; ++j) best = std::max(best, h_n(K.at(0.5 * P.k0 * j / std::max(1, t_grid - 1))));
            if (best < P.value) P.value = best, P.argmin = th;
        } catch (const NumericalError&) {
            ++P.failures;
        }
    }
    if (P.failures * 10 > P.samples)
        throw numerical("estimate-rejected", std::to_string(P.failures) + " of " + std::to_string(P.samples) +
                                                 " sampled frames failed");
    return P;
}

bool genericity_test(const LagrangianModel& model, std::shared_ptr<const ScalarField> u, double c, int budget,
                     double threshold)
{
    if (model.dim() == 2) return true;
    const LagrangianModel mu = u ? model.with_potential(std::move(u)) : model;
    return phi_n_estimate(mu, c, budget).value > threshold;
}

}  // namespace tonelab
