#include "tonelab/entropy.hpp"

#include "tonelab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace tonelab {

// ---------------------------------------------------------------- Lyapunov

LyapunovEstimate lyapunov_exponent(const LagrangianModel& model, const PhaseState& s, double horizon,
                                   double renorm_interval, const LyapunovOptions& opt)
{
    if (!(renorm_interval > 0.0) || !(horizon >= 50.0 * renorm_interval * (1 - 1e-12)))
        throw validation("horizon", "horizon must cover at least 50 renormalization intervals");
    const Vec z0 = to_cotangent(model, s).stacked();
    const int m = static_cast<int>(z0.size());
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> N(0.0, 1.0);
    Vec xi(m);
    for (int i = 0; i < m; ++i) xi(i) = N(rng);
    if (opt.energy_tangent) {
        // dH . xi is a first integral of the linearized flow, so removing it
        // once keeps xi on the level forever.
        const int d = m / 2;
        const HamJet h = hamiltonian_jet(model, z0.head(d), z0.tail(d));
        Vec g(m);
        g << h.Hx, h.Hp;
        if (g.squaredNorm() > 0) xi -= (g.dot(xi) / g.squaredNorm()) * g;
    }
    xi.normalize();

    const int steps = static_cast<int>(std::ceil(horizon / renorm_interval - 1e-9));
    const double h = horizon / steps;
    LyapunovEstimate out;
    Vec z = z0;
    double sum = 0.0;
    for (int k = 1; k <= steps; ++k) {
        Vec base = z;
        if (opt.period > 0) {
            const double tau = std::fmod((k - 1) * h, opt.period);
            base = tau > 0 ? flow_to(model, PhaseState::from_stacked(z0), tau, opt.tol).stacked() : z0;
        }
        Vec z1;
        Mat M;
        try {
            std::tie(z1, M) = flow_and_jacobian(model, base, h, opt.tol);
        } catch (const NumericalError& e) {
            throw numerical("step", std::string("linearized flow failed inside one renormalization interval: ") +
                                        e.what());
        }
        xi = M * xi;
        const double n = xi.norm();
        if (!std::isfinite(n) || n > 1e300 || n == 0.0)
            throw numerical("step", "tangent vector left the floating range before renormalization");
        sum += std::log(n);
        xi /= n;
        z = z1;
        out.times.push_back(k * h);
        out.running.push_back(sum / (k * h));
    }
    out.value = sum / (steps * h);
    return out;
}

LyapunovEstimate lyapunov_exponent(const LagrangianModel& model, const ClosedOrbit& orbit, double horizon,
                                   double renorm_interval)
{
    LyapunovOptions opt;
    opt.period = orbit.period;
    return lyapunov_exponent(model, orbit.initial, horizon, renorm_interval, opt);
}

// ------------------------------------------------------------- flow-likes

CatSuspension::CatSuspension(Eigen::Matrix2i A) : A_(A)
{
    const int det = A_(0, 0) * A_(1, 1) - A_(0, 1) * A_(1, 0);
    const int tr = A_.trace();
    if (std::abs(det) != 1) throw validation("cat-matrix", "matrix must be unimodular");
    if (det == 1 ? std::abs(tr) <= 2 : tr == 0)
        throw validation("cat-matrix", "matrix must be hyperbolic");
}

double CatSuspension::entropy() const
{
    Eigen::EigenSolver<Eigen::Matrix2d> es(A_.cast<double>());
    return std::log(std::max(std::abs(es.eigenvalues()(0)), std::abs(es.eigenvalues()(1))));
}

void CatSuspension::orbit(const Vec& point, const std::vector<double>& times, std::vector<double>& out) const
{
    out.assign(2 * times.size(), 0.0);
    Eigen::Vector2d x(point(0), point(1));
    const Eigen::Matrix2d A = A_.cast<double>();
    long n = 0;
    for (size_t k = 0; k < times.size(); ++k) {
        const long target = static_cast<long>(std::floor(times[k] + 1e-12));
        for (; n < target; ++n) {
            x = A * x;
            x = x.array() - x.array().floor();
        }
        out[2 * k] = x(0);
        out[2 * k + 1] = x(1);
    }
}

EnergyLevelFlow::EnergyLevelFlow(LagrangianModel model, double c, double tol)
    : model_(std::move(model)), c_(c), tol_(tol), pmax_(0.0)
{
    if (model_.dim() != 2) throw validation("dimension", "energy level grids are implemented for d = 2");
    const double E0 = e0(model_, 32).value;
    if (!(c > E0)) throw validation("energy-regime", "c must exceed e0");
    for_each_grid_point(2, 12, [&](const Vec& x) {
        for (int j = 0; j < 12; ++j) {
            Vec pt(3);
            pt << x(0), x(1), kTwoPi * j / 12;
            pmax_ = std::max(pmax_, state(pt).y.norm());
        }
    });
}

double EnergyLevelFlow::diameter() const { return std::sqrt(0.5 + 4 * pmax_ * pmax_); }

std::vector<double> EnergyLevelFlow::axis_scale() const { return {1.0, 1.0, pmax_}; }

PhaseState EnergyLevelFlow::state(const Vec& point) const
{
    Vec x = point.head(2);
    Vec u(2);
    u << std::cos(point(2)), std::sin(point(2));
    const double V = model_.potential(x);
    const double g = u.dot(model_.metric(x) * u);
    const Vec v = u * std::sqrt(2 * (c_ - V) / g);
    return legendre(model_, PhaseState::tangent(x, v));
}

void EnergyLevelFlow::orbit(const Vec& point, const std::vector<double>& times, std::vector<double>& out) const
{
    OdeOptions opt;
    opt.rtol = opt.atol = tol_;
    opt.h_max = 1.0;
    opt.h0 = 0.25;  // restarts at every sample time, don't crawl up from 1e-3 each time
    apply_step_limit(opt, model_);
    const Vec z0 = state(point).stacked();
    State y(z0.data(), z0.data() + 4);
    const Rhs f = [this](const State& s, State& ds, double) {
        const Vec dz = hamiltonian_field(model_, Eigen::Map<const Vec>(s.data(), 4));
        ds.assign(dz.data(), dz.data() + 4);
    };
    out.assign(4 * times.size(), 0.0);
    double t = 0.0;
    for (size_t k = 0; k < times.size(); ++k) {
        if (times[k] > t) ode_integrate(f, y, t, times[k], opt);
        t = times[k];
        std::copy(y.begin(), y.end(), out.begin() + 4 * k);
    }
}

// ----------------------------------------------------------------- regimes

LinearRegime largest_linear_regime(const std::vector<double>& x, const std::vector<double>& y,
                                   const std::vector<bool>& usable, double tol, int min_points)
{
    const int n = static_cast<int>(x.size());
    LinearRegime r;
    for (int len = n; len >= std::max(2, min_points); --len) {
        for (int a = n - len; a >= 0; --a) {
            const int b = a + len - 1;
            bool ok = true;
            for (int i = a; i <= b && ok; ++i) ok = usable[i];
            if (!ok) continue;
            double mx = 0, my = 0;
            for (int i = a; i <= b; ++i) {
                mx += x[i];
                my += y[i];
            }
            mx /= len;
            my /= len;
            double sxx = 0, sxy = 0;
            for (int i = a; i <= b; ++i) {
                sxx += (x[i] - mx) * (x[i] - mx);
                sxy += (x[i] - mx) * (y[i] - my);
            }
            if (sxx <= 0) continue;
            const double slope = sxy / sxx;
            double res = 0;
            for (int i = a; i <= b; ++i) res = std::max(res, std::abs(y[i] - my - slope * (x[i] - mx)));
            if (res <= tol) {
                r.first = a;
                r.last = b;
                r.slope = slope;
                r.found = true;
                return r;
            }
        }
    }
    return r;
}

// ------------------------------------------------------------------ Bowen

namespace {

struct Grid {
    std::vector<int> shape;
    std::vector<double> lo, step;
    long size = 1;
    double spacing = 0.0;  // largest axis step in the metric
    double jitter = 0.0;
    uint64_t seed = 0;

    // every index even on the axes that have more than one point
    bool coarse(long idx) const
    {
        for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
            if (shape[i] > 1 && (idx % shape[i]) % 2) return false;
            idx /= shape[i];
        }
        return true;
    }

    Vec point(long idx) const
    {
        Vec p(static_cast<int>(shape.size()));
        std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(idx + 1)));
        std::uniform_real_distribution<double> U(-0.5, 0.5);
        for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
            const double j = shape[i] > 1 ? jitter * U(rng) : 0.0;
            p(i) = lo[i] + (idx % shape[i] + 0.5 + j) * step[i];
            idx /= shape[i];
        }
        return p;
    }
};

Grid make_grid(const FlowLike& flow, const PhaseRegion& region, long budget)
{
    const int D = flow.region_dim();
    if (static_cast<int>(region.lo.size()) != D || static_cast<int>(region.hi.size()) != D)
        throw validation("region", "region bounds must match the flow's region dimension");
    const std::vector<double> scale = flow.axis_scale();
    Grid g;
    g.shape = region.shape;
    if (g.shape.empty()) {
        // even spacing in the metric
        double vol = 1.0;
        int live = 0;
        for (int i = 0; i < D; ++i) {
            const double L = (region.hi[i] - region.lo[i]) * scale[i];
            if (L > 0) {
                vol *= L;
                ++live;
            }
        }
        const double h = live ? std::pow(vol / static_cast<double>(budget), 1.0 / live) : 1.0;
        for (int i = 0; i < D; ++i) {
            const double L = (region.hi[i] - region.lo[i]) * scale[i];
            g.shape.push_back(L > 0 ? std::max(1, static_cast<int>(std::floor(L / h))) : 1);
        }
    }
    if (static_cast<int>(g.shape.size()) != D) throw validation("region", "grid shape has the wrong length");
    for (int i = 0; i < D; ++i) {
        if (g.shape[i] < 1) throw validation("region", "grid shape entries must be positive");
        if (!(region.hi[i] >= region.lo[i])) throw validation("region", "empty region axis");
        g.size *= g.shape[i];
        g.lo.push_back(region.lo[i]);
        g.step.push_back((region.hi[i] - region.lo[i]) / g.shape[i]);
        g.spacing = std::max(g.spacing, g.step.back() * scale[i]);
    }
    if (g.size > budget) throw validation("grid-budget", "region grid exceeds the grid budget");
    return g;
}

struct Combo {
    double delta = 0.0;
    int m = 1;          // cells per wrapped axis
    size_t kT = 0;      // sample index of T
    std::unordered_map<uint64_t, std::vector<int>> cells;
    long count = 0;
};

}  // namespace

EntropyEstimate bowen_entropy(const FlowLike& flow, const PhaseRegion& region, std::vector<double> deltas,
                              std::vector<double> Ts, long grid_budget, const BowenOptions& opt)
{
    if (deltas.empty() || Ts.empty()) throw validation("bowen", "need at least one delta and one T");
    for (double d : deltas)
        if (!(d > 0)) throw validation("bowen", "delta must be positive");
    for (double T : Ts)
        if (!(T >= 0)) throw validation("bowen", "T must be non-negative");
    if (!(opt.sample_dt > 0)) throw validation("bowen", "sample_dt must be positive");
    std::sort(deltas.begin(), deltas.end());
    deltas.erase(std::unique(deltas.begin(), deltas.end()), deltas.end());
    std::sort(Ts.begin(), Ts.end());
    Ts.erase(std::unique(Ts.begin(), Ts.end()), Ts.end());

    Grid grid = make_grid(flow, region, grid_budget);
    grid.jitter = opt.jitter;
    grid.seed = opt.seed;
    if (grid.spacing >= deltas.front())
        throw validation("resolution", "grid budget too small for the requested delta");

    // sample times: multiples of sample_dt up to max T, plus every T
    std::vector<double> times;
    const double Tmax = Ts.back();
    const long nsteps = static_cast<long>(std::floor(Tmax / opt.sample_dt + 1e-9));
    for (long k = 0; k <= nsteps; ++k) times.push_back(k * opt.sample_dt);
    times.insert(times.end(), Ts.begin(), Ts.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                times.end());
    auto index_of = [&](double T) {
        size_t best = 0;
        for (size_t k = 0; k < times.size(); ++k)
            if (std::abs(times[k] - T) < std::abs(times[best] - T)) best = k;
        return best;
    };

    const int w = flow.wrapped_dim();
    const int D = w + flow.free_dim();
    const size_t K = times.size();

    // The same greedy pass on the half-density subgrid; where the two counts
    // disagree the grid does not resolve the spanning number.
    std::vector<Combo> combos, half;
    for (double d : deltas)
        for (double T : Ts) {
            Combo c;
            c.delta = d;
            c.m = std::max(1, static_cast<int>(std::floor(1.0 / d)));
            c.kT = index_of(T);
            combos.push_back(c);
            half.push_back(std::move(c));
        }

    std::vector<double> store;  // trajectories of points that became a center somewhere
    std::vector<double> traj;

    auto cell_coords = [&](const double* row, int m, std::vector<int>& out) {
        for (int i = 0; i < w; ++i) {
            double u = row[i] - std::floor(row[i]);
            int c = static_cast<int>(u * m);
            out.push_back(std::min(c, m - 1));
        }
    };
    auto encode = [](const std::vector<int>& c, int m) {
        uint64_t key = 0;
        for (int v : c) key = key * static_cast<uint64_t>(m) + static_cast<uint64_t>(v);
        return key;
    };
    // Bowen distance below delta over samples 0..kT, t = 0 and t = T first.
    auto within = [&](const double* a, const double* b, size_t kT, double delta) {
        const double d2 = delta * delta;
        auto close = [&](size_t k) {
            const double* p = a + k * D;
            const double* q = b + k * D;
            double s = 0;
            for (int i = 0; i < w; ++i) {
                double e = p[i] - q[i];
                e -= std::round(e);
                s += e * e;
            }
            for (int i = w; i < D; ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
            return s < d2;
        };
        if (!close(0) || !close(kT)) return false;
        for (size_t k = 1; k < kT; ++k)
            if (!close(k)) return false;
        return true;
    };

    std::vector<int> cc;
    for (long idx = 0; idx < grid.size; ++idx) {
        flow.orbit(grid.point(idx), times, traj);
        int stored = -1;
        const bool sub = grid.coarse(idx);
        for (size_t ci = 0; ci < 2 * combos.size(); ++ci) {
            if (ci >= combos.size() && !sub) break;
            Combo& c = ci < combos.size() ? combos[ci] : half[ci - combos.size()];
            cc.clear();
            cell_coords(&traj[0], c.m, cc);
            cell_coords(&traj[c.kT * D], c.m, cc);
            const uint64_t key = encode(cc, c.m);
            bool covered = false;
            auto it = c.cells.find(key);
            if (it != c.cells.end())
                for (int id : it->second)
                    if (within(&traj[0], &store[static_cast<size_t>(id) * K * D], c.kT, c.delta)) {
                        covered = true;
                        break;
                    }
            if (covered) continue;
            if (stored < 0) {
                stored = static_cast<int>(store.size() / (K * D));
                store.insert(store.end(), traj.begin(), traj.end());
            }
            ++c.count;
            // register in every neighbouring cell
            std::set<uint64_t> keys;
            const int n = static_cast<int>(cc.size());
            std::vector<int> off(n, -1), nb(n);
            while (true) {
                for (int i = 0; i < n; ++i) nb[i] = ((cc[i] + off[i]) % c.m + c.m) % c.m;
                keys.insert(encode(nb, c.m));
                int i = n - 1;
                while (i >= 0 && ++off[i] == 2) off[i--] = -1;
                if (i < 0) break;
            }
            for (uint64_t k : keys) c.cells[k].push_back(stored);
        }
    }

    EntropyEstimate e;
    e.method = "bowen";
    e.deltas = deltas;
    e.T_min = Ts.front();
    e.T_max = Ts.back();
    e.grid_points = grid.size;
    std::ostringstream note;
    note << "grid";
    for (int s : grid.shape) note << ' ' << s;
    note << ", spacing " << grid.spacing;
    e.note = note.str();

    bool any = false;
    double best = std::numeric_limits<double>::infinity();
    const size_t nT = Ts.size();
    for (size_t a = 0; a < deltas.size(); ++a) {
        BowenCurve cv;
        cv.delta = deltas[a];
        cv.T = Ts;
        std::vector<double> y;
        for (size_t b = 0; b < nT; ++b) {
            const long g = combos[a * nT + b].count;
            const long gh = half[a * nT + b].count;
            cv.greedy.push_back(g);
            cv.half.push_back(gh);
            // a spanning set at a smaller delta also spans at this one
            cv.N.push_back(a == 0 ? g : std::min(g, e.curves[a - 1].N[b]));
            cv.resolved.push_back(cv.N.back() < opt.saturation * static_cast<double>(grid.size) &&
                                  gh >= (1 - opt.refine_tol) * static_cast<double>(g));
            y.push_back(std::log(static_cast<double>(cv.N.back())));
        }
        const LinearRegime r = largest_linear_regime(cv.T, y, cv.resolved, opt.linear_tol, opt.min_regime);
        if (r.found) {
            cv.first = r.first;
            cv.last = r.last;
            cv.slope = r.slope;
            any = true;
            best = std::min(best, std::max(0.0, r.slope));
        }
        e.curves.push_back(std::move(cv));
    }
    if (!any) throw numerical("resolution", "no resolved linear regime at any delta");
    e.value = best;
    return e;
}

// ------------------------------------------------------- periodic growth

void OrbitRegistry::add(const ClosedOrbit& o)
{
    std::ostringstream s;
    s << "winding";
    for (int i = 0; i < o.winding.size(); ++i) s << ' ' << o.winding(i);
    orbits.push_back({o.period, s.str()});
}

OrbitRegistry cat_registry(int max_period, const Eigen::Matrix2i& A)
{
    if (max_period < 1 || max_period > 14) throw validation("registry", "max_period must lie in [1, 14]");
    using I2 = Eigen::Matrix<long long, 2, 2>;
    const I2 a = A.cast<long long>();
    OrbitRegistry reg;
    I2 P = I2::Identity();
    for (int m = 1; m <= max_period; ++m) {
        P = P * a;
        const I2 B = P - I2::Identity();
        const long long det = B(0, 0) * B(1, 1) - B(0, 1) * B(1, 0);
        const long long D = std::llabs(det);
        if (D == 0) throw validation("cat-matrix", "A^m - I is singular");
        // Fix(A^m) = B^{-1} Z^2 / Z^2; with x = y / D, y runs over the
        // subgroup of (Z/D)^2 generated by the columns of adj(B).
        I2 adj;
        adj << B(1, 1), -B(0, 1), -B(1, 0), B(0, 0);
        auto md = [D](long long v) { return ((v % D) + D) % D; };
        const std::array<std::array<long long, 2>, 2> gen{{{md(adj(0, 0)), md(adj(1, 0))},
                                                            {md(adj(0, 1)), md(adj(1, 1))}}};
        std::unordered_set<long long> seen;
        std::vector<std::array<long long, 2>> pts, todo{{0, 0}};
        seen.insert(0);
        while (!todo.empty()) {
            auto y = todo.back();
            todo.pop_back();
            pts.push_back(y);
            for (const auto& g : gen) {
                std::array<long long, 2> z{md(y[0] + g[0]), md(y[1] + g[1])};
                if (seen.insert(z[0] * D + z[1]).second) todo.push_back(z);
            }
        }
        if (static_cast<long long>(pts.size()) != D) throw numerical("registry", "fixed point count mismatch");
        long exact = 0;
        for (const auto& y : pts) {
            std::array<long long, 2> z = y;
            int per = 0;
            do {
                z = {md(a(0, 0) * z[0] + a(0, 1) * z[1]), md(a(1, 0) * z[0] + a(1, 1) * z[1])};
                ++per;
            } while (z != y && per <= m);
            if (per == m) ++exact;
        }
        for (long j = 0; j < exact / m; ++j)
            reg.orbits.push_back({static_cast<double>(m), "period " + std::to_string(m) + " #" + std::to_string(j)});
    }
    return reg;
}

OrbitRegistry free_torus_registry(double c, double T_max)
{
    if (!(c > 0)) throw validation("energy-regime", "c must exceed e0 = 0");
    const double speed = std::sqrt(2 * c);
    const int R = static_cast<int>(std::floor(speed * T_max));
    OrbitRegistry reg;
    for (int i = -R; i <= R; ++i)
        for (int j = -R; j <= R; ++j) {
            if ((i == 0 && j == 0) || std::gcd(std::abs(i), std::abs(j)) != 1) continue;
            const double T = std::hypot(i, j) / speed;
            if (T <= T_max)
                reg.orbits.push_back({T, "family (" + std::to_string(i) + "," + std::to_string(j) + ")"});
        }
    return reg;
}

EntropyEstimate periodic_growth_entropy(const OrbitRegistry& registry, double T_max, const BowenOptions& opt)
{
    std::vector<double> per;
    for (const auto& o : registry.orbits)
        if (o.period > 0 && o.period <= T_max) per.push_back(o.period);
    std::sort(per.begin(), per.end());
    std::vector<double> distinct;
    for (double p : per)
        if (distinct.empty() || p > distinct.back() * (1 + 1e-9)) distinct.push_back(p);
    if (distinct.size() < 5) throw validation("insufficient-data", "fewer than 5 distinct periods");

    std::vector<double> T;
    if (distinct.size() <= 64) {
        T = distinct;
    } else {
        for (int j = 1; j <= 48; ++j) T.push_back(T_max * j / 48);
    }
    BowenCurve cv;
    std::vector<double> y;
    for (double t : T) {
        const long n = std::upper_bound(per.begin(), per.end(), t * (1 + 1e-12)) - per.begin();
        if (n == 0) continue;
        cv.T.push_back(t);
        cv.N.push_back(n);
        cv.greedy.push_back(n);
        cv.resolved.push_back(true);
        y.push_back(std::log(static_cast<double>(n)));
    }
    const LinearRegime r = largest_linear_regime(cv.T, y, cv.resolved, opt.linear_tol, opt.min_regime);
    if (!r.found) throw numerical("regime", "no linear regime in the orbit count");
    cv.first = r.first;
    cv.last = r.last;
    cv.slope = r.slope;
    EntropyEstimate e;
    e.method = "periodic-growth";
    e.value = std::max(0.0, r.slope);
    e.T_min = cv.T.front();
    e.T_max = T_max;
    e.note = std::to_string(per.size()) + " orbits";
    e.curves.push_back(std::move(cv));
    return e;
}

// -------------------------------------------------------------- splitting

namespace {

Mat orthonormal(const Mat& A)
{
    Eigen::HouseholderQR<Mat> qr(A);
    return qr.householderQ() * Mat::Identity(A.rows(), A.cols());
}

// Real bases of the generalized eigenspaces with |mu| > 1 and |mu| < 1.
std::pair<Mat, Mat> expanding_contracting(const Mat& M, int n)
{
    Eigen::EigenSolver<Mat> es(M);
    const CVec ev = es.eigenvalues();
    const Eigen::MatrixXcd V = es.eigenvectors();
    std::vector<Vec> up, down;
    std::vector<bool> used(ev.size(), false);
    for (int i = 0; i < ev.size(); ++i) {
        if (used[i]) continue;
        const double r = std::abs(ev(i));
        if (std::abs(r - 1) < 1e-6) continue;
        auto& dst = r > 1 ? up : down;
        if (std::abs(ev(i).imag()) > 1e-12 * r) {
            dst.push_back(V.col(i).real());
            dst.push_back(V.col(i).imag());
            for (int j = i + 1; j < ev.size(); ++j)
                if (!used[j] && std::abs(ev(j) - std::conj(ev(i))) < 1e-9 * r) {
                    used[j] = true;
                    break;
                }
        } else {
            dst.push_back(V.col(i).real());
        }
        used[i] = true;
    }
    if (static_cast<int>(up.size()) != n || static_cast<int>(down.size()) != n)
        throw SplittingFailure("no-splitting", "monodromy has the wrong number of hyperbolic directions", -1, 0, 0);
    Mat U(M.rows(), n), S(M.rows(), n);
    for (int i = 0; i < n; ++i) {
        U.col(i) = up[i];
        S.col(i) = down[i];
    }
    return {orthonormal(U), orthonormal(S)};
}

double ls_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    return sxy / sxx;
}

}  // namespace

SplittingCertificate verify_splitting(const LagrangianModel& model, const std::vector<ClosedOrbit>& orbits,
                                      double cone_aperture, std::vector<double> t_checks, int samples_per_orbit)
{
    if (orbits.empty()) throw validation("precondition", "empty orbit set");
    if (!(cone_aperture > 0)) throw validation("precondition", "cone aperture must be positive");
    if (t_checks.size() < 2) throw validation("precondition", "need at least two check times");
    std::sort(t_checks.begin(), t_checks.end());
    if (!(t_checks.front() > 0)) throw validation("precondition", "check times must be positive");
    for (size_t i = 0; i < orbits.size(); ++i)
        if (orbits[i].spectral.kind != SpectralKind::Hyperbolic)
            throw validation("precondition", "orbit " + std::to_string(i) + " is " + orbits[i].spectral.name());

    const int d = model.dim();
    const int m = 2 * d, n = d - 1;
    const Mat J = canonical_J(d);
    SplittingCertificate cert;
    cert.aperture = cone_aperture;
    cert.t_checks = t_checks;
    cert.stable_norm.assign(t_checks.size(), 0.0);
    cert.unstable_norm.assign(t_checks.size(), 0.0);

    std::mt19937_64 rng(9);
    std::normal_distribution<double> N(0.0, 1.0);

    for (size_t oi = 0; oi < orbits.size(); ++oi) {
        const ClosedOrbit& o = orbits[oi];
        const double T = o.period;
        cert.orbits.push_back(static_cast<int>(oi));
        std::vector<double> phases, need;
        for (int j = 0; j < samples_per_orbit; ++j) phases.push_back(T * j / samples_per_orbit);
        need = phases;
        need.push_back(T);
        for (double s : phases)
            for (double t : t_checks) {
                const double r = std::fmod(s + t, T);
                need.push_back(r);
            }
        std::sort(need.begin(), need.end());
        need.erase(std::unique(need.begin(), need.end(), [](double a, double b) { return std::abs(a - b) < 1e-13; }),
                   need.end());
        const LinearizedFlow lf = integrate_linearized(model, o.initial, T, 1e-12, 0, need);
        auto M_at = [&](double t) -> const Mat& {
            size_t best = 0;
            for (size_t k = 0; k < need.size(); ++k)
                if (std::abs(need[k] - t) < std::abs(need[best] - t)) best = k;
            return lf.matrices[best];
        };
        const Mat MT = M_at(T);
        const auto [U0, S0] = expanding_contracting(MT, n);

        auto bases = [&](double s) {
            const Mat& Ms = M_at(s);
            return std::pair<Mat, Mat>{orthonormal(Ms * U0), orthonormal(Ms * S0)};
        };

        for (double s : phases) {
            const auto [U, S] = bases(s);
            cert.samples.push_back({static_cast<int>(oi), s, S, U});
            const Mat& Ms = M_at(s);
            const Mat Msinv = -J * Ms.transpose() * J;  // symplectic inverse
            for (size_t ti = 0; ti < t_checks.size(); ++ti) {
                const double t = t_checks[ti];
                const double total = s + t;
                const long k = static_cast<long>(std::floor(total / T + 1e-12));
                const double r = std::fmod(total, T);
                Mat P = Mat::Identity(m, m);
                for (long q = 0; q < k; ++q) P = MT * P;
                const Mat Phi = M_at(r) * P * Msinv;
                const auto [Ur, Sr] = bases(r);

                const Mat PS = Phi * S, PU = Phi * U;
                const double sn = op_norm(PS);
                const double umin = Eigen::JacobiSVD<Mat>(PU).singularValues().minCoeff();
                cert.stable_norm[ti] = std::max(cert.stable_norm[ti], sn);
                cert.unstable_norm[ti] = std::max(cert.unstable_norm[ti], 1.0 / umin);
                const double defU = ((PU - Ur * (Ur.transpose() * PU)).norm()) / PU.norm();
                const double defS = ((PS - Sr * (Sr.transpose() * PS)).norm()) / PS.norm();
                cert.invariance_defect = std::max({cert.invariance_defect, defU, defS});

                // cone { |s-part| <= a |u-part| }: boundary vectors and their images
                const Mat W1 = Ur.transpose() * J * Sr;  // omega(u_i, s_k)
                const Mat W2 = Sr.transpose() * J * Ur;
                const int probes = n == 1 ? 2 : 12;
                for (int pb = 0; pb < probes; ++pb) {
                    Vec al(n), be(n);
                    if (n == 1) {
                        al(0) = 1;
                        be(0) = pb == 0 ? 1 : -1;
                    } else {
                        for (int i = 0; i < n; ++i) {
                            al(i) = N(rng);
                            be(i) = N(rng);
                        }
                        al.normalize();
                        be.normalize();
                    }
                    const Vec xi = U * al + cone_aperture * (S * be);
                    const Vec eta = Phi * xi;
                    // omega kills the flow direction, which is omega-orthogonal to E^s + E^u
                    const Vec a2 = W1.transpose().lu().solve(-(Sr.transpose() * J * eta));
                    const Vec b2 = W2.transpose().lu().solve(-(Ur.transpose() * J * eta));
                    const double ratio = b2.norm() / (a2.norm() * cone_aperture);
                    cert.worst_cone_ratio = std::max(cert.worst_cone_ratio, ratio);
                    if (!(ratio < 1.0))
                        throw SplittingFailure("cone-invariance", "unstable cone not mapped strictly inside itself",
                                               static_cast<int>(oi), s, t);
                }
            }
        }
    }

    std::vector<double> ls, lu;
    for (size_t i = 0; i < t_checks.size(); ++i) {
        ls.push_back(std::log(cert.stable_norm[i]));
        lu.push_back(std::log(cert.unstable_norm[i]));
    }
    cert.lambda = std::min(-ls_slope(t_checks, ls), -ls_slope(t_checks, lu));
    if (!(cert.lambda > 0))
        throw SplittingFailure("no-splitting", "no exponential contraction measured", -1, 0, 0);
    cert.C = 1.0;
    for (size_t i = 0; i < t_checks.size(); ++i)
        cert.C = std::max({cert.C, cert.stable_norm[i] * std::exp(cert.lambda * t_checks[i]),
                           cert.unstable_norm[i] * std::exp(cert.lambda * t_checks[i])});
    return cert;
}

// ----------------------------------------------------------------- export

nlohmann::json estimate_to_json(const EntropyEstimate& e)
{
    nlohmann::json j;
    j["method"] = e.method;
    j["value"] = e.value;
    j["deltas"] = e.deltas;
    j["T_min"] = e.T_min;
    j["T_max"] = e.T_max;
    j["grid_points"] = e.grid_points;
    j["note"] = e.note;
    j["curves"] = nlohmann::json::array();
    for (const auto& c : e.curves) {
        nlohmann::json cj;
        cj["delta"] = c.delta;
        cj["T"] = c.T;
        cj["N"] = c.N;
        cj["greedy"] = c.greedy;
        cj["half_grid"] = c.half;
        cj["resolved"] = c.resolved;
        cj["regime"] = {c.first, c.last};
        cj["slope"] = c.slope;
        j["curves"].push_back(cj);
    }
    return j;
}

nlohmann::json certificate_to_json(const SplittingCertificate& c)
{
    nlohmann::json j;
    j["orbits"] = c.orbits;
    j["aperture"] = c.aperture;
    j["t_checks"] = c.t_checks;
    j["stable_norm"] = c.stable_norm;
    j["unstable_norm"] = c.unstable_norm;
    j["C"] = c.C;
    j["lambda"] = c.lambda;
    j["worst_cone_ratio"] = c.worst_cone_ratio;
    j["invariance_defect"] = c.invariance_defect;
    j["samples"] = c.samples.size();
    return j;
}

std::string spanning_csv(const EntropyEstimate& e)
{
    std::ostringstream s;
    s.precision(17);
    s << "delta,T,N\n";
    for (const auto& c : e.curves)
        for (size_t i = 0; i < c.T.size(); ++i) s << c.delta << ',' << c.T[i] << ',' << c.N[i] << '\n';
    return s.str();
}

}  // namespace tonelab
