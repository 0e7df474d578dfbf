// Brackets for the critical value.  The upper end comes from subsolutions:
// c <= sup_x H(x, c0 + d phi(x)) for any periodic phi (and any constant c0 when
// only contractible loops count).  The lower end is e0, raised whenever a loop
// with negative (L+k)-action turns up in the trial family.

#include "tonelab/model.hpp"
#include "tonelab/optim.hpp"

#include <limits>
#include <random>

namespace tonelab {

namespace {

std::vector<Eigen::VectorXi> half_lattice(int d, int order)
{
    std::vector<Eigen::VectorXi> ks;
    Eigen::VectorXi k = Eigen::VectorXi::Constant(d, -order);
    while (true) {
        int first = 0;
        for (int i = 0; i < d; ++i)
            if (k(i) != 0) {
                first = k(i);
                break;
            }
        if (first > 0) ks.push_back(k);
        int i = d - 1;
        while (i >= 0 && ++k(i) > order) k(i--) = -order;
        if (i < 0) break;
    }
    return ks;
}

struct Subsolution {
    int d;
    bool with_c0;
    std::vector<Eigen::VectorXi> modes;

    int size() const { return (with_c0 ? d : 0) + 2 * static_cast<int>(modes.size()); }

    Vec covector(const Vec& theta, const Vec& x) const
    {
        Vec p = Vec::Zero(d);
        int o = 0;
        if (with_c0) {
            p = theta.head(d);
            o = d;
        }
        for (size_t m = 0; m < modes.size(); ++m) {
            const Vec k = modes[m].cast<double>();
            const double th = kTwoPi * k.dot(x);
            const double a = theta(o + 2 * static_cast<int>(m)), b = theta(o + 2 * static_cast<int>(m) + 1);
            p += kTwoPi * (-a * std::sin(th) + b * std::cos(th)) * k;
        }
        return p;
    }
};

double loop_action(const LagrangianModel& model, const Vec& q, const Vec& wind, int modes, double k)
{
    const int d = model.dim();
    constexpr int N = 64;
    const double T = std::exp(std::clamp(q(q.size() - 1), -4.0, 6.0));
    double sum = 0.0;
    Vec x(d), v(d);
    for (int n = 0; n < N; ++n) {
        const double s = static_cast<double>(n) / N;
        x = q.head(d) + wind * s;
        v = wind;
        for (int j = 1; j <= modes; ++j) {
            const double c = std::cos(kTwoPi * j * s), sn = std::sin(kTwoPi * j * s);
            for (int i = 0; i < d; ++i) {
                const double a = q(d + 2 * ((j - 1) * d + i)), b = q(d + 2 * ((j - 1) * d + i) + 1);
                x(i) += a * c + b * sn;
                v(i) += kTwoPi * j * (-a * sn + b * c);
            }
        }
        sum += lagrangian(model, x, v / T) + k;
    }
    return T * sum / N;
}

}  // namespace

CriticalBracket critical_value_estimate(const LagrangianModel& model, bool contractible_only,
                                        const CriticalBudget& budget)
{
    const int d = model.dim();
    CriticalBracket br;
    br.e0 = e0(model).value;

    Subsolution sub{d, contractible_only, half_lattice(d, budget.subsolution_modes)};
    std::vector<Vec> grid;
    for_each_grid_point(d, budget.grid, [&](const Vec& x) { grid.push_back(x); });
    auto sup_on_grid = [&](const Vec& theta) {
        double m = -std::numeric_limits<double>::infinity();
        for (const Vec& x : grid) m = std::max(m, hamiltonian_value(model, PhaseState::cotangent(x, sub.covector(theta, x))));
        return m;
    };
    const Vec theta0 = Vec::Zero(sub.size());
    MinResult best = nelder_mead(sup_on_grid, theta0, 0.02, budget.subsolution_iters, 1e-9);

    // Refine the sup off-grid near the largest grid values.
    std::vector<std::pair<double, int>> vals;
    for (int i = 0; i < static_cast<int>(grid.size()); ++i)
        vals.push_back({hamiltonian_value(model, PhaseState::cotangent(grid[i], sub.covector(best.x, grid[i]))), i});
    std::sort(vals.begin(), vals.end(), [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    double upper = vals.front().first;
    for (size_t t = 0; t < std::min<size_t>(3, vals.size()); ++t) {
        auto negH = [&](const Vec& x) { return -hamiltonian_value(model, PhaseState::cotangent(x, sub.covector(best.x, x))); };
        MinResult r = nelder_mead(negH, grid[vals[t].second], 0.5 / budget.grid, 200, 1e-13);
        upper = std::max(upper, -r.f);
    }
    br.upper = std::max(upper, br.e0);

    // Lower end.
    double lower = br.e0;
    if (br.upper - lower > budget.width) {
        std::mt19937 rng(budget.seed);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        std::vector<Vec> winds{Vec::Zero(d)};
        if (!contractible_only)
            for (int i = 0; i < d; ++i) {
                Vec w = Vec::Zero(d);
                w(i) = 1.0;
                winds.push_back(w);
            }
        const int nq = d + 2 * budget.loop_modes * d + 1;
        std::vector<Vec> starts;
        for (int s = 0; s < budget.loop_starts; ++s) {
            Vec q(nq);
            for (int i = 0; i < nq; ++i) q(i) = 0.25 * U(rng);
            q(nq - 1) = 1.5 * U(rng);
            starts.push_back(q);
        }
        auto negative_loop = [&](double k) {
            for (const Vec& w : winds)
                for (const Vec& q0 : starts) {
                    auto f = [&](const Vec& q) { return loop_action(model, q, w, budget.loop_modes, k); };
                    if (nelder_mead(f, q0, 0.1, budget.loop_iters, 1e-8).f < -1e-12) return true;
                }
            return false;
        };
        double lo = lower, hi = br.upper;
        for (int it = 0; it < budget.bisection_steps && hi - lo > 0.25 * budget.width; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (negative_loop(mid)) lo = mid;
            else hi = mid;
        }
        lower = lo;
    }
    br.lower = lower;
    if (br.upper - br.lower > budget.width) {
        br.warning = true;
        br.note = "bracket wider than requested; budget exhausted";
    }
    return br;
}

}  // namespace tonelab
