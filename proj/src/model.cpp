#include "tonelab/model.hpp"

#include <functional>
#include <limits>
#include <sstream>

namespace tonelab {

namespace {

void check_finite(double v, const char* what)
{
    if (!std::isfinite(v)) throw numerical("model-domain", std::string("non-finite ") + what);
}

Mat invert_metric(const Mat& G, const Vec& x)
{
    Eigen::LLT<Mat> llt(G);
    if (llt.info() != Eigen::Success) {
        std::ostringstream os;
        os << "metric not positive definite at x = " << x.transpose();
        throw ValidationError("convexity-violation", os.str());
    }
    return llt.solve(Mat::Identity(G.rows(), G.cols()));
}

}  // namespace

TorusSpace::TorusSpace(int d) : dim(d)
{
    if (d < 2) throw validation("dimension", "torus dimension must be at least 2");
}

LagrangianModel::LagrangianModel(TorusSpace space, std::shared_ptr<const MetricField> metric,
                                 std::shared_ptr<const CovectorField> magnetic,
                                 std::shared_ptr<const ScalarField> potential, std::string name)
    : space_(space), metric_(std::move(metric)), magnetic_(std::move(magnetic)), name_(std::move(name))
{
    if (!metric_) metric_ = std::make_shared<TrigMetric>(TrigMetric::identity(space_.dim));
    if (metric_->dim() != space_.dim) throw validation("dimension", "metric dimension mismatch");
    if (magnetic_ && magnetic_->dim() != space_.dim) throw validation("dimension", "magnetic dimension mismatch");
    if (potential) {
        if (potential->dim() != space_.dim) throw validation("dimension", "potential dimension mismatch");
        potentials_.push_back(std::move(potential));
    }
}

PointJet LagrangianModel::jet(const Vec& x) const
{
    const int d = dim();
    PointJet j;
    MetricJet m = metric_->eval(x);
    j.G = std::move(m.G);
    j.dG = std::move(m.dG);
    j.d2G = std::move(m.d2G);
    j.Ginv = invert_metric(j.G, x);
    if (magnetic_) {
        CovectorJet c = magnetic_->eval(x);
        j.A = std::move(c.A);
        j.DA = std::move(c.DA);
        j.D2A = std::move(c.D2A);
    } else {
        j.A = Vec::Zero(d);
        j.DA = Mat::Zero(d, d);
        j.D2A.assign(static_cast<size_t>(d), Mat::Zero(d, d));
    }
    j.V = 0.0;
    j.dV = Vec::Zero(d);
    j.d2V = Mat::Zero(d, d);
    for (const auto& u : potentials_) {
        const ScalarJet s = u->eval(x);
        j.V += s.value;
        j.dV += s.grad;
        j.d2V += s.hess;
    }
    check_finite(j.V, "potential");
    return j;
}

Mat LagrangianModel::metric(const Vec& x) const { return metric_->value(x); }

double LagrangianModel::potential(const Vec& x) const
{
    double v = 0.0;
    for (const auto& u : potentials_) v += u->value(x);
    return v;
}

ScalarJet LagrangianModel::potential_jet(const Vec& x) const
{
    ScalarJet j{0.0, Vec::Zero(dim()), Mat::Zero(dim(), dim())};
    for (const auto& u : potentials_) {
        const ScalarJet s = u->eval(x);
        j.value += s.value;
        j.grad += s.grad;
        j.hess += s.hess;
    }
    return j;
}

LagrangianModel LagrangianModel::with_potential(std::shared_ptr<const ScalarField> u, const std::string& tag) const
{
    if (!u || u->dim() != dim()) throw validation("dimension", "perturbing potential dimension mismatch");
    LagrangianModel m = *this;
    m.potentials_.push_back(std::move(u));
    m.name_ += tag;
    return m;
}

bool LagrangianModel::limits_steps() const
{
    for (const auto& u : potentials_)
        if (u->limits_steps()) return true;
    return false;
}

double LagrangianModel::step_limit(const Vec& x, double speed) const
{
    double h = std::numeric_limits<double>::infinity();
    for (const auto& u : potentials_)
        if (u->limits_steps()) h = std::min(h, u->step_limit(x, speed));
    return h;
}

json LagrangianModel::to_json() const
{
    json j;
    j["dim"] = dim();
    j["metric"] = metric_->to_json();
    j["magnetic"] = magnetic_ ? magnetic_->to_json() : json(nullptr);
    if (potentials_.size() == 1) {
        j["potential"] = potentials_[0]->to_json();
    } else {
        json arr = json::array();
        for (const auto& u : potentials_) arr.push_back(u->to_json());
        j["potential"] = {{"sum", arr}};
    }
    j["name"] = name_;
    return j;
}

LagrangianModel LagrangianModel::from_json(const json& j)
{
    if (!j.contains("dim")) throw validation("config", "model.dim missing");
    const int d = j.at("dim").get<int>();
    TorusSpace space(d);
    std::shared_ptr<const MetricField> metric;
    if (j.contains("metric") && !j.at("metric").is_null())
        metric = std::make_shared<TrigMetric>(TrigMetric::from_json(d, j.at("metric")));
    std::shared_ptr<const CovectorField> magnetic;
    if (j.contains("magnetic") && !j.at("magnetic").is_null())
        magnetic = std::make_shared<TrigCovector>(TrigCovector::from_json(d, j.at("magnetic")));
    std::shared_ptr<const ScalarField> pot;
    std::vector<std::shared_ptr<const ScalarField>> extra;
    if (j.contains("potential") && !j.at("potential").is_null()) {
        const json& pj = j.at("potential");
        if (pj.is_object() && pj.contains("sum")) {
            for (const auto& t : pj.at("sum")) extra.push_back(std::make_shared<TrigSeries>(TrigSeries::from_json(d, t)));
        } else {
            pot = std::make_shared<TrigSeries>(TrigSeries::from_json(d, pj));
        }
    }
    LagrangianModel m(space, metric, magnetic, pot, j.value("name", std::string("custom")));
    for (auto& u : extra) m.potentials_.push_back(u);
    return m;
}

Vec PhaseState::stacked() const
{
    Vec z(x.size() + y.size());
    z << x, y;
    return z;
}

PhaseState PhaseState::from_stacked(const Vec& z, Rep rep)
{
    const int d = static_cast<int>(z.size()) / 2;
    return {z.head(d), z.tail(d), rep};
}

// ---------------------------------------------------------------------------

HamJet hamiltonian_jet(const LagrangianModel& model, const Vec& x, const Vec& p)
{
    return hamiltonian_jet(model, model.jet(x), p);
}

HamJet hamiltonian_jet(const LagrangianModel& model, const PointJet& j, const Vec& p)
{
    const int d = model.dim();
    HamJet h;
    const Vec w = p - j.A;
    h.v = j.Ginv * w;
    h.H = 0.5 * w.dot(h.v) + j.V;
    h.Hp = h.v;
    h.Hpp = j.Ginv;
    h.Hpx.resize(d, d);
    for (int l = 0; l < d; ++l) h.Hpx.col(l) = -j.Ginv * (j.dG[l] * h.v + j.DA.col(l));
    h.Hx.resize(d);
    for (int k = 0; k < d; ++k) h.Hx(k) = -h.v.dot(j.DA.col(k)) - 0.5 * h.v.dot(j.dG[k] * h.v) + j.dV(k);
    h.Hxx.resize(d, d);
    Vec d2Akl(d);
    for (int k = 0; k < d; ++k) {
        const Vec Gkv = j.dG[k] * h.v;
        for (int l = k; l < d; ++l) {
            for (int i = 0; i < d; ++i) d2Akl(i) = j.D2A[i](k, l);
            const Vec dvl = h.Hpx.col(l);
            const double val = -dvl.dot(j.DA.col(k)) - h.v.dot(d2Akl) - dvl.dot(Gkv) -
                               0.5 * h.v.dot(j.d2G[k][l] * h.v) + j.d2V(k, l);
            h.Hxx(k, l) = h.Hxx(l, k) = val;
        }
    }
    check_finite(h.H, "hamiltonian");
    return h;
}

double lagrangian(const LagrangianModel& model, const Vec& x, const Vec& v)
{
    const Mat G = model.metric(x);
    double L = 0.5 * v.dot(G * v) - model.potential(x);
    if (model.has_magnetic()) L += model.magnetic_field()->eval(x).A.dot(v);
    check_finite(L, "lagrangian");
    return L;
}

double energy(const LagrangianModel& model, const PhaseState& s)
{
    if (s.rep != Rep::Tangent) throw validation("representation", "energy expects a tangent state");
    // E = dL/dv . v - L, evaluated literally rather than through the closed form.
    const Mat G = model.metric(s.x);
    Vec dLdv = G * s.y;
    if (model.has_magnetic()) dLdv += model.magnetic_field()->eval(s.x).A;
    const double E = dLdv.dot(s.y) - lagrangian(model, s.x, s.y);
    check_finite(E, "energy");
    return E;
}

PhaseState legendre(const LagrangianModel& model, const PhaseState& s)
{
    const Mat G = model.metric(s.x);
    const Vec A = model.has_magnetic() ? model.magnetic_field()->eval(s.x).A : Vec::Zero(model.dim());
    if (s.rep == Rep::Tangent) return PhaseState::cotangent(s.x, G * s.y + A);
    Eigen::LLT<Mat> llt(G);
    if (llt.info() != Eigen::Success) throw ValidationError("convexity-violation", "singular metric in Legendre map");
    return PhaseState::tangent(s.x, llt.solve(s.y - A));
}

PhaseState to_cotangent(const LagrangianModel& model, const PhaseState& s)
{
    return s.rep == Rep::Cotangent ? s : legendre(model, s);
}

PhaseState to_tangent(const LagrangianModel& model, const PhaseState& s)
{
    return s.rep == Rep::Tangent ? s : legendre(model, s);
}

double hamiltonian_value(const LagrangianModel& model, const PhaseState& s)
{
    if (s.rep != Rep::Cotangent) throw validation("representation", "hamiltonian expects a cotangent state");
    const Mat G = model.metric(s.x);
    const Vec A = model.has_magnetic() ? model.magnetic_field()->eval(s.x).A : Vec::Zero(model.dim());
    Eigen::LLT<Mat> llt(G);
    if (llt.info() != Eigen::Success) throw ValidationError("convexity-violation", "singular metric in hamiltonian");
    const Vec w = s.y - A;
    const double H = 0.5 * w.dot(llt.solve(w)) + model.potential(s.x);
    check_finite(H, "hamiltonian");
    return H;
}

double fenchel_gap(const LagrangianModel& model, const Vec& x, const Vec& v, const Vec& p)
{
    return hamiltonian_value(model, PhaseState::cotangent(x, p)) + lagrangian(model, x, v) - p.dot(v);
}

// ---------------------------------------------------------------------------

namespace {

// Grid maximum of f followed by Newton/gradient polish using the potential jet
// (E(x,0) and -L(x,0) both have derivative data equal to that of V).
std::pair<double, Vec> polished_max(const LagrangianModel& model, int grid, const std::function<double(const Vec&)>& f)
{
    const int d = model.dim();
    double best = -std::numeric_limits<double>::infinity();
    Vec arg = Vec::Zero(d);
    for_each_grid_point(d, grid, [&](const Vec& x) {
        const double v = f(x);
        if (v > best) {  // strict: first in lexicographic order wins ties
            best = v;
            arg = x;
        }
    });
    Vec x = arg;
    double fx = best;
    for (int it = 0; it < 60; ++it) {
        const ScalarJet j = model.potential_jet(x);
        if (j.grad.norm() < 1e-14) break;
        Vec step;
        Eigen::LLT<Mat> llt(-j.hess);
        if (llt.info() == Eigen::Success) step = llt.solve(j.grad);
        else step = j.grad / (1.0 + j.hess.norm());
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
            const Vec xn = x + t * step;
            const double fn = f(xn);
            if (fn >= fx) {
                moved = fn > fx || t == 1.0;
                x = xn;
                fx = fn;
                break;
            }
        }
        if (!moved) break;
    }
    return {fx, wrap01(x)};
}

}  // namespace

E0Result e0(const LagrangianModel& model, int grid)
{
    const int d = model.dim();
    const Vec zero = Vec::Zero(d);
    E0Result r;
    auto [ve, xe] = polished_max(model, grid, [&](const Vec& x) { return energy(model, PhaseState::tangent(x, zero)); });
    auto [vl, xl] = polished_max(model, grid, [&](const Vec& x) { return -lagrangian(model, x, zero); });
    r.value = ve;
    r.argmax = xe;
    r.value_from_lagrangian = vl;
    r.formula_gap = std::abs(ve - vl);
    if (r.formula_gap > 1e-10) throw numerical("e0-mismatch", "the two expressions for e0 disagree");
    return r;
}

// ---------------------------------------------------------------------------

namespace {

// Periodic cubic spline through (t_i, y_i), y_N = y_0.  Returns the second
// derivatives at the knots (M_N = M_0 implied).
Vec periodic_spline_moments(const std::vector<double>& t, const std::vector<double>& y)
{
    const int N = static_cast<int>(t.size()) - 1;
    Mat A = Mat::Zero(N, N);
    Vec b(N);
    for (int i = 0; i < N; ++i) {
        const int im = (i + N - 1) % N;
        const double hm = (i == 0) ? t[N] - t[N - 1] : t[i] - t[i - 1];
        const double hi = t[i + 1] - t[i];
        const double ym = (i == 0) ? y[N - 1] : y[i - 1];
        A(i, im) += hm;
        A(i, i) += 2.0 * (hm + hi);
        A(i, (i + 1) % N) += hi;
        b(i) = 6.0 * ((y[i + 1] - y[i]) / hi - (y[i] - ym) / hm);
    }
    return A.fullPivLu().solve(b);
}

struct PeriodicCubic {
    std::vector<double> t;
    std::vector<std::vector<double>> y;  // per coordinate, drift removed
    std::vector<Vec> M;
    Vec drift;
    double T0 = 0.0, T = 0.0;

    void eval(int seg, double s, Vec& x, Vec& v) const
    {
        const int d = static_cast<int>(y.size());
        const double h = t[seg + 1] - t[seg];
        const double a = (t[seg + 1] - s) / h, b = (s - t[seg]) / h;
        const int N = static_cast<int>(t.size()) - 1;
        for (int c = 0; c < d; ++c) {
            const double M0 = M[c](seg), M1 = M[c]((seg + 1) % N);
            const double y0 = y[c][seg], y1 = y[c][seg + 1];
            x(c) = a * y0 + b * y1 + ((a * a * a - a) * M0 + (b * b * b - b) * M1) * h * h / 6.0 +
                   drift(c) * (s - T0) / T;
            v(c) = (y1 - y0) / h + (-(3 * a * a - 1) * M0 + (3 * b * b - 1) * M1) * h / 6.0 + drift(c) / T;
        }
    }
};

double gl_integral(const LagrangianModel& model, const PeriodicCubic& pc, double k, int split)
{
    static const double gx[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                 0.9061798459386640};
    static const double gw[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                 0.4786286704993665, 0.2369268850561891};
    const int d = static_cast<int>(pc.y.size());
    Vec x(d), v(d);
    double sum = 0.0;
    for (size_t seg = 0; seg + 1 < pc.t.size(); ++seg) {
        const double a = pc.t[seg], b = pc.t[seg + 1];
        const double h = (b - a) / split;
        for (int p = 0; p < split; ++p) {
            const double lo = a + p * h;
            for (int q = 0; q < 5; ++q) {
                const double s = lo + 0.5 * h * (gx[q] + 1.0);
                pc.eval(static_cast<int>(seg), s, x, v);
                sum += 0.5 * h * gw[q] * (lagrangian(model, x, v) + k);
            }
        }
    }
    return sum;
}

}  // namespace

ActionResult action(const LagrangianModel& model, const LoopPath& path, double k)
{
    const int d = model.dim();
    const size_t n = path.samples.size();
    if (n < 3 || path.times.size() != n) throw validation("loop-path", "need at least 3 samples with matching times");
    for (size_t i = 1; i < n; ++i)
        if (!(path.times[i] > path.times[i - 1])) throw validation("loop-path", "times must increase strictly");
    const double T = path.times.back() - path.times.front();
    if (!(T > 0.0)) throw validation("loop-path", "degenerate path of zero duration");
    if (path.winding.size() != d) throw validation("loop-path", "winding has wrong dimension");

    // Lift: consecutive jumps taken in [-1/2, 1/2).
    std::vector<Vec> lift(n);
    lift[0] = path.samples[0];
    for (size_t i = 1; i < n; ++i) lift[i] = lift[i - 1] + wrap_centered(path.samples[i] - path.samples[i - 1]);
    const Vec disp = lift.back() - lift.front();
    if ((disp - path.winding.cast<double>()).norm() > 1e-9)
        throw validation("loop-path", "lift displacement does not match the winding (path not closed)");

    PeriodicCubic pc;
    pc.t = path.times;
    pc.T0 = path.times.front();
    pc.T = T;
    pc.drift = path.winding.cast<double>();
    pc.y.assign(static_cast<size_t>(d), std::vector<double>(n));
    for (size_t i = 0; i < n; ++i) {
        const Vec yi = lift[i] - pc.drift * (path.times[i] - pc.T0) / T;
        for (int c = 0; c < d; ++c) pc.y[c][i] = yi(c);
    }
    for (int c = 0; c < d; ++c) {
        pc.y[c][n - 1] = pc.y[c][0];
        pc.M.push_back(periodic_spline_moments(pc.t, pc.y[c]));
    }
    ActionResult r;
    r.value = gl_integral(model, pc, k, 2);
    const double coarse = gl_integral(model, pc, k, 1);
    r.refinement_change = std::abs(r.value - coarse);
    r.accuracy_warning = r.refinement_change >= 1e-8;
    return r;
}

// ---------------------------------------------------------------------------

TonelliReport tonelli_check(const LagrangianModel& model, int grid)
{
    if (grid < 8) throw validation("grid", "tonelli_check needs at least 8 points per axis");
    TonelliReport r;
    r.margin = std::numeric_limits<double>::infinity();
    for_each_grid_point(model.dim(), grid, [&](const Vec& x) {
        Eigen::SelfAdjointEigenSolver<Mat> es(model.metric(x), Eigen::EigenvaluesOnly);
        const double m = es.eigenvalues()(0);
        if (m < r.margin) {
            r.margin = m;
            r.argmin = x;
        }
        if (!(m > 1e-12)) r.offenders.push_back(x);
    });
    r.pass = r.offenders.empty();
    if (!r.pass) {
        std::ostringstream os;
        os << r.offenders.size() << " grid points with non-positive metric, first at x = "
           << r.offenders.front().transpose();
        throw ConvexityViolation(os.str(), r);
    }
    return r;
}

}  // namespace tonelab
