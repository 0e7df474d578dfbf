#include "tonelab/families.hpp"

#include <sstream>

namespace tonelab {

namespace {

Mat monodromy(const std::vector<Mat>& seq, size_t phase)
{
    const size_t p = seq.size();
    Mat M = Mat::Identity(seq[0].rows(), seq[0].cols());
    for (size_t i = 0; i < p; ++i) M = seq[(phase + i) % p] * M;
    return M;
}

Mat orthonormal(const Mat& V, int rank)
{
    Eigen::JacobiSVD<Mat> svd(V, Eigen::ComputeThinU);
    return svd.matrixU().leftCols(rank);
}

bool family_hyperbolic(const PeriodicFamily& f)
{
    for (const auto& s : f.sequences) {
        const Mat M = monodromy(s, 0);
        if (symplectic_defect(M) > 1e-6) return false;
        if (classify_spectrum(M, 1e-7, 1e300).kind != SpectralKind::Hyperbolic) return false;
    }
    return true;
}

}  // namespace

double PeriodicFamily::bound() const
{
    double q = 0.0;
    for (const auto& s : sequences)
        for (const Mat& m : s) q = std::max(q, op_norm(m));
    return q;
}

PeriodicFamily PeriodicFamily::from_json(const nlohmann::json& j)
{
    PeriodicFamily f;
    for (const auto& seq : j.at("sequences")) {
        std::vector<Mat> s;
        for (const auto& m : seq) {
            const size_t r = m.size();
            Mat A(r, r);
            for (size_t i = 0; i < r; ++i) {
                if (m[i].size() != r) throw validation("config", "family matrices must be square");
                for (size_t k = 0; k < r; ++k) A(i, k) = m[i][k].get<double>();
            }
            s.push_back(A);
        }
        if (s.empty()) throw validation("config", "empty sequence in family");
        f.sequences.push_back(s);
    }
    return f;
}

nlohmann::json PeriodicFamily::to_json() const
{
    nlohmann::json j;
    j["sequences"] = nlohmann::json::array();
    for (const auto& s : sequences) {
        nlohmann::json seq = nlohmann::json::array();
        for (const Mat& m : s) {
            nlohmann::json rows = nlohmann::json::array();
            for (int i = 0; i < m.rows(); ++i) {
                std::vector<double> r(m.cols());
                for (int k = 0; k < m.cols(); ++k) r[k] = m(i, k);
                rows.push_back(r);
            }
            seq.push_back(rows);
        }
        j["sequences"].push_back(seq);
    }
    return j;
}

Splitting invariant_splitting(const std::vector<Mat>& seq, double tol)
{
    const Mat M = monodromy(seq, 0);
    const int m = static_cast<int>(M.rows());
    Eigen::EigenSolver<Mat> es(M);
    if (es.info() != Eigen::Success) throw numerical("eigen", "monodromy eigen-decomposition failed");
    Eigen::MatrixXcd Vs(m, 0), Vu(m, 0);
    for (int i = 0; i < m; ++i) {
        const double r = std::abs(es.eigenvalues()(i));
        if (std::abs(r - 1.0) < tol) {
            std::ostringstream os;
            os << "monodromy multiplier " << es.eigenvalues()(i) << " on the unit circle";
            throw numerical("not-hyperbolic", os.str());
        }
        Eigen::MatrixXcd& V = r < 1 ? Vs : Vu;
        V.conservativeResize(m, V.cols() + 1);
        V.col(V.cols() - 1) = es.eigenvectors().col(i);
    }
    auto real_span = [&](const Eigen::MatrixXcd& V) {
        Mat R(m, 2 * V.cols());
        R << V.real(), V.imag();
        return orthonormal(R, static_cast<int>(V.cols()));
    };
    Splitting s;
    s.stable.push_back(real_span(Vs));
    s.unstable.push_back(real_span(Vu));
    for (size_t j = 0; j + 1 < seq.size(); ++j) {
        s.stable.push_back(orthonormal(seq[j] * s.stable.back(), static_cast<int>(Vs.cols())));
        s.unstable.push_back(orthonormal(seq[j] * s.unstable.back(), static_cast<int>(Vu.cols())));
    }
    return s;
}

HyperbolicityReport check_uniform_hyperbolicity(const PeriodicFamily& family, double K, double lambda, int periods)
{
    if (!(lambda > 0.0 && lambda < 1.0)) throw validation("lambda", "lambda must lie in (0, 1)");
    if (!(K > 0.0)) throw validation("K", "K must be positive");
    HyperbolicityReport rep;
    rep.pass = true;
    rep.worst_margin = std::numeric_limits<double>::infinity();
    for (size_t a = 0; a < family.sequences.size(); ++a) {
        const auto& seq = family.sequences[a];
        Splitting sp;
        try {
            sp = invariant_splitting(seq);
        } catch (const NumericalError& e) {
            if (e.kind() != "not-hyperbolic") throw;
            rep.pass = false;
            rep.failure = "not-hyperbolic";
            rep.offending_sequence = static_cast<int>(a);
            rep.min_K = std::numeric_limits<double>::infinity();
            return rep;
        }
        const size_t p = seq.size();
        const int mmax = periods * static_cast<int>(p);
        for (size_t j = 0; j < p; ++j) {
            Mat P = Mat::Identity(seq[0].rows(), seq[0].cols());
            for (int m = 1; m <= mmax; ++m) {
                P = seq[(j + m - 1) % p] * P;
                const size_t jm = (j + m) % p;
                const Mat Rs = sp.stable[jm].transpose() * P * sp.stable[j];
                const Mat Ru = sp.unstable[jm].transpose() * P * sp.unstable[j];
                const double ns = op_norm(Rs);
                const double nu = op_norm(Ru.inverse());
                const double bound = K * std::pow(lambda, m);
                for (double nrm : {ns, nu}) {
                    rep.min_K = std::max(rep.min_K, nrm / std::pow(lambda, m));
                    rep.worst_margin = std::min(rep.worst_margin, bound - nrm);
                    if (nrm > bound * (1.0 + 1e-12) && rep.pass) {
                        rep.pass = false;
                        rep.failure = "bound";
                        rep.offending_sequence = static_cast<int>(a);
                        rep.offending_phase = static_cast<int>(j);
                        rep.offending_m = m;
                    }
                }
            }
        }
        rep.witnesses.push_back(std::move(sp));
    }
    return rep;
}

StabilityProbe stable_hyperbolicity_probe(const PeriodicFamily& family, double epsilon, int trials, unsigned seed)
{
    StabilityProbe pr;
    pr.input_hyperbolic = family_hyperbolic(family);
    pr.trials = trials;
    if (trials <= 0) return pr;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N01;
    std::uniform_real_distribution<double> U01;
    int ok = 0;
    for (int t = 0; t < trials; ++t) {
        PeriodicFamily eta = family;
        double dist = 0.0;
        const double target = epsilon * U01(rng);
        for (auto& seq : eta.sequences)
            for (Mat& xi : seq) {
                const int m = static_cast<int>(xi.rows());
                Mat S(m, m);
                for (int i = 0; i < m; ++i)
                    for (int k = 0; k < m; ++k) S(i, k) = N01(rng);
                const Mat X = canonical_J(m / 2) * sym(S);
                // scale so that |xi - xi exp(sX)| hits the target (bisection, it is monotone enough)
                auto gap = [&](double s) { return op_norm(xi - xi * expm(s * X)); };
                double lo = 0.0, hi = 1.0;
                while (gap(hi) < target && hi < 1e6) hi *= 2.0;
                for (int it = 0; it < 50 && target > 0.0; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (gap(mid) < target ? lo : hi) = mid;
                }
                const Mat out = xi * expm(lo * X);
                dist = std::max(dist, op_norm(out - xi));
                xi = out;
            }
        if (family_hyperbolic(eta)) ++ok;
        else pr.smallest_destabilizing = std::min(pr.smallest_destabilizing, dist);
    }
    pr.fraction_hyperbolic = static_cast<double>(ok) / trials;
    return pr;
}

}  // namespace tonelab
