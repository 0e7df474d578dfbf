#include "tonelab/fields.hpp"

#include "tonelab/errors.hpp"

namespace tonelab {

TrigSeries& TrigSeries::add(const Eigen::VectorXi& k, double a, double b)
{
    if (k.size() != d_) throw validation("dimension", "trig term wave vector has wrong length");
    terms_.push_back({k, a, b});
    return *this;
}

TrigSeries& TrigSeries::add(std::initializer_list<int> k, double a, double b)
{
    Eigen::VectorXi kv(static_cast<int>(k.size()));
    int i = 0;
    for (int ki : k) kv(i++) = ki;
    return add(kv, a, b);
}

bool TrigSeries::is_zero() const
{
    if (constant_ != 0.0) return false;
    for (const auto& t : terms_)
        if (t.a != 0.0 || t.b != 0.0) return false;
    return true;
}

double TrigSeries::value(const Vec& x) const
{
    double f = constant_;
    for (const auto& t : terms_) {
        const double th = kTwoPi * t.k.cast<double>().dot(x);
        f += t.a * std::cos(th) + t.b * std::sin(th);
    }
    return f;
}

ScalarJet TrigSeries::eval(const Vec& x) const
{
    ScalarJet j;
    j.value = constant_;
    j.grad = Vec::Zero(d_);
    j.hess = Mat::Zero(d_, d_);
    for (const auto& t : terms_) {
        const Vec k = t.k.cast<double>();
        const double th = kTwoPi * k.dot(x);
        const double c = std::cos(th), s = std::sin(th);
        const double f = t.a * c + t.b * s;
        const double fp = -t.a * s + t.b * c;
        j.value += f;
        j.grad += kTwoPi * fp * k;
        j.hess -= (kTwoPi * kTwoPi * f) * (k * k.transpose());
    }
    return j;
}

json TrigSeries::to_json() const
{
    json terms = json::array();
    for (const auto& t : terms_) {
        std::vector<int> k(t.k.data(), t.k.data() + t.k.size());
        terms.push_back({{"k", k}, {"cos", t.a}, {"sin", t.b}});
    }
    return {{"constant", constant_}, {"terms", terms}};
}

TrigSeries TrigSeries::from_json(int d, const json& j)
{
    if (j.is_number()) return TrigSeries(d, j.get<double>());
    TrigSeries s(d, j.value("constant", 0.0));
    if (j.contains("terms")) {
        for (const auto& t : j.at("terms")) {
            const auto k = t.at("k").get<std::vector<int>>();
            if (static_cast<int>(k.size()) != d)
                throw validation("config", "wave vector length differs from dim");
            Eigen::VectorXi kv(d);
            for (int i = 0; i < d; ++i) kv(i) = k[i];
            s.add(kv, t.value("cos", 0.0), t.value("sin", 0.0));
        }
    }
    return s;
}

// ---------------------------------------------------------------------------

TrigMetric::TrigMetric(int d) : d_(d), entries_(static_cast<size_t>(d * d), TrigSeries(d)) {}

TrigMetric TrigMetric::identity(int d)
{
    TrigMetric m(d);
    for (int i = 0; i < d; ++i) m.set(i, i, TrigSeries(d, 1.0));
    return m;
}

TrigMetric TrigMetric::constant(const Mat& G)
{
    const int d = static_cast<int>(G.rows());
    TrigMetric m(d);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) m.set(i, j, TrigSeries(d, 0.5 * (G(i, j) + G(j, i))));
    return m;
}

void TrigMetric::set(int i, int j, const TrigSeries& s)
{
    entries_[static_cast<size_t>(i * d_ + j)] = s;
    entries_[static_cast<size_t>(j * d_ + i)] = s;
}

const TrigSeries& TrigMetric::entry(int i, int j) const
{
    return entries_[static_cast<size_t>(i * d_ + j)];
}

Mat TrigMetric::value(const Vec& x) const
{
    Mat G(d_, d_);
    for (int i = 0; i < d_; ++i)
        for (int j = i; j < d_; ++j) G(i, j) = G(j, i) = entry(i, j).value(x);
    return G;
}

MetricJet TrigMetric::eval(const Vec& x) const
{
    MetricJet m;
    m.G = Mat::Zero(d_, d_);
    m.dG.assign(static_cast<size_t>(d_), Mat::Zero(d_, d_));
    m.d2G.assign(static_cast<size_t>(d_), std::vector<Mat>(static_cast<size_t>(d_), Mat::Zero(d_, d_)));
    for (int i = 0; i < d_; ++i) {
        for (int j = i; j < d_; ++j) {
            const TrigSeries& s = entry(i, j);
            if (s.terms().empty()) {
                m.G(i, j) = m.G(j, i) = s.constant();
                continue;
            }
            const ScalarJet e = s.eval(x);
            m.G(i, j) = m.G(j, i) = e.value;
            for (int k = 0; k < d_; ++k) {
                m.dG[k](i, j) = m.dG[k](j, i) = e.grad(k);
                for (int l = 0; l < d_; ++l) m.d2G[k][l](i, j) = m.d2G[k][l](j, i) = e.hess(k, l);
            }
        }
    }
    return m;
}

json TrigMetric::to_json() const
{
    json rows = json::array();
    for (int i = 0; i < d_; ++i) {
        json row = json::array();
        for (int j = 0; j < d_; ++j) row.push_back(entry(i, j).to_json());
        rows.push_back(row);
    }
    return {{"entries", rows}};
}

TrigMetric TrigMetric::from_json(int d, const json& j)
{
    if (j.is_string() && j.get<std::string>() == "identity") return identity(d);
    TrigMetric m(d);
    const json& rows = j.contains("entries") ? j.at("entries") : j;
    if (!rows.is_array() || static_cast<int>(rows.size()) != d)
        throw validation("config", "metric must have dim rows");
    for (int i = 0; i < d; ++i) {
        if (static_cast<int>(rows[i].size()) != d) throw validation("config", "metric row length differs from dim");
        for (int jj = i; jj < d; ++jj) m.set(i, jj, TrigSeries::from_json(d, rows[i][jj]));
    }
    return m;
}

// ---------------------------------------------------------------------------

TrigCovector::TrigCovector(int d) : d_(d), comps_(static_cast<size_t>(d), TrigSeries(d)) {}

void TrigCovector::set(int i, const TrigSeries& s) { comps_[static_cast<size_t>(i)] = s; }

CovectorJet TrigCovector::eval(const Vec& x) const
{
    CovectorJet c;
    c.A = Vec::Zero(d_);
    c.DA = Mat::Zero(d_, d_);
    c.D2A.assign(static_cast<size_t>(d_), Mat::Zero(d_, d_));
    for (int i = 0; i < d_; ++i) {
        if (comps_[i].is_zero()) continue;
        const ScalarJet e = comps_[i].eval(x);
        c.A(i) = e.value;
        c.DA.row(i) = e.grad.transpose();
        c.D2A[i] = e.hess;
    }
    return c;
}

json TrigCovector::to_json() const
{
    json arr = json::array();
    for (const auto& s : comps_) arr.push_back(s.to_json());
    return arr;
}

TrigCovector TrigCovector::from_json(int d, const json& j)
{
    TrigCovector c(d);
    if (j.is_null()) return c;
    if (!j.is_array() || static_cast<int>(j.size()) != d)
        throw validation("config", "magnetic term must list dim components");
    for (int i = 0; i < d; ++i) c.set(i, TrigSeries::from_json(d, j[i]));
    return c;
}

}  // namespace tonelab
