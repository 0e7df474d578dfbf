#pragma once

#include "tonelab/linalg.hpp"

#include <json.hpp>

#include <limits>
#include <memory>
#include <vector>

namespace tonelab {

using json = nlohmann::json;

// Value, gradient and Hessian of a scalar field at one point.
struct ScalarJet {
    double value = 0.0;
    Vec grad;
    Mat hess;
};

// G, its first partials dG[k] = dG/dx_k and second partials d2G[k][l].
struct MetricJet {
    Mat G;
    std::vector<Mat> dG;
    std::vector<std::vector<Mat>> d2G;
};

// A and its derivatives: DA(i,j) = dA_i/dx_j, D2A[i](j,k) = d^2 A_i / dx_j dx_k.
struct CovectorJet {
    Vec A;
    Mat DA;
    std::vector<Mat> D2A;
};

class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual int dim() const = 0;
    virtual ScalarJet eval(const Vec& x) const = 0;
    virtual double value(const Vec& x) const { return eval(x).value; }
    // Config representation; fields that cannot be written out return null.
    virtual json to_json() const { return nullptr; }
    // Fields with narrow features bound the integrator step at x for a
    // trajectory moving at the given speed.
    virtual bool limits_steps() const { return false; }
    virtual double step_limit(const Vec& /*x*/, double /*speed*/) const
    {
        return std::numeric_limits<double>::infinity();
    }
};

class MetricField {
public:
    virtual ~MetricField() = default;
    virtual int dim() const = 0;
    virtual MetricJet eval(const Vec& x) const = 0;
    virtual Mat value(const Vec& x) const { return eval(x).G; }
    virtual json to_json() const { return nullptr; }
};

class CovectorField {
public:
    virtual ~CovectorField() = default;
    virtual int dim() const = 0;
    virtual CovectorJet eval(const Vec& x) const = 0;
    virtual json to_json() const { return nullptr; }
};

// One Fourier mode a*cos(2 pi k.x) + b*sin(2 pi k.x).
struct TrigTerm {
    Eigen::VectorXi k;
    double a = 0.0;
    double b = 0.0;
};

// Finite trigonometric sum plus a constant.  All presets are built from these.
class TrigSeries : public ScalarField {
public:
    explicit TrigSeries(int d, double constant = 0.0) : d_(d), constant_(constant) {}
    TrigSeries& add(const Eigen::VectorXi& k, double a, double b = 0.0);
    TrigSeries& add(std::initializer_list<int> k, double a, double b = 0.0);

    int dim() const override { return d_; }
    ScalarJet eval(const Vec& x) const override;
    double value(const Vec& x) const override;
    json to_json() const override;
    static TrigSeries from_json(int d, const json& j);

    double constant() const { return constant_; }
    const std::vector<TrigTerm>& terms() const { return terms_; }
    bool is_zero() const;

private:
    int d_;
    double constant_;
    std::vector<TrigTerm> terms_;
};

// Symmetric matrix of trigonometric entries.
class TrigMetric : public MetricField {
public:
    explicit TrigMetric(int d);
    static TrigMetric identity(int d);
    static TrigMetric constant(const Mat& G);
    // Sets entry (i,j) and its mirror.
    void set(int i, int j, const TrigSeries& s);
    const TrigSeries& entry(int i, int j) const;

    int dim() const override { return d_; }
    MetricJet eval(const Vec& x) const override;
    Mat value(const Vec& x) const override;
    json to_json() const override;
    static TrigMetric from_json(int d, const json& j);

private:
    int d_;
    std::vector<TrigSeries> entries_;  // row-major, mirrored
};

class TrigCovector : public CovectorField {
public:
    explicit TrigCovector(int d);
    void set(int i, const TrigSeries& s);
    const TrigSeries& component(int i) const { return comps_[i]; }

    int dim() const override { return d_; }
    CovectorJet eval(const Vec& x) const override;
    json to_json() const override;
    static TrigCovector from_json(int d, const json& j);

private:
    int d_;
    std::vector<TrigSeries> comps_;
};

}  // namespace tonelab
