#include "tonelab/presets.hpp"

#include <cmath>

namespace tonelab {

namespace {

json param(double def, const std::string& what) { return {{"default", def}, {"description", what}}; }

double get(const json& p, const char* key, double def)
{
    if (!p.contains(key)) return def;
    if (!p.at(key).is_number()) throw validation("config", std::string("parameters.") + key + " must be a number");
    return p.at(key).get<double>();
}

}  // namespace

std::vector<PresetInfo> list_presets()
{
    return {
        {"free-torus", {{"d", param(2, "torus dimension, at least 2")}}, false, "G = I, A = 0, V = 0"},
        {"pendulum-torus", {{"epsilon", param(0.1, "V = epsilon cos(2 pi x1)")}}, false, "d = 2"},
        {"two-wave",
         {{"epsilon1", param(0.1, "coefficient of cos(2 pi x1)")}, {"epsilon2", param(0.2, "coefficient of cos(2 pi x2)")}},
         false, "d = 3"},
        {"magnetic", {{"strength", param(0.05, "A = strength sin(2 pi x1) dx2")}}, false, "d = 2, V = 0"},
        {"cat-suspension", json::object(), true, "synthetic, not Tonelli: unit-roof suspension of [[2,1],[1,1]]"},
    };
}

LagrangianModel free_torus(int d)
{
    return LagrangianModel(TorusSpace(d), std::make_shared<TrigMetric>(TrigMetric::identity(d)), nullptr, nullptr,
                           "free-torus");
}

LagrangianModel pendulum(double eps)
{
    auto V = std::make_shared<TrigSeries>(2);
    V->add({1, 0}, eps);
    return LagrangianModel(TorusSpace(2), std::make_shared<TrigMetric>(TrigMetric::identity(2)), nullptr, V,
                           "pendulum-torus");
}

LagrangianModel two_wave(double eps1, double eps2)
{
    auto V = std::make_shared<TrigSeries>(3);
    V->add({1, 0, 0}, eps1);
    V->add({0, 1, 0}, eps2);
    return LagrangianModel(TorusSpace(3), std::make_shared<TrigMetric>(TrigMetric::identity(3)), nullptr, V,
                           "two-wave");
}

LagrangianModel magnetic(double strength)
{
    auto A = std::make_shared<TrigCovector>(2);
    TrigSeries a2(2);
    a2.add({1, 0}, 0.0, strength);
    A->set(1, a2);
    return LagrangianModel(TorusSpace(2), std::make_shared<TrigMetric>(TrigMetric::identity(2)), A, nullptr,
                           "magnetic");
}

LagrangianModel make_preset(const std::string& name, const json& params)
{
    const json p = params.is_null() ? json::object() : params;
    if (!p.is_object()) throw validation("config", "parameters must be an object");
    if (name == "free-torus") {
        const double d = get(p, "d", 2);
        if (d < 2 || d != std::floor(d)) throw validation("config", "parameters.d must be an integer >= 2");
        return free_torus(static_cast<int>(d));
    }
    if (name == "pendulum-torus" || name == "pendulum") return pendulum(get(p, "epsilon", 0.1));
    if (name == "two-wave") return two_wave(get(p, "epsilon1", 0.1), get(p, "epsilon2", 0.2));
    if (name == "magnetic") return magnetic(get(p, "strength", 0.05));
    if (name == "cat-suspension") throw validation("preset", "cat-suspension is synthetic and has no Lagrangian");
    throw validation("preset", "unknown preset '" + name + "'");
}

}  // namespace tonelab
