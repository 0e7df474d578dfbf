#pragma once

#include "tonelab/model.hpp"

namespace tonelab {

struct PresetInfo {
    std::string name;
    json parameters;  // name -> {default, description}
    bool synthetic = false;
    std::string note;
};

// Catalog in a fixed order.
std::vector<PresetInfo> list_presets();

// Builds a Lagrangian preset; missing parameters take their defaults.
// "cat-suspension" is synthetic and has no Lagrangian, asking for it here is
// a validation error.
LagrangianModel make_preset(const std::string& name, const json& params = json::object());

// Short-hands used all over the tests.
LagrangianModel free_torus(int d = 2);
LagrangianModel pendulum(double eps = 0.1);
LagrangianModel two_wave(double eps1 = 0.1, double eps2 = 0.2);
LagrangianModel magnetic(double strength = 0.05);

}  // namespace tonelab
