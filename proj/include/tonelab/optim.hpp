#pragma once

#include "tonelab/linalg.hpp"

#include <functional>

namespace tonelab {

// Thin wrappers over GSL's multimin minimizers.

struct MinResult {
    Vec x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

MinResult nelder_mead(const std::function<double(const Vec&)>& f, const Vec& x0, double step, int max_iter,
                      double size_tol = 1e-10);

// f returns the value and writes the gradient.
MinResult bfgs(const std::function<double(const Vec&, Vec&)>& fg, const Vec& x0, int max_iter,
               double grad_tol = 1e-10, double first_step = 1e-2);

}  // namespace tonelab
