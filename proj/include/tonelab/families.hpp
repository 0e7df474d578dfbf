#pragma once

#include "tonelab/spectrum.hpp"

#include <json.hpp>

#include <random>

namespace tonelab {

// Each sequence is one period of a periodic Sp(n)-valued sequence.
struct PeriodicFamily {
    std::vector<std::vector<Mat>> sequences;
    double bound() const;  // max operator norm, the Q of a bounded family
    static PeriodicFamily from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct Splitting {
    std::vector<Mat> stable;    // orthonormal bases per phase
    std::vector<Mat> unstable;
};

struct HyperbolicityReport {
    bool pass = false;
    std::string failure;        // "", "not-hyperbolic", "bound"
    int offending_sequence = -1;
    int offending_phase = -1;
    int offending_m = -1;
    double min_K = 0.0;         // smallest K that works for the given lambda
    double worst_margin = 0.0;  // min over checks of K lambda^m - norm
    std::vector<Splitting> witnesses;
};

// Invariant splitting of one sequence from its monodromy eigen-decomposition.
// Throws "not-hyperbolic" when some multiplier is on the unit circle.
Splitting invariant_splitting(const std::vector<Mat>& seq, double tol = 1e-7);

// Checks |prod|_{E^s}| <= K lambda^m and |(prod|_{E^u})^-1| <= K lambda^m for
// every phase and 1 <= m <= periods * (period length).  Equality counts as
// a pass up to a relative 1e-12.
HyperbolicityReport check_uniform_hyperbolicity(const PeriodicFamily& family, double K, double lambda,
                                                int periods = 4);

struct StabilityProbe {
    bool input_hyperbolic = false;
    int trials = 0;
    double fraction_hyperbolic = 0.0;
    double smallest_destabilizing = std::numeric_limits<double>::infinity();  // d(xi, eta) of the closest failure
};

// Random periodically-equivalent families eta = xi exp(X), X in sp(n), with
// d(xi, eta) drawn uniformly in [0, epsilon).
StabilityProbe stable_hyperbolicity_probe(const PeriodicFamily& family, double epsilon, int trials,
                                          unsigned seed = 1);

}  // namespace tonelab
