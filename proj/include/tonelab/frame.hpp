#pragma once

#include "tonelab/flow.hpp"

#include <memory>

namespace tonelab {

// A piece of orbit: start state (any representation) and duration.
struct OrbitSegment {
    PhaseState start;
    double duration = 0.0;
};

struct FrameOptions {
    int samples = 200;          // at least this many, spacing at most max_spacing
    double max_spacing = 0.005;
    double fd_step = 1e-4;      // for the frame derivative
    double tol = 1e-12;
    bool check_injective = true;
    double warn_level = 1e-6;
};

// How far the frame is from the gauge where the transverse Jacobi equation
// reads a' = b, b' = -K a.
struct FrameResiduals {
    double gram = 0.0;           // |B^T J B - J|
    double upper_left = 0.0;     // the H_px analogue
    double upper_right = 0.0;    // H_pp - I
    double lower_right = 0.0;
    double k_asymmetry = 0.0;
    double max() const;
};

// Moving symplectic basis B(t) = [X_H, u_1..u_n, Y, w_1..w_n] along a segment
// (columns in that order, so B^T J B = J).  The w_i = (0, f_i) are vertical;
// the covectors f_i are N-orthonormal, annihilate the velocity and are
// transported so that u_i = DX w_i - w_i' stays isotropic.
struct AdaptedFrame {
    OrbitSegment segment;
    int n = 1;
    std::vector<double> times;
    std::vector<Vec> states;     // cotangent, stacked
    std::vector<Mat> covectors;  // d x n, the f_i
    std::vector<Mat> basis;      // 2d x 2d
    std::vector<Mat> generator;  // transverse 2n x 2n block of B^-1 (DX B - B')
    FrameResiduals residuals;
    bool quality_warning = false;
};

// Coordinates of the start frame without integrating anything.
Mat initial_covectors(const LagrangianModel& model, const Vec& z);
Mat frame_basis(const LagrangianModel& model, const Vec& z, const Mat& F);
// Transport rate F' of the covectors at z.
Mat covector_derivative(const LagrangianModel& model, const Vec& z, const Mat& F);

// Projects a full linear map to the transverse (a, b) coordinates:
// result maps reduced coordinates in B_from to reduced coordinates in B_to.
Mat reduce_map(const Mat& B_to, const Mat& M, const Mat& B_from);
// Reduced coordinates (a, b) of a single tangent vector.
Vec reduced_coordinates(const Mat& B, const Vec& xi);

AdaptedFrame adapted_frame(const LagrangianModel& model, const OrbitSegment& segment, const FrameOptions& opt = {});

struct CurvaturePath {
    std::vector<double> times;
    std::vector<Mat> K;  // symmetric n x n
    std::shared_ptr<const AdaptedFrame> frame;
    double validation_error = 0.0;

    int n() const { return static_cast<int>(K.front().rows()); }
    double duration() const { return times.back(); }
    // Piecewise cubic Hermite in t, slopes of fourth order on uniform grids.
    Mat at(double t) const;
};

// Reduced propagator X(t1) of X' = [[0, I], [-K, 0]] X, X(t0) = I.
Mat reduced_propagator(const CurvaturePath& K, double t0, double t1, double tol = 1e-12);
// Same equation with a caller supplied curvature.
Mat jacobi_propagator(const std::function<Mat(double)>& K, int n, double t0, double t1, double tol = 1e-12);

// K from the frame generator, validated against the full linearized flow
// projected on the frame.  Throws "curvature-extraction" above max_error.
CurvaturePath extract_curvature(const LagrangianModel& model, const AdaptedFrame& frame, double max_error = 1e-4);

}  // namespace tonelab
