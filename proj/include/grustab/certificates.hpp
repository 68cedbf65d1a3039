#pragma once

#include <string>
#include <vector>

#include "grustab/gru.hpp"

namespace grustab {

// Gate bounds sigma_z, sigma_f, phi_r evaluated on the (possibly inflated)
// initialization box: lambda_check scales the recurrent blocks, lambda_prev
// the input blocks (lambda_prev = 1 for a first layer fed by unity-bounded
// input).
struct GateBounds {
    double sigma_z = 0.0;
    double sigma_f = 0.0;
    double phi_r = 0.0;
};

GateBounds gate_bounds(const GruLayerParams& p, double lambda_check,
                       double lambda_prev);

struct IssCheck {
    double lhs = 0.0;  // ||U_r|| * sigma(||[W_f U_f b_f]||)
    bool certified = false;
};

// Single-layer ISS sufficient condition: lhs < 1.
IssCheck iss_condition(const GruLayerParams& p);

// Signed margin of the deltaISS sufficient condition; negative certifies.
//   nu = ||U_r||(lambda/4 ||U_f|| + sigma_f)
//        - 1 + 1/4 (lambda + phi_r)/(1 - sigma_z) ||U_z||
// with the gate bounds taken on the inflated box.
double delta_iss_residual(const GruLayerParams& p, double lambda_check,
                          double lambda_prev);

// lambda_check = lambda_prev = 1 (initialization inside the invariant set).
double relaxed_delta_iss_residual(const GruLayerParams& p);

enum class CertifyMode { iss, delta_iss_strict, delta_iss_relaxed };

std::string to_string(CertifyMode mode);

struct LayerReport {
    double iss_lhs = 0.0;
    bool iss_certified = false;
    double nu = 0.0;
    bool delta_iss_certified = false;
    double lambda_check = 1.0;
    double lambda_prev = 1.0;
    bool relaxed = true;
};

struct StabilityReport {
    CertifyMode mode = CertifyMode::delta_iss_relaxed;
    std::vector<LayerReport> layers;
    bool all_iss = false;
    bool all_delta_iss = false;

    bool certified() const {
        return mode == CertifyMode::iss ? all_iss : all_delta_iss;
    }
};

// Evaluates the per-layer conditions. For strict mode, lambdas supplies one
// lambda_check >= 1 per layer (the box the caller initializes in); the first
// layer always sees lambda_prev = 1.
StabilityReport certify_deep(const DeepGruModel& m, CertifyMode mode,
                             const std::vector<double>& lambdas = {});

// Per-layer residuals in the mode's convention (iss mode reports lhs - 1).
std::vector<double> layer_residuals(const DeepGruModel& m);

}  // namespace grustab
