#pragma once

#include <cstdint>
#include <vector>

#include "grustab/certificates.hpp"
#include "grustab/gru.hpp"

namespace grustab {

// Entry-time and envelope constants for one layer, evaluated at the initial
// state. Valid for every later step because the state norm contracts while
// outside the invariant set.
struct EntryBound {
    double omega_bar0 = 0.0;   // upper gate bound at k = 0
    double omega_under0 = 0.0; // 1 - omega_bar0
    double eps_under0 = 0.0;   // candidate-activation clearance, in (0, 1]
    std::vector<std::int64_t> k_bar_per_component;
    std::int64_t k_bar = 0;
    // Set when eps_under0 saturates to 0 in floating point; no finite entry
    // time can be certified.
    bool entry_time_unbounded = false;
};

// lambda_prev bounds the layer input (1 for a first layer). The recurrent
// block is scaled by max(||x0||_inf, 1).
EntryBound entry_bound(const GruLayerParams& p, const Vector& x0,
                       double lambda_prev = 1.0);

// Exponential envelope for one component:
//   |x_j(k)| <= omega_bar0^k |x0_j| + (1 - omega_under0^k)(1 - eps_under0)
double entry_envelope(const EntryBound& eb, double x0_j, std::int64_t k);

struct IssBound {
    double delta = 0.0;   // contraction rate, in (0, 1)
    double gain_u = 0.0;  // sigma_z_bar ||W_r|| / delta
    double gain_b = 0.0;  // sigma_z_bar ||b_r|| / delta
    double sigma_z_bar = 0.0;
};

// Explicit ISS decay/gain constants; throws if the ISS condition fails.
IssBound iss_bound(const GruLayerParams& p);

// Prefactor mu >= 1 making beta = mu (1-delta)^k ||x0|| valid also before
// the trajectory enters the invariant set. Equals 1 for x0 inside X.
double iss_prefactor(const GruLayerParams& p, const Vector& x0, const IssBound& b);

struct DeltaIssBound {
    // Single-layer constants.
    double delta_delta = 0.0;   // in (0, 1)
    double alpha_du_sup = 0.0;  // sup of the input coefficient
    // Deep cascade (filled by deep_delta_iss_bound).
    std::vector<double> layer_delta_delta;
    std::vector<double> layer_alpha_du;
    Matrix A_Mdelta;        // lower-triangular M x M
    Vector B_Mdelta;        // cumulative input-gain products
    double lambda_tilde = 0.0;  // max diagonal entry of A_Mdelta
    double mu_delta = 1.0;      // ||A^k|| <= mu_delta lambda_tilde^k
};

// Single-layer deltaISS constants; throws if the condition fails.
DeltaIssBound delta_iss_bound(const GruLayerParams& p, double lambda_check = 1.0,
                              double lambda_prev = 1.0);

// Deep cascade constants. Empty lambdas means the relaxed case (all 1).
DeltaIssBound deep_delta_iss_bound(const DeepGruModel& m,
                                   std::vector<double> lambdas = {});

}  // namespace grustab
