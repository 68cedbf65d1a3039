#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "grustab/numerics.hpp"
#include "grustab/rng.hpp"

namespace grustab {

// One GRU layer in state-space form:
//   z  = sigma(W_z u + U_z x + b_z)
//   f  = sigma(W_f u + U_f x + b_f)
//   r  = tanh (W_r u + U_r (f o x) + b_r)
//   x+ = z o x + (1 - z) o r
struct GruLayerParams {
    Matrix W_z, U_z;
    Vector b_z;
    Matrix W_f, U_f;
    Vector b_f;
    Matrix W_r, U_r;
    Vector b_r;

    std::size_t state_size() const { return U_z.rows; }
    std::size_t input_size() const { return W_z.cols; }

    static GruLayerParams zeros(std::size_t n_x, std::size_t n_u);
    void validate() const;
};

struct Gates {
    Vector z, f, r;
};

// Per-channel affine map between physical and normalized units:
//   normalized = (physical - offset) / scale
struct AffineScaler {
    Vector offset;
    Vector scale;  // all nonzero

    static AffineScaler identity(std::size_t n);
    Vector to_normalized(const Vector& physical) const;
    Vector to_physical(const Vector& normalized) const;
    std::size_t channels() const { return offset.size(); }
};

// Stacked GRU layers with an affine readout y = U_o x^M + b_o.
// Layer 1 is fed by the external input; layer i >= 2 by the freshly
// updated state of layer i-1.
struct DeepGruModel {
    std::vector<GruLayerParams> layers;
    Matrix U_o;
    Vector b_o;
    AffineScaler input_scaler;
    AffineScaler output_scaler;

    std::size_t depth() const { return layers.size(); }
    std::size_t input_size() const { return layers.front().input_size(); }
    std::size_t output_size() const { return U_o.rows; }
    std::size_t total_state_size() const;
    void validate() const;

    static DeepGruModel zeros(const std::vector<std::size_t>& widths,
                              std::size_t n_u, std::size_t n_o);
};

// Per-layer state vectors x^1 .. x^M.
struct GruState {
    std::vector<Vector> x;

    static GruState zero(const DeepGruModel& m);
    // Uniform sample from the invariant set [-1,1]^n of every layer.
    static GruState random_in_x(const DeepGruModel& m, Rng& rng);
    Vector flat() const;
    double inf_norm() const;
};

std::pair<Vector, Gates> layer_step(const GruLayerParams& p, const Vector& x,
                                    const Vector& u);

// Tolerance on the unity-bound input precondition. Violations throw.
inline constexpr double kInputBoundTol = 1e-12;

GruState deep_step(const DeepGruModel& m, const GruState& s, const Vector& u);

Vector output(const DeepGruModel& m, const GruState& s);

struct Trajectory {
    std::vector<GruState> states;   // states[k] is the state after inputs[0..k]
    std::vector<Vector> outputs;    // outputs[k] = readout of states[k]
};

Trajectory simulate(const DeepGruModel& m, const GruState& x0,
                    const std::vector<Vector>& inputs);

// LPV coefficients of the per-component rewriting x_j+ = w_j x_j + (1-w_j) e_j.
// Returns (omega, eta) = (z, r) evaluated at (x, u).
std::pair<Vector, Vector> lpv_coefficients(const GruLayerParams& p,
                                           const Vector& x, const Vector& u);

// Seeded random layer/model construction (uniform entries in [-w, w]).
GruLayerParams random_layer(std::size_t n_x, std::size_t n_u, double weight_range,
                            Rng& rng);
DeepGruModel random_model(const std::vector<std::size_t>& widths, std::size_t n_u,
                          std::size_t n_o, double weight_range, Rng& rng);

// JSON (de)serialization; round-trip is value-exact for all doubles.
std::string model_to_json(const DeepGruModel& m);
DeepGruModel model_from_json(const std::string& text);
void save_model(const DeepGruModel& m, const std::string& path);
DeepGruModel load_model(const std::string& path);

}  // namespace grustab
