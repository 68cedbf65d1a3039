#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grustab/gru.hpp"
#include "grustab/plant.hpp"

namespace grustab {

struct TrainConfig {
    std::size_t washout = 20;
    double rho_plus = 2e-4;
    double rho_minus = 2e-6;
    double clearance = 0.05;  // epsilon_nu
    double learning_rate = 1e-3;
    double rmsprop_decay = 0.9;
    double rmsprop_eps = 1e-8;
    std::size_t max_epochs = 2000;
    std::size_t patience = 20;
    std::uint64_t seed = 0;
    std::optional<std::size_t> truncation;  // BPTT window; full sequence if unset

    bool penalty_enabled() const { return rho_plus != 0.0 || rho_minus != 0.0; }
    void validate(std::size_t sequence_length) const;
};

// Piecewise-linear constraint cost:
//   rho(nu) = rho+ [max(nu, -eps) + eps] + rho- [min(nu, -eps) + eps]
double penalty(double nu, const TrainConfig& cfg);
// Right-hand slope at the kink.
double penalty_slope(double nu, const TrainConfig& cfg);

struct LossParts {
    double total = 0.0;
    double mse = 0.0;
    std::vector<double> nu;             // per-layer relaxed residuals
    std::vector<double> penalty_terms;  // per-layer rho(nu)
};

// Washout-MSE plus the per-layer residual penalty, simulated open loop from x0.
LossParts sequence_loss(const DeepGruModel& m, const Experiment& e,
                        const TrainConfig& cfg, const GruState& x0);

// Gradient holder mirroring the model parameters.
struct ModelGrads {
    std::vector<GruLayerParams> layers;
    Matrix U_o;
    Vector b_o;

    static ModelGrads zeros_like(const DeepGruModel& m);
};

// Subgradient of the relaxed residual with respect to the layer weights.
// Infinity norms route to the first row achieving the max row sum.
GruLayerParams residual_subgradient(const GruLayerParams& p);

// Exact reverse-mode gradient of sequence_loss (BPTT through the unrolled
// network, plus penalty subgradients). Throws on nonfinite gradients.
std::pair<LossParts, ModelGrads> gradients(const DeepGruModel& m,
                                           const Experiment& e,
                                           const TrainConfig& cfg,
                                           const GruState& x0);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mse = 0.0;
    std::vector<double> nu;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    std::size_t clipped_samples = 0;  // normalization clips outside [-1, 1]
};

std::string history_to_csv(const TrainHistory& h);

struct TrainResult {
    DeepGruModel model;
    TrainHistory history;
};

struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what, TrainHistory h)
        : std::runtime_error(what), history(std::move(h)) {}
    TrainHistory history;
};

struct InfeasibleError : std::runtime_error {
    explicit InfeasibleError(const std::string& what, TrainHistory h)
        : std::runtime_error(what), history(std::move(h)) {}
    TrainHistory history;
};

// RMSProp training over single-sequence batches with per-epoch shuffling.
// With the penalty enabled, the returned model is guaranteed to satisfy
// nu^i < -clearance on every layer (InfeasibleError otherwise).
TrainResult train(const Dataset& d, const std::vector<std::size_t>& widths,
                  const TrainConfig& cfg);

// FIT index (percent) of the open-loop simulation from x0 against the
// experiment outputs; Euclidean norms over the stacked sequence.
double fit_index(const DeepGruModel& m, const Experiment& e, const GruState& x0);

}  // namespace grustab
