#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "grustab/gru.hpp"
#include "grustab/numerics.hpp"
#include "grustab/rng.hpp"

namespace grustab {

// Quadruple-tank parameters (SI units).
struct TankConfig {
    double a1 = 1.31e-4, a2 = 1.51e-4, a3 = 9.27e-5, a4 = 8.82e-5;  // outlet areas, m^2
    double S = 0.06;                                                // tank section, m^2
    double gamma_a = 0.3, gamma_b = 0.4;                            // valve splits
    double g = 9.81;
    double qa_max = 0.9e-3, qb_max = 1.1e-3;   // pump saturations, m^3/s
    double cap12 = 1.36, cap34 = 1.3;          // level caps, m

    void validate() const;
    double cap(int tank) const { return tank < 2 ? cap12 : cap34; }
};

struct TankState {
    std::array<double, 4> h{0.0, 0.0, 0.0, 0.0};  // levels, m
};

// Level rates (m/s). Throws on a negative level; the integrator clamps
// states before evaluation so this only trips on caller misuse.
std::array<double, 4> tank_derivative(const TankConfig& cfg, const TankState& s,
                                      double q_a, double q_b);

// Steady-state levels for constant (saturated) flows.
TankState tank_equilibrium(const TankConfig& cfg, double q_a, double q_b);

// Classical fixed-step RK4 over a piecewise-constant flow schedule, sampled
// every tau_s seconds. flows[k] applies on [k tau_s, (k+1) tau_s). Levels are
// clamped to [0, cap] after every substep (overflow is discarded). Returns
// one sampled state per schedule entry (the state at the end of its hold).
std::vector<TankState> integrate(const TankConfig& cfg, const TankState& s0,
                                 const std::vector<std::array<double, 2>>& flows,
                                 double tau_s, double internal_step);

// Multilevel pseudo-random signal: piecewise-constant, amplitudes drawn from
// `levels` evenly spaced values in [lo, hi], hold times uniform integers in
// [hold_min, hold_max] samples.
std::vector<double> mprs(std::size_t length, int levels, int hold_min, int hold_max,
                         double lo, double hi, Rng& rng);

enum class Units { physical, normalized };

struct Experiment {
    std::string id;
    double tau_s = 15.0;
    std::vector<std::array<double, 2>> inputs;   // (q_a, q_b)
    std::vector<std::array<double, 2>> outputs;  // (h1, h2)
    Units units = Units::physical;

    std::vector<Vector> input_vectors() const;
    std::vector<Vector> output_vectors() const;
};

enum class Split { train, validation, test };

struct DatasetProtocol {
    std::size_t n_experiments = 30;
    std::size_t samples = 1500;
    double tau_s = 15.0;
    std::size_t n_train = 20, n_validation = 5, n_test = 5;
    double input_noise_std = 5e-6;        // on the recorded flows
    double measurement_noise_std = 0.005; // on the recorded levels
    int mprs_levels = 5;
    int mprs_hold_min = 10, mprs_hold_max = 50;
    double internal_step = 1.0;

    static DatasetProtocol paper();
    static DatasetProtocol desk();  // N_s = 6, T_s = 300, splits 4/1/1
};

struct Dataset {
    DatasetProtocol protocol;
    std::uint64_t seed = 0;
    TankConfig config;
    std::vector<Experiment> experiments;
    std::vector<Split> splits;  // parallel to experiments
    AffineScaler input_scaler;
    AffineScaler output_scaler;
    Units units = Units::physical;

    std::vector<std::size_t> indices(Split s) const;
};

// Simulates the protocol with per-experiment derived RNG streams. Inputs are
// recorded with sensor-side noise; the plant itself sees the clean flows.
Dataset generate_dataset(const TankConfig& cfg, const DatasetProtocol& protocol,
                         std::uint64_t seed);

// Min/max scalers over the training split, mapping its range to [-1, 1].
// Throws on a constant channel.
void fit_scalers(Dataset& d);

// Normalized copy of one experiment; channels are clipped to [-1, 1] and the
// clip count (nonzero only for validation/test outliers) is reported.
Experiment normalize_experiment(const Experiment& e, const AffineScaler& in_s,
                                const AffineScaler& out_s, std::size_t* clipped = nullptr);

// On-disk layout: <dir>/meta.json plus one CSV per experiment with header
// `k,q_a,q_b,h1,h2`.
void save_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace grustab
