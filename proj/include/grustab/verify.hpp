#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "grustab/bounds.hpp"
#include "grustab/gru.hpp"

namespace grustab {

enum class StateBox { inside_x, inflated };
enum class InputMode { iid_uniform, mprs };

struct VerificationPlan {
    std::size_t trials = 2000;
    std::size_t horizon = 500;
    StateBox state_box = StateBox::inside_x;
    double inflation = 1.0;  // state box half-width for inflated sampling
    InputMode input_mode = InputMode::iid_uniform;
    std::uint64_t seed = 0;
    double tolerance = 1e-9;

    void validate() const;
};

struct Witness {
    std::size_t trial = 0;
    std::uint64_t seed = 0;  // plan seed; split(trial) replays the case
};

struct VerificationOutcome {
    std::string check;
    std::size_t trials = 0;
    std::size_t violations = 0;
    // Smallest (bound - actual) seen anywhere; negative means a violation.
    double worst_margin = 0.0;
    std::optional<Witness> witness;  // first violating trial

    bool passed() const { return violations == 0; }
};

// Single-step invariance of X = [-1,1]^n, checked exactly.
VerificationOutcome verify_invariance(const DeepGruModel& m,
                                      const VerificationPlan& plan);

// Finite entry time k_bar and exponential envelope domination, per layer,
// sampling initial states from the inflated box.
VerificationOutcome verify_entry(const DeepGruModel& m, const VerificationPlan& plan);

// Explicit ISS trajectory bound for one certified layer.
VerificationOutcome verify_iss_bound(const GruLayerParams& p,
                                     const VerificationPlan& plan);

// Pairwise deltaISS trajectory bound (and, with identical inputs, the
// initialization-forgetting bound). Empty lambdas = relaxed certificate,
// which requires inside-X sampling.
VerificationOutcome verify_delta_iss_bound(const DeepGruModel& m,
                                           const VerificationPlan& plan,
                                           const std::vector<double>& lambdas = {});

}  // namespace grustab
