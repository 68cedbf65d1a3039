#include "grustab/verify.hpp"

#include <cmath>
#include <limits>

#include "grustab/plant.hpp"

namespace grustab {

void VerificationPlan::validate() const {
    require(trials >= 1, "plan: need at least one trial");
    require(tolerance >= 0.0, "plan: negative tolerance");
    if (state_box == StateBox::inflated)
        require(inflation > 1.0, "plan: inflated box needs inflation > 1");
}

namespace {

struct TrialResult {
    double worst_margin = std::numeric_limits<double>::infinity();
    bool violated = false;
};

Vector sample_box(std::size_t n, double half_width, Rng& rng) {
    Vector v(n);
    for (auto& x : v) x = rng.uniform(-half_width, half_width);
    return v;
}

// Vector with infinity norm in (1, inflation].
Vector sample_outside_x(std::size_t n, double inflation, Rng& rng) {
    Vector v = sample_box(n, inflation, rng);
    if (inf_norm(v) <= 1.0) {
        std::size_t j = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(v[i]) > std::abs(v[j])) j = i;
        const double mag = rng.uniform(1.0, inflation);
        v[j] = v[j] < 0.0 ? -mag : mag;
        while (!(inf_norm(v) > 1.0)) v[j] = rng.uniform(1.0, inflation) + 1e-9;
    }
    return v;
}

std::vector<Vector> sample_inputs(std::size_t n_u, std::size_t horizon,
                                  InputMode mode, Rng& rng) {
    std::vector<Vector> out(horizon, Vector(n_u, 0.0));
    if (mode == InputMode::iid_uniform) {
        for (auto& u : out)
            for (auto& x : u) x = rng.uniform(-1.0, 1.0);
    } else {
        for (std::size_t c = 0; c < n_u; ++c) {
            const auto chan = mprs(horizon, 5, 5, 20, -1.0, 1.0, rng);
            for (std::size_t k = 0; k < horizon; ++k) out[k][c] = chan[k];
        }
    }
    return out;
}

VerificationOutcome reduce(std::string check, const VerificationPlan& plan,
                           const std::vector<TrialResult>& results) {
    VerificationOutcome out;
    out.check = std::move(check);
    out.trials = results.size();
    out.worst_margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < results.size(); ++i) {
        out.worst_margin = std::min(out.worst_margin, results[i].worst_margin);
        if (results[i].violated) {
            ++out.violations;
            if (!out.witness) out.witness = Witness{i, plan.seed};
        }
    }
    return out;
}

void track(TrialResult& r, double margin) {
    r.worst_margin = std::min(r.worst_margin, margin);
    if (margin < 0.0) r.violated = true;
}

}  // namespace

VerificationOutcome verify_invariance(const DeepGruModel& m,
                                      const VerificationPlan& plan) {
    plan.validate();
    m.validate();
    const Rng base(plan.seed);
    std::vector<TrialResult> results(plan.trials);
    parallel_for(plan.trials, [&](std::size_t t) {
        Rng rng = base.split(t);
        GruState s;
        for (const auto& layer : m.layers)
            s.x.push_back(sample_box(layer.state_size(), 1.0, rng));
        const Vector u = sample_box(m.input_size(), 1.0, rng);
        const GruState next = deep_step(m, s, u);
        // The lemma is exact: no tolerance.
        track(results[t], 1.0 - next.inf_norm());
    });
    return reduce("invariance", plan, results);
}

VerificationOutcome verify_entry(const DeepGruModel& m, const VerificationPlan& plan) {
    plan.validate();
    m.validate();
    require(plan.state_box == StateBox::inflated,
            "verify_entry: needs an inflated initial-state box");
    const Rng base(plan.seed);
    std::vector<TrialResult> results(plan.trials);
    parallel_for(plan.trials, [&](std::size_t t) {
        Rng rng = base.split(t);
        GruState s;
        for (const auto& layer : m.layers)
            s.x.push_back(sample_outside_x(layer.state_size(), plan.inflation, rng));
        const auto inputs = sample_inputs(m.input_size(), plan.horizon,
                                          plan.input_mode, rng);
        const GruState x0 = s;

        // Per-layer bounds with cascade inflation: layer i's input is bounded
        // by max(||x0^{i-1}||, 1).
        std::vector<EntryBound> ebs;
        double lambda_prev = 1.0;
        for (std::size_t i = 0; i < m.depth(); ++i) {
            ebs.push_back(entry_bound(m.layers[i], x0.x[i], lambda_prev));
            if (ebs.back().k_bar < 0) {
                results[t].violated = true;
                results[t].worst_margin = -std::numeric_limits<double>::infinity();
                return;
            }
            lambda_prev = std::max(inf_norm(x0.x[i]), 1.0);
        }

        for (std::size_t k = 0; k < plan.horizon; ++k) {
            s = deep_step(m, s, inputs[k]);
            const auto step = static_cast<std::int64_t>(k) + 1;
            for (std::size_t i = 0; i < m.depth(); ++i) {
                for (std::size_t j = 0; j < s.x[i].size(); ++j) {
                    const double env = entry_envelope(ebs[i], x0.x[i][j], step);
                    track(results[t], env + plan.tolerance - std::abs(s.x[i][j]));
                }
                if (step >= ebs[i].k_bar)
                    track(results[t], 1.0 + plan.tolerance - inf_norm(s.x[i]));
            }
        }
    });
    return reduce("entry", plan, results);
}

VerificationOutcome verify_iss_bound(const GruLayerParams& p,
                                     const VerificationPlan& plan) {
    plan.validate();
    p.validate();
    const IssBound b = iss_bound(p);  // throws if uncertified
    const Rng base(plan.seed);
    std::vector<TrialResult> results(plan.trials);
    parallel_for(plan.trials, [&](std::size_t t) {
        Rng rng = base.split(t);
        Vector x = plan.state_box == StateBox::inside_x
                       ? sample_box(p.state_size(), 1.0, rng)
                       : sample_outside_x(p.state_size(), plan.inflation, rng);
        const auto inputs = sample_inputs(p.input_size(), plan.horizon,
                                          plan.input_mode, rng);
        const double x0_norm = inf_norm(x);
        const double mu = iss_prefactor(p, x, b);
        double u_sup = 0.0;
        for (const auto& u : inputs) u_sup = std::max(u_sup, inf_norm(u));
        const double gain_terms = b.gain_u * u_sup + b.gain_b;

        double decay = 1.0;
        for (std::size_t k = 0; k < plan.horizon; ++k) {
            auto [xn, gates] = layer_step(p, x, inputs[k]);
            x = std::move(xn);
            decay *= 1.0 - b.delta;
            const double bound = mu * decay * x0_norm + gain_terms;
            track(results[t], bound + plan.tolerance - inf_norm(x));
        }
    });
    return reduce("iss_bound", plan, results);
}

VerificationOutcome verify_delta_iss_bound(const DeepGruModel& m,
                                           const VerificationPlan& plan,
                                           const std::vector<double>& lambdas) {
    plan.validate();
    m.validate();
    if (lambdas.empty())
        require(plan.state_box == StateBox::inside_x,
                "relaxed certificate: initial states must be sampled inside X");
    const DeltaIssBound b = deep_delta_iss_bound(m, lambdas);  // throws if uncertified
    const double gain = b.mu_delta / (1.0 - b.lambda_tilde) * inf_norm(b.B_Mdelta);
    const double box = lambdas.empty() ? 1.0 : plan.inflation;
    const Rng base(plan.seed);
    std::vector<TrialResult> results(plan.trials);
    parallel_for(plan.trials, [&](std::size_t t) {
        Rng rng = base.split(t);
        GruState sa, sb;
        for (const auto& layer : m.layers) {
            sa.x.push_back(sample_box(layer.state_size(), box, rng));
            sb.x.push_back(sample_box(layer.state_size(), box, rng));
        }
        const auto ua = sample_inputs(m.input_size(), plan.horizon, plan.input_mode, rng);
        const auto ub = sample_inputs(m.input_size(), plan.horizon, plan.input_mode, rng);

        double du_sup = 0.0;
        for (std::size_t k = 0; k < plan.horizon; ++k) {
            Vector d(ua[k].size());
            for (std::size_t c = 0; c < d.size(); ++c) d[c] = ua[k][c] - ub[k][c];
            du_sup = std::max(du_sup, inf_norm(d));
        }

        auto dx_norm = [](const GruState& a, const GruState& c) {
            double worst = 0.0;
            for (std::size_t i = 0; i < a.x.size(); ++i)
                for (std::size_t j = 0; j < a.x[i].size(); ++j)
                    worst = std::max(worst, std::abs(a.x[i][j] - c.x[i][j]));
            return worst;
        };

        const double dx0 = dx_norm(sa, sb);
        GruState same = sb;  // third trajectory: sb's start under sa's inputs
        const double dx0_same = dx0;
        double lam_k = 1.0;
        for (std::size_t k = 0; k < plan.horizon; ++k) {
            sa = deep_step(m, sa, ua[k]);
            sb = deep_step(m, sb, ub[k]);
            same = deep_step(m, same, ua[k]);
            lam_k *= b.lambda_tilde;
            const double pair_bound = b.mu_delta * lam_k * dx0 + gain * du_sup;
            track(results[t], pair_bound + plan.tolerance - dx_norm(sa, sb));
            const double same_bound = b.mu_delta * lam_k * dx0_same;
            track(results[t], same_bound + plan.tolerance - dx_norm(sa, same));
        }
    });
    return reduce("delta_iss_bound", plan, results);
}

}  // namespace grustab
