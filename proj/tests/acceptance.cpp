// End-to-end acceptance gate. Each criterion prints one PASS/FAIL line; the
// process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "grustab/bounds.hpp"
#include "grustab/certificates.hpp"
#include "grustab/gru.hpp"
#include "grustab/io.hpp"
#include "grustab/numerics.hpp"
#include "grustab/plant.hpp"
#include "grustab/rng.hpp"
#include "grustab/training.hpp"
#include "grustab/verify.hpp"

namespace fs = std::filesystem;
using namespace grustab;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& note,
            double seconds) {
    std::printf("criterion %2d %-28s %s%s%s  [%.1fs]\n", index, name.c_str(),
                pass ? "PASS" : "FAIL", note.empty() ? "" : "  -- ", note.c_str(),
                seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

template <typename F>
void run(int index, const std::string& name, F f) {
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    std::string note;
    try {
        pass = f(note);
    } catch (const std::exception& e) {
        note = std::string("exception: ") + e.what();
    }
    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(index, name, pass, note, sec);
}

DeepGruModel random_sized_model(Rng& rng, int max_layers, int max_width,
                                double range) {
    const auto n_layers = rng.uniform_int(1, max_layers);
    std::vector<std::size_t> widths;
    for (std::int64_t i = 0; i < n_layers; ++i)
        widths.push_back(static_cast<std::size_t>(rng.uniform_int(1, max_width)));
    const auto n_u = static_cast<std::size_t>(rng.uniform_int(1, 3));
    return random_model(widths, n_u, 2, range, rng);
}

DeepGruModel certified_model(Rng& rng, std::vector<std::size_t> widths,
                             double range) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        auto m = random_model(widths, 2, 2, range, rng);
        bool ok = true;
        for (const auto& l : m.layers)
            if (relaxed_delta_iss_residual(l) >= -1e-3) ok = false;
        if (ok) return m;
    }
    throw std::runtime_error("no certified draw found");
}

// --- criterion 1: single-step invariance, exact -----------------------------

bool crit_invariance(std::string& note) {
    Rng rng(101);
    for (int t = 0; t < 20; ++t) {
        const auto m = random_sized_model(rng, 3, 8, rng.uniform(0.2, 3.0));
        VerificationPlan plan;
        plan.trials = 2000;
        plan.seed = 1000 + static_cast<std::uint64_t>(t);
        const auto out = verify_invariance(m, plan);
        if (!out.passed()) {
            note = "model " + std::to_string(t) + ": " +
                   std::to_string(out.violations) + " exits from X";
            return false;
        }
    }
    return true;
}

// --- criterion 2: entry time + envelope -------------------------------------

bool crit_entry(std::string& note) {
    Rng rng(202);
    const std::size_t horizon = 300;
    std::size_t trials = 0;
    for (int mdl = 0; mdl < 5; ++mdl) {
        std::vector<std::size_t> widths;
        const auto n_layers = rng.uniform_int(1, 2);
        for (std::int64_t i = 0; i < n_layers; ++i)
            widths.push_back(static_cast<std::size_t>(rng.uniform_int(1, 3)));
        const auto m = random_model(widths, 2, 2, 0.5, rng);
        for (int t = 0; t < 100; ++t, ++trials) {
            Rng trial = Rng(3000 + mdl * 100 + t);
            GruState s;
            for (const auto& layer : m.layers) {
                Vector x(layer.state_size());
                for (auto& v : x) v = trial.uniform(-5.0, 5.0);
                // Force the norm into (1, 5].
                if (inf_norm(x) <= 1.0) x[0] = trial.uniform(1.0, 5.0) + 1e-9;
                s.x.push_back(x);
            }
            const GruState x0 = s;
            std::vector<EntryBound> ebs;
            double lambda_prev = 1.0;
            for (std::size_t i = 0; i < m.depth(); ++i) {
                ebs.push_back(entry_bound(m.layers[i], x0.x[i], lambda_prev));
                lambda_prev = std::max(inf_norm(x0.x[i]), 1.0);
            }
            std::vector<std::int64_t> first_entry(m.depth(), -1);
            for (std::size_t k = 1; k <= horizon; ++k) {
                Vector u(m.input_size());
                for (auto& v : u) v = trial.uniform(-1.0, 1.0);
                s = deep_step(m, s, u);
                for (std::size_t i = 0; i < m.depth(); ++i) {
                    if (first_entry[i] < 0 && inf_norm(s.x[i]) <= 1.0)
                        first_entry[i] = static_cast<std::int64_t>(k);
                    for (std::size_t j = 0; j < s.x[i].size(); ++j) {
                        const double env = entry_envelope(
                            ebs[i], x0.x[i][j], static_cast<std::int64_t>(k));
                        if (std::abs(s.x[i][j]) > env + 1e-9) {
                            note = "envelope violated at k=" + std::to_string(k);
                            return false;
                        }
                    }
                }
            }
            for (std::size_t i = 0; i < m.depth(); ++i) {
                if (first_entry[i] < 0) {
                    note = "trajectory never entered X within the horizon";
                    return false;
                }
                if (!ebs[i].entry_time_unbounded && first_entry[i] > ebs[i].k_bar) {
                    note = "entered after the certified k_bar";
                    return false;
                }
            }
        }
    }
    if (trials != 500) {
        note = "trial count mismatch";
        return false;
    }
    return true;
}

// --- criterion 3: ISS trajectory bound --------------------------------------

bool crit_iss_bound(std::string& note) {
    Rng rng(303);
    int layers_done = 0;
    std::size_t trials = 0;
    while (layers_done < 50) {
        const auto n_x = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const auto p = random_layer(n_x, 2, rng.uniform(0.1, 0.8), rng);
        if (!iss_condition(p).certified) continue;
        ++layers_done;
        VerificationPlan plan;
        plan.trials = 40;
        plan.horizon = 500;
        plan.seed = 5000 + static_cast<std::uint64_t>(layers_done);
        if (layers_done % 2 == 0) {
            plan.state_box = StateBox::inflated;
            plan.inflation = 3.0;
        }
        const auto out = verify_iss_bound(p, plan);
        trials += out.trials;
        if (!out.passed()) {
            note = "layer " + std::to_string(layers_done) + ": " +
                   std::to_string(out.violations) + " violations, worst margin " +
                   format_double(out.worst_margin);
            return false;
        }
    }
    note = std::to_string(trials) + " trials, 0 violations";
    return true;
}

// --- criterion 4: deltaISS trajectory bound ---------------------------------

bool crit_delta_iss_bound(std::string& note) {
    Rng rng(404);
    const std::vector<std::vector<std::size_t>> archs{{4}, {3, 3}, {3, 3, 3}};
    for (std::size_t a = 0; a < archs.size(); ++a) {
        const auto m = certified_model(rng, archs[a], 0.25);
        VerificationPlan plan;
        plan.trials = 2000;
        plan.horizon = 500;
        plan.seed = 7000 + static_cast<std::uint64_t>(a);
        const auto out = verify_delta_iss_bound(m, plan);
        if (!out.passed()) {
            note = "arch " + std::to_string(a) + ": " +
                   std::to_string(out.violations) + " violations";
            return false;
        }
        // Identical inputs: the state gap must have died out by the horizon.
        Rng pair_rng(7100 + static_cast<std::uint64_t>(a));
        for (int t = 0; t < 50; ++t) {
            auto sa = GruState::random_in_x(m, pair_rng);
            auto sb = GruState::random_in_x(m, pair_rng);
            for (int k = 0; k < 500; ++k) {
                Vector u(m.input_size());
                for (auto& v : u) v = pair_rng.uniform(-1.0, 1.0);
                sa = deep_step(m, sa, u);
                sb = deep_step(m, sb, u);
            }
            double gap = 0.0;
            for (std::size_t i = 0; i < sa.x.size(); ++i)
                for (std::size_t j = 0; j < sa.x[i].size(); ++j)
                    gap = std::max(gap, std::abs(sa.x[i][j] - sb.x[i][j]));
            if (!(gap < 1e-6)) {
                note = "arch " + std::to_string(a) +
                       ": identical-input state gap " + format_double(gap) +
                       " above 1e-6 at the horizon";
                return false;
            }
        }
    }
    return true;
}

// --- criterion 5: deltaISS certificate implies ISS certificate --------------

bool crit_implication(std::string& note) {
    Rng rng(505);
    int certified = 0, uncertified = 0;
    for (int t = 0; t < 10000; ++t) {
        const auto n_x = static_cast<std::size_t>(rng.uniform_int(1, 4));
        const auto n_u = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const auto p = random_layer(n_x, n_u, rng.uniform(0.05, 2.0), rng);
        const double nu = relaxed_delta_iss_residual(p);
        const double lhs = iss_condition(p).lhs;
        if (nu < 0.0 && lhs >= 1.0) {
            note = "draw " + std::to_string(t) + ": nu=" + format_double(nu) +
                   " but ISS lhs=" + format_double(lhs);
            return false;
        }
        (nu < 0.0 ? certified : uncertified)++;
    }
    if (certified < 500 || uncertified < 500) {
        note = "draw range failed to span both regions";
        return false;
    }
    return true;
}

// --- criterion 6: BPTT vs finite differences --------------------------------

struct ParamView {
    std::vector<double*> slots;
};

ParamView view_params(DeepGruModel& m) {
    ParamView v;
    for (auto& l : m.layers) {
        for (auto* mat : {&l.W_z, &l.U_z, &l.W_f, &l.U_f, &l.W_r, &l.U_r})
            for (auto& x : mat->a) v.slots.push_back(&x);
        for (auto* vec : {&l.b_z, &l.b_f, &l.b_r})
            for (auto& x : *vec) v.slots.push_back(&x);
    }
    for (auto& x : m.U_o.a) v.slots.push_back(&x);
    for (auto& x : m.b_o) v.slots.push_back(&x);
    return v;
}

std::vector<double> view_grads(const ModelGrads& g) {
    std::vector<double> v;
    for (const auto& l : g.layers) {
        for (const auto* mat : {&l.W_z, &l.U_z, &l.W_f, &l.U_f, &l.W_r, &l.U_r})
            for (double x : mat->a) v.push_back(x);
        for (const auto* vec : {&l.b_z, &l.b_f, &l.b_r})
            for (double x : *vec) v.push_back(x);
    }
    for (double x : g.U_o.a) v.push_back(x);
    for (double x : g.b_o) v.push_back(x);
    return v;
}

bool crit_gradcheck(std::string& note) {
    Rng rng(606);
    auto m = random_model({5, 5}, 2, 2, 0.4, rng);
    Experiment e;
    e.units = Units::normalized;
    e.inputs.resize(30);
    e.outputs.resize(30);
    for (auto& u : e.inputs)
        for (auto& v : u) v = rng.uniform(-1.0, 1.0);
    for (auto& y : e.outputs)
        for (auto& v : y) v = rng.uniform(-1.0, 1.0);
    TrainConfig cfg;
    cfg.washout = 5;
    const GruState x0 = GruState::zero(m);

    // The penalty kink sits at nu = -clearance; stay clear of it so central
    // differences see a smooth function.
    const auto [parts0, grads] = gradients(m, e, cfg, x0);
    for (double nu : parts0.nu)
        if (std::abs(nu + cfg.clearance) < 1e-3) {
            note = "residual landed on the penalty kink; reseed required";
            return false;
        }

    auto pv = view_params(m);
    const auto gv = view_grads(grads);
    if (pv.slots.size() != gv.size()) {
        note = "parameter/gradient layout mismatch";
        return false;
    }
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < pv.slots.size(); ++i) {
        const double saved = *pv.slots[i];
        *pv.slots[i] = saved + h;
        const double up = sequence_loss(m, e, cfg, x0).total;
        *pv.slots[i] = saved - h;
        const double dn = sequence_loss(m, e, cfg, x0).total;
        *pv.slots[i] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double rel =
            std::abs(fd - gv[i]) / std::max({std::abs(fd), std::abs(gv[i]), 1e-6});
        worst = std::max(worst, rel);
    }
    note = "max relative error " + format_double(worst) + " over " +
           std::to_string(pv.slots.size()) + " parameters";
    return worst < 1e-4;
}

// --- criterion 7: plant correctness -----------------------------------------

bool crit_plant(std::string& note) {
    TankConfig cfg;
    const double qa = 0.5e-3, qb = 0.7e-3;
    const auto eq = tank_equilibrium(cfg, qa, qb);
    std::vector<std::array<double, 2>> flows(2000, {qa, qb});
    const auto traj = integrate(cfg, TankState{}, flows, 15.0, 1.0);
    for (int i = 0; i < 4; ++i) {
        const double rel = std::abs(traj.back().h[i] - eq.h[i]) / eq.h[i];
        if (!(rel < 1e-3)) {
            note = "equilibrium mismatch on tank " + std::to_string(i + 1);
            return false;
        }
    }

    // Step halving, away from the h = 0 boundary where sqrt(h) has an
    // unbounded derivative: start at one operating point and step to another.
    const auto start = tank_equilibrium(cfg, 0.3e-3, 0.4e-3);
    std::vector<std::array<double, 2>> short_flows(60, {qa, qb});
    const auto coarse = integrate(cfg, start, short_flows, 15.0, 1.0);
    const auto fine = integrate(cfg, start, short_flows, 15.0, 0.5);
    for (std::size_t k = 0; k < coarse.size(); ++k)
        for (int i = 0; i < 4; ++i)
            if (!(std::abs(coarse[k].h[i] - fine[k].h[i]) < 1e-6)) {
                note = "step halving moved the trajectory by >= 1e-6 m";
                return false;
            }

    std::vector<std::array<double, 2>> zero_flows(200, {0.0, 0.0});
    const auto drain = integrate(cfg, eq, zero_flows, 15.0, 1.0);
    double volume = eq.h[0] + eq.h[1] + eq.h[2] + eq.h[3];
    for (const auto& s : drain) {
        const double v = s.h[0] + s.h[1] + s.h[2] + s.h[3];
        if (v > volume + 1e-12) {
            note = "zero-inflow volume increased";
            return false;
        }
        volume = v;
    }
    return true;
}

// --- criterion 8: desk-scale end-to-end -------------------------------------

struct DeskRun {
    Dataset dataset;
    TrainResult penalized;
    std::vector<double> baseline_nu;
    double mean_fit = 0.0;
};

constexpr std::uint64_t kDeskDataSeed = 2026;
constexpr std::uint64_t kDeskTrainSeed = 1;

DeskRun desk_run() {
    DeskRun r;
    TankConfig tank;
    r.dataset = generate_dataset(tank, DatasetProtocol::desk(), kDeskDataSeed);

    TrainConfig tc;  // defaults: penalty on, rho+ 2e-4, rho- 2e-6, eps 0.05
    tc.seed = kDeskTrainSeed;
    r.penalized = train(r.dataset, {5, 5}, tc);

    TrainConfig base = tc;
    base.rho_plus = 0.0;
    base.rho_minus = 0.0;
    const auto baseline = train(r.dataset, {5, 5}, base);
    r.baseline_nu = layer_residuals(baseline.model);

    const auto test_idx = r.dataset.indices(Split::test);
    Rng fit_rng(kDeskTrainSeed);
    for (std::size_t idx : test_idx) {
        const auto e = normalize_experiment(r.dataset.experiments[idx],
                                            r.penalized.model.input_scaler,
                                            r.penalized.model.output_scaler);
        r.mean_fit += fit_index(r.penalized.model, e,
                                GruState::random_in_x(r.penalized.model, fit_rng));
    }
    r.mean_fit /= static_cast<double>(test_idx.size());
    return r;
}

bool crit_end_to_end(DeskRun& out, std::string& note) {
    out = desk_run();
    const auto nu = layer_residuals(out.penalized.model);
    for (double v : nu)
        if (!(v < -0.05)) {
            note = "penalized model residual " + format_double(v) + " >= -0.05";
            return false;
        }
    bool baseline_violates = false;
    for (double v : out.baseline_nu)
        if (v > 0.0) baseline_violates = true;
    std::string nus;
    for (double v : out.baseline_nu) nus += " " + format_double(v);
    note = "mean test FIT " + format_double(out.mean_fit) +
           "% (soft target 85%); baseline residuals:" + nus + "; epochs " +
           std::to_string(out.penalized.history.epochs.size());
    if (!baseline_violates) {
        note += "; baseline never crossed nu > 0";
        return false;
    }
    return true;
}

// --- criterion 9: penalty oracle --------------------------------------------

bool crit_penalty(std::string& note) {
    TrainConfig cfg;
    const double eps = cfg.clearance;
    struct Case {
        double nu, expect;
    };
    const Case cases[]{
        {-1.0, cfg.rho_minus * (-1.0 + eps)},
        {-0.05, 0.0},
        {0.95, cfg.rho_plus * (0.95 + eps)},
    };
    for (const auto& c : cases)
        if (!(std::abs(penalty(c.nu, cfg) - c.expect) < 1e-15)) {
            note = "penalty(" + format_double(c.nu) + ") off the oracle";
            return false;
        }
    return true;
}

// --- criterion 10: determinism ----------------------------------------------

bool same_dir_bytes(const fs::path& a, const fs::path& b, std::string& note) {
    std::vector<std::string> names;
    for (const auto& ent : fs::directory_iterator(a))
        names.push_back(ent.path().filename().string());
    for (const auto& name : names) {
        if (!fs::exists(b / name)) {
            note = "missing " + name;
            return false;
        }
        if (read_file((a / name).string()) != read_file((b / name).string())) {
            note = name + " differs between reruns";
            return false;
        }
    }
    return true;
}

bool crit_determinism(const DeskRun& first, std::string& note) {
    // Dataset bytes.
    TankConfig tank;
    const auto d2 = generate_dataset(tank, DatasetProtocol::desk(), kDeskDataSeed);
    const auto tmp = fs::temp_directory_path();
    const auto da = tmp / "grustab_acc_ds_a";
    const auto db = tmp / "grustab_acc_ds_b";
    fs::remove_all(da);
    fs::remove_all(db);
    save_dataset(first.dataset, da.string());
    save_dataset(d2, db.string());
    const bool ds_ok = same_dir_bytes(da, db, note);
    fs::remove_all(da);
    fs::remove_all(db);
    if (!ds_ok) return false;

    // Training checkpoint and history bytes.
    TrainConfig tc;
    tc.seed = kDeskTrainSeed;
    const auto retrained = train(first.dataset, {5, 5}, tc);
    if (model_to_json(retrained.model) != model_to_json(first.penalized.model)) {
        note = "checkpoint differs between reruns";
        return false;
    }
    if (history_to_csv(retrained.history) != history_to_csv(first.penalized.history)) {
        note = "history differs between reruns";
        return false;
    }

    // Verification outcomes.
    VerificationPlan plan;
    plan.trials = 500;
    plan.horizon = 100;
    plan.seed = 77;
    const auto v1 = verify_delta_iss_bound(first.penalized.model, plan);
    const auto v2 = verify_delta_iss_bound(first.penalized.model, plan);
    if (v1.worst_margin != v2.worst_margin || v1.violations != v2.violations) {
        note = "verification outcome differs between reruns";
        return false;
    }
    return true;
}

}  // namespace

int main() {
    run(1, "single-step invariance", crit_invariance);
    run(2, "entry time + envelope", crit_entry);
    run(3, "ISS trajectory bound", crit_iss_bound);
    run(4, "deltaISS trajectory bound", crit_delta_iss_bound);
    run(5, "certificate implication", crit_implication);
    run(6, "gradient check", crit_gradcheck);
    run(7, "plant correctness", crit_plant);

    DeskRun desk;
    bool desk_ok = false;
    run(8, "desk-scale end-to-end", [&](std::string& note) {
        desk_ok = crit_end_to_end(desk, note);
        return desk_ok;
    });
    run(9, "penalty oracle", crit_penalty);
    run(10, "determinism", [&](std::string& note) {
        if (!desk_ok && desk.penalized.history.epochs.empty()) {
            note = "skipped: desk run unavailable";
            return false;
        }
        return crit_determinism(desk, note);
    });

    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
