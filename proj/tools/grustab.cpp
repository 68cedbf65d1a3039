// grustab: dataset generation, training, certification, empirical
// verification and evaluation for stability-certified GRU models of the
// quadruple-tank process.

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "grustab/bounds.hpp"
#include "grustab/certificates.hpp"
#include "grustab/gru.hpp"
#include "grustab/io.hpp"
#include "grustab/plant.hpp"
#include "grustab/training.hpp"
#include "grustab/verify.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace grustab;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit codes (stable scripting contract).
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kCertificateFailure = 3;
constexpr int kEmpiricalViolation = 4;
constexpr int kDivergence = 5;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    try {
        return json::parse(read_file(path));
    } catch (const std::exception& e) {
        throw UsageError("config file '" + path + "': " + e.what());
    }
}

void write_manifest(const std::string& dir, const std::string& command,
                    const ordered_json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    ordered_json m;
    m["command"] = command;
    m["tool_version"] = kVersion;
    m["seed"] = seed;
    m["config"] = config;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    const auto now = std::chrono::system_clock::now();
    m["wall_clock_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch())
            .count();
    write_file_atomic((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

DatasetProtocol protocol_from(const std::string& preset, const json& cfg) {
    DatasetProtocol p =
        preset == "desk" ? DatasetProtocol::desk() : DatasetProtocol::paper();
    auto get = [&](const char* key, auto& slot) {
        if (cfg.contains(key)) slot = cfg.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("n_experiments", p.n_experiments);
    get("samples", p.samples);
    get("tau_s", p.tau_s);
    get("n_train", p.n_train);
    get("n_validation", p.n_validation);
    get("n_test", p.n_test);
    get("input_noise_std", p.input_noise_std);
    get("measurement_noise_std", p.measurement_noise_std);
    get("mprs_levels", p.mprs_levels);
    get("mprs_hold_min", p.mprs_hold_min);
    get("mprs_hold_max", p.mprs_hold_max);
    get("internal_step", p.internal_step);
    return p;
}

ordered_json protocol_to_json(const DatasetProtocol& p) {
    ordered_json j;
    j["n_experiments"] = p.n_experiments;
    j["samples"] = p.samples;
    j["tau_s"] = p.tau_s;
    j["n_train"] = p.n_train;
    j["n_validation"] = p.n_validation;
    j["n_test"] = p.n_test;
    j["input_noise_std"] = p.input_noise_std;
    j["measurement_noise_std"] = p.measurement_noise_std;
    j["mprs_levels"] = p.mprs_levels;
    j["mprs_hold_min"] = p.mprs_hold_min;
    j["mprs_hold_max"] = p.mprs_hold_max;
    j["internal_step"] = p.internal_step;
    return j;
}

std::vector<std::size_t> parse_arch(const std::string& arch) {
    // "MxN": M identical layers of N units.
    const auto x = arch.find('x');
    if (x == std::string::npos) throw UsageError("--arch expects MxN, e.g. 3x7");
    try {
        const int m = std::stoi(arch.substr(0, x));
        const int n = std::stoi(arch.substr(x + 1));
        if (m < 1 || n < 1) throw UsageError("--arch sizes must be positive");
        return std::vector<std::size_t>(static_cast<std::size_t>(m),
                                        static_cast<std::size_t>(n));
    } catch (const UsageError&) {
        throw;
    } catch (const std::exception&) {
        throw UsageError("--arch expects MxN, e.g. 3x7");
    }
}

ordered_json report_to_json(const StabilityReport& rep) {
    ordered_json j;
    j["mode"] = to_string(rep.mode);
    j["certified"] = rep.certified();
    j["all_iss"] = rep.all_iss;
    j["all_delta_iss"] = rep.all_delta_iss;
    j["layers"] = ordered_json::array();
    for (const auto& l : rep.layers) {
        ordered_json lj;
        lj["iss_lhs"] = l.iss_lhs;
        lj["iss_certified"] = l.iss_certified;
        lj["nu"] = l.nu;
        lj["delta_iss_certified"] = l.delta_iss_certified;
        lj["lambda_check"] = l.lambda_check;
        lj["lambda_prev"] = l.lambda_prev;
        lj["relaxed"] = l.relaxed;
        j["layers"].push_back(lj);
    }
    return j;
}

ordered_json outcome_to_json(const VerificationOutcome& o) {
    ordered_json j;
    j["check"] = o.check;
    j["trials"] = o.trials;
    j["violations"] = o.violations;
    j["worst_margin"] = o.worst_margin;
    j["passed"] = o.passed();
    if (o.witness) {
        j["witness"]["trial"] = o.witness->trial;
        j["witness"]["seed"] = o.witness->seed;
    }
    return j;
}

void print_report(const StabilityReport& rep) {
    std::printf("mode: %s\n", to_string(rep.mode).c_str());
    std::printf("layer  iss_lhs      nu           certified\n");
    for (std::size_t i = 0; i < rep.layers.size(); ++i) {
        const auto& l = rep.layers[i];
        const bool cert =
            rep.mode == CertifyMode::iss ? l.iss_certified : l.delta_iss_certified;
        std::printf("%-6zu %-12.6g %-12.6g %s\n", i + 1, l.iss_lhs, l.nu,
                    cert ? "yes" : "no");
    }
    std::printf("overall: %s\n", rep.certified() ? "certified" : "NOT certified");
}

int cmd_generate(const std::string& config_path, const std::string& preset,
                 std::uint64_t seed, const std::string& out) {
    const json cfg = load_config(config_path);
    const DatasetProtocol proto = protocol_from(preset, cfg);
    TankConfig tank;
    const Dataset d = generate_dataset(tank, proto, seed);
    save_dataset(d, out);
    std::vector<std::string> files{"meta.json"};
    for (const auto& e : d.experiments) files.push_back(e.id + ".csv");
    write_manifest(out, "generate", protocol_to_json(proto), seed, {}, files);
    std::printf("dataset: %zu experiments x %zu samples -> %s\n",
                d.experiments.size(), proto.samples, out.c_str());
    return kOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& preset, std::uint64_t seed,
              const std::string& arch_flag, const std::string& penalty_flag,
              const std::string& out) {
    const json cfg = load_config(config_path);
    const Dataset d = load_dataset(data_dir);

    std::string arch = arch_flag;
    if (arch.empty()) arch = preset == "desk" ? "2x5" : "3x7";
    if (cfg.contains("arch")) arch = cfg.at("arch").get<std::string>();
    const auto widths = parse_arch(arch);

    TrainConfig tc;
    tc.seed = seed;
    auto get = [&](const char* key, auto& slot) {
        if (cfg.contains(key)) slot = cfg.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("washout", tc.washout);
    get("rho_plus", tc.rho_plus);
    get("rho_minus", tc.rho_minus);
    get("clearance", tc.clearance);
    get("learning_rate", tc.learning_rate);
    get("max_epochs", tc.max_epochs);
    get("patience", tc.patience);
    if (cfg.contains("truncation"))
        tc.truncation = cfg.at("truncation").get<std::size_t>();
    if (penalty_flag == "off") {
        tc.rho_plus = 0.0;
        tc.rho_minus = 0.0;
    }

    ordered_json snapshot;
    snapshot["arch"] = arch;
    snapshot["washout"] = tc.washout;
    snapshot["rho_plus"] = tc.rho_plus;
    snapshot["rho_minus"] = tc.rho_minus;
    snapshot["clearance"] = tc.clearance;
    snapshot["learning_rate"] = tc.learning_rate;
    snapshot["max_epochs"] = tc.max_epochs;
    snapshot["patience"] = tc.patience;

    fs::create_directories(out);
    TrainResult result;
    try {
        result = train(d, widths, tc);
    } catch (const DivergenceError& e) {
        write_file_atomic((fs::path(out) / "history.csv").string(),
                          history_to_csv(e.history));
        std::fprintf(stderr, "error: training diverged: %s\n", e.what());
        return kDivergence;
    } catch (const InfeasibleError& e) {
        write_file_atomic((fs::path(out) / "history.csv").string(),
                          history_to_csv(e.history));
        std::fprintf(stderr, "error: %s\n", e.what());
        return kCertificateFailure;
    }

    save_model(result.model, (fs::path(out) / "model.json").string());
    write_file_atomic((fs::path(out) / "history.csv").string(),
                      history_to_csv(result.history));
    const auto rep = certify_deep(result.model, CertifyMode::delta_iss_relaxed);
    write_file_atomic((fs::path(out) / "stability_report.json").string(),
                      report_to_json(rep).dump(2) + "\n");
    write_manifest(out, "train", snapshot, seed, {data_dir},
                   {"model.json", "history.csv", "stability_report.json"});
    std::printf("trained %zu epochs (best %zu); model -> %s\n",
                result.history.epochs.size(), result.history.best_epoch,
                (fs::path(out) / "model.json").string().c_str());
    print_report(rep);
    return kOk;
}

int cmd_certify(const std::string& model_path, const std::string& mode_flag,
                const std::vector<double>& lambdas, const std::string& out,
                std::uint64_t seed) {
    const DeepGruModel m = load_model(model_path);
    CertifyMode mode = CertifyMode::delta_iss_relaxed;
    if (mode_flag == "iss")
        mode = CertifyMode::iss;
    else if (mode_flag == "strict")
        mode = CertifyMode::delta_iss_strict;
    else if (mode_flag != "relaxed")
        throw UsageError("--mode must be iss, strict or relaxed");

    StabilityReport rep;
    try {
        rep = certify_deep(m, mode, lambdas);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    print_report(rep);
    if (!out.empty()) {
        fs::create_directories(out);
        write_file_atomic((fs::path(out) / "stability_report.json").string(),
                          report_to_json(rep).dump(2) + "\n");
        ordered_json snapshot;
        snapshot["mode"] = mode_flag;
        snapshot["lambdas"] = lambdas;
        write_manifest(out, "certify", snapshot, seed, {model_path},
                       {"stability_report.json"});
    }
    return rep.certified() ? kOk : kCertificateFailure;
}

int cmd_verify(const std::string& model_path, const std::string& check,
               std::size_t trials, std::size_t horizon, double inflation,
               const std::string& input_mode, std::uint64_t seed,
               const std::string& out) {
    const DeepGruModel m = load_model(model_path);
    VerificationPlan plan;
    plan.trials = trials;
    plan.horizon = horizon;
    plan.seed = seed;
    if (input_mode == "mprs")
        plan.input_mode = InputMode::mprs;
    else if (input_mode != "iid")
        throw UsageError("--inputs must be iid or mprs");

    std::vector<VerificationOutcome> outcomes;
    auto run = [&](const std::string& name) {
        if (name == "invariance") {
            outcomes.push_back(verify_invariance(m, plan));
        } else if (name == "entry") {
            VerificationPlan p = plan;
            p.state_box = StateBox::inflated;
            p.inflation = inflation > 1.0 ? inflation : 3.0;
            outcomes.push_back(verify_entry(m, p));
        } else if (name == "iss") {
            outcomes.push_back(verify_iss_bound(m.layers.front(), plan));
        } else if (name == "delta_iss") {
            outcomes.push_back(verify_delta_iss_bound(m, plan));
        } else {
            throw UsageError("--check must be invariance, entry, iss, delta_iss or all");
        }
    };
    if (check == "all") {
        for (const char* name : {"invariance", "entry", "iss", "delta_iss"}) run(name);
    } else {
        run(check);
    }

    ordered_json empirical = ordered_json::array();
    bool all_passed = true;
    for (const auto& o : outcomes) {
        empirical.push_back(outcome_to_json(o));
        all_passed = all_passed && o.passed();
        std::printf("%-12s trials=%zu violations=%zu worst_margin=%.3g %s\n",
                    o.check.c_str(), o.trials, o.violations, o.worst_margin,
                    o.passed() ? "ok" : "VIOLATED");
    }
    if (!out.empty()) {
        fs::create_directories(out);
        const auto rep = certify_deep(m, CertifyMode::delta_iss_relaxed);
        ordered_json doc = report_to_json(rep);
        doc["empirical"] = empirical;
        write_file_atomic((fs::path(out) / "stability_report.json").string(),
                          doc.dump(2) + "\n");
        ordered_json snapshot;
        snapshot["check"] = check;
        snapshot["trials"] = trials;
        snapshot["horizon"] = horizon;
        snapshot["inputs"] = input_mode;
        write_manifest(out, "verify", snapshot, seed, {model_path},
                       {"stability_report.json"});
    }
    return all_passed ? kOk : kEmpiricalViolation;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_dir,
                 const std::string& out, std::uint64_t seed) {
    const DeepGruModel m = load_model(model_path);
    const Dataset d = load_dataset(data_dir);
    const auto test_idx = d.indices(Split::test);
    if (test_idx.empty()) throw UsageError("dataset has no test split");

    if (!out.empty()) fs::create_directories(out);
    std::vector<std::string> files;
    double mean = 0.0, lo = 1e300, hi = -1e300;
    Rng x0_rng(seed);
    std::printf("sequence   FIT%%\n");
    for (std::size_t idx : test_idx) {
        const auto& raw = d.experiments[idx];
        const auto e = normalize_experiment(raw, m.input_scaler, m.output_scaler);
        const GruState x0 = GruState::random_in_x(m, x0_rng);
        const double fit = fit_index(m, e, x0);
        mean += fit;
        lo = std::min(lo, fit);
        hi = std::max(hi, fit);
        std::printf("%-10s %.2f\n", raw.id.c_str(), fit);

        if (!out.empty()) {
            const auto traj = simulate(m, x0, e.input_vectors());
            std::ostringstream csv;
            csv << "k,h1_measured,h1_predicted,h2_measured,h2_predicted\n";
            for (std::size_t k = 0; k < traj.outputs.size(); ++k) {
                const Vector pred = m.output_scaler.to_physical(traj.outputs[k]);
                csv << k << ',' << format_double(raw.outputs[k][0]) << ','
                    << format_double(pred[0]) << ','
                    << format_double(raw.outputs[k][1]) << ','
                    << format_double(pred[1]) << '\n';
            }
            const std::string name = "predictions_" + raw.id + ".csv";
            write_file_atomic((fs::path(out) / name).string(), csv.str());
            files.push_back(name);
        }
    }
    mean /= static_cast<double>(test_idx.size());
    std::printf("FIT mean %.2f%% (min: %.2f%%, max: %.2f%%)\n", mean, lo, hi);

    if (!out.empty()) {
        ordered_json summary;
        summary["fit_mean"] = mean;
        summary["fit_min"] = lo;
        summary["fit_max"] = hi;
        write_file_atomic((fs::path(out) / "fit_summary.json").string(),
                          summary.dump(2) + "\n");
        files.push_back("fit_summary.json");
        write_manifest(out, "evaluate", ordered_json::object(), seed,
                       {model_path, data_dir}, files);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stability-certified GRU system identification toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, preset = "paper", out, data_dir, model_path;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "RNG seed");
        sub->add_option("--preset", preset, "paper or desk")
            ->check(CLI::IsMember({"paper", "desk"}));
        auto* o = sub->add_option("--out", out, "output directory");
        if (needs_out) o->required();
    };

    auto* gen = app.add_subcommand("generate", "simulate a quadruple-tank dataset");
    add_common(gen, true);

    auto* tr = app.add_subcommand("train", "train a GRU model on a dataset");
    add_common(tr, true);
    tr->add_option("--data", data_dir, "dataset directory")->required();
    std::string arch, penalty = "on";
    tr->add_option("--arch", arch, "layers x units, e.g. 3x7");
    tr->add_option("--penalty", penalty, "stability penalty on/off")
        ->check(CLI::IsMember({"on", "off"}));

    auto* ce = app.add_subcommand("certify", "check the stability certificates");
    add_common(ce, false);
    ce->add_option("--model", model_path, "model JSON")->required();
    std::string mode = "relaxed";
    std::vector<double> lambdas;
    ce->add_option("--mode", mode, "iss, strict or relaxed");
    ce->add_option("--lambda", lambdas, "per-layer initialization box (strict mode)");

    auto* ve = app.add_subcommand("verify", "Monte-Carlo check of the proven bounds");
    add_common(ve, false);
    ve->add_option("--model", model_path, "model JSON")->required();
    std::string check = "all", input_mode = "iid";
    std::size_t trials = 2000, horizon = 500;
    double inflation = 3.0;
    ve->add_option("--check", check, "invariance, entry, iss, delta_iss or all");
    ve->add_option("--trials", trials, "trial count");
    ve->add_option("--horizon", horizon, "steps per trial");
    ve->add_option("--inflation", inflation, "initial-state box for entry checks");
    ve->add_option("--inputs", input_mode, "iid or mprs");

    auto* ev = app.add_subcommand("evaluate", "FIT on the test split + plot data");
    add_common(ev, false);
    ev->add_option("--model", model_path, "model JSON")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_generate(config_path, preset, seed, out);
        if (tr->parsed())
            return cmd_train(data_dir, config_path, preset, seed, arch, penalty, out);
        if (ce->parsed()) return cmd_certify(model_path, mode, lambdas, out, seed);
        if (ve->parsed())
            return cmd_verify(model_path, check, trials, horizon, inflation,
                              input_mode, seed, out);
        if (ev->parsed()) return cmd_evaluate(model_path, data_dir, out, seed);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDivergence;
    }
    return kUsage;
}
