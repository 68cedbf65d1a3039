#include "grustab/plant.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "grustab/io.hpp"

namespace grustab {

void TankConfig::validate() const {
    require(a1 > 0 && a2 > 0 && a3 > 0 && a4 > 0 && S > 0, "tank areas must be positive");
    require(gamma_a > 0 && gamma_a < 1 && gamma_b > 0 && gamma_b < 1,
            "valve splits must lie in (0, 1)");
    require(cap12 > 0 && cap34 > 0 && qa_max > 0 && qb_max > 0,
            "caps and saturations must be positive");
}

std::array<double, 4> tank_derivative(const TankConfig& cfg, const TankState& s,
                                      double q_a, double q_b) {
    for (double h : s.h) require(h >= 0.0, "tank_derivative: negative level");
    const double g2 = 2.0 * cfg.g;
    const double o1 = cfg.a1 * std::sqrt(g2 * s.h[0]);
    const double o2 = cfg.a2 * std::sqrt(g2 * s.h[1]);
    const double o3 = cfg.a3 * std::sqrt(g2 * s.h[2]);
    const double o4 = cfg.a4 * std::sqrt(g2 * s.h[3]);
    return {
        (-o1 + o3 + cfg.gamma_a * q_a) / cfg.S,
        (-o2 + o4 + cfg.gamma_b * q_b) / cfg.S,
        (-o3 + (1.0 - cfg.gamma_b) * q_b) / cfg.S,
        (-o4 + (1.0 - cfg.gamma_a) * q_a) / cfg.S,
    };
}

TankState tank_equilibrium(const TankConfig& cfg, double q_a, double q_b) {
    q_a = std::clamp(q_a, 0.0, cfg.qa_max);
    q_b = std::clamp(q_b, 0.0, cfg.qb_max);
    const double g2 = 2.0 * cfg.g;
    auto level = [&](double out_area, double inflow) {
        const double v = inflow / out_area;
        return v * v / g2;
    };
    TankState s;
    s.h[2] = level(cfg.a3, (1.0 - cfg.gamma_b) * q_b);
    s.h[3] = level(cfg.a4, (1.0 - cfg.gamma_a) * q_a);
    s.h[0] = level(cfg.a1, cfg.a3 * std::sqrt(g2 * s.h[2]) + cfg.gamma_a * q_a);
    s.h[1] = level(cfg.a2, cfg.a4 * std::sqrt(g2 * s.h[3]) + cfg.gamma_b * q_b);
    return s;
}

namespace {

TankState clamp_state(const TankConfig& cfg, const TankState& s) {
    TankState out;
    for (int i = 0; i < 4; ++i) out.h[i] = std::clamp(s.h[i], 0.0, cfg.cap(i));
    return out;
}

TankState rk4_substep(const TankConfig& cfg, const TankState& s, double q_a,
                      double q_b, double dt) {
    auto eval = [&](const TankState& at) {
        return tank_derivative(cfg, clamp_state(cfg, at), q_a, q_b);
    };
    const auto k1 = eval(s);
    TankState s2, s3, s4;
    for (int i = 0; i < 4; ++i) s2.h[i] = s.h[i] + 0.5 * dt * k1[i];
    const auto k2 = eval(s2);
    for (int i = 0; i < 4; ++i) s3.h[i] = s.h[i] + 0.5 * dt * k2[i];
    const auto k3 = eval(s3);
    for (int i = 0; i < 4; ++i) s4.h[i] = s.h[i] + dt * k3[i];
    const auto k4 = eval(s4);
    TankState out;
    for (int i = 0; i < 4; ++i)
        out.h[i] = s.h[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return clamp_state(cfg, out);
}

}  // namespace

std::vector<TankState> integrate(const TankConfig& cfg, const TankState& s0,
                                 const std::vector<std::array<double, 2>>& flows,
                                 double tau_s, double internal_step) {
    cfg.validate();
    require(internal_step > 0.0 && internal_step <= 1.0,
            "integrate: internal step must lie in (0, 1] s");
    require(tau_s > 0.0, "integrate: sampling period must be positive");
    const auto substeps = static_cast<std::size_t>(std::llround(tau_s / internal_step));
    require(substeps >= 1 && std::abs(substeps * internal_step - tau_s) < 1e-9,
            "integrate: internal step must divide the sampling period");

    std::vector<TankState> samples;
    samples.reserve(flows.size());
    TankState s = clamp_state(cfg, s0);
    for (const auto& flow : flows) {
        const double q_a = std::clamp(flow[0], 0.0, cfg.qa_max);
        const double q_b = std::clamp(flow[1], 0.0, cfg.qb_max);
        for (std::size_t i = 0; i < substeps; ++i) {
            s = rk4_substep(cfg, s, q_a, q_b, internal_step);
            for (double h : s.h)
                require(std::isfinite(h), "integrate: nonfinite state");
        }
        samples.push_back(s);
    }
    return samples;
}

std::vector<double> mprs(std::size_t length, int levels, int hold_min, int hold_max,
                         double lo, double hi, Rng& rng) {
    require(levels >= 2, "mprs: need at least two amplitude levels");
    require(hold_min >= 1 && hold_max >= hold_min, "mprs: bad hold range");
    std::vector<double> signal;
    signal.reserve(length);
    while (signal.size() < length) {
        const auto idx = rng.uniform_int(0, levels - 1);
        const double amp = lo + (hi - lo) * static_cast<double>(idx) / (levels - 1);
        const auto hold = rng.uniform_int(hold_min, hold_max);
        for (std::int64_t i = 0; i < hold && signal.size() < length; ++i)
            signal.push_back(amp);
    }
    return signal;
}

std::vector<Vector> Experiment::input_vectors() const {
    std::vector<Vector> out;
    out.reserve(inputs.size());
    for (const auto& u : inputs) out.push_back({u[0], u[1]});
    return out;
}

std::vector<Vector> Experiment::output_vectors() const {
    std::vector<Vector> out;
    out.reserve(outputs.size());
    for (const auto& y : outputs) out.push_back({y[0], y[1]});
    return out;
}

DatasetProtocol DatasetProtocol::paper() { return DatasetProtocol{}; }

DatasetProtocol DatasetProtocol::desk() {
    DatasetProtocol p;
    p.n_experiments = 6;
    p.samples = 300;
    p.n_train = 4;
    p.n_validation = 1;
    p.n_test = 1;
    return p;
}

std::vector<std::size_t> Dataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

Dataset generate_dataset(const TankConfig& cfg, const DatasetProtocol& protocol,
                         std::uint64_t seed) {
    cfg.validate();
    require(protocol.n_train + protocol.n_validation + protocol.n_test ==
                protocol.n_experiments,
            "generate_dataset: split sizes must sum to the experiment count");
    Dataset d;
    d.protocol = protocol;
    d.seed = seed;
    d.config = cfg;
    const Rng base(seed);

    for (std::size_t l = 0; l < protocol.n_experiments; ++l) {
        Rng stream = base.split(l);
        Experiment e;
        {
            std::ostringstream id;
            id << "exp" << (l < 10 ? "0" : "") << l;
            e.id = id.str();
        }
        e.tau_s = protocol.tau_s;

        const auto qa = mprs(protocol.samples, protocol.mprs_levels,
                             protocol.mprs_hold_min, protocol.mprs_hold_max, 0.0,
                             cfg.qa_max, stream);
        const auto qb = mprs(protocol.samples, protocol.mprs_levels,
                             protocol.mprs_hold_min, protocol.mprs_hold_max, 0.0,
                             cfg.qb_max, stream);
        std::vector<std::array<double, 2>> flows(protocol.samples);
        for (std::size_t k = 0; k < protocol.samples; ++k) flows[k] = {qa[k], qb[k]};

        // Start at the steady state of the first flow pair: the record then
        // contains operating-point transients instead of a fill-from-empty
        // ramp shared by every experiment.
        TankState s0 = tank_equilibrium(cfg, qa[0], qb[0]);
        for (int i = 0; i < 4; ++i) s0.h[i] = std::min(s0.h[i], cfg.cap(i));
        const auto trace =
            integrate(cfg, s0, flows, protocol.tau_s, protocol.internal_step);

        e.inputs.resize(protocol.samples);
        e.outputs.resize(protocol.samples);
        for (std::size_t k = 0; k < protocol.samples; ++k) {
            e.inputs[k] = {flows[k][0] + stream.normal(0.0, protocol.input_noise_std),
                           flows[k][1] + stream.normal(0.0, protocol.input_noise_std)};
            e.outputs[k] = {
                trace[k].h[0] + stream.normal(0.0, protocol.measurement_noise_std),
                trace[k].h[1] + stream.normal(0.0, protocol.measurement_noise_std)};
        }
        d.experiments.push_back(std::move(e));

        Split split = Split::train;
        if (l >= protocol.n_train + protocol.n_validation)
            split = Split::test;
        else if (l >= protocol.n_train)
            split = Split::validation;
        d.splits.push_back(split);
    }
    fit_scalers(d);
    return d;
}

namespace {

AffineScaler minmax_scaler(const std::vector<const Experiment*>& exps, bool use_inputs) {
    Vector lo(2, std::numeric_limits<double>::infinity());
    Vector hi(2, -std::numeric_limits<double>::infinity());
    for (const Experiment* e : exps) {
        const auto& rows = use_inputs ? e->inputs : e->outputs;
        for (const auto& row : rows)
            for (int c = 0; c < 2; ++c) {
                lo[c] = std::min(lo[c], row[c]);
                hi[c] = std::max(hi[c], row[c]);
            }
    }
    AffineScaler s;
    s.offset = Vector(2);
    s.scale = Vector(2);
    for (int c = 0; c < 2; ++c) {
        require(hi[c] > lo[c], "fit_scalers: constant channel");
        s.offset[c] = 0.5 * (hi[c] + lo[c]);
        s.scale[c] = 0.5 * (hi[c] - lo[c]);
    }
    return s;
}

}  // namespace

void fit_scalers(Dataset& d) {
    std::vector<const Experiment*> train;
    for (std::size_t i = 0; i < d.experiments.size(); ++i)
        if (d.splits[i] == Split::train) train.push_back(&d.experiments[i]);
    require(!train.empty(), "fit_scalers: empty training split");
    d.input_scaler = minmax_scaler(train, true);
    d.output_scaler = minmax_scaler(train, false);
}

Experiment normalize_experiment(const Experiment& e, const AffineScaler& in_s,
                                const AffineScaler& out_s, std::size_t* clipped) {
    require(e.units == Units::physical, "normalize_experiment: already normalized");
    Experiment out = e;
    out.units = Units::normalized;
    std::size_t clips = 0;
    auto normalize = [&](std::vector<std::array<double, 2>>& rows,
                         const AffineScaler& s) {
        for (auto& row : rows)
            for (int c = 0; c < 2; ++c) {
                double v = (row[c] - s.offset[c]) / s.scale[c];
                if (v < -1.0 || v > 1.0) {
                    v = std::clamp(v, -1.0, 1.0);
                    ++clips;
                }
                row[c] = v;
            }
    };
    normalize(out.inputs, in_s);
    normalize(out.outputs, out_s);
    if (clipped) *clipped = clips;
    return out;
}

namespace {

using nlohmann::ordered_json;

ordered_json scaler_json(const AffineScaler& s) {
    ordered_json j;
    j["offset"] = vector_to_json(s.offset);
    j["scale"] = vector_to_json(s.scale);
    return j;
}

AffineScaler scaler_from(const nlohmann::json& j) {
    AffineScaler s;
    s.offset = vector_from_json(j.at("offset"));
    s.scale = vector_from_json(j.at("scale"));
    return s;
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw std::runtime_error("unknown split label: " + s);
}

}  // namespace

void save_dataset(const Dataset& d, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    ordered_json meta;
    meta["format_version"] = 1;
    meta["seed"] = d.seed;
    ordered_json proto;
    proto["n_experiments"] = d.protocol.n_experiments;
    proto["samples"] = d.protocol.samples;
    proto["tau_s"] = d.protocol.tau_s;
    proto["n_train"] = d.protocol.n_train;
    proto["n_validation"] = d.protocol.n_validation;
    proto["n_test"] = d.protocol.n_test;
    proto["input_noise_std"] = d.protocol.input_noise_std;
    proto["measurement_noise_std"] = d.protocol.measurement_noise_std;
    proto["mprs_levels"] = d.protocol.mprs_levels;
    proto["mprs_hold_min"] = d.protocol.mprs_hold_min;
    proto["mprs_hold_max"] = d.protocol.mprs_hold_max;
    proto["internal_step"] = d.protocol.internal_step;
    // Recorded-input noise placement and cap-overflow clamping are modeling
    // choices; flagged here so downstream consumers can tell.
    proto["noise_on_recorded_inputs"] = true;
    proto["overflow_clamped_at_caps"] = true;
    meta["protocol"] = std::move(proto);
    ordered_json cfgj;
    cfgj["a1"] = d.config.a1;
    cfgj["a2"] = d.config.a2;
    cfgj["a3"] = d.config.a3;
    cfgj["a4"] = d.config.a4;
    cfgj["S"] = d.config.S;
    cfgj["gamma_a"] = d.config.gamma_a;
    cfgj["gamma_b"] = d.config.gamma_b;
    cfgj["g"] = d.config.g;
    cfgj["qa_max"] = d.config.qa_max;
    cfgj["qb_max"] = d.config.qb_max;
    cfgj["cap12"] = d.config.cap12;
    cfgj["cap34"] = d.config.cap34;
    meta["tank_config"] = std::move(cfgj);
    meta["units"] = d.units == Units::physical ? "physical" : "normalized";
    meta["input_scaler"] = scaler_json(d.input_scaler);
    meta["output_scaler"] = scaler_json(d.output_scaler);
    ordered_json splitmap = ordered_json::object();
    for (std::size_t i = 0; i < d.experiments.size(); ++i)
        splitmap[d.experiments[i].id] = split_name(d.splits[i]);
    meta["splits"] = std::move(splitmap);
    write_file_atomic(dir + "/meta.json", meta.dump(2) + "\n");

    for (const auto& e : d.experiments) {
        std::ostringstream csv;
        csv << "k,q_a,q_b,h1,h2\n";
        for (std::size_t k = 0; k < e.inputs.size(); ++k) {
            csv << k << ',' << format_double(e.inputs[k][0]) << ','
                << format_double(e.inputs[k][1]) << ','
                << format_double(e.outputs[k][0]) << ','
                << format_double(e.outputs[k][1]) << '\n';
        }
        write_file_atomic(dir + "/" + e.id + ".csv", csv.str());
    }
}

Dataset load_dataset(const std::string& dir) {
    const auto meta = nlohmann::json::parse(read_file(dir + "/meta.json"));
    require(meta.at("format_version").get<int>() == 1, "unsupported dataset format");
    Dataset d;
    d.seed = meta.at("seed").get<std::uint64_t>();
    const auto& proto = meta.at("protocol");
    d.protocol.n_experiments = proto.at("n_experiments").get<std::size_t>();
    d.protocol.samples = proto.at("samples").get<std::size_t>();
    d.protocol.tau_s = proto.at("tau_s").get<double>();
    d.protocol.n_train = proto.at("n_train").get<std::size_t>();
    d.protocol.n_validation = proto.at("n_validation").get<std::size_t>();
    d.protocol.n_test = proto.at("n_test").get<std::size_t>();
    d.protocol.input_noise_std = proto.at("input_noise_std").get<double>();
    d.protocol.measurement_noise_std = proto.at("measurement_noise_std").get<double>();
    d.protocol.mprs_levels = proto.at("mprs_levels").get<int>();
    d.protocol.mprs_hold_min = proto.at("mprs_hold_min").get<int>();
    d.protocol.mprs_hold_max = proto.at("mprs_hold_max").get<int>();
    d.protocol.internal_step = proto.at("internal_step").get<double>();
    const auto& cfgj = meta.at("tank_config");
    d.config.a1 = cfgj.at("a1").get<double>();
    d.config.a2 = cfgj.at("a2").get<double>();
    d.config.a3 = cfgj.at("a3").get<double>();
    d.config.a4 = cfgj.at("a4").get<double>();
    d.config.S = cfgj.at("S").get<double>();
    d.config.gamma_a = cfgj.at("gamma_a").get<double>();
    d.config.gamma_b = cfgj.at("gamma_b").get<double>();
    d.config.g = cfgj.at("g").get<double>();
    d.config.qa_max = cfgj.at("qa_max").get<double>();
    d.config.qb_max = cfgj.at("qb_max").get<double>();
    d.config.cap12 = cfgj.at("cap12").get<double>();
    d.config.cap34 = cfgj.at("cap34").get<double>();
    d.units = meta.at("units").get<std::string>() == "normalized" ? Units::normalized
                                                                  : Units::physical;
    d.input_scaler = scaler_from(meta.at("input_scaler"));
    d.output_scaler = scaler_from(meta.at("output_scaler"));

    for (const auto& [id, split] : meta.at("splits").items()) {
        Experiment e;
        e.id = id;
        e.tau_s = d.protocol.tau_s;
        e.units = d.units;
        const std::string text = read_file(dir + "/" + id + ".csv");
        std::istringstream lines(text);
        std::string line;
        std::getline(lines, line);  // header
        require(line == "k,q_a,q_b,h1,h2", "unexpected experiment CSV header");
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            std::istringstream cells(line);
            std::string cell;
            std::array<double, 5> vals{};
            for (int c = 0; c < 5; ++c) {
                require(static_cast<bool>(std::getline(cells, cell, ',')),
                        "short experiment CSV row");
                vals[c] = std::stod(cell);
            }
            e.inputs.push_back({vals[1], vals[2]});
            e.outputs.push_back({vals[3], vals[4]});
        }
        d.experiments.push_back(std::move(e));
        d.splits.push_back(split_from(split.get<std::string>()));
    }
    return d;
}

}  // namespace grustab
