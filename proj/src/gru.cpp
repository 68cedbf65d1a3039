#include "grustab/gru.hpp"

#include <cmath>

#include "grustab/io.hpp"

namespace grustab {

GruLayerParams GruLayerParams::zeros(std::size_t n_x, std::size_t n_u) {
    GruLayerParams p;
    p.W_z = Matrix(n_x, n_u);
    p.U_z = Matrix(n_x, n_x);
    p.b_z = Vector(n_x, 0.0);
    p.W_f = Matrix(n_x, n_u);
    p.U_f = Matrix(n_x, n_x);
    p.b_f = Vector(n_x, 0.0);
    p.W_r = Matrix(n_x, n_u);
    p.U_r = Matrix(n_x, n_x);
    p.b_r = Vector(n_x, 0.0);
    return p;
}

void GruLayerParams::validate() const {
    const std::size_t n_x = U_z.rows;
    const std::size_t n_u = W_z.cols;
    auto chk_m = [&](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
        require(m.rows == r && m.cols == c, std::string("layer shape mismatch: ") + name);
        require(m.a.size() == r * c, std::string("layer storage mismatch: ") + name);
        for (double x : m.a)
            require(std::isfinite(x), std::string("nonfinite entry in ") + name);
    };
    auto chk_v = [&](const Vector& v, std::size_t n, const char* name) {
        require(v.size() == n, std::string("layer shape mismatch: ") + name);
        for (double x : v)
            require(std::isfinite(x), std::string("nonfinite entry in ") + name);
    };
    chk_m(W_z, n_x, n_u, "W_z");
    chk_m(U_z, n_x, n_x, "U_z");
    chk_v(b_z, n_x, "b_z");
    chk_m(W_f, n_x, n_u, "W_f");
    chk_m(U_f, n_x, n_x, "U_f");
    chk_v(b_f, n_x, "b_f");
    chk_m(W_r, n_x, n_u, "W_r");
    chk_m(U_r, n_x, n_x, "U_r");
    chk_v(b_r, n_x, "b_r");
}

AffineScaler AffineScaler::identity(std::size_t n) {
    AffineScaler s;
    s.offset = Vector(n, 0.0);
    s.scale = Vector(n, 1.0);
    return s;
}

Vector AffineScaler::to_normalized(const Vector& physical) const {
    require(physical.size() == offset.size(), "scaler: channel count mismatch");
    Vector out(physical.size());
    for (std::size_t i = 0; i < physical.size(); ++i)
        out[i] = (physical[i] - offset[i]) / scale[i];
    return out;
}

Vector AffineScaler::to_physical(const Vector& normalized) const {
    require(normalized.size() == offset.size(), "scaler: channel count mismatch");
    Vector out(normalized.size());
    for (std::size_t i = 0; i < normalized.size(); ++i)
        out[i] = offset[i] + scale[i] * normalized[i];
    return out;
}

std::size_t DeepGruModel::total_state_size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.state_size();
    return n;
}

void DeepGruModel::validate() const {
    require(!layers.empty(), "model has no layers");
    for (const auto& l : layers) l.validate();
    for (std::size_t i = 1; i < layers.size(); ++i)
        require(layers[i].input_size() == layers[i - 1].state_size(),
                "layer input width must equal previous layer state width");
    require(U_o.cols == layers.back().state_size(), "U_o column count mismatch");
    require(b_o.size() == U_o.rows, "b_o size mismatch");
}

DeepGruModel DeepGruModel::zeros(const std::vector<std::size_t>& widths,
                                 std::size_t n_u, std::size_t n_o) {
    DeepGruModel m;
    std::size_t in = n_u;
    for (std::size_t w : widths) {
        m.layers.push_back(GruLayerParams::zeros(w, in));
        in = w;
    }
    m.U_o = Matrix(n_o, widths.back());
    m.b_o = Vector(n_o, 0.0);
    m.input_scaler = AffineScaler::identity(n_u);
    m.output_scaler = AffineScaler::identity(n_o);
    return m;
}

GruState GruState::zero(const DeepGruModel& m) {
    GruState s;
    for (const auto& l : m.layers) s.x.emplace_back(l.state_size(), 0.0);
    return s;
}

GruState GruState::random_in_x(const DeepGruModel& m, Rng& rng) {
    GruState s = zero(m);
    for (auto& xi : s.x)
        for (auto& v : xi) v = rng.uniform(-1.0, 1.0);
    return s;
}

Vector GruState::flat() const {
    Vector out;
    for (const auto& xi : x) out.insert(out.end(), xi.begin(), xi.end());
    return out;
}

double GruState::inf_norm() const {
    double worst = 0.0;
    for (const auto& xi : x) worst = std::max(worst, grustab::inf_norm(xi));
    return worst;
}

std::pair<Vector, Gates> layer_step(const GruLayerParams& p, const Vector& x,
                                    const Vector& u) {
    require(x.size() == p.state_size(), "layer_step: state width mismatch");
    require(u.size() == p.input_size(), "layer_step: input width mismatch");
    const std::size_t n = x.size();

    Vector az = matvec(p.W_z, u);
    Vector af = matvec(p.W_f, u);
    {
        const Vector uz = matvec(p.U_z, x);
        const Vector uf = matvec(p.U_f, x);
        for (std::size_t j = 0; j < n; ++j) {
            az[j] += uz[j] + p.b_z[j];
            af[j] += uf[j] + p.b_f[j];
        }
    }
    Gates g;
    g.z = sigmoid(az);
    g.f = sigmoid(af);

    Vector fx(n);
    for (std::size_t j = 0; j < n; ++j) fx[j] = g.f[j] * x[j];
    Vector ar = matvec(p.W_r, u);
    {
        const Vector ur = matvec(p.U_r, fx);
        for (std::size_t j = 0; j < n; ++j) ar[j] += ur[j] + p.b_r[j];
    }
    g.r = tanh_act(ar);

    Vector x_next(n);
    for (std::size_t j = 0; j < n; ++j)
        x_next[j] = g.z[j] * x[j] + (1.0 - g.z[j]) * g.r[j];
    return {std::move(x_next), std::move(g)};
}

GruState deep_step(const DeepGruModel& m, const GruState& s, const Vector& u) {
    require(s.x.size() == m.depth(), "deep_step: state depth mismatch");
    require(inf_norm(u) <= 1.0 + kInputBoundTol,
            "deep_step: input violates the unity bound");
    GruState next;
    next.x.reserve(m.depth());
    const Vector* layer_input = &u;
    for (std::size_t i = 0; i < m.depth(); ++i) {
        auto [xn, gates] = layer_step(m.layers[i], s.x[i], *layer_input);
        next.x.push_back(std::move(xn));
        layer_input = &next.x.back();
    }
    return next;
}

Vector output(const DeepGruModel& m, const GruState& s) {
    Vector y = matvec(m.U_o, s.x.back());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += m.b_o[i];
    return y;
}

Trajectory simulate(const DeepGruModel& m, const GruState& x0,
                    const std::vector<Vector>& inputs) {
    Trajectory t;
    t.states.reserve(inputs.size());
    t.outputs.reserve(inputs.size());
    GruState s = x0;
    for (const Vector& u : inputs) {
        s = deep_step(m, s, u);
        t.outputs.push_back(output(m, s));
        t.states.push_back(s);
    }
    return t;
}

std::pair<Vector, Vector> lpv_coefficients(const GruLayerParams& p,
                                           const Vector& x, const Vector& u) {
    auto [x_next, gates] = layer_step(p, x, u);
    (void)x_next;
    return {std::move(gates.z), std::move(gates.r)};
}

GruLayerParams random_layer(std::size_t n_x, std::size_t n_u, double weight_range,
                            Rng& rng) {
    GruLayerParams p = GruLayerParams::zeros(n_x, n_u);
    auto fill_m = [&](Matrix& m) {
        for (auto& v : m.a) v = rng.uniform(-weight_range, weight_range);
    };
    auto fill_v = [&](Vector& b) {
        for (auto& v : b) v = rng.uniform(-weight_range, weight_range);
    };
    fill_m(p.W_z);
    fill_m(p.U_z);
    fill_v(p.b_z);
    fill_m(p.W_f);
    fill_m(p.U_f);
    fill_v(p.b_f);
    fill_m(p.W_r);
    fill_m(p.U_r);
    fill_v(p.b_r);
    return p;
}

DeepGruModel random_model(const std::vector<std::size_t>& widths, std::size_t n_u,
                          std::size_t n_o, double weight_range, Rng& rng) {
    DeepGruModel m = DeepGruModel::zeros(widths, n_u, n_o);
    std::size_t in = n_u;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        m.layers[i] = random_layer(widths[i], in, weight_range, rng);
        in = widths[i];
    }
    for (auto& v : m.U_o.a) v = rng.uniform(-weight_range, weight_range);
    for (auto& v : m.b_o) v = rng.uniform(-weight_range, weight_range);
    return m;
}

namespace {

using nlohmann::ordered_json;

ordered_json layer_to_json(const GruLayerParams& p) {
    ordered_json j;
    j["W_z"] = matrix_to_json(p.W_z);
    j["U_z"] = matrix_to_json(p.U_z);
    j["b_z"] = vector_to_json(p.b_z);
    j["W_f"] = matrix_to_json(p.W_f);
    j["U_f"] = matrix_to_json(p.U_f);
    j["b_f"] = vector_to_json(p.b_f);
    j["W_r"] = matrix_to_json(p.W_r);
    j["U_r"] = matrix_to_json(p.U_r);
    j["b_r"] = vector_to_json(p.b_r);
    return j;
}

GruLayerParams layer_from_json(const nlohmann::json& j) {
    GruLayerParams p;
    p.W_z = matrix_from_json(j.at("W_z"));
    p.U_z = matrix_from_json(j.at("U_z"));
    p.b_z = vector_from_json(j.at("b_z"));
    p.W_f = matrix_from_json(j.at("W_f"));
    p.U_f = matrix_from_json(j.at("U_f"));
    p.b_f = vector_from_json(j.at("b_f"));
    p.W_r = matrix_from_json(j.at("W_r"));
    p.U_r = matrix_from_json(j.at("U_r"));
    p.b_r = vector_from_json(j.at("b_r"));
    return p;
}

ordered_json scaler_to_json(const AffineScaler& s) {
    ordered_json j;
    j["offset"] = vector_to_json(s.offset);
    j["scale"] = vector_to_json(s.scale);
    return j;
}

AffineScaler scaler_from_json(const nlohmann::json& j) {
    AffineScaler s;
    s.offset = vector_from_json(j.at("offset"));
    s.scale = vector_from_json(j.at("scale"));
    require(s.scale.size() == s.offset.size(), "scaler: size mismatch");
    for (double g : s.scale) require(g != 0.0, "scaler: zero gain");
    return s;
}

}  // namespace

std::string model_to_json(const DeepGruModel& m) {
    ordered_json j;
    j["format_version"] = 1;
    ordered_json layers = ordered_json::array();
    for (const auto& l : m.layers) layers.push_back(layer_to_json(l));
    j["layers"] = std::move(layers);
    j["U_o"] = matrix_to_json(m.U_o);
    j["b_o"] = vector_to_json(m.b_o);
    j["input_scaler"] = scaler_to_json(m.input_scaler);
    j["output_scaler"] = scaler_to_json(m.output_scaler);
    return j.dump(2) + "\n";
}

DeepGruModel model_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    require(j.at("format_version").get<int>() == 1, "unsupported model format version");
    DeepGruModel m;
    for (const auto& l : j.at("layers")) m.layers.push_back(layer_from_json(l));
    m.U_o = matrix_from_json(j.at("U_o"));
    m.b_o = vector_from_json(j.at("b_o"));
    m.input_scaler = scaler_from_json(j.at("input_scaler"));
    m.output_scaler = scaler_from_json(j.at("output_scaler"));
    m.validate();
    return m;
}

void save_model(const DeepGruModel& m, const std::string& path) {
    write_file_atomic(path, model_to_json(m));
}

DeepGruModel load_model(const std::string& path) {
    return model_from_json(read_file(path));
}

}  // namespace grustab
