#include "grustab/gru.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "grustab/numerics.hpp"
#include "grustab/rng.hpp"
#include "doctest.h"

using namespace grustab;

TEST_CASE("zero-parameter step") {
    // All gates sit at 1/2 and the candidate at 0: x+ = x/2.
    auto p = GruLayerParams::zeros(1, 1);
    auto [xn, gates] = layer_step(p, Vector{1.0}, Vector{0.0});
    CHECK(xn[0] == 0.5);
    CHECK(gates.z[0] == 0.5);
    CHECK(gates.f[0] == 0.5);
    CHECK(gates.r[0] == 0.0);
}

TEST_CASE("step matches the four-equation form") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_layer(3, 2, 1.5, rng);
        Vector x(3), u(2);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        for (auto& v : u) v = rng.uniform(-1.0, 1.0);
        auto [xn, gates] = layer_step(p, x, u);
        for (std::size_t j = 0; j < 3; ++j) {
            double az = p.b_z[j], af = p.b_f[j];
            for (std::size_t c = 0; c < 2; ++c) {
                az += p.W_z(j, c) * u[c];
                af += p.W_f(j, c) * u[c];
            }
            for (std::size_t c = 0; c < 3; ++c) {
                az += p.U_z(j, c) * x[c];
                af += p.U_f(j, c) * x[c];
            }
            const double z = sigmoid(az);
            const double f = sigmoid(af);
            CHECK(gates.z[j] == doctest::Approx(z).epsilon(1e-14));
            CHECK(gates.f[j] == doctest::Approx(f).epsilon(1e-14));
        }
        Vector f(3);
        for (std::size_t j = 0; j < 3; ++j) f[j] = gates.f[j];
        for (std::size_t j = 0; j < 3; ++j) {
            double ar = p.b_r[j];
            for (std::size_t c = 0; c < 2; ++c) ar += p.W_r(j, c) * u[c];
            for (std::size_t c = 0; c < 3; ++c) ar += p.U_r(j, c) * f[c] * x[c];
            const double r = tanh_act(ar);
            CHECK(gates.r[j] == doctest::Approx(r).epsilon(1e-14));
            const double expect = gates.z[j] * x[j] + (1.0 - gates.z[j]) * r;
            CHECK(xn[j] == doctest::Approx(expect).epsilon(1e-14));
        }
    }
}

TEST_CASE("LPV identity") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = random_layer(4, 2, 2.0, rng);
        Vector x(4), u(2);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        for (auto& v : u) v = rng.uniform(-1.0, 1.0);
        auto [xn, gates] = layer_step(p, x, u);
        auto [omega, eta] = lpv_coefficients(p, x, u);
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(omega[j] > 0.0);
            CHECK(omega[j] < 1.0);
            CHECK(std::abs(eta[j]) < 1.0);
            const double lpv = omega[j] * x[j] + (1.0 - omega[j]) * eta[j];
            CHECK(xn[j] == doctest::Approx(lpv).epsilon(1e-14));
        }
    }
}

TEST_CASE("single-step invariance of the unit box") {
    Rng rng(9);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto p = random_layer(3, 2, 4.0, rng);
        Vector x(3), u(2);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        for (auto& v : u) v = rng.uniform(-1.0, 1.0);
        auto [xn, gates] = layer_step(p, x, u);
        CHECK(inf_norm(xn) <= 1.0);
    }
}

TEST_CASE("deep step wiring and input precondition") {
    Rng rng(21);
    auto m = random_model({3, 2}, 2, 2, 1.0, rng);
    GruState s = GruState::random_in_x(m, rng);
    const Vector u{0.3, -0.7};
    const GruState next = deep_step(m, s, u);
    REQUIRE(next.x.size() == 2);
    // Layer 1 sees u, layer 2 sees layer 1's *updated* state.
    auto [x1, g1] = layer_step(m.layers[0], s.x[0], u);
    auto [x2, g2] = layer_step(m.layers[1], s.x[1], x1);
    for (std::size_t j = 0; j < 3; ++j) CHECK(next.x[0][j] == x1[j]);
    for (std::size_t j = 0; j < 2; ++j) CHECK(next.x[1][j] == x2[j]);

    CHECK_THROWS(deep_step(m, s, Vector{1.5, 0.0}));
    CHECK_NOTHROW(deep_step(m, s, Vector{1.0, -1.0}));
}

TEST_CASE("readout and simulate") {
    Rng rng(33);
    auto m = random_model({3}, 2, 2, 1.0, rng);
    GruState s = GruState::random_in_x(m, rng);
    const Vector y = output(m, s);
    for (std::size_t c = 0; c < 2; ++c) {
        double expect = m.b_o[c];
        for (std::size_t j = 0; j < 3; ++j) expect += m.U_o(c, j) * s.x[0][j];
        CHECK(y[c] == doctest::Approx(expect).epsilon(1e-14));
    }

    std::vector<Vector> inputs(10, Vector{0.1, 0.2});
    const auto traj = simulate(m, s, inputs);
    REQUIRE(traj.states.size() == 10);
    REQUIRE(traj.outputs.size() == 10);
    GruState cur = s;
    for (std::size_t k = 0; k < 10; ++k) {
        cur = deep_step(m, cur, inputs[k]);
        for (std::size_t j = 0; j < 3; ++j) CHECK(traj.states[k].x[0][j] == cur.x[0][j]);
    }
}

TEST_CASE("scalers") {
    AffineScaler sc;
    sc.offset = {2.0, -1.0};
    sc.scale = {0.5, 4.0};
    const Vector phys{3.0, 7.0};
    const Vector norm = sc.to_normalized(phys);
    CHECK(norm[0] == doctest::Approx(2.0));
    CHECK(norm[1] == doctest::Approx(2.0));
    const Vector back = sc.to_physical(norm);
    CHECK(back[0] == doctest::Approx(3.0));
    CHECK(back[1] == doctest::Approx(7.0));
    const auto id = AffineScaler::identity(3);
    const Vector v{1.0, -2.0, 0.25};
    CHECK(id.to_normalized(v) == v);
}

TEST_CASE("model JSON round-trip is exact") {
    Rng rng(77);
    auto m = random_model({4, 3}, 2, 2, 1.7, rng);
    m.input_scaler.offset = {1e-3, 0.3333333333333333};
    m.input_scaler.scale = {4.5e-4, 0.1};
    m.output_scaler.offset = {0.68, 0.65};
    m.output_scaler.scale = {0.7, 0.71};
    const std::string text = model_to_json(m);
    const DeepGruModel back = model_from_json(text);
    REQUIRE(back.depth() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.layers[i].W_z.a == m.layers[i].W_z.a);
        CHECK(back.layers[i].U_z.a == m.layers[i].U_z.a);
        CHECK(back.layers[i].b_z == m.layers[i].b_z);
        CHECK(back.layers[i].W_f.a == m.layers[i].W_f.a);
        CHECK(back.layers[i].U_f.a == m.layers[i].U_f.a);
        CHECK(back.layers[i].b_f == m.layers[i].b_f);
        CHECK(back.layers[i].W_r.a == m.layers[i].W_r.a);
        CHECK(back.layers[i].U_r.a == m.layers[i].U_r.a);
        CHECK(back.layers[i].b_r == m.layers[i].b_r);
    }
    CHECK(back.U_o.a == m.U_o.a);
    CHECK(back.b_o == m.b_o);
    CHECK(back.input_scaler.offset == m.input_scaler.offset);
    CHECK(back.output_scaler.scale == m.output_scaler.scale);

    // Serialization is byte-stable.
    CHECK(model_to_json(back) == text);

    const auto path = std::filesystem::temp_directory_path() / "grustab_model_rt.json";
    save_model(m, path.string());
    const DeepGruModel loaded = load_model(path.string());
    CHECK(model_to_json(loaded) == text);
    std::filesystem::remove(path);
}

TEST_CASE("validation rejects inconsistent shapes") {
    auto m = DeepGruModel::zeros({3, 2}, 2, 2);
    CHECK_NOTHROW(m.validate());
    m.layers[1].W_z = Matrix(2, 4);  // layer 2 must take 3 inputs
    CHECK_THROWS(m.validate());
}
