#include "grustab/certificates.hpp"

#include <cmath>

namespace grustab {

namespace {

Matrix scaled(const Matrix& m, double factor) {
    Matrix out = m;
    if (factor != 1.0)
        for (auto& v : out.a) v *= factor;
    return out;
}

double concat_norm(const Matrix& w, double w_scale, const Matrix& u, double u_scale,
                   const Vector& b) {
    const Matrix ws = scaled(w, w_scale);
    const Matrix us = scaled(u, u_scale);
    const Matrix bc = as_column(b);
    return inf_norm_concat({&ws, &us, &bc});
}

}  // namespace

GateBounds gate_bounds(const GruLayerParams& p, double lambda_check,
                       double lambda_prev) {
    require(lambda_check >= 1.0 && lambda_prev >= 1.0,
            "gate_bounds: lambda scalings must be >= 1");
    GateBounds gb;
    gb.sigma_z = sigmoid(concat_norm(p.W_z, lambda_prev, p.U_z, lambda_check, p.b_z));
    gb.sigma_f = sigmoid(concat_norm(p.W_f, lambda_prev, p.U_f, lambda_check, p.b_f));
    gb.phi_r = tanh_act(concat_norm(p.W_r, lambda_prev, p.U_r, lambda_check, p.b_r));
    return gb;
}

IssCheck iss_condition(const GruLayerParams& p) {
    IssCheck c;
    const double sigma_f_bar = sigmoid(concat_norm(p.W_f, 1.0, p.U_f, 1.0, p.b_f));
    c.lhs = inf_norm(p.U_r) * sigma_f_bar;
    c.certified = c.lhs < 1.0;
    return c;
}

double delta_iss_residual(const GruLayerParams& p, double lambda_check,
                          double lambda_prev) {
    const GateBounds gb = gate_bounds(p, lambda_check, lambda_prev);
    const double n_ur = inf_norm(p.U_r);
    const double n_uf = inf_norm(p.U_f);
    const double n_uz = inf_norm(p.U_z);
    return n_ur * (0.25 * lambda_check * n_uf + gb.sigma_f) - 1.0 +
           0.25 * (lambda_check + gb.phi_r) / (1.0 - gb.sigma_z) * n_uz;
}

double relaxed_delta_iss_residual(const GruLayerParams& p) {
    return delta_iss_residual(p, 1.0, 1.0);
}

std::string to_string(CertifyMode mode) {
    switch (mode) {
        case CertifyMode::iss: return "iss";
        case CertifyMode::delta_iss_strict: return "delta_iss_strict";
        case CertifyMode::delta_iss_relaxed: return "delta_iss_relaxed";
    }
    return "unknown";
}

StabilityReport certify_deep(const DeepGruModel& m, CertifyMode mode,
                             const std::vector<double>& lambdas) {
    m.validate();
    const bool strict = mode == CertifyMode::delta_iss_strict;
    if (strict)
        require(lambdas.size() == m.depth(),
                "certify_deep: strict mode needs one lambda per layer");

    StabilityReport rep;
    rep.mode = mode;
    rep.all_iss = true;
    rep.all_delta_iss = true;
    double lambda_prev = 1.0;  // unity-bounded external input
    for (std::size_t i = 0; i < m.depth(); ++i) {
        const auto& p = m.layers[i];
        LayerReport lr;
        const IssCheck iss = iss_condition(p);
        lr.iss_lhs = iss.lhs;
        lr.iss_certified = iss.certified;
        lr.lambda_check = strict ? lambdas[i] : 1.0;
        lr.lambda_prev = lambda_prev;
        lr.relaxed = !strict;
        lr.nu = delta_iss_residual(p, lr.lambda_check, lr.lambda_prev);
        lr.delta_iss_certified = lr.nu < 0.0;
        rep.all_iss = rep.all_iss && lr.iss_certified;
        rep.all_delta_iss = rep.all_delta_iss && lr.delta_iss_certified;
        rep.layers.push_back(lr);
        lambda_prev = lr.lambda_check;
    }
    return rep;
}

std::vector<double> layer_residuals(const DeepGruModel& m) {
    std::vector<double> out;
    out.reserve(m.depth());
    for (const auto& p : m.layers) out.push_back(relaxed_delta_iss_residual(p));
    return out;
}

}  // namespace grustab
