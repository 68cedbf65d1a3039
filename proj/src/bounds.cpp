#include "grustab/bounds.hpp"

#include <cmath>
#include <stdexcept>

namespace grustab {

namespace {

double concat_norm_scaled(const Matrix& w, double w_scale, const Matrix& u,
                          double u_scale, const Vector& b) {
    Matrix ws = w;
    for (auto& v : ws.a) v *= w_scale;
    Matrix us = u;
    for (auto& v : us.a) v *= u_scale;
    const Matrix bc = as_column(b);
    return inf_norm_concat({&ws, &us, &bc});
}

}  // namespace

EntryBound entry_bound(const GruLayerParams& p, const Vector& x0,
                       double lambda_prev) {
    require(x0.size() == p.state_size(), "entry_bound: state width mismatch");
    EntryBound eb;
    const double s0 = std::max(inf_norm(x0), 1.0);
    eb.omega_bar0 =
        sigmoid(concat_norm_scaled(p.W_z, lambda_prev, p.U_z, s0, p.b_z));
    eb.omega_under0 = 1.0 - eb.omega_bar0;
    eb.eps_under0 =
        1.0 - tanh_act(concat_norm_scaled(p.W_r, lambda_prev, p.U_r, s0, p.b_r));
    eb.entry_time_unbounded = !(eb.eps_under0 > 0.0) || !(eb.omega_under0 > 0.0);

    eb.k_bar_per_component.reserve(x0.size());
    for (double xj : x0) {
        std::int64_t kj = 0;
        if (std::abs(xj) > 1.0) {
            if (eb.entry_time_unbounded) {
                kj = -1;  // sentinel: no finite certified entry time
            } else {
                kj = static_cast<std::int64_t>(
                    std::ceil((std::abs(xj) - 1.0) / (eb.omega_under0 * eb.eps_under0)));
            }
        }
        eb.k_bar_per_component.push_back(kj);
    }
    eb.k_bar = 0;
    for (std::int64_t kj : eb.k_bar_per_component) {
        if (kj < 0) {
            eb.k_bar = -1;
            break;
        }
        eb.k_bar = std::max(eb.k_bar, kj);
    }
    return eb;
}

double entry_envelope(const EntryBound& eb, double x0_j, std::int64_t k) {
    const double kk = static_cast<double>(k);
    return std::pow(eb.omega_bar0, kk) * std::abs(x0_j) +
           (1.0 - std::pow(eb.omega_under0, kk)) * (1.0 - eb.eps_under0);
}

IssBound iss_bound(const GruLayerParams& p) {
    const IssCheck c = iss_condition(p);
    if (!c.certified)
        throw std::domain_error("iss_bound: layer not certified (lhs >= 1)");
    IssBound b;
    b.sigma_z_bar = sigmoid(concat_norm_scaled(p.W_z, 1.0, p.U_z, 1.0, p.b_z));
    // z + (1 - z) lhs over z in [1 - sigma_z_bar, sigma_z_bar] peaks at the
    // upper endpoint since lhs < 1.
    b.delta = 1.0 - (b.sigma_z_bar + (1.0 - b.sigma_z_bar) * c.lhs);
    b.gain_u = b.sigma_z_bar * inf_norm(p.W_r) / b.delta;
    b.gain_b = b.sigma_z_bar * inf_norm(p.b_r) / b.delta;
    return b;
}

double iss_prefactor(const GruLayerParams& p, const Vector& x0, const IssBound& b) {
    const double x0_norm = inf_norm(x0);
    if (x0_norm <= 1.0) return 1.0;
    const EntryBound eb = entry_bound(p, x0);
    if (eb.k_bar < 0)
        throw std::domain_error("iss_prefactor: unbounded certified entry time");
    double mu = 1.0;
    for (std::int64_t k = 0; k <= eb.k_bar; ++k) {
        double env = 0.0;
        for (double xj : x0) env = std::max(env, entry_envelope(eb, xj, k));
        mu = std::max(mu, env / (std::pow(1.0 - b.delta, static_cast<double>(k)) * x0_norm));
    }
    return mu;
}

DeltaIssBound delta_iss_bound(const GruLayerParams& p, double lambda_check,
                              double lambda_prev) {
    const double nu = delta_iss_residual(p, lambda_check, lambda_prev);
    if (!(nu < 0.0))
        throw std::domain_error("delta_iss_bound: layer not certified (nu >= 0)");
    const GateBounds gb = gate_bounds(p, lambda_check, lambda_prev);
    const double n_ur = inf_norm(p.U_r);
    const double n_uf = inf_norm(p.U_f);
    const double n_uz = inf_norm(p.U_z);
    const double n_wz = inf_norm(p.W_z);
    const double n_wr = inf_norm(p.W_r);
    const double n_wf = inf_norm(p.W_f);

    const double state_mix = n_ur * (0.25 * lambda_check * n_uf + gb.sigma_f);
    // alpha_dx(z) = z + (lambda + phi_r)/4 ||U_z|| + (1 - z) state_mix is
    // increasing in z (state_mix < 1 under the condition), so the worst case
    // sits at z = sigma_z.
    const double alpha_dx_worst = gb.sigma_z +
                                  0.25 * (lambda_check + gb.phi_r) * n_uz +
                                  (1.0 - gb.sigma_z) * state_mix;

    DeltaIssBound b;
    b.delta_delta = 1.0 - alpha_dx_worst;
    // alpha_du peaks where 1 - z is largest, i.e. z = 1 - sigma_z.
    b.alpha_du_sup = 0.25 * (lambda_check + gb.phi_r) * n_wz +
                     gb.sigma_z * (n_wr + 0.25 * lambda_check * n_ur * n_wf);
    return b;
}

DeltaIssBound deep_delta_iss_bound(const DeepGruModel& m,
                                   std::vector<double> lambdas) {
    m.validate();
    const std::size_t depth = m.depth();
    if (lambdas.empty()) lambdas.assign(depth, 1.0);
    require(lambdas.size() == depth, "deep_delta_iss_bound: one lambda per layer");

    DeltaIssBound b;
    double lambda_prev = 1.0;
    for (std::size_t i = 0; i < depth; ++i) {
        const DeltaIssBound li = delta_iss_bound(m.layers[i], lambdas[i], lambda_prev);
        b.layer_delta_delta.push_back(li.delta_delta);
        b.layer_alpha_du.push_back(li.alpha_du_sup);
        lambda_prev = lambdas[i];
    }
    b.delta_delta = b.layer_delta_delta.front();
    b.alpha_du_sup = b.layer_alpha_du.front();

    b.A_Mdelta = Matrix(depth, depth);
    for (std::size_t i = 0; i < depth; ++i) {
        b.A_Mdelta(i, i) = 1.0 - b.layer_delta_delta[i];
        double prod = 1.0;
        for (std::size_t j = i; j-- > 0;) {
            prod *= b.layer_alpha_du[j + 1];
            b.A_Mdelta(i, j) = (1.0 - b.layer_delta_delta[j]) * prod;
        }
    }
    b.B_Mdelta = Vector(depth, 0.0);
    double prod = 1.0;
    for (std::size_t i = 0; i < depth; ++i) {
        prod *= b.layer_alpha_du[i];
        b.B_Mdelta[i] = prod;
    }
    b.lambda_tilde = 0.0;
    for (std::size_t i = 0; i < depth; ++i)
        b.lambda_tilde = std::max(b.lambda_tilde, b.A_Mdelta(i, i));

    // mu = sup_k ||A^k|| / lambda_tilde^k, finite because A is Schur; the
    // search terminates once ||A^k|| has decayed past 1e-12.
    b.mu_delta = 1.0;
    Matrix power = Matrix::identity(depth);
    double lam_k = 1.0;
    for (int k = 1; k <= 1000000; ++k) {
        power = matmul(power, b.A_Mdelta);
        lam_k *= b.lambda_tilde;
        const double norm_k = inf_norm(power);
        b.mu_delta = std::max(b.mu_delta, norm_k / lam_k);
        if (norm_k < 1e-12) break;
    }
    return b;
}

}  // namespace grustab
