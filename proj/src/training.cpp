#include "grustab/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "grustab/certificates.hpp"
#include "grustab/io.hpp"

namespace grustab {

void TrainConfig::validate(std::size_t sequence_length) const {
    require(rho_minus <= rho_plus, "train config: rho- must not exceed rho+");
    require(clearance > 0.0, "train config: clearance must be positive");
    require(washout < sequence_length, "train config: washout >= sequence length");
    require(learning_rate > 0.0 && rmsprop_decay > 0.0 && rmsprop_decay < 1.0 &&
                rmsprop_eps > 0.0,
            "train config: bad optimizer constants");
}

double penalty(double nu, const TrainConfig& cfg) {
    return cfg.rho_plus * (std::max(nu, -cfg.clearance) + cfg.clearance) +
           cfg.rho_minus * (std::min(nu, -cfg.clearance) + cfg.clearance);
}

double penalty_slope(double nu, const TrainConfig& cfg) {
    return nu >= -cfg.clearance ? cfg.rho_plus : cfg.rho_minus;
}

namespace {

struct LayerTape {
    Vector x_prev, u, z, f, r;
};

double washout_mse(const std::vector<Vector>& yhat, const std::vector<Vector>& y,
                   std::size_t washout) {
    double acc = 0.0;
    for (std::size_t k = washout; k < y.size(); ++k) {
        require(yhat[k].size() == y[k].size(),
                "loss: model output width does not match the experiment");
        for (std::size_t c = 0; c < y[k].size(); ++c) {
            const double e = yhat[k][c] - y[k][c];
            acc += e * e;
        }
    }
    return acc / static_cast<double>(y.size() - washout);
}

}  // namespace

LossParts sequence_loss(const DeepGruModel& m, const Experiment& e,
                        const TrainConfig& cfg, const GruState& x0) {
    require(e.units == Units::normalized, "sequence_loss: experiment not normalized");
    const auto inputs = e.input_vectors();
    const auto targets = e.output_vectors();
    cfg.validate(inputs.size());

    const Trajectory t = simulate(m, x0, inputs);
    LossParts parts;
    parts.mse = washout_mse(t.outputs, targets, cfg.washout);
    parts.total = parts.mse;
    for (const auto& layer : m.layers) {
        const double nu = relaxed_delta_iss_residual(layer);
        const double rho = penalty(nu, cfg);
        parts.nu.push_back(nu);
        parts.penalty_terms.push_back(rho);
        parts.total += rho;
    }
    return parts;
}

ModelGrads ModelGrads::zeros_like(const DeepGruModel& m) {
    ModelGrads g;
    for (const auto& l : m.layers)
        g.layers.push_back(GruLayerParams::zeros(l.state_size(), l.input_size()));
    g.U_o = Matrix(m.U_o.rows, m.U_o.cols);
    g.b_o = Vector(m.b_o.size(), 0.0);
    return g;
}

namespace {

// Adds sign(row entries) of the first max-row-sum row, scaled by factor.
void add_inf_norm_subgrad(const Matrix& m, double factor, Matrix& grad) {
    if (m.rows == 0 || factor == 0.0) return;
    std::size_t best = 0;
    double best_sum = -1.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) s += std::abs(m(i, j));
        if (s > best_sum) {
            best_sum = s;
            best = i;
        }
    }
    for (std::size_t j = 0; j < m.cols; ++j) {
        const double v = m(best, j);
        if (v > 0.0)
            grad(best, j) += factor;
        else if (v < 0.0)
            grad(best, j) -= factor;
    }
}

// Subgradient of ||[W U b]||_inf, routed to the first argmax row.
void add_concat_norm_subgrad(const Matrix& w, const Matrix& u, const Vector& b,
                             double factor, Matrix& gw, Matrix& gu, Vector& gb) {
    if (factor == 0.0) return;
    std::size_t best = 0;
    double best_sum = -1.0;
    for (std::size_t i = 0; i < w.rows; ++i) {
        double s = std::abs(b[i]);
        for (std::size_t j = 0; j < w.cols; ++j) s += std::abs(w(i, j));
        for (std::size_t j = 0; j < u.cols; ++j) s += std::abs(u(i, j));
        if (s > best_sum) {
            best_sum = s;
            best = i;
        }
    }
    auto signed_add = [factor](double v, double& g) {
        if (v > 0.0)
            g += factor;
        else if (v < 0.0)
            g -= factor;
    };
    for (std::size_t j = 0; j < w.cols; ++j) signed_add(w(best, j), gw(best, j));
    for (std::size_t j = 0; j < u.cols; ++j) signed_add(u(best, j), gu(best, j));
    signed_add(b[best], gb[best]);
}

double concat_norm(const Matrix& w, const Matrix& u, const Vector& b) {
    const Matrix bc = as_column(b);
    return inf_norm_concat({&w, &u, &bc});
}

}  // namespace

GruLayerParams residual_subgradient(const GruLayerParams& p) {
    const double n_ur = inf_norm(p.U_r);
    const double n_uf = inf_norm(p.U_f);
    const double n_uz = inf_norm(p.U_z);
    const double cf = concat_norm(p.W_f, p.U_f, p.b_f);
    const double cz = concat_norm(p.W_z, p.U_z, p.b_z);
    const double cr = concat_norm(p.W_r, p.U_r, p.b_r);
    const double sf = sigmoid(cf);
    const double sz = sigmoid(cz);
    const double pr = tanh_act(cr);

    // nu = n_ur (n_uf / 4 + sf) - 1 + (1 + pr) / (4 (1 - sz)) n_uz
    const double d_nur = 0.25 * n_uf + sf;
    const double d_nuf = 0.25 * n_ur;
    const double d_nuz = 0.25 * (1.0 + pr) / (1.0 - sz);
    const double d_cf = n_ur * sf * (1.0 - sf);
    const double d_cz = 0.25 * (1.0 + pr) * n_uz * sz / (1.0 - sz);
    const double d_cr = 0.25 * n_uz / (1.0 - sz) * (1.0 - pr * pr);

    GruLayerParams g = GruLayerParams::zeros(p.state_size(), p.input_size());
    add_inf_norm_subgrad(p.U_r, d_nur, g.U_r);
    add_inf_norm_subgrad(p.U_f, d_nuf, g.U_f);
    add_inf_norm_subgrad(p.U_z, d_nuz, g.U_z);
    add_concat_norm_subgrad(p.W_f, p.U_f, p.b_f, d_cf, g.W_f, g.U_f, g.b_f);
    add_concat_norm_subgrad(p.W_z, p.U_z, p.b_z, d_cz, g.W_z, g.U_z, g.b_z);
    add_concat_norm_subgrad(p.W_r, p.U_r, p.b_r, d_cr, g.W_r, g.U_r, g.b_r);
    return g;
}

namespace {

void add_outer(Matrix& grad, const Vector& row, const Vector& col) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i] == 0.0) continue;
        for (std::size_t j = 0; j < col.size(); ++j) grad(i, j) += row[i] * col[j];
    }
}

// Backward through one layer update. g = dL/dx+; returns via out-params the
// gradients w.r.t. the pre-update state and the layer input.
void layer_backward(const GruLayerParams& p, const LayerTape& tape, const Vector& g,
                    GruLayerParams& grad, Vector& dx, Vector& du) {
    const std::size_t n = p.state_size();
    const Vector& x = tape.x_prev;

    Vector da_z(n), da_f(n), da_r(n);
    dx.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double dz = g[j] * (x[j] - tape.r[j]);
        const double dr = g[j] * (1.0 - tape.z[j]);
        dx[j] = g[j] * tape.z[j];
        da_z[j] = dz * tape.z[j] * (1.0 - tape.z[j]);
        da_r[j] = dr * (1.0 - tape.r[j] * tape.r[j]);
    }
    // candidate path: a_r = W_r u + U_r (f o x) + b_r
    const Vector dfx = matvec_transposed(p.U_r, da_r);
    for (std::size_t j = 0; j < n; ++j) {
        da_f[j] = dfx[j] * x[j] * tape.f[j] * (1.0 - tape.f[j]);
        dx[j] += dfx[j] * tape.f[j];
    }

    Vector fx(n);
    for (std::size_t j = 0; j < n; ++j) fx[j] = tape.f[j] * x[j];
    add_outer(grad.W_r, da_r, tape.u);
    add_outer(grad.U_r, da_r, fx);
    add_outer(grad.W_f, da_f, tape.u);
    add_outer(grad.U_f, da_f, x);
    add_outer(grad.W_z, da_z, tape.u);
    add_outer(grad.U_z, da_z, x);
    for (std::size_t j = 0; j < n; ++j) {
        grad.b_r[j] += da_r[j];
        grad.b_f[j] += da_f[j];
        grad.b_z[j] += da_z[j];
    }

    const Vector dxz = matvec_transposed(p.U_z, da_z);
    const Vector dxf = matvec_transposed(p.U_f, da_f);
    for (std::size_t j = 0; j < n; ++j) dx[j] += dxz[j] + dxf[j];

    du = matvec_transposed(p.W_r, da_r);
    const Vector duf = matvec_transposed(p.W_f, da_f);
    const Vector duz = matvec_transposed(p.W_z, da_z);
    for (std::size_t j = 0; j < du.size(); ++j) du[j] += duf[j] + duz[j];
}

}  // namespace

std::pair<LossParts, ModelGrads> gradients(const DeepGruModel& m,
                                           const Experiment& e,
                                           const TrainConfig& cfg,
                                           const GruState& x0) {
    require(e.units == Units::normalized, "gradients: experiment not normalized");
    const auto inputs = e.input_vectors();
    const auto targets = e.output_vectors();
    cfg.validate(inputs.size());
    const std::size_t T = inputs.size();
    const std::size_t depth = m.depth();

    // Forward with full tape.
    std::vector<std::vector<LayerTape>> tape(depth, std::vector<LayerTape>(T));
    std::vector<Vector> yhat(T);
    GruState s = x0;
    for (std::size_t k = 0; k < T; ++k) {
        require(inf_norm(inputs[k]) <= 1.0 + kInputBoundTol,
                "gradients: input violates the unity bound");
        const Vector* layer_input = &inputs[k];
        for (std::size_t i = 0; i < depth; ++i) {
            auto [xn, gates] = layer_step(m.layers[i], s.x[i], *layer_input);
            tape[i][k].x_prev = s.x[i];
            tape[i][k].u = *layer_input;
            tape[i][k].z = std::move(gates.z);
            tape[i][k].f = std::move(gates.f);
            tape[i][k].r = std::move(gates.r);
            s.x[i] = std::move(xn);
            layer_input = &s.x[i];
        }
        yhat[k] = output(m, s);
    }

    LossParts parts;
    parts.mse = washout_mse(yhat, targets, cfg.washout);
    parts.total = parts.mse;

    ModelGrads grads = ModelGrads::zeros_like(m);
    const double mse_coeff = 2.0 / static_cast<double>(T - cfg.washout);

    std::vector<Vector> state_grad(depth);
    for (std::size_t i = 0; i < depth; ++i)
        state_grad[i].assign(m.layers[i].state_size(), 0.0);

    for (std::size_t k = T; k-- > 0;) {
        Vector dy(targets[k].size(), 0.0);
        if (k >= cfg.washout)
            for (std::size_t c = 0; c < dy.size(); ++c)
                dy[c] = mse_coeff * (yhat[k][c] - targets[k][c]);

        // Readout gradients; its input is the top layer's fresh state.
        const Vector& x_top = k + 1 < T ? tape[depth - 1][k + 1].x_prev
                                        : s.x[depth - 1];
        add_outer(grads.U_o, dy, x_top);
        for (std::size_t c = 0; c < dy.size(); ++c) grads.b_o[c] += dy[c];

        Vector du_down = matvec_transposed(m.U_o, dy);
        for (std::size_t i = depth; i-- > 0;) {
            Vector g = state_grad[i];
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += du_down[j];
            Vector dx, du;
            layer_backward(m.layers[i], tape[i][k], g, grads.layers[i], dx, du);
            state_grad[i] = std::move(dx);
            du_down = std::move(du);
        }
        // du_down now holds the external-input gradient; not needed.

        if (cfg.truncation && k > 0 && k % *cfg.truncation == 0)
            for (auto& sg : state_grad) sg.assign(sg.size(), 0.0);
    }

    // Penalty terms and subgradients.
    for (std::size_t i = 0; i < depth; ++i) {
        const double nu = relaxed_delta_iss_residual(m.layers[i]);
        parts.nu.push_back(nu);
        parts.penalty_terms.push_back(penalty(nu, cfg));
        parts.total += parts.penalty_terms.back();
        const double slope = penalty_slope(nu, cfg);
        if (slope != 0.0) {
            const GruLayerParams sub = residual_subgradient(m.layers[i]);
            auto axpy_m = [&](const Matrix& src, Matrix& dst) {
                for (std::size_t t = 0; t < src.a.size(); ++t)
                    dst.a[t] += slope * src.a[t];
            };
            auto axpy_v = [&](const Vector& src, Vector& dst) {
                for (std::size_t t = 0; t < src.size(); ++t) dst[t] += slope * src[t];
            };
            axpy_m(sub.W_z, grads.layers[i].W_z);
            axpy_m(sub.U_z, grads.layers[i].U_z);
            axpy_v(sub.b_z, grads.layers[i].b_z);
            axpy_m(sub.W_f, grads.layers[i].W_f);
            axpy_m(sub.U_f, grads.layers[i].U_f);
            axpy_v(sub.b_f, grads.layers[i].b_f);
            axpy_m(sub.W_r, grads.layers[i].W_r);
            axpy_m(sub.U_r, grads.layers[i].U_r);
            axpy_v(sub.b_r, grads.layers[i].b_r);
        }
    }

    // Loudly reject nonfinite gradients with the offending parameter path.
    auto check_m = [&](const Matrix& g, const std::string& path) {
        for (double v : g.a)
            if (!std::isfinite(v))
                throw std::runtime_error("nonfinite gradient at " + path);
    };
    auto check_v = [&](const Vector& g, const std::string& path) {
        for (double v : g)
            if (!std::isfinite(v))
                throw std::runtime_error("nonfinite gradient at " + path);
    };
    for (std::size_t i = 0; i < depth; ++i) {
        const std::string base = "layers[" + std::to_string(i) + "].";
        check_m(grads.layers[i].W_z, base + "W_z");
        check_m(grads.layers[i].U_z, base + "U_z");
        check_v(grads.layers[i].b_z, base + "b_z");
        check_m(grads.layers[i].W_f, base + "W_f");
        check_m(grads.layers[i].U_f, base + "U_f");
        check_v(grads.layers[i].b_f, base + "b_f");
        check_m(grads.layers[i].W_r, base + "W_r");
        check_m(grads.layers[i].U_r, base + "U_r");
        check_v(grads.layers[i].b_r, base + "b_r");
    }
    check_m(grads.U_o, "U_o");
    check_v(grads.b_o, "b_o");

    return {std::move(parts), std::move(grads)};
}

std::string history_to_csv(const TrainHistory& h) {
    std::ostringstream out;
    out << "epoch,train_loss,val_mse";
    const std::size_t depth = h.epochs.empty() ? 0 : h.epochs.front().nu.size();
    for (std::size_t i = 1; i <= depth; ++i) out << ",nu_" << i;
    out << '\n';
    for (const auto& ep : h.epochs) {
        out << ep.epoch << ',' << format_double(ep.train_loss) << ','
            << format_double(ep.val_mse);
        for (double nu : ep.nu) out << ',' << format_double(nu);
        out << '\n';
    }
    return out.str();
}

namespace {

struct RmsPropState {
    ModelGrads acc;

    explicit RmsPropState(const DeepGruModel& m) : acc(ModelGrads::zeros_like(m)) {}

    void update(DeepGruModel& m, const ModelGrads& g, const TrainConfig& cfg) {
        auto step = [&](double grad, double& a, double& param) {
            a = cfg.rmsprop_decay * a + (1.0 - cfg.rmsprop_decay) * grad * grad;
            param -= cfg.learning_rate * grad / (std::sqrt(a) + cfg.rmsprop_eps);
        };
        auto step_m = [&](const Matrix& grad, Matrix& a, Matrix& param) {
            for (std::size_t t = 0; t < param.a.size(); ++t)
                step(grad.a[t], a.a[t], param.a[t]);
        };
        auto step_v = [&](const Vector& grad, Vector& a, Vector& param) {
            for (std::size_t t = 0; t < param.size(); ++t)
                step(grad[t], a[t], param[t]);
        };
        for (std::size_t i = 0; i < m.depth(); ++i) {
            step_m(g.layers[i].W_z, acc.layers[i].W_z, m.layers[i].W_z);
            step_m(g.layers[i].U_z, acc.layers[i].U_z, m.layers[i].U_z);
            step_v(g.layers[i].b_z, acc.layers[i].b_z, m.layers[i].b_z);
            step_m(g.layers[i].W_f, acc.layers[i].W_f, m.layers[i].W_f);
            step_m(g.layers[i].U_f, acc.layers[i].U_f, m.layers[i].U_f);
            step_v(g.layers[i].b_f, acc.layers[i].b_f, m.layers[i].b_f);
            step_m(g.layers[i].W_r, acc.layers[i].W_r, m.layers[i].W_r);
            step_m(g.layers[i].U_r, acc.layers[i].U_r, m.layers[i].U_r);
            step_v(g.layers[i].b_r, acc.layers[i].b_r, m.layers[i].b_r);
        }
        step_m(g.U_o, acc.U_o, m.U_o);
        step_v(g.b_o, acc.b_o, m.b_o);
    }
};

DeepGruModel init_model(const std::vector<std::size_t>& widths, std::size_t n_u,
                        std::size_t n_o, Rng& rng) {
    DeepGruModel m = DeepGruModel::zeros(widths, n_u, n_o);
    auto fill = [&](Matrix& mat) {
        const double w = 1.0 / std::sqrt(static_cast<double>(mat.cols));
        for (auto& v : mat.a) v = rng.uniform(-w, w);
    };
    for (auto& l : m.layers) {
        fill(l.W_z);
        fill(l.U_z);
        fill(l.W_f);
        fill(l.U_f);
        fill(l.W_r);
        fill(l.U_r);
        // biases stay zero
    }
    fill(m.U_o);
    // Stability-aware start: shrink the gate weights until every layer is
    // comfortably certified, so the penalty only has to hold the boundary
    // instead of dragging the model back from deep infeasibility.
    for (auto& l : m.layers) {
        for (int guard = 0; guard < 200 && relaxed_delta_iss_residual(l) > -0.5;
             ++guard) {
            for (auto* mat : {&l.W_z, &l.U_z, &l.W_f, &l.U_f, &l.W_r, &l.U_r})
                for (auto& v : mat->a) v *= 0.8;
        }
    }
    return m;
}

}  // namespace

TrainResult train(const Dataset& d, const std::vector<std::size_t>& widths,
                  const TrainConfig& cfg) {
    require(!widths.empty(), "train: need at least one layer");
    cfg.validate(d.protocol.samples);

    TrainHistory history;

    // Normalize all experiments once with the dataset scalers.
    std::vector<Experiment> normalized;
    normalized.reserve(d.experiments.size());
    for (const auto& e : d.experiments) {
        std::size_t clips = 0;
        normalized.push_back(
            normalize_experiment(e, d.input_scaler, d.output_scaler, &clips));
        history.clipped_samples += clips;
    }
    const auto train_idx = d.indices(Split::train);
    const auto val_idx = d.indices(Split::validation);
    require(!train_idx.empty() && !val_idx.empty(), "train: empty split");

    const Rng base(cfg.seed);
    Rng init_stream = base.split(0);
    Rng state_stream = base.split(1);
    Rng shuffle_stream = base.split(2);
    Rng val_stream = base.split(3);

    DeepGruModel model = init_model(widths, 2, 2, init_stream);
    model.input_scaler = d.input_scaler;
    model.output_scaler = d.output_scaler;

    // Fixed validation initial states keep the early-stop signal stable.
    std::vector<GruState> val_x0;
    for (std::size_t i = 0; i < val_idx.size(); ++i)
        val_x0.push_back(GruState::random_in_x(model, val_stream));

    RmsPropState opt(model);
    std::vector<std::size_t> order = train_idx;

    double best_val_seen = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    bool have_snapshot = false;
    DeepGruModel best_model = model;
    double best_snapshot_val = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        // Seeded Fisher-Yates shuffle.
        for (std::size_t i = order.size(); i-- > 1;) {
            const auto j = static_cast<std::size_t>(
                shuffle_stream.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }

        double loss_acc = 0.0;
        for (std::size_t idx : order) {
            const GruState x0 = GruState::random_in_x(model, state_stream);
            auto [parts, grads] = gradients(model, normalized[idx], cfg, x0);
            if (!std::isfinite(parts.total))
                throw DivergenceError("training loss became nonfinite", history);
            loss_acc += parts.total;
            opt.update(model, grads, cfg);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_acc / static_cast<double>(order.size());
        rec.nu = layer_residuals(model);

        double val_acc = 0.0;
        for (std::size_t i = 0; i < val_idx.size(); ++i) {
            const auto& e = normalized[val_idx[i]];
            const Trajectory t = simulate(model, val_x0[i], e.input_vectors());
            val_acc += washout_mse(t.outputs, e.output_vectors(), cfg.washout);
        }
        rec.val_mse = val_acc / static_cast<double>(val_idx.size());
        if (!std::isfinite(rec.val_mse))
            throw DivergenceError("validation MSE became nonfinite", history);
        history.epochs.push_back(rec);

        bool feasible = true;
        if (cfg.penalty_enabled())
            for (double nu : rec.nu) feasible = feasible && nu < -cfg.clearance;

        if (feasible && rec.val_mse < best_snapshot_val) {
            best_snapshot_val = rec.val_mse;
            best_model = model;
            have_snapshot = true;
            history.best_epoch = epoch;
        }
        if (rec.val_mse < best_val_seen - 1e-15) {
            best_val_seen = rec.val_mse;
            stale = 0;
        } else {
            ++stale;
        }
        if (feasible && stale >= cfg.patience) break;
    }

    if (!have_snapshot) {
        if (cfg.penalty_enabled())
            throw InfeasibleError(
                "training ended without a snapshot satisfying nu < -clearance",
                history);
        best_model = model;
        history.best_epoch = history.epochs.size();
    }
    return {std::move(best_model), std::move(history)};
}

double fit_index(const DeepGruModel& m, const Experiment& e, const GruState& x0) {
    require(e.units == Units::normalized, "fit_index: experiment not normalized");
    const Trajectory t = simulate(m, x0, e.input_vectors());
    const auto targets = e.output_vectors();
    const std::size_t channels = targets.front().size();

    Vector mean(channels, 0.0);
    for (const auto& y : targets)
        for (std::size_t c = 0; c < channels; ++c) mean[c] += y[c];
    for (auto& v : mean) v /= static_cast<double>(targets.size());

    double err = 0.0, dev = 0.0;
    for (std::size_t k = 0; k < targets.size(); ++k)
        for (std::size_t c = 0; c < channels; ++c) {
            const double de = t.outputs[k][c] - targets[k][c];
            const double dm = targets[k][c] - mean[c];
            err += de * de;
            dev += dm * dm;
        }
    if (dev == 0.0)
        throw std::domain_error("fit_index: constant output sequence");
    return 100.0 * (1.0 - std::sqrt(err) / std::sqrt(dev));
}

}  // namespace grustab
