#include "deepgp/detail/stack_eval.hpp"

#include <cmath>

namespace deepgp::detail {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kVarFloor = 1e-12;

// Message moment-matching from the cached layer pieces. Writes mu_out,
// s_raw, s_out and counts clamp events. On the deterministic path the
// mean-variance term cancels against −mu² exactly, so the variance reduces
// to noise + conditional variance + the q(u) contribution.
void moment_match(LayerForward& lf, double s2) {
    const PsiStats& stats = lf.stats;
    const int rows = static_cast<int>(stats.Psi1.rows());
    const int d_out = static_cast<int>(lf.KinvM.cols());
    lf.mu_out.noalias() = stats.Psi1 * lf.KinvM;
    lf.s_raw.resize(rows, d_out);
    if (lf.det_input) {
        const Vector s_share = ((stats.Psi1 * lf.B).array() * stats.Psi1.array())
                                   .rowwise()
                                   .sum();
        for (int i = 0; i < rows; ++i) {
            const double value = s2 + stats.psi0(i) - lf.trace_kinv_phi(i) + s_share(i);
            lf.s_raw.row(i).setConstant(value);
        }
    } else {
        for (int i = 0; i < rows; ++i) {
            const Matrix& phi_i = stats.phi[i];
            const double base = stats.psi0(i) - lf.trace_kinv_phi(i) +
                                (lf.B.array() * phi_i.array()).sum();
            const Matrix w = phi_i * lf.KinvM;  // m×D
            for (int d = 0; d < d_out; ++d) {
                const double quad = lf.KinvM.col(d).dot(w.col(d));
                lf.s_raw(i, d) = s2 + base + quad - lf.mu_out(i, d) * lf.mu_out(i, d);
            }
        }
    }
    lf.s_out = lf.s_raw;
    lf.clamp_events = 0;
    for (int i = 0; i < rows; ++i) {
        for (int d = 0; d < d_out; ++d) {
            if (lf.s_out(i, d) < kVarFloor) {
                lf.s_out(i, d) = kVarFloor;
                ++lf.clamp_events;
            }
        }
    }
}

}  // namespace

LayerForward forward_layer(const VariationalLayer& layer, const GaussianMessage& q_in,
                           bool is_first) {
    LayerForward lf;
    const int m = layer.num_inducing();
    const int d_out = layer.output_dim();
    const int rows = q_in.size();
    const double s2 = layer.noise_var();

    lf.det_input = is_first && q_in.variances.isZero(0.0);
    lf.K = layer.kuu();
    lf.Kinv = lf.K.solve(Matrix(Matrix::Identity(m, m)));
    lf.stats = compute_psi(layer.kernel(), layer.Z, q_in,
                           lf.det_input ? PhiMode::Summed : PhiMode::PerDatum);
    lf.S = layer.L().outer();
    lf.P = lf.K.solve(Matrix(lf.stats.Psi1.transpose())).transpose();
    lf.KinvM = lf.K.solve(layer.M);
    lf.B = lf.K.solve(Matrix(lf.K.solve(lf.S).transpose()));

    lf.trace_kinv_phi.resize(rows);
    if (lf.det_input) {
        const Matrix V =
            tri_solve(lf.K.chol(), Matrix(lf.stats.Psi1.transpose()), TriSide::Lower);
        lf.trace_kinv_phi = V.colwise().squaredNorm().transpose();
    } else {
        for (int i = 0; i < rows; ++i) {
            lf.trace_kinv_phi(i) = (lf.Kinv.array() * lf.stats.phi[i].array()).sum();
        }
    }
    lf.comp_n = static_cast<double>(d_out) / (2.0 * s2) *
                (lf.stats.psi0 - lf.trace_kinv_phi);
    lf.comp = lf.comp_n.sum();

    if (!is_first) {
        const Matrix U = static_cast<double>(d_out) * lf.S + layer.M * layer.M.transpose();
        const Matrix G = lf.K.solve(Matrix(lf.K.solve(U).transpose()));  // K⁻¹UK⁻¹
        const Vector psi_g_psi = ((lf.stats.Psi1 * G).array() * lf.stats.Psi1.array())
                                     .rowwise()
                                     .sum();
        lf.prop_n.resize(rows);
        for (int i = 0; i < rows; ++i) {
            const double phi_g = (lf.stats.phi[i].array() * G.array()).sum();
            lf.prop_n(i) = (phi_g - psi_g_psi(i)) / (2.0 * s2);
        }
        lf.prop = lf.prop_n.sum();
    } else {
        lf.prop_n = Vector::Zero(rows);
        lf.prop = 0.0;
    }

    moment_match(lf, s2);
    return lf;
}

ChunkForward forward_chunk(const DeepGpModel& model, const Matrix& X_rows, const Matrix& Y_rows) {
    const int depth = model.depth();
    const int rows = static_cast<int>(X_rows.rows());
    ChunkForward fwd;
    fwd.layers.reserve(depth);

    GaussianMessage msg = GaussianMessage::deterministic(X_rows);
    for (int i = 0; i < depth; ++i) {
        fwd.layers.push_back(forward_layer(model.layers[i], msg, i == 0));
        fwd.clamp_events += fwd.layers.back().clamp_events;
        if (i + 1 < depth) {
            msg = GaussianMessage{fwd.layers[i].mu_out, fwd.layers[i].s_out};
        }
    }

    const LayerForward& last = fwd.layers.back();
    const VariationalLayer& last_layer = model.layers.back();
    const double d_out = static_cast<double>(last_layer.output_dim());
    const double s2 = last_layer.noise_var();
    const Vector quad_n = (Y_rows - last.mu_out).rowwise().squaredNorm();
    const Vector strace_n = ((last.P * last.S).array() * last.P.array()).rowwise().sum();
    const double norm_const = -0.5 * d_out * (kLog2Pi + std::log(s2));
    fwd.lik_n = Vector::Constant(rows, norm_const) - quad_n / (2.0 * s2) -
                d_out / (2.0 * s2) * strace_n;
    fwd.lik = fwd.lik_n.sum();

    fwd.per_datum = fwd.lik_n;
    for (const LayerForward& lf : fwd.layers) {
        fwd.per_datum -= lf.comp_n + lf.prop_n;
    }
    return fwd;
}

ModelGrads ModelGrads::zero(const DeepGpModel& model) {
    ModelGrads g;
    g.layers.resize(model.depth());
    for (int i = 0; i < model.depth(); ++i) {
        const VariationalLayer& layer = model.layers[i];
        LayerGrads& lg = g.layers[i];
        lg.lengthscales = Vector::Zero(layer.kernel().input_dim());
        lg.Z = Matrix::Zero(layer.Z.rows(), layer.Z.cols());
        lg.M = Matrix::Zero(layer.M.rows(), layer.M.cols());
        lg.L = Matrix::Zero(layer.num_inducing(), layer.num_inducing());
    }
    return g;
}

void ModelGrads::axpy(double scale, const ModelGrads& other) {
    for (size_t i = 0; i < layers.size(); ++i) {
        layers[i].variance += scale * other.layers[i].variance;
        layers[i].lengthscales += scale * other.layers[i].lengthscales;
        layers[i].Z += scale * other.layers[i].Z;
        layers[i].M += scale * other.layers[i].M;
        layers[i].L += scale * other.layers[i].L;
        layers[i].noise_var += scale * other.layers[i].noise_var;
    }
}

namespace {

// Push an accumulated ∂total/∂K through the jitter rule and the Gram matrix
// into kernel hyperparameters and Z.
void push_through_kuu(const VariationalLayer& layer, const SpdMatrix& K, const Matrix& GK,
                      double scale, LayerGrads& lg) {
    Matrix upstream = GK;
    const double mean_diag = K.values().trace() / static_cast<double>(K.dim());
    if (K.jitter() > 0.0 && mean_diag > 0.0) {
        const double step = K.jitter() / mean_diag;
        upstream.diagonal().array() += step / static_cast<double>(K.dim()) * GK.trace();
    }
    const GramGradients gg = gram_gradients(layer.kernel(), layer.Z, layer.Z, upstream);
    lg.variance += scale * gg.variance;
    lg.lengthscales += scale * gg.lengthscales;
    lg.Z += scale * (gg.X + gg.X2);
}

Matrix tril(const Matrix& a) { return a.triangularView<Eigen::Lower>(); }

}  // namespace

void backward_chunk(const DeepGpModel& model, const ChunkForward& fwd, const Matrix& X_rows,
                    const Matrix& Y_rows, double scale, ModelGrads& grads) {
    const int depth = model.depth();
    const int rows = static_cast<int>(X_rows.rows());

    // Adjoints of the message feeding layer i (filled while walking down).
    Matrix ubar_mu, ubar_s;

    for (int i = depth - 1; i >= 0; --i) {
        const VariationalLayer& layer = model.layers[i];
        const LayerForward& lf = fwd.layers[i];
        const int m = layer.num_inducing();
        const int d_out = layer.output_dim();
        const double dd = static_cast<double>(d_out);
        const double s2 = layer.noise_var();
        const bool is_last = (i == depth - 1);
        const bool is_first = (i == 0);

        Vector psi0_bar = Vector::Zero(rows);
        Matrix psi1_bar = Matrix::Zero(rows, m);
        std::vector<Matrix> phi_bar;
        if (!lf.det_input) phi_bar.assign(rows, Matrix::Zero(m, m));
        Matrix GK = Matrix::Zero(m, m);
        Matrix M_bar = Matrix::Zero(m, d_out);
        Matrix S_bar = Matrix::Zero(m, m);
        double ds2 = 0.0;

        // compression penalty, all layers
        {
            const double c = dd / (2.0 * s2);
            psi0_bar.array() -= c;
            if (lf.det_input) {  // tr(K⁻¹Φ_n) realized as Ψ_n K⁻¹ Ψ_nᵀ
                psi1_bar.noalias() += 2.0 * c * (lf.stats.Psi1 * lf.Kinv);
                GK.noalias() -=
                    c * (lf.Kinv * (lf.stats.Psi1.transpose() * lf.stats.Psi1) * lf.Kinv);
            } else {
                for (int n = 0; n < rows; ++n) phi_bar[n] += c * lf.Kinv;
                GK.noalias() -= c * (lf.Kinv * lf.stats.phi_sum * lf.Kinv);
            }
            ds2 += lf.comp / s2;
        }

        // propagation penalty, layers 2..ℓ
        if (!is_first) {
            const double p = 1.0 / (2.0 * s2);
            const Matrix U = dd * lf.S + layer.M * layer.M.transpose();
            const Matrix G = lf.K.solve(Matrix(lf.K.solve(U).transpose()));
            const Matrix delta = lf.stats.phi_sum - lf.stats.Psi1.transpose() * lf.stats.Psi1;
            const Matrix H = lf.K.solve(Matrix(lf.K.solve(delta).transpose()));
            for (int n = 0; n < rows; ++n) phi_bar[n] -= p * G;
            psi1_bar.noalias() += 2.0 * p * (lf.stats.Psi1 * G);
            M_bar.noalias() -= 2.0 * p * (H * layer.M);
            S_bar.noalias() -= p * dd * H;
            const Matrix q2 = H * U * lf.Kinv;
            GK += p * (q2 + q2.transpose());
            ds2 += lf.prop / s2;
        }

        // expected log-likelihood, last layer
        if (is_last) {
            const Matrix E = Y_rows - lf.mu_out;
            const double c2 = 1.0 / s2;
            const Matrix psit_psi = lf.stats.Psi1.transpose() * lf.stats.Psi1;
            psi1_bar.noalias() += c2 * (E * lf.KinvM.transpose());
            psi1_bar.noalias() -= dd * c2 * (lf.stats.Psi1 * lf.B);
            M_bar.noalias() += c2 * (lf.P.transpose() * E);
            S_bar.noalias() -= dd / (2.0 * s2) * (lf.P.transpose() * lf.P);
            GK.noalias() -= c2 * ((lf.P.transpose() * E) * lf.KinvM.transpose());
            const Matrix q1 = lf.B * psit_psi * lf.Kinv;
            GK += dd / (2.0 * s2) * (q1 + q1.transpose());
            const double strace = ((lf.P * lf.S).array() * lf.P.array()).sum();
            ds2 += -static_cast<double>(rows) * dd / (2.0 * s2) +
                   E.squaredNorm() / (2.0 * s2 * s2) + dd / (2.0 * s2 * s2) * strace;
        }

        // message consumed by layer i+1
        if (!is_last) {
            Matrix us = ubar_s;
            for (int n = 0; n < rows; ++n) {
                for (int d = 0; d < d_out; ++d) {
                    if (lf.s_raw(n, d) < kVarFloor) us(n, d) = 0.0;  // clamped: flat
                }
            }
            // on the deterministic path the −mu² term cancelled, so the
            // variance does not feed back into the mean
            const Matrix ue =
                lf.det_input ? ubar_mu
                             : Matrix(ubar_mu - 2.0 * (lf.mu_out.array() * us.array()).matrix());

            // mean path
            psi1_bar.noalias() += ue * lf.KinvM.transpose();
            M_bar.noalias() += lf.P.transpose() * ue;
            GK.noalias() -= (lf.P.transpose() * ue) * lf.KinvM.transpose();

            // variance path
            ds2 += us.sum();
            const Vector s1 = us.rowwise().sum();
            psi0_bar += s1;
            if (lf.det_input) {
                // s_raw = σ² + ψ0 − Ψ K⁻¹Ψᵀ + Ψ B Ψᵀ (per datum)
                const Matrix w_psi =
                    lf.stats.Psi1.transpose() * s1.asDiagonal() * lf.stats.Psi1;
                psi1_bar.noalias() -= 2.0 * (s1.asDiagonal() * (lf.stats.Psi1 * lf.Kinv));
                psi1_bar.noalias() += 2.0 * (s1.asDiagonal() * (lf.stats.Psi1 * lf.B));
                const Matrix kwk = lf.Kinv * w_psi * lf.Kinv;
                S_bar += kwk;
                GK += kwk;
                const Matrix bw = lf.B * w_psi * lf.Kinv;
                GK -= bw + bw.transpose();
            } else {
                Matrix T = Matrix::Zero(m, m);
                std::vector<Matrix> theta(d_out, Matrix::Zero(m, m));
                for (int n = 0; n < rows; ++n) {
                    const Matrix& phi_n = lf.stats.phi[n];
                    if (s1(n) != 0.0) {
                        phi_bar[n] += s1(n) * (lf.B - lf.Kinv);
                        T += s1(n) * phi_n;
                    }
                    for (int d = 0; d < d_out; ++d) {
                        const double w = us(n, d);
                        if (w == 0.0) continue;
                        const Vector a_d = lf.KinvM.col(d);
                        phi_bar[n].noalias() += w * (a_d * a_d.transpose());
                        theta[d] += w * phi_n;
                    }
                }
                const Matrix kinv_t_kinv = lf.Kinv * T * lf.Kinv;
                S_bar += kinv_t_kinv;
                GK += kinv_t_kinv;
                const Matrix bt = lf.B * T * lf.Kinv;
                GK -= bt + bt.transpose();
                for (int d = 0; d < d_out; ++d) {
                    const Vector a_d = lf.KinvM.col(d);
                    const Vector kta = lf.Kinv * (theta[d] * a_d);
                    M_bar.col(d).noalias() += 2.0 * kta;
                    GK.noalias() -= 2.0 * (kta * a_d.transpose());
                }
            }
        }

        // S adjoint into the factor (S̄ is symmetric by construction)
        Matrix L_bar = tril(2.0 * (S_bar * layer.L().values()));

        // psi statistics into kernel, Z and the incoming message
        PsiAdjoints adj;
        adj.psi0 = psi0_bar;
        adj.Psi1 = psi1_bar;
        adj.phi = std::move(phi_bar);
        const GaussianMessage q_in =
            is_first ? GaussianMessage::deterministic(X_rows)
                     : GaussianMessage{fwd.layers[i - 1].mu_out, fwd.layers[i - 1].s_out};
        const PsiGradients pg = psi_gradients(layer.kernel(), layer.Z, q_in, adj);

        LayerGrads& lg = grads.layers[i];
        lg.variance += scale * pg.variance;
        lg.lengthscales += scale * pg.lengthscales;
        lg.Z += scale * pg.Z;
        lg.M += scale * M_bar;
        lg.L += scale * L_bar;
        lg.noise_var += scale * ds2;
        push_through_kuu(layer, lf.K, GK, scale, lg);

        ubar_mu = pg.means;
        ubar_s = pg.variances;
    }
}

std::vector<double> kl_terms(const DeepGpModel& model) {
    std::vector<double> out;
    out.reserve(model.depth());
    for (const VariationalLayer& layer : model.layers) {
        out.push_back(kl_gaussian(layer.M, layer.L(), layer.kuu()));
    }
    return out;
}

void backward_kl(const DeepGpModel& model, ModelGrads& grads) {
    for (int i = 0; i < model.depth(); ++i) {
        const VariationalLayer& layer = model.layers[i];
        const int m = layer.num_inducing();
        const double dd = static_cast<double>(layer.output_dim());
        const SpdMatrix K = layer.kuu();
        const Matrix Kinv = K.solve(Matrix(Matrix::Identity(m, m)));
        const Matrix KinvM = K.solve(layer.M);
        const Matrix KinvL = K.solve(layer.L().values());
        const Matrix B = K.solve(Matrix(K.solve(layer.L().outer()).transpose()));

        LayerGrads& lg = grads.layers[i];
        lg.M -= KinvM;
        Matrix L_bar = -dd * tril(KinvL);
        L_bar.diagonal().array() += dd / layer.L().values().diagonal().array();
        lg.L += L_bar;
        const Matrix GK =
            -0.5 * (dd * Kinv - dd * B - KinvM * KinvM.transpose());
        push_through_kuu(layer, K, GK, 1.0, lg);
    }
}

BoundReport assemble_report(const DeepGpModel& model, const std::vector<ChunkForward>& chunks,
                            double scale) {
    const int depth = model.depth();
    BoundReport report;
    report.data_scale = scale;
    report.compression_terms.assign(depth, 0.0);
    report.propagation_terms.assign(depth > 1 ? depth - 1 : 0, 0.0);

    int total_rows = 0;
    for (const ChunkForward& c : chunks) total_rows += static_cast<int>(c.per_datum.size());
    report.per_datum_partials.resize(total_rows);

    double lik = 0.0;
    int at = 0;
    for (const ChunkForward& c : chunks) {
        lik += c.lik;
        report.clamp_events += c.clamp_events;
        for (int i = 0; i < depth; ++i) {
            report.compression_terms[i] += c.layers[i].comp;
            if (i >= 1) report.propagation_terms[i - 1] += c.layers[i].prop;
        }
        report.per_datum_partials.segment(at, c.per_datum.size()) = scale * c.per_datum;
        at += static_cast<int>(c.per_datum.size());
    }
    report.likelihood_term = scale * lik;
    for (double& v : report.compression_terms) v *= scale;
    for (double& v : report.propagation_terms) v *= scale;
    report.kl_terms = kl_terms(model);

    double total = report.likelihood_term;
    for (double v : report.kl_terms) total -= v;
    for (double v : report.compression_terms) total -= v;
    for (double v : report.propagation_terms) total -= v;
    report.total = total;
    return report;
}

}  // namespace deepgp::detail
