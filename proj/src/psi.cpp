#include "deepgp/psi.hpp"

#include <cmath>
#include <random>

namespace deepgp {

void GaussianMessage::validate() const {
    if (means.rows() != variances.rows() || means.cols() != variances.cols()) {
        throw DimensionMismatch("GaussianMessage: means/variances shape mismatch");
    }
    if (!means.allFinite() || !variances.allFinite()) {
        throw DimensionMismatch("GaussianMessage: non-finite entries");
    }
    if ((variances.array() < 0.0).any()) {
        throw DimensionMismatch("GaussianMessage: negative variance");
    }
}

namespace {

void check_psi_dims(const KernelSpec& k, const Matrix& Z, const GaussianMessage& q) {
    q.validate();
    if (Z.cols() != k.input_dim() || q.dim() != k.input_dim()) {
        throw DimensionMismatch("psi statistics: Z, message and kernel dimensions disagree");
    }
}

}  // namespace

PsiStats compute_psi(const KernelSpec& k, const Matrix& Z, const GaussianMessage& q,
                     PhiMode mode) {
    check_psi_dims(k, Z, q);
    const int n = q.size();
    const int m = static_cast<int>(Z.rows());
    const int q_dim = q.dim();
    const double alpha = k.variance();

    PsiStats out;
    out.mode = mode;
    out.psi0 = Vector::Zero(n);
    out.Psi1 = Matrix::Zero(n, m);
    out.phi_sum = Matrix::Zero(m, m);
    if (mode == PhiMode::PerDatum) out.phi.reserve(n);

    Matrix phi_n(m, m);
    if (k.family() == KernelFamily::ExponentiatedQuadratic) {
        const Vector& ell = k.lengthscales();
        for (int i = 0; i < n; ++i) {
            out.psi0(i) = alpha;
            for (int j = 0; j < m; ++j) {
                double pref = 1.0;
                double expo = 0.0;
                for (int d = 0; d < q_dim; ++d) {
                    const double v = ell(d) * ell(d);
                    const double t = v + q.variances(i, d);
                    const double diff = q.means(i, d) - Z(j, d);
                    pref *= std::sqrt(v / t);
                    expo += diff * diff / (2.0 * t);
                }
                out.Psi1(i, j) = alpha * pref * std::exp(-expo);
            }
            for (int j = 0; j < m; ++j) {
                for (int l = 0; l <= j; ++l) {
                    double pref = 1.0;
                    double expo = 0.0;
                    for (int d = 0; d < q_dim; ++d) {
                        const double v = ell(d) * ell(d);
                        const double tau = v + 2.0 * q.variances(i, d);
                        const double r = Z(j, d) - Z(l, d);
                        const double e = q.means(i, d) - 0.5 * (Z(j, d) + Z(l, d));
                        pref *= std::sqrt(v / tau);
                        expo += r * r / (4.0 * v) + e * e / tau;
                    }
                    const double value = alpha * alpha * pref * std::exp(-expo);
                    phi_n(j, l) = value;
                    phi_n(l, j) = value;
                }
            }
            out.phi_sum += phi_n;
            if (mode == PhiMode::PerDatum) out.phi.push_back(phi_n);
        }
        return out;
    }

    // Linear: all three statistics are moments of h up to second order.
    for (int i = 0; i < n; ++i) {
        const Vector mu = q.means.row(i).transpose();
        const Vector var = q.variances.row(i).transpose();
        out.psi0(i) = alpha * (mu.squaredNorm() + var.sum());
        const Vector a = Z * mu;  // m
        out.Psi1.row(i) = alpha * a.transpose();
        phi_n = alpha * alpha * (a * a.transpose() + Z * var.asDiagonal() * Z.transpose());
        out.phi_sum += phi_n;
        if (mode == PhiMode::PerDatum) out.phi.push_back(phi_n);
    }
    return out;
}

MonteCarloPsi monte_carlo_psi(const KernelSpec& k, const Matrix& Z, const GaussianMessage& q,
                              long samples, std::uint64_t seed) {
    check_psi_dims(k, Z, q);
    if (samples < 1000) {
        throw DimensionMismatch("monte_carlo_psi: need at least 1e3 samples");
    }
    const int n = q.size();
    const int m = static_cast<int>(Z.rows());
    const int q_dim = q.dim();
    const double alpha = k.variance();
    const bool eq = k.family() == KernelFamily::ExponentiatedQuadratic;
    const Vector& ell = k.lengthscales();

    MonteCarloPsi out;
    out.stats.mode = PhiMode::PerDatum;
    out.stats.psi0 = Vector::Zero(n);
    out.stats.Psi1 = Matrix::Zero(n, m);
    out.stats.phi_sum = Matrix::Zero(m, m);
    out.psi0_se = Vector::Zero(n);
    out.Psi1_se = Matrix::Zero(n, m);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Vector h(q_dim), kv(m), sd(q_dim);
    Matrix outer(m, m);
    const double inv_s = 1.0 / static_cast<double>(samples);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < q_dim; ++d) sd(d) = std::sqrt(q.variances(i, d));
        double sum0 = 0.0, sumsq0 = 0.0;
        Vector sum1 = Vector::Zero(m), sumsq1 = Vector::Zero(m);
        Matrix sum2 = Matrix::Zero(m, m), sumsq2 = Matrix::Zero(m, m);
        for (long s = 0; s < samples; ++s) {
            for (int d = 0; d < q_dim; ++d) h(d) = q.means(i, d) + sd(d) * gauss(rng);
            double kdiag;
            if (eq) {
                kdiag = alpha;
                for (int j = 0; j < m; ++j) {
                    double expo = 0.0;
                    for (int d = 0; d < q_dim; ++d) {
                        const double diff = h(d) - Z(j, d);
                        expo += diff * diff / (2.0 * ell(d) * ell(d));
                    }
                    kv(j) = alpha * std::exp(-expo);
                }
            } else {
                kdiag = alpha * h.squaredNorm();
                kv = alpha * (Z * h);
            }
            sum0 += kdiag;
            sumsq0 += kdiag * kdiag;
            sum1 += kv;
            sumsq1.array() += kv.array().square();
            outer.noalias() = kv * kv.transpose();
            sum2 += outer;
            sumsq2.array() += outer.array().square();
        }
        const auto se = [&](double total, double total_sq) {
            const double mean = total * inv_s;
            double var = (total_sq - static_cast<double>(samples) * mean * mean) /
                         static_cast<double>(samples - 1);
            if (var < 0.0) var = 0.0;
            return std::sqrt(var * inv_s);
        };
        out.stats.psi0(i) = sum0 * inv_s;
        out.psi0_se(i) = se(sum0, sumsq0);
        Matrix phi_mean = sum2 * inv_s;
        Matrix phi_se(m, m);
        for (int j = 0; j < m; ++j) {
            out.stats.Psi1(i, j) = sum1(j) * inv_s;
            out.Psi1_se(i, j) = se(sum1(j), sumsq1(j));
            for (int l = 0; l < m; ++l) phi_se(j, l) = se(sum2(j, l), sumsq2(j, l));
        }
        out.stats.phi.push_back(phi_mean);
        out.stats.phi_sum += phi_mean;
        out.phi_se.push_back(phi_se);
    }
    return out;
}

PsiGradients psi_gradients(const KernelSpec& k, const Matrix& Z, const GaussianMessage& q,
                           const PsiAdjoints& adj) {
    check_psi_dims(k, Z, q);
    const int n = q.size();
    const int m = static_cast<int>(Z.rows());
    const int q_dim = q.dim();
    const double alpha = k.variance();

    const bool has0 = adj.psi0.size() > 0;
    const bool has1 = adj.Psi1.size() > 0;
    const bool has2 = !adj.phi.empty();
    if (has0 && adj.psi0.size() != n) throw DimensionMismatch("psi_gradients: psi0 adjoint size");
    if (has1 && (adj.Psi1.rows() != n || adj.Psi1.cols() != m)) {
        throw DimensionMismatch("psi_gradients: Psi1 adjoint shape");
    }
    if (has2 && static_cast<int>(adj.phi.size()) != n) {
        throw DimensionMismatch("psi_gradients: phi adjoint count");
    }

    PsiGradients g;
    g.lengthscales = Vector::Zero(q_dim);
    g.Z = Matrix::Zero(m, q_dim);
    g.means = Matrix::Zero(n, q_dim);
    g.variances = Matrix::Zero(n, q_dim);

    if (k.family() == KernelFamily::ExponentiatedQuadratic) {
        const Vector& ell = k.lengthscales();
        const PsiStats stats =
            compute_psi(k, Z, q, has2 ? PhiMode::PerDatum : PhiMode::Summed);
        if (has0) g.variance += adj.psi0.sum();  // psi0 ≡ α
        for (int i = 0; i < n; ++i) {
            if (has1) {
                for (int j = 0; j < m; ++j) {
                    const double w = adj.Psi1(i, j) * stats.Psi1(i, j);
                    if (w == 0.0) continue;
                    g.variance += w / alpha;
                    for (int d = 0; d < q_dim; ++d) {
                        const double v = ell(d) * ell(d);
                        const double t = v + q.variances(i, d);
                        const double diff = q.means(i, d) - Z(j, d);
                        const double dv = 0.5 * (1.0 / v - 1.0 / t) + diff * diff / (2.0 * t * t);
                        g.lengthscales(d) += w * dv * 2.0 * ell(d);
                        g.variances(i, d) += w * (-0.5 / t + diff * diff / (2.0 * t * t));
                        g.means(i, d) += w * (-diff / t);
                        g.Z(j, d) += w * (diff / t);
                    }
                }
            }
            if (has2) {
                const Matrix& phi_n = stats.phi[i];
                const Matrix& bar = adj.phi[i];
                for (int j = 0; j < m; ++j) {
                    for (int l = 0; l < m; ++l) {
                        const double w = bar(j, l) * phi_n(j, l);
                        if (w == 0.0) continue;
                        g.variance += 2.0 * w / alpha;
                        for (int d = 0; d < q_dim; ++d) {
                            const double v = ell(d) * ell(d);
                            const double tau = v + 2.0 * q.variances(i, d);
                            const double r = Z(j, d) - Z(l, d);
                            const double e = q.means(i, d) - 0.5 * (Z(j, d) + Z(l, d));
                            const double dv = 0.5 * (1.0 / v - 1.0 / tau) + r * r / (4.0 * v * v) +
                                              e * e / (tau * tau);
                            g.lengthscales(d) += w * dv * 2.0 * ell(d);
                            g.variances(i, d) += w * (-1.0 / tau + 2.0 * e * e / (tau * tau));
                            g.means(i, d) += w * (-2.0 * e / tau);
                            g.Z(j, d) += w * (-r / (2.0 * v) + e / tau);
                            g.Z(l, d) += w * (r / (2.0 * v) + e / tau);
                        }
                    }
                }
            }
        }
        return g;
    }

    // Linear kernel.
    for (int i = 0; i < n; ++i) {
        const Vector mu = q.means.row(i).transpose();
        const Vector var = q.variances.row(i).transpose();
        if (has0) {
            const double w = adj.psi0(i);
            g.variance += w * (mu.squaredNorm() + var.sum());
            g.means.row(i) += w * 2.0 * alpha * mu.transpose();
            g.variances.row(i).array() += w * alpha;
        }
        if (has1) {
            const Vector row_bar = adj.Psi1.row(i).transpose();  // m
            g.variance += row_bar.dot(Z * mu);
            g.means.row(i) += alpha * (row_bar.transpose() * Z);
            g.Z += alpha * row_bar * mu.transpose();
        }
        if (has2) {
            const Matrix& bar = adj.phi[i];
            const Vector a = Z * mu;
            const Matrix A = mu * mu.transpose() + Matrix(var.asDiagonal());
            g.variance +=
                2.0 * alpha * ((bar.array() * (a * a.transpose() + Z * var.asDiagonal() * Z.transpose()).array()).sum());
            const Matrix bar_sym = bar + bar.transpose();
            g.Z += alpha * alpha * bar_sym * Z * A;
            const Matrix omega = alpha * alpha * Z.transpose() * bar * Z;  // Q×Q
            g.means.row(i) += ((omega + omega.transpose()) * mu).transpose();
            g.variances.row(i) += omega.diagonal().transpose();
        }
    }
    return g;
}

}  // namespace deepgp
