#include "deepgp/kernels.hpp"

#include <cmath>

namespace deepgp {

KernelSpec::KernelSpec(KernelFamily family, double variance, Vector lengthscales)
    : family_(family), variance_(variance), lengthscales_(std::move(lengthscales)) {
    if (!(variance_ > 0.0) || !std::isfinite(variance_)) {
        throw NonPositiveHyperparameter("kernel variance must be positive");
    }
    if (lengthscales_.size() == 0) {
        throw DimensionMismatch("kernel needs one lengthscale per input dimension");
    }
    if (!(lengthscales_.array() > 0.0).all() || !lengthscales_.allFinite()) {
        throw NonPositiveHyperparameter("kernel lengthscales must be positive");
    }
    log_variance_ = std::log(variance_);
    log_lengthscales_ = lengthscales_.array().log();
}

KernelSpec KernelSpec::from_log(KernelFamily family, double log_variance,
                                Vector log_lengthscales) {
    KernelSpec k;
    k.family_ = family;
    k.log_variance_ = log_variance;
    k.log_lengthscales_ = std::move(log_lengthscales);
    k.variance_ = std::exp(log_variance);
    k.lengthscales_ = k.log_lengthscales_.array().exp();
    if (k.lengthscales_.size() == 0) {
        throw DimensionMismatch("kernel needs one lengthscale per input dimension");
    }
    if (!std::isfinite(k.variance_) || !k.lengthscales_.allFinite() ||
        !(k.variance_ > 0.0) || !(k.lengthscales_.array() > 0.0).all()) {
        throw NonPositiveHyperparameter("kernel log-hyperparameters out of range");
    }
    return k;
}

namespace {

void check_dims(const KernelSpec& k, const Matrix& X, const Matrix& X2) {
    if (X.cols() != k.input_dim() || X2.cols() != k.input_dim()) {
        throw DimensionMismatch("gram: point dimension does not match lengthscale count");
    }
}

}  // namespace

Matrix gram(const KernelSpec& k, const Matrix& X, const Matrix& X2) {
    check_dims(k, X, X2);
    const auto n = X.rows();
    const auto m = X2.rows();
    if (k.family() == KernelFamily::Linear) {
        return k.variance() * (X * X2.transpose());
    }
    const Vector& ell = k.lengthscales();
    const int q_dim = k.input_dim();
    Matrix out(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            double expo = 0.0;
            for (int q = 0; q < q_dim; ++q) {
                const double d = X(i, q) - X2(j, q);
                expo += d * d / (2.0 * ell(q) * ell(q));
            }
            out(i, j) = k.variance() * std::exp(-expo);
        }
    }
    return out;
}

Vector gram_diag(const KernelSpec& k, const Matrix& X) {
    if (X.cols() != k.input_dim()) {
        throw DimensionMismatch("gram_diag: point dimension does not match lengthscale count");
    }
    if (k.family() == KernelFamily::ExponentiatedQuadratic) {
        return Vector::Constant(X.rows(), k.variance());
    }
    return k.variance() * X.rowwise().squaredNorm();
}

GramGradients gram_gradients(const KernelSpec& k, const Matrix& X, const Matrix& X2,
                             const Matrix& upstream) {
    check_dims(k, X, X2);
    if (upstream.rows() != X.rows() || upstream.cols() != X2.rows()) {
        throw DimensionMismatch("gram_gradients: upstream shape mismatch");
    }
    GramGradients g;
    g.lengthscales = Vector::Zero(k.input_dim());
    g.X = Matrix::Zero(X.rows(), X.cols());
    g.X2 = Matrix::Zero(X2.rows(), X2.cols());

    const double alpha = k.variance();
    if (k.family() == KernelFamily::Linear) {
        g.variance = (upstream.array() * (X * X2.transpose()).array()).sum();
        g.X = alpha * upstream * X2;
        g.X2 = alpha * upstream.transpose() * X;
        return g;
    }

    const Vector& ell = k.lengthscales();
    const int q_dim = k.input_dim();
    const Matrix K = gram(k, X, X2);
    g.variance = (upstream.array() * K.array()).sum() / alpha;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X2.rows(); ++j) {
            const double w = upstream(i, j) * K(i, j);
            if (w == 0.0) continue;
            for (int q = 0; q < q_dim; ++q) {
                const double v = ell(q) * ell(q);
                const double d = X(i, q) - X2(j, q);
                // dk/dv = k·d²/(2v²), dv/dℓ = 2ℓ
                g.lengthscales(q) += w * d * d / (2.0 * v * v) * 2.0 * ell(q);
                g.X(i, q) += w * (-d / v);
                g.X2(j, q) += w * (d / v);
            }
        }
    }
    return g;
}

}  // namespace deepgp
