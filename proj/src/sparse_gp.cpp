#include "deepgp/sparse_gp.hpp"

#include <cmath>

namespace deepgp {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

VariationalLayer::VariationalLayer(Matrix z, Matrix m_, LowerTriangular l, double noise_var,
                                   KernelSpec k)
    : Z(std::move(z)), M(std::move(m_)), kernel_(std::move(k)) {
    set_L(std::move(l));
    set_noise_var(noise_var);
    validate();
}

void VariationalLayer::set_L(LowerTriangular l) {
    if (!l.positive_diagonal()) {
        throw NonPositiveHyperparameter("variational factor L needs a positive diagonal");
    }
    L_ = std::move(l);
    log_L_diag_ = L_.values().diagonal().array().log();
}

void VariationalLayer::set_L_unconstrained(const Matrix& strict_lower, const Vector& log_diag) {
    if (strict_lower.rows() != log_diag.size() || strict_lower.cols() != log_diag.size()) {
        throw DimensionMismatch("set_L_unconstrained: shape mismatch");
    }
    Matrix values = strict_lower.triangularView<Eigen::StrictlyLower>();
    values.diagonal() = log_diag.array().exp();
    L_ = LowerTriangular(std::move(values));
    log_L_diag_ = log_diag;
}

void VariationalLayer::set_noise_var(double natural) {
    if (!(natural > 0.0) || !std::isfinite(natural)) {
        throw NonPositiveHyperparameter("noise variance must be positive");
    }
    noise_var_ = natural;
    log_noise_var_ = std::log(natural);
}

void VariationalLayer::set_log_noise_var(double log_value) {
    log_noise_var_ = log_value;
    noise_var_ = std::exp(log_value);
    if (!(noise_var_ > 0.0) || !std::isfinite(noise_var_)) {
        throw NonPositiveHyperparameter("log noise variance out of range");
    }
}

void VariationalLayer::set_kernel(KernelSpec k) { kernel_ = std::move(k); }

void VariationalLayer::validate() const {
    if (Z.rows() < 1) throw DimensionMismatch("layer needs at least one inducing input");
    if (M.rows() != Z.rows()) throw DimensionMismatch("M row count must match inducing count");
    if (M.cols() < 1) throw DimensionMismatch("layer needs at least one output column");
    if (L_.dim() != Z.rows()) throw DimensionMismatch("L dimension must match inducing count");
    if (Z.cols() != kernel_.input_dim()) {
        throw DimensionMismatch("inducing input dimension must match kernel lengthscale count");
    }
}

SpdMatrix VariationalLayer::kuu() const { return cholesky_with_jitter(gram(kernel_, Z, Z)); }

TcvReport tcv(const VariationalLayer& layer, const Matrix& X) {
    if (X.cols() != layer.input_dim()) throw DimensionMismatch("tcv: X dimension mismatch");
    const SpdMatrix K = layer.kuu();
    const Matrix Kuf = gram(layer.kernel(), layer.Z, X);        // m×n
    const Matrix V = tri_solve(K.chol(), Kuf, TriSide::Lower);  // m×n
    TcvReport report;
    report.per_datum =
        gram_diag(layer.kernel(), X) - V.colwise().squaredNorm().transpose();
    report.trace_sigma = report.per_datum.sum();
    return report;
}

double conditional_bound(const VariationalLayer& layer, const Matrix& X, const Matrix& Y) {
    if (X.rows() != Y.rows()) throw DimensionMismatch("conditional_bound: X/Y row mismatch");
    if (Y.cols() != layer.output_dim()) throw DimensionMismatch("conditional_bound: Y columns");
    const auto n = static_cast<double>(X.rows());
    const double d_out = static_cast<double>(layer.output_dim());
    const double s2 = layer.noise_var();

    const SpdMatrix K = layer.kuu();
    const Matrix Kuf = gram(layer.kernel(), layer.Z, X);
    const Matrix mean = Kuf.transpose() * K.solve(layer.M);
    const double quad = (Y - mean).squaredNorm();
    const double lik = -0.5 * n * d_out * (kLog2Pi + std::log(s2)) - quad / (2.0 * s2);
    return lik - d_out / (2.0 * s2) * tcv(layer, X).trace_sigma;
}

double collapsed_bound(const VariationalLayer& layer, const Matrix& X, const Matrix& Y) {
    if (X.rows() != Y.rows()) throw DimensionMismatch("collapsed_bound: X/Y row mismatch");
    if (Y.cols() != layer.output_dim()) throw DimensionMismatch("collapsed_bound: Y columns");
    const auto n = X.rows();
    const auto m = layer.num_inducing();
    const double d_out = static_cast<double>(layer.output_dim());
    const double s2 = layer.noise_var();

    const SpdMatrix K = layer.kuu();
    const Matrix Kuf = gram(layer.kernel(), layer.Z, X);
    const Matrix V = tri_solve(K.chol(), Kuf, TriSide::Lower);  // m×n

    Matrix B = V * V.transpose();
    B.diagonal().array() += s2;
    const SpdMatrix Bf = cholesky_with_jitter(B);

    const double trace_sigma = gram_diag(layer.kernel(), X).sum() - V.squaredNorm();
    const Matrix VY = V * Y;                                       // m×D
    const Matrix W = tri_solve(Bf.chol(), VY, TriSide::Lower);     // m×D
    const double quad = (Y.squaredNorm() - W.squaredNorm()) / s2;  // Σ_d yᵀ(Q+σ²I)⁻¹y
    const double logdet =
        Bf.log_det() + static_cast<double>(n - m) * std::log(s2);  // per column
    const double lik = -0.5 * d_out * (static_cast<double>(n) * kLog2Pi + logdet) - 0.5 * quad;
    return lik - d_out / (2.0 * s2) * trace_sigma;
}

SviBoundReport svi_bound(const VariationalLayer& layer, const Matrix& X, const Matrix& Y) {
    if (X.rows() != Y.rows()) throw DimensionMismatch("svi_bound: X/Y row mismatch");
    if (Y.cols() != layer.output_dim()) throw DimensionMismatch("svi_bound: Y columns");
    const auto n = X.rows();
    const double d_out = static_cast<double>(layer.output_dim());
    const double s2 = layer.noise_var();

    const SpdMatrix K = layer.kuu();
    const Matrix Kuf = gram(layer.kernel(), layer.Z, X);
    const Matrix P = K.solve(Kuf).transpose();  // n×m, rows k_iᵀK⁻¹
    const Matrix mean = P * layer.M;
    const Matrix S = layer.L().outer();

    SviBoundReport report;
    const Vector quad_n = (Y - mean).rowwise().squaredNorm();
    const Vector trace_n = ((P * S).array() * P.array()).rowwise().sum();
    const Vector tcv_n =
        gram_diag(layer.kernel(), X) -
        tri_solve(K.chol(), Kuf, TriSide::Lower).colwise().squaredNorm().transpose();

    const double norm_const = -0.5 * d_out * (kLog2Pi + std::log(s2));
    report.likelihood = static_cast<double>(n) * norm_const - quad_n.sum() / (2.0 * s2);
    report.trace_penalty = d_out / (2.0 * s2) * trace_n.sum();
    report.tcv_penalty = d_out / (2.0 * s2) * tcv_n.sum();
    report.kl = kl_gaussian(layer.M, layer.L(), K);
    report.value = report.likelihood - report.trace_penalty - report.kl - report.tcv_penalty;
    report.per_datum = Vector::Constant(n, norm_const) - quad_n / (2.0 * s2) -
                       d_out / (2.0 * s2) * (trace_n + tcv_n);
    return report;
}

double kl_gaussian(const Matrix& M, const LowerTriangular& L, const SpdMatrix& K) {
    const int m = K.dim();
    if (M.rows() != m || L.dim() != m) throw DimensionMismatch("kl_gaussian: dimension mismatch");
    if (!L.positive_diagonal()) {
        throw NotPositiveDefinite("kl_gaussian: L must have a positive diagonal");
    }
    const double d_out = static_cast<double>(M.cols());
    const Matrix half_l = tri_solve(K.chol(), L.values(), TriSide::Lower);
    const Matrix half_m = tri_solve(K.chol(), M, TriSide::Lower);
    const double log_det_s = 2.0 * L.values().diagonal().array().log().sum();
    return 0.5 * (d_out * half_l.squaredNorm() + half_m.squaredNorm() -
                  d_out * static_cast<double>(m) + d_out * (K.log_det() - log_det_s));
}

double exact_gp_lml(const KernelSpec& kernel, double noise_var, const Matrix& X, const Matrix& Y) {
    if (X.rows() != Y.rows()) throw DimensionMismatch("exact_gp_lml: X/Y row mismatch");
    if (X.rows() > 2000) throw GuardViolation("exact_gp_lml: n > 2000 (dense oracle guard)");
    if (!(noise_var > 0.0)) throw NonPositiveHyperparameter("exact_gp_lml: noise variance");
    const auto n = X.rows();
    const double d_out = static_cast<double>(Y.cols());
    Matrix Kn = gram(kernel, X, X);
    Kn.diagonal().array() += noise_var;
    const SpdMatrix Kf = cholesky_with_jitter(Kn);
    const Matrix half = tri_solve(Kf.chol(), Y, TriSide::Lower);
    return -0.5 * d_out * (static_cast<double>(n) * kLog2Pi + Kf.log_det()) -
           0.5 * half.squaredNorm();
}

}  // namespace deepgp
