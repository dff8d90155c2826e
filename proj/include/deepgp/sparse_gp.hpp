#pragma once

#include "deepgp/psi.hpp"

namespace deepgp {

/// One sparse GP layer: inducing inputs Z, variational Gaussian
/// q(u) = N(M, LLᵀ) with a single factor L shared across the output columns,
/// Gaussian noise, and a kernel.
///
/// The noise variance and the diagonal of L keep their unconstrained (log)
/// representation as the canonical value, mirroring KernelSpec, so the flat
/// parameter vector round-trips exactly.
class VariationalLayer {
  public:
    Matrix Z;  // m×Q_in
    Matrix M;  // m×Q_out

    VariationalLayer(Matrix z, Matrix m_, LowerTriangular l, double noise_var, KernelSpec k);

    int num_inducing() const { return static_cast<int>(Z.rows()); }
    int input_dim() const { return static_cast<int>(Z.cols()); }
    int output_dim() const { return static_cast<int>(M.cols()); }

    const LowerTriangular& L() const { return L_; }
    const Vector& log_L_diag() const { return log_L_diag_; }
    /// Replace L from a natural factor (diagonal must be positive).
    void set_L(LowerTriangular l);
    /// Replace L from its unconstrained parts.
    void set_L_unconstrained(const Matrix& strict_lower, const Vector& log_diag);

    double noise_var() const { return noise_var_; }
    double log_noise_var() const { return log_noise_var_; }
    void set_noise_var(double natural);
    void set_log_noise_var(double log_value);

    const KernelSpec& kernel() const { return kernel_; }
    void set_kernel(KernelSpec k);

    void validate() const;

    /// K_uu with cached factor (jitter ladder applied).
    SpdMatrix kuu() const;

  private:
    LowerTriangular L_;
    Vector log_L_diag_;
    double noise_var_ = 1.0;
    double log_noise_var_ = 0.0;
    KernelSpec kernel_;
};

/// Total conditional variance tr Σ with Σ = K_ff − K_fu K_uu⁻¹ K_uf,
/// accumulated per datum without ever forming the n×n matrix.
struct TcvReport {
    double trace_sigma = 0.0;
    Vector per_datum;
};
TcvReport tcv(const VariationalLayer& layer, const Matrix& X);

/// Bound on log p(y|u): likelihood at the mean K_fu K_uu⁻¹ M plus the TCV
/// correction. Uses 1/(2σ²) on the trace term.
double conditional_bound(const VariationalLayer& layer, const Matrix& X, const Matrix& Y);

/// Collapsed (q(u) marginalized) bound, computed through the m×m Woodbury
/// route in O(nm²). Ignores M and L.
double collapsed_bound(const VariationalLayer& layer, const Matrix& X, const Matrix& Y);

/// Uncollapsed bound with explicit q(u) = N(M, LLᵀ). Terms are stored as
/// positive penalties: value = likelihood − trace − kl − tcv.
struct SviBoundReport {
    double value = 0.0;
    double likelihood = 0.0;
    double trace_penalty = 0.0;
    double kl = 0.0;
    double tcv_penalty = 0.0;
    Vector per_datum;  // data-decomposable part (everything except kl)
};
SviBoundReport svi_bound(const VariationalLayer& layer, const Matrix& X, const Matrix& Y);

/// KL(N(M, LLᵀ) ‖ N(0, K)) summed over the columns of M, with the factor
/// LLᵀ shared across columns.
double kl_gaussian(const Matrix& M, const LowerTriangular& L, const SpdMatrix& K);

/// Dense O(n³) log marginal likelihood of an exact GP. Oracle only; guarded
/// to n ≤ 2000 and excluded from the optimization path.
double exact_gp_lml(const KernelSpec& kernel, double noise_var, const Matrix& X, const Matrix& Y);

}  // namespace deepgp
