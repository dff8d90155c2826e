#pragma once

#include "deepgp/numerics.hpp"

namespace deepgp {

enum class KernelFamily { ExponentiatedQuadratic, Linear };

/// Covariance function with positive hyperparameters. Lengthscales are
/// per-input-dimension (ARD); they are carried but unused for Linear.
///
/// Hyperparameters are stored in log space (the optimized representation)
/// alongside cached natural values, so packing a model to its unconstrained
/// vector and back is an exact round trip.
class KernelSpec {
  public:
    KernelSpec(KernelFamily family, double variance, Vector lengthscales);
    static KernelSpec from_log(KernelFamily family, double log_variance, Vector log_lengthscales);

    KernelFamily family() const { return family_; }
    double variance() const { return variance_; }
    const Vector& lengthscales() const { return lengthscales_; }
    double log_variance() const { return log_variance_; }
    const Vector& log_lengthscales() const { return log_lengthscales_; }
    int input_dim() const { return static_cast<int>(lengthscales_.size()); }

  private:
    KernelSpec() = default;
    KernelFamily family_ = KernelFamily::ExponentiatedQuadratic;
    double variance_ = 1.0;
    Vector lengthscales_;
    double log_variance_ = 0.0;
    Vector log_lengthscales_;
};

/// Cross-covariance matrix: entry (i,j) = k(X.row(i), X2.row(j)).
Matrix gram(const KernelSpec& k, const Matrix& X, const Matrix& X2);

/// Diagonal of gram(k, X, X) without forming the full matrix.
Vector gram_diag(const KernelSpec& k, const Matrix& X);

struct GramGradients {
    double variance = 0.0;
    Vector lengthscales;  // zero for Linear
    Matrix X;
    Matrix X2;
};

/// Reverse-mode gradients of sum(upstream ∘ gram(k, X, X2)) with respect to
/// the kernel hyperparameters (natural space) and both point sets. When X
/// and X2 alias the same points the caller adds the X and X2 blocks.
GramGradients gram_gradients(const KernelSpec& k, const Matrix& X, const Matrix& X2,
                             const Matrix& upstream);

}  // namespace deepgp
