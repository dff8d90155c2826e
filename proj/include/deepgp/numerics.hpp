#pragma once

#include <Eigen/Dense>

#include "deepgp/errors.hpp"

namespace deepgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense lower-triangular matrix. Entries strictly above the diagonal are
/// forced to zero on construction.
class LowerTriangular {
  public:
    LowerTriangular() = default;
    explicit LowerTriangular(Matrix values);

    /// Identity scaled by `scale`.
    static LowerTriangular scaled_identity(int dim, double scale);

    int dim() const { return static_cast<int>(values_.rows()); }
    const Matrix& values() const { return values_; }
    double& at(int i, int j) { return values_(i, j); }
    double at(int i, int j) const { return values_(i, j); }

    /// S = L Lᵀ.
    Matrix outer() const { return values_ * values_.transpose(); }

    /// True when every diagonal entry is strictly positive, the requirement
    /// for use as a covariance factor.
    bool positive_diagonal() const;

  private:
    Matrix values_;
};

enum class TriSide { Lower, LowerTranspose };

/// Solve L X = B (Lower) or Lᵀ X = B (LowerTranspose).
Matrix tri_solve(const LowerTriangular& L, const Matrix& B, TriSide side);
Vector tri_solve(const LowerTriangular& L, const Vector& b, TriSide side);

/// A symmetric positive definite matrix together with its cached Cholesky
/// factor. The factor decomposes `values + jitter·I` where the jitter is the
/// smallest step of the relative escalation ladder that produced a valid
/// factorization.
class SpdMatrix {
  public:
    SpdMatrix() = default;

    int dim() const { return static_cast<int>(values_.rows()); }
    const Matrix& values() const { return values_; }
    const LowerTriangular& chol() const { return chol_; }
    double jitter() const { return jitter_; }

    /// (values + jitter·I)⁻¹ B through two triangular solves. No explicit
    /// inverse algorithm is used anywhere in the library.
    Matrix solve(const Matrix& B) const;

    /// log det of the jittered matrix: 2·Σ log diag(chol).
    double log_det() const;

    double trace() const { return values_.trace(); }

    friend SpdMatrix cholesky_with_jitter(const Matrix& A);

  private:
    Matrix values_;
    LowerTriangular chol_;
    double jitter_ = 0.0;
};

/// Factor a symmetric matrix, escalating jitter through
/// {0, 1e-10, 1e-8, 1e-6, 1e-4}·mean_diag(A) until the Cholesky succeeds.
/// Throws NotPositiveDefinite when the whole ladder fails.
SpdMatrix cholesky_with_jitter(const Matrix& A);

inline double log_det(const SpdMatrix& A) { return A.log_det(); }

}  // namespace deepgp
