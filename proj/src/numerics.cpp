#include "deepgp/numerics.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace deepgp {

LowerTriangular::LowerTriangular(Matrix values) {
    if (values.rows() != values.cols()) {
        throw DimensionMismatch("LowerTriangular: matrix must be square");
    }
    values_ = values.triangularView<Eigen::Lower>();
}

LowerTriangular LowerTriangular::scaled_identity(int dim, double scale) {
    LowerTriangular out;
    out.values_ = scale * Matrix::Identity(dim, dim);
    return out;
}

bool LowerTriangular::positive_diagonal() const {
    return (values_.diagonal().array() > 0.0).all();
}

Matrix tri_solve(const LowerTriangular& L, const Matrix& B, TriSide side) {
    if (L.dim() != B.rows()) {
        throw DimensionMismatch("tri_solve: L is " + std::to_string(L.dim()) + "x" +
                                std::to_string(L.dim()) + " but B has " +
                                std::to_string(B.rows()) + " rows");
    }
    if (side == TriSide::Lower) {
        return L.values().triangularView<Eigen::Lower>().solve(B);
    }
    return L.values().transpose().triangularView<Eigen::Upper>().solve(B);
}

Vector tri_solve(const LowerTriangular& L, const Vector& b, TriSide side) {
    Matrix col = tri_solve(L, Matrix(b), side);
    return Vector(col.col(0));
}

Matrix SpdMatrix::solve(const Matrix& B) const {
    const auto back_substitute = [this](const Matrix& rhs) {
        Matrix half = tri_solve(chol_, rhs, TriSide::Lower);
        return tri_solve(chol_, half, TriSide::LowerTranspose);
    };
    Matrix x = back_substitute(B);
    // Iterative refinement keeps residuals near machine level on the
    // ill-conditioned Gram matrices kernel hyperparameters can produce.
    const double b_norm = B.norm();
    for (int step = 0; step < 3; ++step) {
        Matrix residual = B - values_ * x;
        if (jitter_ != 0.0) residual.noalias() -= jitter_ * x;
        if (residual.norm() <= 1e-14 * std::max(b_norm, 1e-300)) break;
        x += back_substitute(residual);
    }
    return x;
}

double SpdMatrix::log_det() const {
    return 2.0 * chol_.values().diagonal().array().log().sum();
}

SpdMatrix cholesky_with_jitter(const Matrix& A) {
    if (A.rows() != A.cols()) {
        throw DimensionMismatch("cholesky_with_jitter: matrix must be square");
    }
    if (!A.allFinite()) {
        throw NotPositiveDefinite("cholesky_with_jitter: non-finite entries");
    }
    const int m = static_cast<int>(A.rows());
    const double mean_diag = A.trace() / static_cast<double>(m);

    static constexpr double kLadder[] = {0.0, 1e-10, 1e-8, 1e-6, 1e-4};
    for (double step : kLadder) {
        const double jitter = step * mean_diag;
        Matrix shifted = A;
        shifted.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(shifted);
        if (llt.info() == Eigen::Success) {
            Matrix factor = llt.matrixL();
            if (factor.allFinite() && (factor.diagonal().array() > 0.0).all()) {
                SpdMatrix candidate;
                candidate.values_ = A;
                candidate.chol_ = LowerTriangular(std::move(factor));
                candidate.jitter_ = jitter;
                // A ladder step only counts as a success when solves meet
                // their residual contract; near-singular factorizations that
                // LLT technically completes are escalated instead.
                const Matrix probe = Matrix::Ones(m, 1);
                const Matrix x = candidate.solve(probe);
                Matrix residual = probe - shifted * x;
                if (residual.norm() <= 1e-9 * probe.norm()) {
                    return candidate;
                }
            }
        }
        if (mean_diag <= 0.0) {
            break;  // ladder is degenerate, escalation cannot help
        }
    }
    throw NotPositiveDefinite(
        "cholesky_with_jitter: factorization failed at every jitter level "
        "(ill-conditioned kernel hyperparameters or duplicated inducing inputs?)");
}

}  // namespace deepgp
