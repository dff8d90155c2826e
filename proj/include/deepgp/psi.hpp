#pragma once

#include <cstdint>
#include <vector>

#include "deepgp/kernels.hpp"

namespace deepgp {

/// Per-datum independent Gaussian beliefs over a layer's inputs or outputs:
/// means plus diagonal variances, n data by Q dimensions. A deterministic
/// input is the variances ≡ 0 case.
struct GaussianMessage {
    Matrix means;      // n×Q
    Matrix variances;  // n×Q, elementwise ≥ 0

    static GaussianMessage deterministic(const Matrix& points) {
        return {points, Matrix::Zero(points.rows(), points.cols())};
    }

    int size() const { return static_cast<int>(means.rows()); }
    int dim() const { return static_cast<int>(means.cols()); }
    void validate() const;
};

/// Phi storage mode is explicit so a summed Φ can never be summed twice.
enum class PhiMode { PerDatum, Summed };

/// The three kernel expectations under a GaussianMessage q:
///   psi0[n]    = E_q[k(h_n, h_n)]
///   Psi1[n,j]  = E_q[k(h_n, z_j)]
///   Phi_n[j,l] = E_q[k(h_n, z_j)·k(h_n, z_l)]
struct PsiStats {
    Vector psi0;              // n
    Matrix Psi1;              // n×m
    std::vector<Matrix> phi;  // n matrices m×m; empty in Summed mode
    Matrix phi_sum;           // m×m, Σ_n Phi_n
    PhiMode mode = PhiMode::PerDatum;
};

/// Closed-form psi statistics for the EQ and Linear kernels.
PsiStats compute_psi(const KernelSpec& k, const Matrix& Z, const GaussianMessage& q,
                     PhiMode mode = PhiMode::PerDatum);

/// Monte Carlo estimate of the same expectations with per-entry standard
/// errors. Test oracle only: certifies the closed forms, never used on the
/// optimization path.
struct MonteCarloPsi {
    PsiStats stats;
    Vector psi0_se;
    Matrix Psi1_se;
    std::vector<Matrix> phi_se;
};
MonteCarloPsi monte_carlo_psi(const KernelSpec& k, const Matrix& Z, const GaussianMessage& q,
                              long samples, std::uint64_t seed);

/// Upstream adjoints for psi_gradients. An empty phi vector means a zero
/// adjoint for every Phi_n.
struct PsiAdjoints {
    Vector psi0;              // n (may be size 0 for zero adjoint)
    Matrix Psi1;              // n×m (may be 0×0)
    std::vector<Matrix> phi;  // n of m×m (may be empty)
};

struct PsiGradients {
    double variance = 0.0;
    Vector lengthscales;
    Matrix Z;
    Matrix means;
    Matrix variances;
};

/// Reverse-mode gradients of Σ adjoint∘statistic through the closed forms,
/// with respect to kernel hyperparameters, inducing inputs, and the message.
PsiGradients psi_gradients(const KernelSpec& k, const Matrix& Z, const GaussianMessage& q,
                           const PsiAdjoints& adj);

}  // namespace deepgp
