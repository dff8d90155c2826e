#pragma once

#include "deepgp/gradients.hpp"

// Shared forward/backward machinery for the nested bound. One chunk of data
// rows is evaluated independently of every other chunk; the serial bound,
// the minibatch estimate, the OpenMP map-reduce and the gradient assembly
// are all drivers over these routines.

namespace deepgp::detail {

struct LayerForward {
    SpdMatrix K;
    Matrix Kinv;    // (K+jI)⁻¹, built by a Cholesky solve of I, for traces
    PsiStats stats; // per-datum phi (Summed mode on the deterministic path)
    Matrix S;       // L Lᵀ
    Matrix P;       // Ψ K⁻¹, rows×m
    Matrix KinvM;   // m×D
    Matrix B;       // K⁻¹ S K⁻¹
    Matrix mu_out;  // rows×D
    Matrix s_out;   // rows×D, clamped
    Matrix s_raw;   // rows×D, before clamping
    Vector trace_kinv_phi;  // rows: tr(K⁻¹Φ_n)
    Vector comp_n, prop_n;  // per-datum penalty magnitudes
    double comp = 0.0, prop = 0.0;
    long clamp_events = 0;
    // Zero-variance input: Φ_n ≡ Ψ_nᵀΨ_n exactly, so every Φ contraction is
    // taken through Ψ instead (cancellation-free and cheaper).
    bool det_input = false;
};

struct ChunkForward {
    std::vector<LayerForward> layers;
    double lik = 0.0;  // expected log-likelihood of the last layer
    Vector lik_n;
    Vector per_datum;  // lik_n − Σ_i comp_n − Σ_i prop_n
    long clamp_events = 0;
};

/// Forward pass over one chunk of rows. X_rows are the first-layer inputs
/// (the data themselves in autoencoder mode), Y_rows the targets.
ChunkForward forward_chunk(const DeepGpModel& model, const Matrix& X_rows, const Matrix& Y_rows);

/// Single-layer forward: statistics, penalty terms and the propagated
/// message. is_first suppresses the propagation term (it vanishes
/// identically for a deterministic input).
LayerForward forward_layer(const VariationalLayer& layer, const GaussianMessage& q_in,
                           bool is_first);

/// Natural-space gradients for every layer parameter.
struct LayerGrads {
    double variance = 0.0;
    Vector lengthscales;
    Matrix Z, M;
    Matrix L;  // lower-triangular, natural space
    double noise_var = 0.0;
};

struct ModelGrads {
    std::vector<LayerGrads> layers;
    static ModelGrads zero(const DeepGpModel& model);
    void axpy(double scale, const ModelGrads& other);
};

/// Reverse pass over one chunk: adds the data-dependent gradient
/// contributions (times scale) into grads. KL gradients are excluded; call
/// backward_kl once per evaluation.
void backward_chunk(const DeepGpModel& model, const ChunkForward& fwd, const Matrix& X_rows,
                    const Matrix& Y_rows, double scale, ModelGrads& grads);

/// KL terms per layer and their gradient.
std::vector<double> kl_terms(const DeepGpModel& model);
void backward_kl(const DeepGpModel& model, ModelGrads& grads);

/// Assemble a BoundReport from per-chunk forwards listed in ascending row
/// order. `scale` multiplies every data-dependent quantity.
BoundReport assemble_report(const DeepGpModel& model, const std::vector<ChunkForward>& chunks,
                            double scale);

/// Natural-space gradients into the flat unconstrained vector (chain rule
/// through the log transforms), with frozen entries zeroed.
ParameterVector grads_to_unconstrained(const DeepGpModel& model, const ModelGrads& grads,
                                       const std::vector<std::uint8_t>* fixed_mask);

}  // namespace deepgp::detail
