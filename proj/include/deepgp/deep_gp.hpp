#pragma once

#include <vector>

#include "deepgp/sparse_gp.hpp"

namespace deepgp {

enum class ModelMode { Regression, Autoencoder };

/// Stack of variational layers. In autoencoder mode the data play both the
/// input and target role, so input_dim must equal output_dim.
struct DeepGpModel {
    std::vector<VariationalLayer> layers;
    ModelMode mode = ModelMode::Regression;

    int depth() const { return static_cast<int>(layers.size()); }
    int input_dim() const { return layers.front().input_dim(); }
    int output_dim() const { return layers.back().output_dim(); }
    void validate() const;
};

/// Nested bound value with full term decomposition:
///   total = likelihood_term − Σ kl_terms − Σ compression_terms − Σ propagation_terms.
/// The likelihood term is the exact expected log-likelihood of the last
/// layer under q (it absorbs the S-weighted trace of the completed square);
/// compression terms are the expected-TCV penalties, one per layer (the
/// first is the deterministic-input TCV); propagation terms exist for
/// layers 2..ℓ. All penalties are stored as non-negative magnitudes.
struct BoundReport {
    double total = 0.0;
    double likelihood_term = 0.0;
    std::vector<double> kl_terms;           // ℓ
    std::vector<double> compression_terms;  // ℓ
    std::vector<double> propagation_terms;  // ℓ−1 (layers 2..ℓ)
    Vector per_datum_partials;              // data-decomposable part, Σ = total + Σ kl
    long clamp_events = 0;                  // message variance floor hits
    double data_scale = 1.0;                // n_total/|batch| for minibatch runs
};

/// Moment-matched diagonal Gaussian push of q_in through one layer:
///   mean[n,d] = Ψ₁[n,:] K⁻¹ M[:,d]
///   var[n,d]  = σ² + ψ₀[n] − tr(K⁻¹Φ_n) + tr(K⁻¹(S+M_d M_dᵀ)K⁻¹ Φ_n) − mean².
/// Variances are clamped below at 1e−12; clamp events are counted into
/// *clamp_events when given.
GaussianMessage propagate_message(const VariationalLayer& layer, const GaussianMessage& q_in,
                                  long* clamp_events = nullptr);

/// Nested variational compression bound for the full stack. Regression mode
/// consumes X as a zero-variance first-layer message; autoencoder mode uses
/// Y on both ends.
BoundReport deep_bound(const DeepGpModel& model, const Matrix& X, const Matrix& Y);
BoundReport deep_bound(const DeepGpModel& model, const Matrix& Y);  // autoencoder

/// Stochastic estimate: data-dependent terms on the batch scaled by
/// n_total/|batch|, KL terms unscaled. Expectation over uniform batches
/// equals deep_bound exactly.
BoundReport deep_bound_minibatch(const DeepGpModel& model, const std::vector<int>& batch,
                                 const Matrix& X, const Matrix& Y, int n_total);

/// Chain of propagate_message through every layer. The final message
/// includes the last layer's noise variance.
GaussianMessage predict(const DeepGpModel& model, const Matrix& X_star);

/// Forward messages up to the requested hidden layer (1-based) of an
/// autoencoder. encode(model, Y, depth) equals the full reconstruction
/// message.
GaussianMessage encode(const DeepGpModel& model, const Matrix& Y, int layer_index);

}  // namespace deepgp
