#pragma once

#include "deepgp/parallel.hpp"

namespace deepgp {

enum class OptimizeMethod { Lbfgs, SgdAdaptive };

struct OptimizerConfig {
    OptimizeMethod method = OptimizeMethod::Lbfgs;
    Objective objective = Objective::DeepBound;
    int max_iters = 200;
    int history_size = 10;       // lbfgs
    double step_size = 0.05;     // sgd
    double step_decay = 0.0;     // sgd: step_t = step_size / (1 + decay·t)
    int batch_size = 0;          // sgd: 0 means full batch
    double grad_tolerance = 1e-5;
    double objective_tolerance = 1e-9;  // relative
    std::uint64_t seed = 0;
    int workers = 0;  // 0: resolve from env / hardware
    int chunk_count = 1;
    /// Per-layer flag: keep all ARD lengthscales of that layer tied to one
    /// shared value (gradients are summed across dimensions).
    std::vector<std::uint8_t> tie_lengthscales;
};

struct TraceRecord {
    int iteration = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    double seconds = 0.0;
    long batch_id = -1;  // stochastic runs only
};

enum class StopReason {
    GradTolerance,
    ObjectiveTolerance,
    MaxIters,
    LineSearchFailure,
    NonFiniteObjective,
};

const char* to_string(StopReason reason);

struct OptimizeResult {
    DeepGpModel model;
    std::vector<TraceRecord> trace;
    StopReason reason = StopReason::MaxIters;
    double final_objective = 0.0;
};

/// Maximize the configured bound. L-BFGS never accepts a step that lowers
/// the objective; non-finite evaluations abort with the last finite state.
OptimizeResult maximize(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                        const OptimizerConfig& config,
                        const std::vector<std::uint8_t>* fixed_mask = nullptr);

// ---- generic L-BFGS core (minimization) ------------------------------------

struct LbfgsOptions {
    int max_iters = 200;
    int history = 10;
    double grad_tolerance = 1e-5;
    double objective_tolerance = 1e-9;
};

struct LbfgsOutcome {
    Vector x;
    double f = 0.0;
    int iterations = 0;
    StopReason reason = StopReason::MaxIters;
};

/// Limited-memory BFGS with a backtracking Wolfe line search over
/// fg(x, grad_out) -> f.
LbfgsOutcome lbfgs_minimize(
    const std::function<double(const Vector&, Vector&)>& fg, Vector x0, const LbfgsOptions& opts,
    const std::function<void(int, double, double)>& on_iteration = {});

// ---- initialization ---------------------------------------------------------

struct LayerArchitecture {
    int hidden_dim = 1;
    int num_inducing = 10;
    KernelFamily family = KernelFamily::ExponentiatedQuadratic;
};

struct ArchitectureSpec {
    std::vector<LayerArchitecture> layers;  // last hidden_dim is overridden by Y
    ModelMode mode = ModelMode::Regression;
};

/// Deterministic model initialization: inducing inputs are a k-means++-style
/// subset of each layer's (propagated) inputs, lengthscales are per-dimension
/// standard deviations, M = 0, L = 0.1·I, hidden noise 1e−2 and last-layer
/// noise 0.1·var(Y). Degenerate columns fall back with a warning.
DeepGpModel initialize(const Matrix& X, const Matrix& Y, const ArchitectureSpec& spec,
                       std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

}  // namespace deepgp
