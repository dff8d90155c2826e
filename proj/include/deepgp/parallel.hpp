#pragma once

#include "deepgp/gradients.hpp"

namespace deepgp {

/// Contiguous partition of [0, n) into evaluation chunks.
struct ChunkPlan {
    int n = 0;
    std::vector<std::pair<int, int>> ranges;  // half-open [begin, end)

    static ChunkPlan contiguous(int n, int chunk_count);
    int chunk_count() const { return static_cast<int>(ranges.size()); }
    void validate(int expected_n) const;
};

/// Worker count resolution: CLI flag wins, then DEEPGP_WORKERS, then the
/// OpenMP default.
int resolve_worker_count(int flag_value);

/// Chunked evaluation of the nested bound: per-chunk data terms computed
/// independently (OpenMP), reduced in ascending chunk order, KL terms
/// computed once. Equals the serial bound within 1e−12 relative; equals it
/// bitwise for a single chunk.
BoundReport map_reduce_bound(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                             const ChunkPlan& plan, int workers = 0);

/// Same decomposition applied to the gradient.
ParameterVector map_reduce_grad(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                                const ChunkPlan& plan, int workers = 0);

/// Bound and gradient in one chunked pass (what the optimizer consumes).
EvalResult map_reduce_value_and_grad(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                                     const ChunkPlan& plan, int workers = 0,
                                     const std::vector<std::uint8_t>* fixed_mask = nullptr);

}  // namespace deepgp
