#include "deepgp/parallel.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>

#include "deepgp/detail/stack_eval.hpp"

namespace deepgp {

ChunkPlan ChunkPlan::contiguous(int n, int chunk_count) {
    if (n < 1) throw InvalidPlan("ChunkPlan: need n ≥ 1");
    if (chunk_count < 1) throw InvalidPlan("ChunkPlan: need at least one chunk");
    if (chunk_count > n) throw InvalidPlan("ChunkPlan: more chunks than data");
    ChunkPlan plan;
    plan.n = n;
    const int base = n / chunk_count;
    const int extra = n % chunk_count;
    int at = 0;
    for (int c = 0; c < chunk_count; ++c) {
        const int len = base + (c < extra ? 1 : 0);
        plan.ranges.emplace_back(at, at + len);
        at += len;
    }
    return plan;
}

void ChunkPlan::validate(int expected_n) const {
    if (n != expected_n) throw InvalidPlan("ChunkPlan: plan size does not match data");
    int at = 0;
    for (const auto& [begin, end] : ranges) {
        if (begin != at || end <= begin || end > n) {
            throw InvalidPlan("ChunkPlan: ranges must partition [0, n)");
        }
        at = end;
    }
    if (at != n) throw InvalidPlan("ChunkPlan: ranges must cover [0, n)");
}

int resolve_worker_count(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("DEEPGP_WORKERS")) {
        const int parsed = std::atoi(env);
        if (parsed > 0) return parsed;
    }
    return omp_get_max_threads();
}

namespace {

/// Runs forward (and optionally backward) per chunk under OpenMP. Results
/// land in per-chunk slots; the first failing chunk wins and pending chunks
/// are skipped.
struct ChunkRun {
    std::vector<detail::ChunkForward> forwards;
    std::vector<detail::ModelGrads> grads;  // empty when gradients not requested
};

ChunkRun run_chunks(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                    const ChunkPlan& plan, int workers, bool with_grad) {
    const int count = plan.chunk_count();
    ChunkRun run;
    run.forwards.resize(count);
    if (with_grad) run.grads.resize(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<bool> failed{false};

#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
    for (int c = 0; c < count; ++c) {
        if (failed.load(std::memory_order_relaxed)) continue;
        try {
            const auto [begin, end] = plan.ranges[c];
            const Matrix Xc = X.middleRows(begin, end - begin);
            const Matrix Yc = Y.middleRows(begin, end - begin);
            run.forwards[c] = detail::forward_chunk(model, Xc, Yc);
            if (with_grad) {
                run.grads[c] = detail::ModelGrads::zero(model);
                detail::backward_chunk(model, run.forwards[c], Xc, Yc, 1.0, run.grads[c]);
            }
        } catch (...) {
            errors[c] = std::current_exception();
            failed.store(true, std::memory_order_relaxed);
        }
    }
    for (int c = 0; c < count; ++c) {
        if (errors[c]) std::rethrow_exception(errors[c]);
    }
    return run;
}

void check_inputs(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                  const ChunkPlan& plan) {
    model.validate();
    if (X.rows() != Y.rows()) throw DimensionMismatch("map_reduce: X/Y row mismatch");
    plan.validate(static_cast<int>(X.rows()));
}

}  // namespace

BoundReport map_reduce_bound(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                             const ChunkPlan& plan, int workers) {
    check_inputs(model, X, Y, plan);
    ChunkRun run = run_chunks(model, X, Y, plan, resolve_worker_count(workers), false);
    return detail::assemble_report(model, run.forwards, 1.0);
}

EvalResult map_reduce_value_and_grad(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                                     const ChunkPlan& plan, int workers,
                                     const std::vector<std::uint8_t>* fixed_mask) {
    check_inputs(model, X, Y, plan);
    ChunkRun run = run_chunks(model, X, Y, plan, resolve_worker_count(workers), true);

    detail::ModelGrads grads = detail::ModelGrads::zero(model);
    for (const detail::ModelGrads& g : run.grads) grads.axpy(1.0, g);  // ascending order
    detail::backward_kl(model, grads);

    EvalResult out;
    out.report = detail::assemble_report(model, run.forwards, 1.0);
    out.value = out.report.total;
    out.gradient = detail::grads_to_unconstrained(model, grads, fixed_mask);
    return out;
}

ParameterVector map_reduce_grad(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                                const ChunkPlan& plan, int workers) {
    return map_reduce_value_and_grad(model, X, Y, plan, workers).gradient;
}

}  // namespace deepgp
