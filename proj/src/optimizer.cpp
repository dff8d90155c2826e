#include "deepgp/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace deepgp {

const char* to_string(StopReason reason) {
    switch (reason) {
        case StopReason::GradTolerance: return "grad_tolerance";
        case StopReason::ObjectiveTolerance: return "objective_tolerance";
        case StopReason::MaxIters: return "max_iters";
        case StopReason::LineSearchFailure: return "line_search_failure";
        case StopReason::NonFiniteObjective: return "non_finite_objective";
    }
    return "unknown";
}

LbfgsOutcome lbfgs_minimize(const std::function<double(const Vector&, Vector&)>& fg, Vector x0,
                            const LbfgsOptions& opts,
                            const std::function<void(int, double, double)>& on_iteration) {
    const int dim = static_cast<int>(x0.size());
    LbfgsOutcome out;
    out.x = std::move(x0);

    Vector grad(dim);
    double f = fg(out.x, grad);
    if (!std::isfinite(f) || !grad.allFinite()) {
        out.f = f;
        out.reason = StopReason::NonFiniteObjective;
        return out;
    }

    std::vector<Vector> s_hist, y_hist;
    std::vector<double> rho_hist;
    Vector direction(dim), x_try(dim), grad_try(dim);

    constexpr double kArmijo = 1e-4;
    constexpr double kWolfe = 0.9;
    constexpr int kMaxLineSearch = 50;

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        if (grad.norm() <= opts.grad_tolerance * std::max(1.0, out.x.norm())) {
            out.f = f;
            out.iterations = iter;
            out.reason = StopReason::GradTolerance;
            return out;
        }

        // two-loop recursion for the search direction
        direction = -grad;
        const int hist = static_cast<int>(s_hist.size());
        std::vector<double> alpha(hist);
        for (int i = hist - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(direction);
            direction -= alpha[i] * y_hist[i];
        }
        if (hist > 0) {
            direction *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        }
        for (int i = 0; i < hist; ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(direction);
            direction += (alpha[i] - beta) * s_hist[i];
        }
        double dg = direction.dot(grad);
        if (!(dg < 0.0)) {
            direction = -grad;
            dg = -grad.squaredNorm();
        }

        // Backtracking Wolfe: shrink on Armijo failure, grow while the
        // curvature condition is not yet met. Accepted steps never raise f.
        double step = (iter == 0) ? std::min(1.0, 1.0 / std::max(1e-12, grad.norm())) : 1.0;
        double accepted_step = -1.0;
        double accepted_f = f;
        double f_new = f;
        bool wolfe_ok = false;
        for (int ls = 0; ls < kMaxLineSearch; ++ls) {
            x_try = out.x + step * direction;
            const double f_try = fg(x_try, grad_try);
            const bool finite = std::isfinite(f_try) && grad_try.allFinite();
            const bool armijo = finite && f_try <= f + kArmijo * step * dg;
            if (armijo && f_try <= accepted_f) {
                accepted_step = step;
                accepted_f = f_try;
            }
            if (armijo && grad_try.dot(direction) >= kWolfe * dg) {
                wolfe_ok = true;
                f_new = f_try;  // x_try/grad_try hold the accepted point
                break;
            }
            step *= armijo ? 2.0 : 0.5;
            if (step < 1e-16 || step > 1e16) break;
        }
        if (!wolfe_ok) {
            if (accepted_step < 0.0) {
                out.f = f;
                out.iterations = iter;
                out.reason = StopReason::LineSearchFailure;
                return out;
            }
            // curvature never satisfied: fall back to the best Armijo point
            x_try = out.x + accepted_step * direction;
            fg(x_try, grad_try);
            f_new = accepted_f;
        }

        Vector s_vec = x_try - out.x;
        Vector y_vec = grad_try - grad;
        const double f_prev = f;
        out.x = x_try;
        grad = grad_try;
        f = f_new;

        const double sy = s_vec.dot(y_vec);
        if (sy > 1e-10 * s_vec.norm() * y_vec.norm()) {
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.history) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
        }

        if (on_iteration) on_iteration(iter + 1, f, grad.norm());
        if (std::abs(f_prev - f) <= opts.objective_tolerance * std::max(1.0, std::abs(f))) {
            out.f = f;
            out.iterations = iter + 1;
            out.reason = StopReason::ObjectiveTolerance;
            return out;
        }
    }
    out.f = f;
    out.iterations = opts.max_iters;
    out.reason = StopReason::MaxIters;
    return out;
}

namespace {

// Objective plumbing shared by both methods: maximize bound == minimize −bound.
struct BoundProblem {
    const DeepGpModel* prototype;
    const Matrix* X;
    const Matrix* Y;
    const OptimizerConfig* config;
    const std::vector<std::uint8_t>* fixed_mask;
    ParameterLayout layout;

    void apply_ties(Vector& grad) const {
        if (config->tie_lengthscales.empty()) return;
        for (const Segment& seg : layout.segments()) {
            if (seg.role != ParamRole::LengthscalesLog) continue;
            if (seg.layer >= static_cast<int>(config->tie_lengthscales.size())) continue;
            if (!config->tie_lengthscales[seg.layer]) continue;
            const double total = grad.segment(seg.offset, seg.size).sum();
            grad.segment(seg.offset, seg.size).setConstant(total);
        }
    }

    // Returns −bound and its gradient; numerical failures map to +inf so the
    // line search backs away instead of aborting.
    double eval(const Vector& x, Vector& grad, const MinibatchSpec* mb) const {
        ParameterVector pv;
        pv.layout = layout;
        pv.values = x;
        pv.fixed_mask.assign(layout.size(), 0);
        try {
            const DeepGpModel model = unpack(pv);
            EvalResult res;
            const Objective obj = mb != nullptr ? Objective::DeepBoundMinibatch
                                                : config->objective;
            if (mb == nullptr && config->chunk_count > 1 &&
                config->chunk_count <= X->rows()) {
                const ChunkPlan plan =
                    ChunkPlan::contiguous(static_cast<int>(X->rows()), config->chunk_count);
                res = map_reduce_value_and_grad(model, *X, *Y, plan, config->workers, fixed_mask);
            } else {
                res = value_and_grad(obj, model, *X, *Y, mb, fixed_mask);
            }
            grad = -res.gradient.values;
            apply_ties(grad);
            return -res.value;
        } catch (const Error&) {
            grad.setConstant(std::numeric_limits<double>::quiet_NaN());
            return std::numeric_limits<double>::infinity();
        }
    }
};

}  // namespace

OptimizeResult maximize(const DeepGpModel& model, const Matrix& X, const Matrix& Y,
                        const OptimizerConfig& config,
                        const std::vector<std::uint8_t>* fixed_mask) {
    model.validate();
    const ParameterVector pv0 = pack(model);
    BoundProblem problem{&model, &X, &Y, &config, fixed_mask, pv0.layout};

    OptimizeResult result;
    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    if (config.method == OptimizeMethod::Lbfgs) {
        LbfgsOptions opts;
        opts.max_iters = config.max_iters;
        opts.history = config.history_size;
        opts.grad_tolerance = config.grad_tolerance;
        opts.objective_tolerance = config.objective_tolerance;
        const auto fg = [&](const Vector& x, Vector& g) { return problem.eval(x, g, nullptr); };
        const auto on_iter = [&](int iter, double f, double gnorm) {
            result.trace.push_back({iter, -f, gnorm, elapsed(), -1});
        };
        LbfgsOutcome outcome = lbfgs_minimize(fg, pv0.values, opts, on_iter);
        ParameterVector pv = pv0;
        pv.values = outcome.x;
        result.model = unpack(pv);
        result.reason = outcome.reason;
        result.final_objective = -outcome.f;
        return result;
    }

    // Adaptive per-coordinate stochastic ascent with a fixed-seed schedule.
    const int n = static_cast<int>(X.rows());
    const int batch_size =
        (config.batch_size > 0 && config.batch_size < n) ? config.batch_size : n;
    std::mt19937_64 rng(config.seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    int cursor = n;  // force a shuffle on first use

    Vector x = pv0.values;
    Vector grad(x.size());
    Vector accum = Vector::Zero(x.size());
    Vector best_x = x;
    double last_finite = -std::numeric_limits<double>::infinity();
    result.reason = StopReason::MaxIters;

    for (int iter = 0; iter < config.max_iters; ++iter) {
        MinibatchSpec mb;
        mb.n_total = n;
        mb.batch.resize(batch_size);
        for (int k = 0; k < batch_size; ++k) {
            if (cursor >= n) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            mb.batch[k] = order[cursor++];
        }
        const double neg_f = problem.eval(x, grad, batch_size == n ? nullptr : &mb);
        if (!std::isfinite(neg_f) || !grad.allFinite()) {
            result.reason = StopReason::NonFiniteObjective;
            break;
        }
        last_finite = -neg_f;
        best_x = x;
        const double step = config.step_size / (1.0 + config.step_decay * iter);
        accum.array() += grad.array().square();
        x.array() -= step * grad.array() / (accum.array().sqrt() + 1e-8);
        result.trace.push_back({iter + 1, -neg_f, grad.norm(), elapsed(), iter});
        if (grad.norm() <= config.grad_tolerance * std::max(1.0, x.norm())) {
            result.reason = StopReason::GradTolerance;
            break;
        }
    }
    ParameterVector pv = pv0;
    pv.values = result.reason == StopReason::NonFiniteObjective ? best_x : x;
    result.model = unpack(pv);
    result.final_objective = last_finite;
    return result;
}

namespace {

Matrix kmeanspp_subset(const Matrix& points, int m, std::mt19937_64& rng) {
    const int n = static_cast<int>(points.rows());
    Matrix centers(m, points.cols());
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (m >= n) {
        // take every point (a permutation), then cycle with a small jitter
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const double jitter_sd = 0.01;
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int i = 0; i < m; ++i) {
            centers.row(i) = points.row(order[i % n]);
            if (i >= n) {
                for (int q = 0; q < points.cols(); ++q) {
                    centers(i, q) += jitter_sd * gauss(rng);
                }
            }
        }
        return centers;
    }
    std::vector<int> chosen;
    chosen.push_back(static_cast<int>(unif(rng) * n) % n);
    Vector d2 = (points.rowwise() - points.row(chosen[0])).rowwise().squaredNorm();
    while (static_cast<int>(chosen.size()) < m) {
        const double total = d2.sum();
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(unif(rng) * n) % n;  // all remaining identical
        } else {
            double r = unif(rng) * total;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                r -= d2(i);
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
        const Vector cand = (points.rowwise() - points.row(pick)).rowwise().squaredNorm();
        d2 = d2.cwiseMin(cand);
    }
    for (int i = 0; i < m; ++i) centers.row(i) = points.row(chosen[i]);
    return centers;
}

Vector column_stds(const Matrix& a) {
    const int n = static_cast<int>(a.rows());
    Vector mean = a.colwise().mean();
    Vector var = (a.rowwise() - mean.transpose()).array().square().colwise().sum() /
                 std::max(1, n - 1);
    return var.array().sqrt();
}

// Identity-like projection Q_in → Q_out: copy coordinates, padding with zeros.
Matrix truncate_or_pad(const Matrix& a, int d_out) {
    Matrix out = Matrix::Zero(a.rows(), d_out);
    const int copy = std::min<int>(static_cast<int>(a.cols()), d_out);
    out.leftCols(copy) = a.leftCols(copy);
    return out;
}

}  // namespace

DeepGpModel initialize(const Matrix& X, const Matrix& Y, const ArchitectureSpec& spec,
                       std::uint64_t seed, std::vector<std::string>* warnings) {
    if (spec.layers.empty()) throw DimensionMismatch("initialize: empty architecture");
    if (X.rows() != Y.rows() || X.rows() < 1) throw DegenerateData("initialize: bad data shape");
    const auto warn = [&](const std::string& msg) {
        if (warnings != nullptr) warnings->push_back(msg);
    };

    std::mt19937_64 rng(seed);
    const int depth = static_cast<int>(spec.layers.size());
    const double var_y =
        std::max(1e-6, column_stds(Y).array().square().mean());  // degenerate-Y floor

    DeepGpModel model;
    model.mode = spec.mode;
    Matrix inputs = (spec.mode == ModelMode::Autoencoder) ? Y : X;
    GaussianMessage msg = GaussianMessage::deterministic(inputs);

    for (int i = 0; i < depth; ++i) {
        const bool last = (i == depth - 1);
        const int d_out = last ? static_cast<int>(Y.cols()) : spec.layers[i].hidden_dim;
        if (d_out < 1) throw DimensionMismatch("initialize: hidden_dim must be positive");
        const int m = std::max(1, spec.layers[i].num_inducing);

        Vector ell = column_stds(inputs);
        for (int q = 0; q < ell.size(); ++q) {
            if (!(ell(q) > 0.0)) {
                ell(q) = 1.0;
                warn("layer " + std::to_string(i + 1) + ": input column " + std::to_string(q + 1) +
                     " has zero variance, lengthscale set to 1");
            }
        }
        const double alpha = last ? var_y : 1.0;
        const double noise = last ? std::max(1e-6, 0.1 * var_y) : 1e-2;
        const Matrix Z = kmeanspp_subset(inputs, m, rng);
        // Hidden layers start as identity-like maps (M interpolating a
        // coordinate projection of Z); a zero M would zero out every forward
        // mean and leave downstream layers without a usable initialization.
        const Matrix M = last ? Matrix::Zero(m, d_out) : truncate_or_pad(Z, d_out);

        VariationalLayer layer(Z, M, LowerTriangular::scaled_identity(m, 0.1), noise,
                               KernelSpec(spec.layers[i].family, alpha, ell));
        if (!last) {
            msg = propagate_message(layer, msg);
            inputs = msg.means;
        }
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

}  // namespace deepgp
