#include <numeric>

#include "doctest.h"
#include "util.hpp"

#include "deepgp/optimizer.hpp"

using namespace deepgp;
using testutil::rel_err;

TEST_SUITE("optimizer") {

    TEST_CASE("converges on a convex quadratic within 2·dim iterations") {
        const int dim = 6;
        std::mt19937_64 rng(601);
        const Matrix G = testutil::gaussian_matrix(rng, dim, dim, 1.0);
        const Matrix A = G * G.transpose() + Matrix::Identity(dim, dim);
        const Vector b = testutil::gaussian_matrix(rng, dim, 1, 1.0).col(0);
        const Vector x_star = A.ldlt().solve(b);

        const auto fg = [&](const Vector& x, Vector& grad) {
            grad = A * x - b;
            return 0.5 * x.dot(A * x) - b.dot(x);
        };
        LbfgsOptions opts;
        opts.max_iters = 2 * dim;
        opts.grad_tolerance = 1e-12;
        opts.objective_tolerance = 0.0;
        const LbfgsOutcome outcome = lbfgs_minimize(fg, Vector::Zero(dim), opts);
        CHECK((outcome.x - x_star).cwiseAbs().maxCoeff() <= 1e-8);
    }

    TEST_CASE("non-finite objective at the start is reported") {
        const auto fg = [](const Vector& x, Vector& grad) {
            grad = x;
            return std::numeric_limits<double>::quiet_NaN();
        };
        const LbfgsOutcome outcome = lbfgs_minimize(fg, Vector::Ones(3), LbfgsOptions{});
        CHECK(outcome.reason == StopReason::NonFiniteObjective);
        CHECK((outcome.x - Vector::Ones(3)).cwiseAbs().maxCoeff() == 0.0);  // last finite state
    }

    TEST_CASE("lbfgs training trace is monotone and iterations increase") {
        std::mt19937_64 rng(607);
        const Matrix X = testutil::uniform_matrix(rng, 20, 1, -1, 1);
        const Matrix Y = (3.0 * X).array().sin().matrix() +
                         0.1 * testutil::gaussian_matrix(rng, 20, 1, 1.0);
        ArchitectureSpec arch;
        arch.layers = {{1, 6, KernelFamily::ExponentiatedQuadratic}};
        const DeepGpModel model0 = initialize(X, Y, arch, 7);
        OptimizerConfig config;
        config.max_iters = 40;
        const OptimizeResult result = maximize(model0, X, Y, config);
        REQUIRE(!result.trace.empty());
        for (size_t i = 1; i < result.trace.size(); ++i) {
            CHECK(result.trace[i].iteration > result.trace[i - 1].iteration);
            CHECK(result.trace[i].objective >= result.trace[i - 1].objective - 1e-9);
        }
        CHECK(result.final_objective >=
              deep_bound(model0, X, Y).total - 1e-9);  // never worse than the start
    }

    TEST_CASE("optimizing q(u) only converges to the collapsed bound from below") {
        std::mt19937_64 rng(613);
        const int n = 20, m = 5;
        const Matrix X = testutil::uniform_matrix(rng, n, 1, -1, 1);
        const Matrix Y = (2.0 * X).array().sin().matrix() +
                         0.1 * testutil::gaussian_matrix(rng, n, 1, 1.0);
        DeepGpModel model;
        model.layers.push_back(testutil::random_layer(
            rng, m, 1, 1, KernelFamily::ExponentiatedQuadratic));

        const ParameterLayout layout = ParameterLayout::of(model);
        std::vector<std::uint8_t> mask(layout.size(), 1);
        const Segment& sm = layout.find(0, ParamRole::M);
        const Segment& sl = layout.find(0, ParamRole::LPacked);
        for (int i = 0; i < sm.size; ++i) mask[sm.offset + i] = 0;
        for (int i = 0; i < sl.size; ++i) mask[sl.offset + i] = 0;

        OptimizerConfig config;
        config.objective = Objective::SviBound;
        config.max_iters = 400;
        config.grad_tolerance = 1e-9;
        config.objective_tolerance = 1e-14;
        const OptimizeResult result = maximize(model, X, Y, config, &mask);

        const double collapsed = collapsed_bound(model.layers.front(), X, Y);
        const double svi = svi_bound(result.model.layers.front(), X, Y).value;
        CHECK(svi <= collapsed + 1e-8);
        CHECK(collapsed - svi <= 1e-3 * std::max(1.0, std::abs(collapsed)));
        // frozen segments never moved
        const Vector before = pack(model).values;
        const Vector after = pack(result.model).values;
        const Segment& sz = layout.find(0, ParamRole::Z);
        CHECK((before.segment(sz.offset, sz.size) - after.segment(sz.offset, sz.size))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }

    TEST_CASE("fixed seed sgd runs are bit-identical") {
        std::mt19937_64 rng(617);
        const Matrix X = testutil::uniform_matrix(rng, 16, 1, -1, 1);
        const Matrix Y = X.array().tanh().matrix() +
                         0.1 * testutil::gaussian_matrix(rng, 16, 1, 1.0);
        ArchitectureSpec arch;
        arch.layers = {{1, 4, KernelFamily::ExponentiatedQuadratic}};
        const DeepGpModel model0 = initialize(X, Y, arch, 3);
        OptimizerConfig config;
        config.method = OptimizeMethod::SgdAdaptive;
        config.max_iters = 25;
        config.batch_size = 4;
        config.step_size = 0.02;
        config.seed = 99;
        const OptimizeResult a = maximize(model0, X, Y, config);
        const OptimizeResult b = maximize(model0, X, Y, config);
        REQUIRE(a.trace.size() == b.trace.size());
        for (size_t i = 0; i < a.trace.size(); ++i) {
            CHECK(a.trace[i].objective == b.trace[i].objective);
            CHECK(a.trace[i].batch_id == b.trace[i].batch_id);
        }
        CHECK((pack(a.model).values - pack(b.model).values).cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("initialize with m=n uses a permutation of the inputs") {
        std::mt19937_64 rng(619);
        const Matrix X = testutil::uniform_matrix(rng, 6, 1, -1, 1);
        const Matrix Y = testutil::gaussian_matrix(rng, 6, 1, 1.0);
        ArchitectureSpec arch;
        arch.layers = {{1, 6, KernelFamily::ExponentiatedQuadratic}};
        const DeepGpModel model = initialize(X, Y, arch, 11);
        std::vector<double> zs, xs;
        for (int i = 0; i < 6; ++i) {
            zs.push_back(model.layers.front().Z(i, 0));
            xs.push_back(X(i, 0));
        }
        std::sort(zs.begin(), zs.end());
        std::sort(xs.begin(), xs.end());
        for (int i = 0; i < 6; ++i) CHECK(zs[i] == xs[i]);
    }

    TEST_CASE("initialize floors the output variance for constant targets") {
        std::mt19937_64 rng(621);
        const Matrix X = testutil::uniform_matrix(rng, 8, 1, -1, 1);
        const Matrix Y = Matrix::Constant(8, 1, 2.5);
        ArchitectureSpec arch;
        arch.layers = {{1, 4, KernelFamily::ExponentiatedQuadratic}};
        const DeepGpModel model = initialize(X, Y, arch, 1);
        CHECK(model.layers.back().kernel().variance() == doctest::Approx(1e-6));
        CHECK(model.layers.back().noise_var() >= 1e-6);
    }

    TEST_CASE("initialize warns and falls back on zero-variance input columns") {
        std::mt19937_64 rng(627);
        Matrix X = testutil::uniform_matrix(rng, 8, 2, -1, 1);
        X.col(1).setConstant(3.0);
        const Matrix Y = testutil::gaussian_matrix(rng, 8, 1, 1.0);
        ArchitectureSpec arch;
        arch.layers = {{1, 4, KernelFamily::ExponentiatedQuadratic}};
        std::vector<std::string> warnings;
        const DeepGpModel model = initialize(X, Y, arch, 1, &warnings);
        CHECK(model.layers.front().kernel().lengthscales()(1) == 1.0);
        CHECK(!warnings.empty());
    }

    TEST_CASE("initialize is deterministic for a fixed seed") {
        std::mt19937_64 rng(631);
        const Matrix X = testutil::uniform_matrix(rng, 12, 2, -1, 1);
        const Matrix Y = testutil::gaussian_matrix(rng, 12, 1, 1.0);
        ArchitectureSpec arch;
        arch.layers = {{2, 5, KernelFamily::ExponentiatedQuadratic},
                       {1, 5, KernelFamily::ExponentiatedQuadratic}};
        const DeepGpModel a = initialize(X, Y, arch, 42);
        const DeepGpModel b = initialize(X, Y, arch, 42);
        CHECK((pack(a).values - pack(b).values).cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("inflating any layer noise by 1e4 lowers the bound of a trained model") {
        std::mt19937_64 rng(641);
        const Matrix X = testutil::uniform_matrix(rng, 24, 1, -1, 1);
        const Matrix Y = (2.5 * X).array().sin().matrix() +
                         0.05 * testutil::gaussian_matrix(rng, 24, 1, 1.0);
        ArchitectureSpec arch;
        arch.layers = {{1, 6, KernelFamily::ExponentiatedQuadratic},
                       {1, 6, KernelFamily::ExponentiatedQuadratic}};
        OptimizerConfig config;
        config.max_iters = 60;
        const OptimizeResult result = maximize(initialize(X, Y, arch, 5), X, Y, config);
        const double trained = deep_bound(result.model, X, Y).total;
        for (int layer = 0; layer < 2; ++layer) {
            DeepGpModel perturbed = result.model;
            perturbed.layers[layer].set_noise_var(perturbed.layers[layer].noise_var() * 1e4);
            CHECK(deep_bound(perturbed, X, Y).total < trained);
        }
    }

    TEST_CASE("trained one-layer predictions are calibrated on the training inputs") {
        std::mt19937_64 rng(643);
        const Matrix X = testutil::uniform_matrix(rng, 40, 1, -1, 1);
        const Matrix Y = (2.0 * X).array().sin().matrix() +
                         0.1 * testutil::gaussian_matrix(rng, 40, 1, 1.0);
        ArchitectureSpec arch;
        arch.layers = {{1, 10, KernelFamily::ExponentiatedQuadratic}};
        OptimizerConfig config;
        config.max_iters = 150;
        const OptimizeResult result = maximize(initialize(X, Y, arch, 13), X, Y, config);
        const GaussianMessage pred = predict(result.model, X);
        int inside = 0;
        for (int i = 0; i < 40; ++i) {
            if (std::abs(Y(i, 0) - pred.means(i, 0)) <= 3.0 * std::sqrt(pred.variances(i, 0))) {
                ++inside;
            }
        }
        CHECK(inside >= 38);  // ≥95% of points
    }
}
