#include <numeric>

#include "doctest.h"
#include "util.hpp"

#include "deepgp/gradients.hpp"

using namespace deepgp;
using testutil::rel_err;

namespace {

DeepGpModel fd_model(std::mt19937_64& rng, int depth, KernelFamily family) {
    // shapes kept small so 2·dim bound evaluations stay cheap; linear layers
    // use m ≤ q so K_uu is full rank and the jitter ladder stays at zero
    std::vector<int> dims(depth + 1, 0);
    for (int& v : dims) v = 1 + static_cast<int>(rng() % 2);
    const int m = family == KernelFamily::Linear ? 2 : 3;
    if (family == KernelFamily::Linear) {
        for (size_t i = 0; i + 1 < dims.size(); ++i) dims[i] = 2;
    }
    return testutil::random_model(rng, dims, m, family);
}

}  // namespace

TEST_SUITE("gradients") {

    TEST_CASE("pack/unpack round trip is exact") {
        std::mt19937_64 rng(401);
        DeepGpModel model = testutil::random_model(rng, {2, 1, 2}, 3,
                                                   KernelFamily::ExponentiatedQuadratic);
        const ParameterVector pv = pack(model);
        const DeepGpModel rebuilt = unpack(pv);
        const ParameterVector pv2 = pack(rebuilt);
        CHECK(pv.values.size() == pv2.values.size());
        CHECK((pv.values - pv2.values).cwiseAbs().maxCoeff() == 0.0);  // bitwise
        CHECK(pv.layout == pv2.layout);
    }

    TEST_CASE("vector length matches the analytic parameter count") {
        std::mt19937_64 rng(409);
        // per layer: 1 + Q_in + m·Q_in + m·Q_out + m(m+1)/2 + 1
        DeepGpModel model;
        model.layers.push_back(testutil::random_layer(rng, 3, 1, 1,
                                                      KernelFamily::ExponentiatedQuadratic));
        model.layers.push_back(testutil::random_layer(rng, 3, 1, 1,
                                                      KernelFamily::ExponentiatedQuadratic));
        const int per_layer = 1 + 1 + 3 * 1 + 3 * 1 + 6 + 1;
        CHECK(pack(model).values.size() == 2 * per_layer);
    }

    TEST_CASE("unpack rejects a vector that does not match its layout") {
        std::mt19937_64 rng(419);
        DeepGpModel model = testutil::random_model(rng, {1, 1}, 3,
                                                   KernelFamily::ExponentiatedQuadratic);
        ParameterVector pv = pack(model);
        pv.values = Vector::Zero(pv.values.size() + 1);
        CHECK_THROWS_AS(unpack(pv), LayoutMismatch);
    }

    TEST_CASE("value_and_grad value equals the plain objective evaluation") {
        std::mt19937_64 rng(421);
        DeepGpModel deep = testutil::random_model(rng, {1, 2, 1}, 4,
                                                  KernelFamily::ExponentiatedQuadratic);
        const Matrix X = testutil::uniform_matrix(rng, 9, 1, -2, 2);
        const Matrix Y = testutil::gaussian_matrix(rng, 9, 1, 1.0);
        CHECK(rel_err(value_and_grad(Objective::DeepBound, deep, X, Y).value,
                      objective_value(Objective::DeepBound, deep, X, Y)) <= 1e-12);

        DeepGpModel shallow;
        shallow.layers.push_back(testutil::random_layer(rng, 4, 1, 1, KernelFamily::Linear));
        const Matrix X1 = testutil::uniform_matrix(rng, 9, 1, -2, 2);
        CHECK(rel_err(value_and_grad(Objective::SviBound, shallow, X1, Y).value,
                      objective_value(Objective::SviBound, shallow, X1, Y)) <= 1e-12);

        MinibatchSpec mb;
        mb.batch = {0, 3, 5};
        mb.n_total = 9;
        CHECK(rel_err(value_and_grad(Objective::DeepBoundMinibatch, deep, X, Y, &mb).value,
                      objective_value(Objective::DeepBoundMinibatch, deep, X, Y, &mb)) <= 1e-12);
    }

    TEST_CASE("gradients match central differences across depths and kernels") {
        std::mt19937_64 rng(431);
        int checked = 0;
        for (int rep = 0; rep < 20; ++rep) {
            const int depth = 1 + rep % 3;
            const auto family =
                (rep % 4 == 3) ? KernelFamily::Linear : KernelFamily::ExponentiatedQuadratic;
            const DeepGpModel model = fd_model(rng, depth, family);
            const int n = 8;
            const Matrix X = testutil::uniform_matrix(rng, n, model.input_dim(), -2, 2);
            const Matrix Y = testutil::gaussian_matrix(rng, n, model.output_dim(), 1.0);
            const FdReport report =
                finite_difference_check(Objective::DeepBound, model, X, Y, 1e-6, 1e-4);
            CHECK_MESSAGE(report.pass(), "config ", rep, " worst rel err ", report.worst_rel_err,
                          " at coordinate ", report.worst_index);
            checked += report.n_coordinates;
        }
        CHECK(checked > 500);
    }

    TEST_CASE("svi and minibatch objectives pass the finite-difference check") {
        std::mt19937_64 rng(433);
        DeepGpModel shallow;
        shallow.layers.push_back(testutil::random_layer(
            rng, 4, 2, 1, KernelFamily::ExponentiatedQuadratic));
        const Matrix X = testutil::uniform_matrix(rng, 9, 2, -2, 2);
        const Matrix Y = testutil::gaussian_matrix(rng, 9, 1, 1.0);
        CHECK(finite_difference_check(Objective::SviBound, shallow, X, Y, 1e-6, 1e-4).pass());

        DeepGpModel deep = fd_model(rng, 2, KernelFamily::ExponentiatedQuadratic);
        const Matrix X2 = testutil::uniform_matrix(rng, 9, deep.input_dim(), -2, 2);
        const Matrix Y2 = testutil::gaussian_matrix(rng, 9, deep.output_dim(), 1.0);
        MinibatchSpec mb;
        mb.batch = {1, 4, 6, 8};
        mb.n_total = 9;
        CHECK(finite_difference_check(Objective::DeepBoundMinibatch, deep, X2, Y2, 1e-6, 1e-4,
                                      &mb)
                  .pass());
    }

    TEST_CASE("kl gradient with respect to M vanishes at q equal to prior") {
        std::mt19937_64 rng(439);
        const KernelSpec k = testutil::random_kernel(rng, KernelFamily::ExponentiatedQuadratic, 1);
        const Matrix Z = testutil::uniform_matrix(rng, 4, 1, -2, 2);
        const SpdMatrix K = cholesky_with_jitter(gram(k, Z, Z));
        Matrix chol_values = K.chol().values();
        VariationalLayer layer(Z, Matrix::Zero(4, 1), LowerTriangular(chol_values), 0.1, k);
        DeepGpModel model;
        model.layers.push_back(layer);
        const Matrix X = testutil::uniform_matrix(rng, 6, 1, -2, 2);

        // isolate the KL path: with noise pushed very high the likelihood and
        // trace gradients w.r.t. M vanish, leaving −K⁻¹M = 0 at M = 0
        model.layers.front().set_noise_var(1e12);
        const EvalResult res = value_and_grad(Objective::DeepBound, model, X,
                                              testutil::gaussian_matrix(rng, 6, 1, 1.0));
        const Segment& seg = res.gradient.layout.find(0, ParamRole::M);
        CHECK(res.gradient.values.segment(seg.offset, seg.size).cwiseAbs().maxCoeff() <= 1e-9);
    }

    TEST_CASE("doubling the target scale leaves kl and compression terms unchanged") {
        std::mt19937_64 rng(443);
        DeepGpModel model = testutil::random_model(rng, {1, 1, 1}, 3,
                                                   KernelFamily::ExponentiatedQuadratic);
        const Matrix X = testutil::uniform_matrix(rng, 7, 1, -2, 2);
        const Matrix Y = testutil::gaussian_matrix(rng, 7, 1, 1.0);
        const BoundReport a = deep_bound(model, X, Y);
        const BoundReport b = deep_bound(model, X, Matrix(2.0 * Y));
        for (size_t i = 0; i < a.kl_terms.size(); ++i) {
            CHECK(a.kl_terms[i] == b.kl_terms[i]);
            CHECK(a.compression_terms[i] == b.compression_terms[i]);
        }
        CHECK(a.likelihood_term != b.likelihood_term);
    }

    TEST_CASE("fixed mask zeroes the reported gradient entries") {
        std::mt19937_64 rng(449);
        DeepGpModel model = testutil::random_model(rng, {1, 1}, 3,
                                                   KernelFamily::ExponentiatedQuadratic);
        const Matrix X = testutil::uniform_matrix(rng, 6, 1, -2, 2);
        const Matrix Y = testutil::gaussian_matrix(rng, 6, 1, 1.0);
        const ParameterLayout layout = ParameterLayout::of(model);
        std::vector<std::uint8_t> mask(layout.size(), 0);
        const Segment& noise = layout.find(0, ParamRole::NoiseVarLog);
        mask[noise.offset] = 1;
        const EvalResult res = value_and_grad(Objective::DeepBound, model, X, Y, nullptr, &mask);
        CHECK(res.gradient.values(noise.offset) == 0.0);
        // unmasked run has a nonzero entry there
        const EvalResult free = value_and_grad(Objective::DeepBound, model, X, Y);
        CHECK(free.gradient.values(noise.offset) != 0.0);
    }

    TEST_CASE("quadratic toy objective: finite differences agree to O(step^2)") {
        const int dim = 5;
        std::mt19937_64 rng(457);
        const Matrix G = testutil::gaussian_matrix(rng, dim, dim, 1.0);
        const Matrix A = G * G.transpose() + Matrix::Identity(dim, dim);
        const Vector b = testutil::gaussian_matrix(rng, dim, 1, 1.0).col(0);
        const auto value_fn = [&](const Vector& x) {
            return 0.5 * x.dot(A * x) - b.dot(x);
        };
        const auto grad_fn = [&](const Vector& x) { return Vector(A * x - b); };
        const Vector x0 = testutil::gaussian_matrix(rng, dim, 1, 1.0).col(0);
        const FdReport report = finite_difference_check_custom(value_fn, grad_fn, x0, 1e-6, 1e-8);
        CHECK(report.pass());
    }

    TEST_CASE("a one percent gradient sabotage is flagged at the right coordinate") {
        std::mt19937_64 rng(461);
        DeepGpModel model = testutil::random_model(rng, {1, 1}, 3,
                                                   KernelFamily::ExponentiatedQuadratic);
        const Matrix X = testutil::uniform_matrix(rng, 8, 1, -2, 2);
        const Matrix Y = testutil::gaussian_matrix(rng, 8, 1, 1.0);
        const ParameterVector pv0 = pack(model);

        const auto value_fn = [&](const Vector& x) {
            ParameterVector pv = pv0;
            pv.values = x;
            return objective_value(Objective::DeepBound, unpack(pv), X, Y);
        };
        // pick a coordinate with a healthy gradient magnitude to corrupt
        const Vector g0 = value_and_grad(Objective::DeepBound, model, X, Y).gradient.values;
        int target = 0;
        g0.cwiseAbs().maxCoeff(&target);
        const auto grad_fn = [&](const Vector& x) {
            ParameterVector pv = pv0;
            pv.values = x;
            Vector g = value_and_grad(Objective::DeepBound, unpack(pv), X, Y).gradient.values;
            g(target) *= 1.01;
            return g;
        };
        const FdReport report =
            finite_difference_check_custom(value_fn, grad_fn, pv0.values, 1e-6, 1e-4);
        CHECK(!report.pass());
        bool flagged = false;
        for (const FdFailure& f : report.failures) flagged |= (f.index == target);
        CHECK(flagged);
    }
}
