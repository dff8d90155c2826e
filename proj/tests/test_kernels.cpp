#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "util.hpp"

using namespace deepgp;
using testutil::rel_err;

namespace {

// Central-difference check of gram_gradients for one configuration.
void check_gram_fd(const KernelSpec& k, const Matrix& X, const Matrix& X2,
                   const Matrix& upstream, double tol) {
    const auto value = [&](const KernelSpec& kk, const Matrix& A, const Matrix& B) {
        return (upstream.array() * gram(kk, A, B).array()).sum();
    };
    const GramGradients g = gram_gradients(k, X, X2, upstream);

    const auto fd = [&](auto&& bump) {
        const double h = 1e-6;
        return (bump(h) - bump(-h)) / (2.0 * h);
    };

    {  // variance
        const double numeric = fd([&](double h) {
            return value(KernelSpec(k.family(), k.variance() + h * std::max(1.0, k.variance()),
                                    k.lengthscales()),
                         X, X2);
        }) / std::max(1.0, k.variance());
        CHECK(rel_err(g.variance, numeric) <= tol);
    }
    if (k.family() == KernelFamily::ExponentiatedQuadratic) {
        for (int q = 0; q < k.input_dim(); ++q) {
            const double numeric = fd([&](double h) {
                Vector ell = k.lengthscales();
                ell(q) += h * std::max(1.0, ell(q));
                return value(KernelSpec(k.family(), k.variance(), ell), X, X2);
            }) / std::max(1.0, k.lengthscales()(q));
            CHECK(rel_err(g.lengthscales(q), numeric) <= tol);
        }
    }
    for (int i = 0; i < X.rows(); ++i) {
        for (int q = 0; q < X.cols(); ++q) {
            const double numeric = fd([&](double h) {
                Matrix Xp = X;
                Xp(i, q) += h;
                return value(k, Xp, X2);
            });
            CHECK(rel_err(g.X(i, q), numeric) <= tol);
        }
    }
    for (int j = 0; j < X2.rows(); ++j) {
        for (int q = 0; q < X2.cols(); ++q) {
            const double numeric = fd([&](double h) {
                Matrix X2p = X2;
                X2p(j, q) += h;
                return value(k, X, X2p);
            });
            CHECK(rel_err(g.X2(j, q), numeric) <= tol);
        }
    }
}

}  // namespace

TEST_SUITE("kernels") {

    TEST_CASE("eq kernel at zero distance gives the variance") {
        const KernelSpec k(KernelFamily::ExponentiatedQuadratic, 1.7, Vector::Ones(2));
        Matrix x(1, 2);
        x << 0.3, -0.4;
        CHECK(gram(k, x, x)(0, 0) == 1.7);
    }

    TEST_CASE("eq kernel closed form at distance sqrt(2)") {
        const KernelSpec k(KernelFamily::ExponentiatedQuadratic, 1.0, Vector::Ones(1));
        Matrix x(1, 1), x2(1, 1);
        x << 0.0;
        x2 << std::sqrt(2.0);
        CHECK(gram(k, x, x2)(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
        CHECK(gram(k, x, x2)(0, 0) == doctest::Approx(0.367879441).epsilon(1e-8));
    }

    TEST_CASE("linear kernel is a scaled dot product") {
        const KernelSpec k(KernelFamily::Linear, 1.0, Vector::Ones(2));
        Matrix x(1, 2), x2(1, 2);
        x << 1, 2;
        x2 << 3, 4;
        CHECK(gram(k, x, x2)(0, 0) == doctest::Approx(11.0).epsilon(1e-14));
    }

    TEST_CASE("non-positive hyperparameters are rejected at construction") {
        CHECK_THROWS_AS(KernelSpec(KernelFamily::ExponentiatedQuadratic, 0.0, Vector::Ones(1)),
                        NonPositiveHyperparameter);
        Vector bad(2);
        bad << 1.0, -0.5;
        CHECK_THROWS_AS(KernelSpec(KernelFamily::ExponentiatedQuadratic, 1.0, bad),
                        NonPositiveHyperparameter);
    }

    TEST_CASE("gram_diag matches the full gram diagonal") {
        std::mt19937_64 rng(3);
        for (const auto family : {KernelFamily::ExponentiatedQuadratic, KernelFamily::Linear}) {
            const KernelSpec k = testutil::random_kernel(rng, family, 3);
            const Matrix x = testutil::uniform_matrix(rng, 7, 3, -2, 2);
            const Vector diag = gram_diag(k, x);
            const Matrix full = gram(k, x, x);
            CHECK((diag - full.diagonal()).cwiseAbs().maxCoeff() == 0.0);
        }
    }

    TEST_CASE("gram_diag literal cases") {
        const KernelSpec eq(KernelFamily::ExponentiatedQuadratic, 2.5, Vector::Ones(2));
        const Matrix x = testutil::uniform_matrix(*new std::mt19937_64(5), 4, 2, -1, 1);
        CHECK((gram_diag(eq, x).array() == 2.5).all());

        const KernelSpec lin(KernelFamily::Linear, 3.0, Vector::Ones(2));
        Matrix rows(2, 2);
        rows << 1, 0, 0, 2;
        const Vector d = gram_diag(lin, rows);
        CHECK(d(0) == doctest::Approx(3.0));
        CHECK(d(1) == doctest::Approx(12.0));
    }

    TEST_CASE("gram is PSD on random inputs") {
        std::mt19937_64 rng(19);
        for (const auto family : {KernelFamily::ExponentiatedQuadratic, KernelFamily::Linear}) {
            for (int rep = 0; rep < 5; ++rep) {
                const KernelSpec k = testutil::random_kernel(rng, family, 2);
                const Matrix x = testutil::uniform_matrix(rng, 15, 2, -3, 3);
                Eigen::SelfAdjointEigenSolver<Matrix> es(gram(k, x, x));
                CHECK(es.eigenvalues().minCoeff() >= -1e-10 * k.variance());
            }
        }
    }

    TEST_CASE("eq kernel is stationary under constant shifts") {
        std::mt19937_64 rng(23);
        const KernelSpec k = testutil::random_kernel(rng, KernelFamily::ExponentiatedQuadratic, 2);
        const Matrix x = testutil::uniform_matrix(rng, 5, 2, -2, 2);
        const Matrix x2 = testutil::uniform_matrix(rng, 4, 2, -2, 2);
        Matrix shift = Matrix::Zero(1, 2);
        shift << 0.75, -1.25;
        const Matrix a = gram(k, x, x2);
        const Matrix b = gram(k, x.rowwise() + shift.row(0), x2.rowwise() + shift.row(0));
        CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-14);
    }

    TEST_CASE("zero upstream gives zero gradients") {
        std::mt19937_64 rng(29);
        const KernelSpec k = testutil::random_kernel(rng, KernelFamily::ExponentiatedQuadratic, 2);
        const Matrix x = testutil::uniform_matrix(rng, 3, 2, -2, 2);
        const GramGradients g = gram_gradients(k, x, x, Matrix::Zero(3, 3));
        CHECK(g.variance == 0.0);
        CHECK(g.lengthscales.cwiseAbs().maxCoeff() == 0.0);
        CHECK(g.X.cwiseAbs().maxCoeff() == 0.0);
        CHECK(g.X2.cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("single-point eq variance gradient equals k over alpha") {
        const KernelSpec k(KernelFamily::ExponentiatedQuadratic, 1.4, Vector::Ones(1));
        Matrix x(1, 1), x2(1, 1);
        x << 0.2;
        x2 << 0.9;
        const Matrix ones = Matrix::Ones(1, 1);
        const GramGradients g = gram_gradients(k, x, x2, ones);
        CHECK(rel_err(g.variance, gram(k, x, x2)(0, 0) / k.variance()) <= 1e-12);
        check_gram_fd(k, x, x2, ones, 1e-6);
    }

    TEST_CASE("analytic gradients match central differences on 20 random configurations") {
        std::mt19937_64 rng(31);
        for (int rep = 0; rep < 20; ++rep) {
            const auto family =
                rep % 2 == 0 ? KernelFamily::ExponentiatedQuadratic : KernelFamily::Linear;
            const int q = 1 + static_cast<int>(rep % 3);
            const KernelSpec k = testutil::random_kernel(rng, family, q);
            const Matrix x = testutil::uniform_matrix(rng, 4, q, -2, 2);
            const Matrix x2 = testutil::uniform_matrix(rng, 3, q, -2, 2);
            const Matrix upstream = testutil::gaussian_matrix(rng, 4, 3, 1.0);
            check_gram_fd(k, x, x2, upstream, 1e-5);
        }
    }
}
