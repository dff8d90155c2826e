#pragma once

#include <random>

#include "deepgp/deep_gp.hpp"

namespace testutil {

using deepgp::KernelFamily;
using deepgp::KernelSpec;
using deepgp::LowerTriangular;
using deepgp::Matrix;
using deepgp::Vector;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

inline Matrix uniform_matrix(std::mt19937_64& rng, int rows, int cols, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix out(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out(i, j) = dist(rng);
    }
    return out;
}

inline Matrix gaussian_matrix(std::mt19937_64& rng, int rows, int cols, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    Matrix out(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out(i, j) = dist(rng);
    }
    return out;
}

inline KernelSpec random_kernel(std::mt19937_64& rng, KernelFamily family, int q) {
    std::uniform_real_distribution<double> var_dist(0.5, 2.0);
    Matrix ell = uniform_matrix(rng, q, 1, 0.6, 1.8);
    return KernelSpec(family, var_dist(rng), ell.col(0));
}

inline LowerTriangular random_factor(std::mt19937_64& rng, int m, double scale = 0.3) {
    Matrix values = gaussian_matrix(rng, m, m, 0.1 * scale);
    std::uniform_real_distribution<double> diag_dist(0.5 * scale, 1.5 * scale);
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) values(i, j) = 0.0;
        values(i, i) = diag_dist(rng);
    }
    return LowerTriangular(values);
}

inline deepgp::VariationalLayer random_layer(std::mt19937_64& rng, int m, int q_in, int d_out,
                                             KernelFamily family) {
    std::uniform_real_distribution<double> noise_dist(0.05, 0.4);
    return deepgp::VariationalLayer(uniform_matrix(rng, m, q_in, -2.0, 2.0),
                                    gaussian_matrix(rng, m, d_out, 0.7),
                                    random_factor(rng, m), noise_dist(rng),
                                    random_kernel(rng, family, q_in));
}

inline deepgp::DeepGpModel random_model(std::mt19937_64& rng, const std::vector<int>& dims,
                                        int m, KernelFamily family,
                                        deepgp::ModelMode mode = deepgp::ModelMode::Regression) {
    deepgp::DeepGpModel model;
    model.mode = mode;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        model.layers.push_back(random_layer(rng, m, dims[i], dims[i + 1], family));
    }
    return model;
}

inline deepgp::GaussianMessage random_message(std::mt19937_64& rng, int n, int q,
                                              double var_scale = 0.3) {
    deepgp::GaussianMessage msg;
    msg.means = uniform_matrix(rng, n, q, -2.0, 2.0);
    msg.variances = uniform_matrix(rng, n, q, 0.0, var_scale);
    return msg;
}

inline double spearman(const Vector& a, const Vector& b) {
    const int n = static_cast<int>(a.size());
    const auto ranks = [n](const Vector& v) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](int i, int j) { return v(i) < v(j); });
        Vector r(n);
        for (int k = 0; k < n; ++k) r(idx[k]) = k;
        return r;
    };
    const Vector ra = ranks(a);
    const Vector rb = ranks(b);
    const double ma = ra.mean();
    const double mb = rb.mean();
    const double cov = ((ra.array() - ma) * (rb.array() - mb)).sum();
    const double sa = std::sqrt((ra.array() - ma).square().sum());
    const double sb = std::sqrt((rb.array() - mb).square().sum());
    return cov / (sa * sb);
}

}  // namespace testutil
