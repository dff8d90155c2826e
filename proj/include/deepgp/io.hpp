#pragma once

#include <string>

#include "deepgp/optimizer.hpp"

namespace deepgp {

/// Per-column z-score record, sufficient to invert the transform.
struct NormalizationRecord {
    Vector mean;
    Vector scale;
    bool active() const { return mean.size() > 0; }
};

struct Dataset {
    Matrix X;  // 0×0 when absent (autoencoder inputs come from Y)
    Matrix Y;
    std::vector<std::string> x_names, y_names;
    NormalizationRecord x_norm, y_norm;
    int size() const { return static_cast<int>(Y.rows()); }
};

struct CsvOptions {
    bool has_header = true;
    std::vector<int> x_cols;  // 0-based column indices
    std::vector<int> y_cols;
    bool normalize = false;
};

/// RFC-4180-style CSV: comma separated, '.' decimal, newline delimited.
/// Lines starting with '#' are ignored. Errors carry row/column locations.
Dataset load_csv(const std::string& path, const CsvOptions& options);

/// Noisy step function: x uniform on [−1, 1] (sorted), y = 1{x ≥ 0} plus
/// N(0, noise_sd²) noise.
Dataset gen_step(int n, double noise_sd, std::uint64_t seed);

void write_dataset_csv(const std::string& path, const Dataset& data, const std::string& comment);

/// Versioned structured-text model file; save→load→save is byte identical.
struct ModelFile {
    int format_version = 1;
    DeepGpModel model;
    NormalizationRecord x_norm, y_norm;
    std::uint64_t seed = 0;
    std::string config_text;  // resolved training configuration
    double final_bound = 0.0;
};

void save_model(const std::string& path, const ModelFile& file);
ModelFile load_model(const std::string& path);

void write_trace_csv(const std::string& path, const std::vector<TraceRecord>& trace);

/// Fixed shortest-round-trip formatting used for every CSV number the tools
/// emit, so fixed-seed runs are byte reproducible.
std::string format_double(double value);

}  // namespace deepgp
