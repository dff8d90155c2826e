#include "deepgp/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace deepgp {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double value) {
    ordered_json j = value;  // shortest round-trip representation
    return j.dump();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    fields.push_back(field);
    return fields;
}

double parse_cell(const std::string& cell, int row, int col) {
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t')) --end;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || begin == end) {
        throw ParseError("non-numeric cell at row " + std::to_string(row + 1) + ", column " +
                         std::to_string(col + 1) + ": '" + cell + "'");
    }
    return value;
}

NormalizationRecord normalize_columns(Matrix& a) {
    NormalizationRecord record;
    record.mean = a.colwise().mean();
    record.scale = Vector::Ones(a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double sd = std::sqrt((a.col(c).array() - record.mean(c)).square().sum() /
                                    std::max<Eigen::Index>(1, a.rows() - 1));
        record.scale(c) = sd > 0.0 ? sd : 1.0;
        a.col(c) = (a.col(c).array() - record.mean(c)) / record.scale(c);
    }
    return record;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvOptions& options) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");

    std::vector<std::vector<double>> rows;
    std::vector<std::string> names;
    std::string line;
    int row_index = 0;
    bool header_done = !options.has_header;
    size_t width = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (!header_done) {
            names = fields;
            width = fields.size();
            header_done = true;
            continue;
        }
        if (width == 0) width = fields.size();
        if (fields.size() != width) {
            throw RaggedRows("row " + std::to_string(row_index + 1) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(width));
        }
        std::vector<double> row(width);
        for (size_t c = 0; c < width; ++c) {
            row[c] = parse_cell(fields[c], row_index, static_cast<int>(c));
        }
        rows.push_back(std::move(row));
        ++row_index;
    }
    if (rows.empty()) throw EmptyFile("'" + path + "' holds no data rows");
    if (names.empty()) {
        for (size_t c = 0; c < width; ++c) names.push_back("c" + std::to_string(c));
    }

    std::vector<int> x_cols = options.x_cols;
    std::vector<int> y_cols = options.y_cols;
    if (y_cols.empty()) {  // default: last column is the target
        y_cols.push_back(static_cast<int>(width) - 1);
    }
    if (x_cols.empty() && options.y_cols.empty()) {
        for (size_t c = 0; c + 1 < width; ++c) x_cols.push_back(static_cast<int>(c));
    } else if (x_cols.empty()) {
        // explicit y selection: remaining columns (possibly none) are inputs
        for (size_t c = 0; c < width; ++c) {
            if (std::find(y_cols.begin(), y_cols.end(), static_cast<int>(c)) == y_cols.end()) {
                x_cols.push_back(static_cast<int>(c));
            }
        }
    }
    for (int c : x_cols) {
        if (c < 0 || c >= static_cast<int>(width)) throw ParseError("x column out of range");
    }
    for (int c : y_cols) {
        if (c < 0 || c >= static_cast<int>(width)) throw ParseError("y column out of range");
    }

    Dataset data;
    const int n = static_cast<int>(rows.size());
    data.X.resize(n, static_cast<int>(x_cols.size()));
    data.Y.resize(n, static_cast<int>(y_cols.size()));
    for (int i = 0; i < n; ++i) {
        for (size_t c = 0; c < x_cols.size(); ++c) data.X(i, c) = rows[i][x_cols[c]];
        for (size_t c = 0; c < y_cols.size(); ++c) data.Y(i, c) = rows[i][y_cols[c]];
    }
    for (int c : x_cols) data.x_names.push_back(names[c]);
    for (int c : y_cols) data.y_names.push_back(names[c]);
    if (options.normalize) {
        if (data.X.cols() > 0) data.x_norm = normalize_columns(data.X);
        data.y_norm = normalize_columns(data.Y);
    }
    return data;
}

Dataset gen_step(int n, double noise_sd, std::uint64_t seed) {
    if (n < 2) throw DegenerateData("gen_step: need n ≥ 2");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::pair<double, double>> points(n);
    for (auto& [x, y] : points) {
        x = unif(rng);
        y = (x < 0.0 ? 0.0 : 1.0) + noise_sd * gauss(rng);
    }
    std::sort(points.begin(), points.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    Dataset data;
    data.X.resize(n, 1);
    data.Y.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        data.X(i, 0) = points[i].first;
        data.Y(i, 0) = points[i].second;
    }
    data.x_names = {"x"};
    data.y_names = {"y"};
    return data;
}

void write_dataset_csv(const std::string& path, const Dataset& data, const std::string& comment) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    if (!comment.empty()) out << "# " << comment << "\n";
    for (size_t c = 0; c < data.x_names.size(); ++c) out << data.x_names[c] << ",";
    for (size_t c = 0; c < data.y_names.size(); ++c) {
        out << data.y_names[c] << (c + 1 < data.y_names.size() ? "," : "");
    }
    out << "\n";
    for (int i = 0; i < data.size(); ++i) {
        for (Eigen::Index c = 0; c < data.X.cols(); ++c) out << format_double(data.X(i, c)) << ",";
        for (Eigen::Index c = 0; c < data.Y.cols(); ++c) {
            out << format_double(data.Y(i, c)) << (c + 1 < data.Y.cols() ? "," : "");
        }
        out << "\n";
    }
}

namespace {

ordered_json matrix_to_json(const Matrix& a) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const ordered_json& rows, int expected_cols = -1) {
    if (!rows.is_array() || rows.empty()) throw ParseError("model file: bad matrix");
    const int r = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows[0].size());
    if (expected_cols >= 0 && c != expected_cols) throw ParseError("model file: matrix width");
    Matrix a(r, c);
    for (int i = 0; i < r; ++i) {
        if (static_cast<int>(rows[i].size()) != c) throw ParseError("model file: ragged matrix");
        for (int j = 0; j < c; ++j) a(i, j) = rows[i][j].get<double>();
    }
    return a;
}

ordered_json vector_to_json(const Vector& v) {
    ordered_json out = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Vector vector_from_json(const ordered_json& arr) {
    Vector v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v(i) = arr[i].get<double>();
    return v;
}

ordered_json norm_to_json(const NormalizationRecord& record) {
    ordered_json out;
    out["mean"] = vector_to_json(record.mean);
    out["scale"] = vector_to_json(record.scale);
    return out;
}

NormalizationRecord norm_from_json(const ordered_json& j) {
    NormalizationRecord record;
    record.mean = vector_from_json(j.at("mean"));
    record.scale = vector_from_json(j.at("scale"));
    return record;
}

}  // namespace

void save_model(const std::string& path, const ModelFile& file) {
    ordered_json root;
    root["format_version"] = file.format_version;
    root["mode"] = file.model.mode == ModelMode::Autoencoder ? "autoencoder" : "regression";
    ordered_json layers = ordered_json::array();
    for (const VariationalLayer& layer : file.model.layers) {
        ordered_json lj;
        lj["kernel"]["family"] =
            layer.kernel().family() == KernelFamily::Linear ? "linear" : "eq";
        lj["kernel"]["log_variance"] = layer.kernel().log_variance();
        lj["kernel"]["log_lengthscales"] = vector_to_json(layer.kernel().log_lengthscales());
        lj["Z"] = matrix_to_json(layer.Z);
        lj["M"] = matrix_to_json(layer.M);
        Matrix strict = layer.L().values();
        strict.diagonal().setZero();
        lj["L_strict_lower"] = matrix_to_json(strict);
        lj["log_L_diag"] = vector_to_json(layer.log_L_diag());
        lj["log_noise_var"] = layer.log_noise_var();
        layers.push_back(std::move(lj));
    }
    root["layers"] = std::move(layers);
    root["normalization"]["x"] = norm_to_json(file.x_norm);
    root["normalization"]["y"] = norm_to_json(file.y_norm);
    root["metadata"]["seed"] = file.seed;
    root["metadata"]["config"] = file.config_text;
    root["metadata"]["final_bound"] = file.final_bound;

    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << root.dump(2) << "\n";
}

ModelFile load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    ordered_json root;
    try {
        in >> root;
    } catch (const std::exception& e) {
        throw ParseError("model file '" + path + "': " + e.what());
    }
    ModelFile file;
    file.format_version = root.at("format_version").get<int>();
    if (file.format_version != 1) {
        throw VersionMismatch("model file format version " +
                              std::to_string(file.format_version) +
                              " is not supported (expected 1)");
    }
    file.model.mode = root.at("mode").get<std::string>() == "autoencoder"
                          ? ModelMode::Autoencoder
                          : ModelMode::Regression;
    for (const ordered_json& lj : root.at("layers")) {
        const auto& kj = lj.at("kernel");
        const KernelFamily family = kj.at("family").get<std::string>() == "linear"
                                        ? KernelFamily::Linear
                                        : KernelFamily::ExponentiatedQuadratic;
        KernelSpec kernel = KernelSpec::from_log(family, kj.at("log_variance").get<double>(),
                                                 vector_from_json(kj.at("log_lengthscales")));
        Matrix Z = matrix_from_json(lj.at("Z"));
        Matrix M = matrix_from_json(lj.at("M"));
        const Matrix strict = matrix_from_json(lj.at("L_strict_lower"));
        const Vector log_diag = vector_from_json(lj.at("log_L_diag"));
        VariationalLayer layer(std::move(Z), std::move(M),
                               LowerTriangular::scaled_identity(strict.rows(), 1.0), 1.0,
                               std::move(kernel));
        layer.set_L_unconstrained(strict, log_diag);
        layer.set_log_noise_var(lj.at("log_noise_var").get<double>());
        file.model.layers.push_back(std::move(layer));
    }
    file.model.validate();
    const auto& norm = root.at("normalization");
    file.x_norm = norm_from_json(norm.at("x"));
    file.y_norm = norm_from_json(norm.at("y"));
    file.seed = root.at("metadata").at("seed").get<std::uint64_t>();
    file.config_text = root.at("metadata").at("config").get<std::string>();
    file.final_bound = root.at("metadata").at("final_bound").get<double>();
    return file;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRecord>& trace) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << "iteration,objective,grad_norm,seconds,batch_id\n";
    for (const TraceRecord& r : trace) {
        out << r.iteration << "," << format_double(r.objective) << ","
            << format_double(r.grad_norm) << "," << format_double(r.seconds) << "," << r.batch_id
            << "\n";
    }
}

}  // namespace deepgp
