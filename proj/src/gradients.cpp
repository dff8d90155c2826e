#include "deepgp/gradients.hpp"

#include <cmath>

#include "deepgp/detail/stack_eval.hpp"

namespace deepgp {

ParameterLayout ParameterLayout::of(const DeepGpModel& model) {
    model.validate();
    ParameterLayout layout;
    layout.mode_ = model.mode;
    int at = 0;
    for (int i = 0; i < model.depth(); ++i) {
        const VariationalLayer& layer = model.layers[i];
        const int m = layer.num_inducing();
        const int q = layer.input_dim();
        const int d = layer.output_dim();
        layout.shapes_.push_back({m, q, d, layer.kernel().family()});
        const auto add = [&](ParamRole role, int size) {
            layout.segments_.push_back({i, role, at, size});
            at += size;
        };
        add(ParamRole::KernelVarianceLog, 1);
        add(ParamRole::LengthscalesLog, q);
        add(ParamRole::Z, m * q);
        add(ParamRole::M, m * d);
        add(ParamRole::LPacked, m * (m + 1) / 2);
        add(ParamRole::NoiseVarLog, 1);
    }
    layout.size_ = at;
    return layout;
}

const Segment& ParameterLayout::find(int layer, ParamRole role) const {
    for (const Segment& s : segments_) {
        if (s.layer == layer && s.role == role) return s;
    }
    throw LayoutMismatch("ParameterLayout: no such segment");
}

namespace {

void write_matrix_row_major(Vector& values, int offset, const Matrix& a) {
    int at = offset;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) values(at++) = a(i, j);
    }
}

Matrix read_matrix_row_major(const Vector& values, int offset, int rows, int cols) {
    Matrix a(rows, cols);
    int at = offset;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) a(i, j) = values(at++);
    }
    return a;
}

}  // namespace

ParameterVector pack(const DeepGpModel& model) {
    ParameterVector pv;
    pv.layout = ParameterLayout::of(model);
    pv.values = Vector::Zero(pv.layout.size());
    pv.fixed_mask.assign(pv.layout.size(), 0);
    for (const Segment& seg : pv.layout.segments()) {
        const VariationalLayer& layer = model.layers[seg.layer];
        switch (seg.role) {
            case ParamRole::KernelVarianceLog:
                pv.values(seg.offset) = layer.kernel().log_variance();
                break;
            case ParamRole::LengthscalesLog:
                pv.values.segment(seg.offset, seg.size) = layer.kernel().log_lengthscales();
                break;
            case ParamRole::Z:
                write_matrix_row_major(pv.values, seg.offset, layer.Z);
                break;
            case ParamRole::M:
                write_matrix_row_major(pv.values, seg.offset, layer.M);
                break;
            case ParamRole::LPacked: {
                int at = seg.offset;
                for (int i = 0; i < layer.num_inducing(); ++i) {
                    for (int j = 0; j < i; ++j) pv.values(at++) = layer.L().at(i, j);
                    pv.values(at++) = layer.log_L_diag()(i);
                }
                break;
            }
            case ParamRole::NoiseVarLog:
                pv.values(seg.offset) = layer.log_noise_var();
                break;
        }
    }
    return pv;
}

DeepGpModel unpack(const ParameterVector& pv) {
    if (pv.values.size() != pv.layout.size()) {
        throw LayoutMismatch("unpack: vector length does not match layout");
    }
    DeepGpModel model;
    model.mode = pv.layout.mode();
    const auto& shapes = pv.layout.shapes();
    for (int i = 0; i < static_cast<int>(shapes.size()); ++i) {
        const LayerShape& shape = shapes[i];
        const int m = shape.num_inducing;
        const Segment& sv = pv.layout.find(i, ParamRole::KernelVarianceLog);
        const Segment& sl = pv.layout.find(i, ParamRole::LengthscalesLog);
        const Segment& sz = pv.layout.find(i, ParamRole::Z);
        const Segment& sm = pv.layout.find(i, ParamRole::M);
        const Segment& sp = pv.layout.find(i, ParamRole::LPacked);
        const Segment& sn = pv.layout.find(i, ParamRole::NoiseVarLog);

        KernelSpec kernel = KernelSpec::from_log(shape.family, pv.values(sv.offset),
                                                 pv.values.segment(sl.offset, sl.size));
        Matrix Z = read_matrix_row_major(pv.values, sz.offset, m, shape.input_dim);
        Matrix M = read_matrix_row_major(pv.values, sm.offset, m, shape.output_dim);

        Matrix strict_lower = Matrix::Zero(m, m);
        Vector log_diag(m);
        int at = sp.offset;
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < r; ++c) strict_lower(r, c) = pv.values(at++);
            log_diag(r) = pv.values(at++);
        }

        VariationalLayer layer(std::move(Z), std::move(M), LowerTriangular::scaled_identity(m, 1.0),
                               1.0, std::move(kernel));
        layer.set_L_unconstrained(strict_lower, log_diag);
        layer.set_log_noise_var(pv.values(sn.offset));
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

namespace detail {

ParameterVector grads_to_unconstrained(const DeepGpModel& model, const ModelGrads& grads,
                                       const std::vector<std::uint8_t>* fixed_mask) {
    ParameterVector pv;
    pv.layout = ParameterLayout::of(model);
    pv.values = Vector::Zero(pv.layout.size());
    pv.fixed_mask.assign(pv.layout.size(), 0);
    if (fixed_mask != nullptr) {
        if (static_cast<int>(fixed_mask->size()) != pv.layout.size()) {
            throw LayoutMismatch("fixed_mask length does not match layout");
        }
        pv.fixed_mask = *fixed_mask;
    }
    for (const Segment& seg : pv.layout.segments()) {
        const VariationalLayer& layer = model.layers[seg.layer];
        const LayerGrads& lg = grads.layers[seg.layer];
        switch (seg.role) {
            case ParamRole::KernelVarianceLog:
                pv.values(seg.offset) = lg.variance * layer.kernel().variance();
                break;
            case ParamRole::LengthscalesLog:
                pv.values.segment(seg.offset, seg.size) =
                    lg.lengthscales.array() * layer.kernel().lengthscales().array();
                break;
            case ParamRole::Z:
                write_matrix_row_major(pv.values, seg.offset, lg.Z);
                break;
            case ParamRole::M:
                write_matrix_row_major(pv.values, seg.offset, lg.M);
                break;
            case ParamRole::LPacked: {
                int at = seg.offset;
                for (int i = 0; i < layer.num_inducing(); ++i) {
                    for (int j = 0; j < i; ++j) pv.values(at++) = lg.L(i, j);
                    pv.values(at++) = lg.L(i, i) * layer.L().at(i, i);
                }
                break;
            }
            case ParamRole::NoiseVarLog:
                pv.values(seg.offset) = lg.noise_var * layer.noise_var();
                break;
        }
    }
    for (int i = 0; i < pv.size(); ++i) {
        if (pv.fixed_mask[i]) pv.values(i) = 0.0;
    }
    return pv;
}

}  // namespace detail

namespace {

void check_objective_inputs(Objective objective, const DeepGpModel& model,
                            const MinibatchSpec* mb) {
    if (objective == Objective::SviBound && model.depth() != 1) {
        throw DimensionMismatch("svi objective needs a single-layer model");
    }
    if (objective == Objective::DeepBoundMinibatch && mb == nullptr) {
        throw EmptyBatch("minibatch objective needs a batch spec");
    }
}

}  // namespace

EvalResult value_and_grad(Objective objective, const DeepGpModel& model, const Matrix& X,
                          const Matrix& Y, const MinibatchSpec* mb,
                          const std::vector<std::uint8_t>* fixed_mask) {
    check_objective_inputs(objective, model, mb);
    model.validate();

    Matrix Xb, Yb;
    double scale = 1.0;
    const Matrix* xp = &X;
    const Matrix* yp = &Y;
    if (objective == Objective::DeepBoundMinibatch) {
        if (mb->batch.empty()) throw EmptyBatch("value_and_grad: empty batch");
        Xb.resize(mb->batch.size(), X.cols());
        Yb.resize(mb->batch.size(), Y.cols());
        for (size_t i = 0; i < mb->batch.size(); ++i) {
            Xb.row(i) = X.row(mb->batch[i]);
            Yb.row(i) = Y.row(mb->batch[i]);
        }
        scale = static_cast<double>(mb->n_total) / static_cast<double>(mb->batch.size());
        xp = &Xb;
        yp = &Yb;
    }

    std::vector<detail::ChunkForward> chunks;
    chunks.push_back(detail::forward_chunk(model, *xp, *yp));

    detail::ModelGrads grads = detail::ModelGrads::zero(model);
    detail::backward_chunk(model, chunks.front(), *xp, *yp, scale, grads);
    detail::backward_kl(model, grads);

    EvalResult out;
    out.report = detail::assemble_report(model, chunks, scale);
    out.value = out.report.total;
    out.gradient = detail::grads_to_unconstrained(model, grads, fixed_mask);
    return out;
}

double objective_value(Objective objective, const DeepGpModel& model, const Matrix& X,
                       const Matrix& Y, const MinibatchSpec* mb) {
    check_objective_inputs(objective, model, mb);
    switch (objective) {
        case Objective::SviBound:
            return svi_bound(model.layers.front(), X, Y).value;
        case Objective::DeepBound:
            return deep_bound(model, X, Y).total;
        case Objective::DeepBoundMinibatch:
            return deep_bound_minibatch(model, mb->batch, X, Y, mb->n_total).total;
    }
    throw Error("unreachable");
}

FdReport finite_difference_check_custom(const std::function<double(const Vector&)>& value_fn,
                                        const std::function<Vector(const Vector&)>& grad_fn,
                                        const Vector& x0, double step_scale, double tolerance) {
    if (!(step_scale > 0.0)) throw Error("finite_difference_check: step must be positive");
    const Vector analytic = grad_fn(x0);
    const double f0 = value_fn(x0);
    // Floor keeps the relative metric meaningful for near-zero coordinates:
    // central differences carry roundoff of order eps·|f|/h.
    const double floor = std::max(1e-6, 1e-5 * std::abs(f0));

    FdReport report;
    report.n_coordinates = static_cast<int>(x0.size());
    Vector x = x0;
    for (int i = 0; i < x0.size(); ++i) {
        const double h = step_scale * std::max(1.0, std::abs(x0(i)));
        x(i) = x0(i) + h;
        const double f_plus = value_fn(x);
        x(i) = x0(i) - h;
        const double f_minus = value_fn(x);
        x(i) = x0(i);
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), floor});
        const double rel = std::abs(analytic(i) - numeric) / denom;
        if (rel > report.worst_rel_err) {
            report.worst_rel_err = rel;
            report.worst_index = i;
        }
        if (rel > tolerance) {
            report.failures.push_back({i, analytic(i), numeric, rel});
        }
    }
    return report;
}

FdReport finite_difference_check(Objective objective, const DeepGpModel& model, const Matrix& X,
                                 const Matrix& Y, double step_scale, double tolerance,
                                 const MinibatchSpec* mb) {
    const ParameterVector pv0 = pack(model);
    const auto value_fn = [&](const Vector& x) {
        ParameterVector pv = pv0;
        pv.values = x;
        return objective_value(objective, unpack(pv), X, Y, mb);
    };
    const auto grad_fn = [&](const Vector& x) {
        ParameterVector pv = pv0;
        pv.values = x;
        return value_and_grad(objective, unpack(pv), X, Y, mb).gradient.values;
    };
    return finite_difference_check_custom(value_fn, grad_fn, pv0.values, step_scale, tolerance);
}

}  // namespace deepgp
