#pragma once

#include <cstdint>
#include <functional>

#include "deepgp/deep_gp.hpp"

namespace deepgp {

enum class ParamRole { KernelVarianceLog, LengthscalesLog, Z, M, LPacked, NoiseVarLog };

struct LayerShape {
    int num_inducing = 0;
    int input_dim = 0;
    int output_dim = 0;
    KernelFamily family = KernelFamily::ExponentiatedQuadratic;
    bool operator==(const LayerShape&) const = default;
};

struct Segment {
    int layer = 0;
    ParamRole role = ParamRole::Z;
    int offset = 0;
    int size = 0;
    bool operator==(const Segment&) const = default;
};

/// Ordered descriptor mapping vector segments to layer parameters. Per layer
/// the order is: kernel-variance-log, lengthscales-log, Z (row major),
/// M (row major), L-packed (row major lower triangle, log diagonal),
/// noise-var-log.
class ParameterLayout {
  public:
    ParameterLayout() = default;
    static ParameterLayout of(const DeepGpModel& model);

    const std::vector<Segment>& segments() const { return segments_; }
    const std::vector<LayerShape>& shapes() const { return shapes_; }
    ModelMode mode() const { return mode_; }
    int size() const { return size_; }
    const Segment& find(int layer, ParamRole role) const;
    bool operator==(const ParameterLayout&) const = default;

  private:
    std::vector<Segment> segments_;
    std::vector<LayerShape> shapes_;
    ModelMode mode_ = ModelMode::Regression;
    int size_ = 0;
};

/// Flat unconstrained parameter vector plus its layout and a per-entry
/// freeze mask.
struct ParameterVector {
    Vector values;
    ParameterLayout layout;
    std::vector<std::uint8_t> fixed_mask;  // 1 = frozen

    int size() const { return static_cast<int>(values.size()); }
};

ParameterVector pack(const DeepGpModel& model);
DeepGpModel unpack(const ParameterVector& pv);

enum class Objective { SviBound, DeepBound, DeepBoundMinibatch };

struct MinibatchSpec {
    std::vector<int> batch;
    int n_total = 0;
};

struct EvalResult {
    double value = 0.0;
    ParameterVector gradient;  // unconstrained coordinates, masked entries zero
    BoundReport report;
};

/// Objective value and its hand-assembled reverse-mode gradient in
/// unconstrained coordinates. The minibatch objective requires `mb`.
EvalResult value_and_grad(Objective objective, const DeepGpModel& model, const Matrix& X,
                          const Matrix& Y, const MinibatchSpec* mb = nullptr,
                          const std::vector<std::uint8_t>* fixed_mask = nullptr);

/// Plain objective value (no gradient work).
double objective_value(Objective objective, const DeepGpModel& model, const Matrix& X,
                       const Matrix& Y, const MinibatchSpec* mb = nullptr);

struct FdFailure {
    int index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct FdReport {
    int n_coordinates = 0;
    double worst_rel_err = 0.0;
    int worst_index = -1;
    std::vector<FdFailure> failures;
    bool pass() const { return failures.empty(); }
};

/// Central-difference verification of an analytic gradient in unconstrained
/// space, step h = step_scale·max(1,|θ|) per coordinate.
FdReport finite_difference_check(Objective objective, const DeepGpModel& model, const Matrix& X,
                                 const Matrix& Y, double step_scale, double tolerance,
                                 const MinibatchSpec* mb = nullptr);

/// Same harness against caller-supplied value/gradient functions; used for
/// the gradient mutation test.
FdReport finite_difference_check_custom(const std::function<double(const Vector&)>& value_fn,
                                        const std::function<Vector(const Vector&)>& grad_fn,
                                        const Vector& x0, double step_scale, double tolerance);

}  // namespace deepgp
