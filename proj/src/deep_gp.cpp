#include "deepgp/deep_gp.hpp"

#include "deepgp/detail/stack_eval.hpp"

namespace deepgp {

void DeepGpModel::validate() const {
    if (layers.empty()) throw DimensionMismatch("model needs at least one layer");
    for (size_t i = 0; i + 1 < layers.size(); ++i) {
        if (layers[i].output_dim() != layers[i + 1].input_dim()) {
            throw DimensionMismatch("layer " + std::to_string(i + 1) +
                                    " output dimension does not feed layer " +
                                    std::to_string(i + 2));
        }
    }
    for (const VariationalLayer& layer : layers) layer.validate();
    if (mode == ModelMode::Autoencoder && input_dim() != output_dim()) {
        throw DimensionMismatch("autoencoder mode needs input_dim == output_dim");
    }
}

GaussianMessage propagate_message(const VariationalLayer& layer, const GaussianMessage& q_in,
                                  long* clamp_events) {
    if (q_in.dim() != layer.input_dim()) {
        throw DimensionMismatch("propagate_message: message dimension mismatch");
    }
    detail::LayerForward lf = detail::forward_layer(layer, q_in, /*is_first=*/true);
    if (clamp_events != nullptr) *clamp_events += lf.clamp_events;
    return GaussianMessage{std::move(lf.mu_out), std::move(lf.s_out)};
}

namespace {

void check_data(const DeepGpModel& model, const Matrix& X, const Matrix& Y) {
    model.validate();
    if (X.rows() != Y.rows()) throw DimensionMismatch("deep_bound: X/Y row mismatch");
    if (X.cols() != model.input_dim()) throw DimensionMismatch("deep_bound: X dimension");
    if (Y.cols() != model.output_dim()) throw DimensionMismatch("deep_bound: Y dimension");
    if (X.rows() == 0) throw DimensionMismatch("deep_bound: empty data");
}

}  // namespace

BoundReport deep_bound(const DeepGpModel& model, const Matrix& X, const Matrix& Y) {
    check_data(model, X, Y);
    std::vector<detail::ChunkForward> chunks;
    chunks.push_back(detail::forward_chunk(model, X, Y));
    return detail::assemble_report(model, chunks, 1.0);
}

BoundReport deep_bound(const DeepGpModel& model, const Matrix& Y) {
    if (model.mode != ModelMode::Autoencoder) {
        throw DimensionMismatch("deep_bound(Y): model is not in autoencoder mode");
    }
    return deep_bound(model, Y, Y);
}

BoundReport deep_bound_minibatch(const DeepGpModel& model, const std::vector<int>& batch,
                                 const Matrix& X, const Matrix& Y, int n_total) {
    check_data(model, X, Y);
    if (batch.empty()) throw EmptyBatch("deep_bound_minibatch: empty batch");
    if (n_total < static_cast<int>(X.rows())) {
        throw DimensionMismatch("deep_bound_minibatch: n_total below data size");
    }
    Matrix Xb(batch.size(), X.cols());
    Matrix Yb(batch.size(), Y.cols());
    for (size_t i = 0; i < batch.size(); ++i) {
        if (batch[i] < 0 || batch[i] >= X.rows()) {
            throw DimensionMismatch("deep_bound_minibatch: batch index out of range");
        }
        Xb.row(i) = X.row(batch[i]);
        Yb.row(i) = Y.row(batch[i]);
    }
    const double scale = static_cast<double>(n_total) / static_cast<double>(batch.size());
    std::vector<detail::ChunkForward> chunks;
    chunks.push_back(detail::forward_chunk(model, Xb, Yb));
    return detail::assemble_report(model, chunks, scale);
}

GaussianMessage predict(const DeepGpModel& model, const Matrix& X_star) {
    model.validate();
    if (model.mode != ModelMode::Regression) {
        throw DimensionMismatch("predict: model is not in regression mode");
    }
    if (X_star.cols() != model.input_dim()) throw DimensionMismatch("predict: X dimension");
    GaussianMessage msg = GaussianMessage::deterministic(X_star);
    for (const VariationalLayer& layer : model.layers) {
        msg = propagate_message(layer, msg);
    }
    return msg;
}

GaussianMessage encode(const DeepGpModel& model, const Matrix& Y, int layer_index) {
    model.validate();
    if (model.mode != ModelMode::Autoencoder) {
        throw DimensionMismatch("encode: model is not in autoencoder mode");
    }
    if (layer_index < 1 || layer_index > model.depth()) {
        throw InvalidLayerIndex("encode: layer index must be in [1, depth]");
    }
    if (Y.cols() != model.input_dim()) throw DimensionMismatch("encode: Y dimension");
    GaussianMessage msg = GaussianMessage::deterministic(Y);
    for (int i = 0; i < layer_index; ++i) {
        msg = propagate_message(model.layers[i], msg);
    }
    return msg;
}

}  // namespace deepgp
