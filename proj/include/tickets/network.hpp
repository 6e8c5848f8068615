#pragma once

#include "tickets/datasets.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tickets {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Batch norm constants: epsilon inside the square root, and running-stat
// update new = momentum * old + (1 - momentum) * batch.
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Layer widths [n_0, n_1, ..., n_L]: input, hidden layers, output.
struct LayerDims {
    std::vector<std::size_t> sizes;

    // Number of weight layers L.
    std::size_t num_layers() const { return sizes.empty() ? 0 : sizes.size() - 1; }
    std::size_t num_hidden() const { return num_layers() == 0 ? 0 : num_layers() - 1; }
    std::size_t input_size() const { return sizes.front(); }
    std::size_t output_size() const { return sizes.back(); }

    void validate() const;

    bool operator==(const LayerDims&) const = default;
};

// Weight layer l (1-based) maps n_{l-1} -> n_l. Hidden layers carry batch
// norm; for the output layer the batch norm vectors are empty.
template <typename T>
struct LayerParams {
    Matrix<T> weights;   // n_{l-1} x n_l
    RowVector<T> bias;
    RowVector<T> gamma;
    RowVector<T> beta;
    RowVector<T> running_mean;
    RowVector<T> running_var;

    bool has_batch_norm() const { return gamma.size() > 0; }
};

template <typename T>
struct ParamSet {
    LayerDims dims;
    std::vector<LayerParams<T>> layers;   // layers[l - 1] is weight layer l

    LayerParams<T>& layer(std::size_t l) { return layers.at(l - 1); }
    const LayerParams<T>& layer(std::size_t l) const { return layers.at(l - 1); }

    // Same shapes, every entry zero (used for gradients and optimizer state).
    ParamSet zeros_like() const;

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        out.dims = dims;
        for (const auto& lp : layers) {
            out.layers.push_back({lp.weights.template cast<U>(), lp.bias.template cast<U>(),
                                  lp.gamma.template cast<U>(), lp.beta.template cast<U>(),
                                  lp.running_mean.template cast<U>(), lp.running_var.template cast<U>()});
        }
        return out;
    }

    // Exact equality of every stored value.
    bool operator==(const ParamSet& other) const;
};

using Params = ParamSet<float>;

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Binary masks for the hidden weight layers 1..L-1 (the output layer is
// never masked). Entry (i, j) of layer l gates weight w^l_ij.
struct MaskSet {
    std::vector<MaskMatrix> layers;   // layers[l - 1] masks weight layer l

    static MaskSet full(const LayerDims& dims);

    std::size_t num_layers() const { return layers.size(); }
    MaskMatrix& layer(std::size_t l) { return layers.at(l - 1); }
    const MaskMatrix& layer(std::size_t l) const { return layers.at(l - 1); }

    void validate(const LayerDims& dims) const;

    bool operator==(const MaskSet& other) const;
};

// Weights ~ N(0, 2 / (n_{l-1} + n_l)), biases 0, gamma 1, beta 0, running
// mean 0, running variance 1.
Params init_params(const LayerDims& dims, std::uint64_t seed);

enum class Mode { train, eval };

template <typename T>
struct HiddenCache {
    Matrix<T> input;            // activations of the previous layer
    Matrix<T> masked_weights;   // w ⊙ m
    Matrix<T> normalized;       // (z - mean) / sqrt(var + eps)
    Matrix<T> output;           // ReLU(gamma * normalized + beta)
    RowVector<T> batch_mean;
    RowVector<T> batch_var;     // biased (divides by batch size)
    RowVector<T> inv_std;
};

template <typename T>
struct ForwardCache {
    std::vector<HiddenCache<T>> hidden;
    Matrix<T> head_input;
};

template <typename T>
struct ForwardResult {
    Matrix<T> logits;
    ForwardCache<T> cache;
};

// Hidden layer l: ReLU(BN(a (w^l ⊙ m^l) + b^l)); output layer affine.
// Train mode normalizes with batch statistics (batch size >= 2), eval mode
// with the running statistics. Running statistics are not modified here;
// see update_running_stats.
template <typename T>
ForwardResult<T> forward(const ParamSet<T>& params, const MaskSet& masks, const Matrix<T>& batch,
                         Mode mode);

// Eval-mode logits without keeping the cache.
template <typename T>
Matrix<T> eval_logits(const ParamSet<T>& params, const MaskSet& masks, const Matrix<T>& batch);

// Applies the running-stat update for a train-mode forward pass. Running
// variance uses the unbiased batch variance.
template <typename T>
void update_running_stats(ParamSet<T>& params, const ForwardCache<T>& cache);

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits);

template <typename T>
T cross_entropy(const Matrix<T>& logits, std::span<const std::int32_t> labels);

template <typename T>
struct LossAndGrads {
    T loss;
    ParamSet<T> grads;       // running statistics entries are zero
    ForwardResult<T> result;
};

// Mean softmax cross-entropy and its gradient with respect to every
// trainable parameter (weights, biases, gamma, beta), backpropagated through
// batch normalization in train mode. Weight gradients are multiplied by the
// masks, so masked weights receive exactly zero.
template <typename T>
LossAndGrads<T> loss_and_grads(const ParamSet<T>& params, const MaskSet& masks, const Matrix<T>& batch,
                               std::span<const std::int32_t> labels);

// Row i of the dataset as a batch matrix.
Matrix<float> gather_batch(const ImageDataset& ds, std::span<const std::size_t> indices);

// Argmax of each row, lowest index on ties.
std::vector<std::int32_t> predict(const Matrix<float>& logits);

// Eval-mode accuracy over the whole dataset.
double accuracy(const Params& params, const MaskSet& masks, const ImageDataset& ds,
                std::size_t chunk = 1000);

// Post-ReLU eval-mode activations of hidden layer `layer` (1-based) for
// every image of the dataset: ds.size() x n_layer.
Matrix<float> hidden_activations(const Params& params, const MaskSet& masks, const ImageDataset& ds,
                                 std::size_t layer, std::size_t chunk = 1000);

// Copy of `masks` with the whole incoming column of every listed node of
// `layer` zeroed.
MaskSet ablate_nodes(const MaskSet& masks, std::size_t layer, std::span<const std::size_t> nodes);

} // namespace tickets
