#include "tickets/network.hpp"
#include "tickets/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace tickets {

namespace {

template <typename M>
bool same_values(const M& a, const M& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

void check_batch(const LayerDims& dims, Eigen::Index cols, Eigen::Index rows, Mode mode) {
    if (static_cast<std::size_t>(cols) != dims.input_size()) {
        throw std::invalid_argument("batch width " + std::to_string(cols) + " does not match n_0 = " +
                                    std::to_string(dims.input_size()));
    }
    if (mode == Mode::train && rows < 2) {
        throw std::invalid_argument("train-mode batch normalization needs a batch of at least 2");
    }
}

void check_masks(const LayerDims& dims, const MaskSet& masks) {
    if (masks.num_layers() != dims.num_hidden()) {
        throw std::invalid_argument("mask set has " + std::to_string(masks.num_layers()) +
                                    " layers, network has " + std::to_string(dims.num_hidden()) +
                                    " hidden weight layers");
    }
    for (std::size_t l = 1; l <= masks.num_layers(); ++l) {
        const auto& m = masks.layer(l);
        if (std::size_t(m.rows()) != dims.sizes[l - 1] || std::size_t(m.cols()) != dims.sizes[l]) {
            throw std::invalid_argument("mask shape mismatch at layer " + std::to_string(l));
        }
    }
}

template <typename T>
ForwardResult<T> run_forward(const ParamSet<T>& params, const MaskSet& masks, const Matrix<T>& batch,
                             Mode mode, bool keep_cache) {
    const auto& dims = params.dims;
    check_batch(dims, batch.cols(), batch.rows(), mode);
    check_masks(dims, masks);

    const T eps = T(kBatchNormEpsilon);
    ForwardResult<T> result;
    Matrix<T> a = batch;
    for (std::size_t l = 1; l <= dims.num_hidden(); ++l) {
        const auto& lp = params.layer(l);
        HiddenCache<T> hc;
        hc.masked_weights = lp.weights.cwiseProduct(masks.layer(l).template cast<T>());

        Matrix<T> z = a * hc.masked_weights;
        z.rowwise() += lp.bias;

        if (mode == Mode::train) {
            hc.batch_mean = z.colwise().mean();
            z.rowwise() -= hc.batch_mean;
            hc.batch_var = z.array().square().colwise().mean().matrix();
            hc.inv_std = (hc.batch_var.array() + eps).rsqrt().matrix();
        } else {
            z.rowwise() -= lp.running_mean;
            hc.inv_std = (lp.running_var.array() + eps).rsqrt().matrix();
        }
        z.array().rowwise() *= hc.inv_std.array();   // z now holds the normalized values

        Matrix<T> out = ((z.array().rowwise() * lp.gamma.array()).rowwise() + lp.beta.array())
                            .cwiseMax(T(0))
                            .matrix();
        if (keep_cache) {
            hc.input = std::move(a);
            hc.normalized = std::move(z);
            hc.output = out;
            result.cache.hidden.push_back(std::move(hc));
        }
        a = std::move(out);
    }

    const auto& head = params.layer(dims.num_layers());
    result.logits = a * head.weights;
    result.logits.rowwise() += head.bias;
    if (keep_cache) result.cache.head_input = std::move(a);
    return result;
}

} // namespace

void LayerDims::validate() const {
    if (sizes.size() < 3) throw std::invalid_argument("layer dims need input, >= 1 hidden and output sizes");
    for (auto s : sizes) {
        if (s < 1) throw std::invalid_argument("layer sizes must be >= 1");
    }
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
    ParamSet<T> out;
    out.dims = dims;
    for (const auto& lp : layers) {
        out.layers.push_back({Matrix<T>::Zero(lp.weights.rows(), lp.weights.cols()),
                              RowVector<T>::Zero(lp.bias.size()), RowVector<T>::Zero(lp.gamma.size()),
                              RowVector<T>::Zero(lp.beta.size()), RowVector<T>::Zero(lp.running_mean.size()),
                              RowVector<T>::Zero(lp.running_var.size())});
    }
    return out;
}

template <typename T>
bool ParamSet<T>::operator==(const ParamSet& other) const {
    if (!(dims == other.dims) || layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = other.layers[i];
        if (!same_values(a.weights, b.weights) || !same_values(a.bias, b.bias) ||
            !same_values(a.gamma, b.gamma) || !same_values(a.beta, b.beta) ||
            !same_values(a.running_mean, b.running_mean) || !same_values(a.running_var, b.running_var)) {
            return false;
        }
    }
    return true;
}

MaskSet MaskSet::full(const LayerDims& dims) {
    dims.validate();
    MaskSet m;
    for (std::size_t l = 1; l <= dims.num_hidden(); ++l) {
        m.layers.push_back(MaskMatrix::Ones(Eigen::Index(dims.sizes[l - 1]), Eigen::Index(dims.sizes[l])));
    }
    return m;
}

void MaskSet::validate(const LayerDims& dims) const {
    check_masks(dims, *this);
    for (const auto& m : layers) {
        if ((m.array() > 1).any()) throw std::invalid_argument("mask entries must be 0 or 1");
    }
}

bool MaskSet::operator==(const MaskSet& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!same_values(layers[i], other.layers[i])) return false;
    }
    return true;
}

Params init_params(const LayerDims& dims, std::uint64_t seed) {
    dims.validate();
    auto rng = make_engine(seed, Stream::init);
    Params p;
    p.dims = dims;
    for (std::size_t l = 1; l <= dims.num_layers(); ++l) {
        const std::size_t n_in = dims.sizes[l - 1];
        const std::size_t n_out = dims.sizes[l];
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(n_in + n_out)));
        LayerParams<float> lp;
        lp.weights.resize(Eigen::Index(n_in), Eigen::Index(n_out));
        for (Eigen::Index k = 0; k < lp.weights.size(); ++k) lp.weights.data()[k] = float(normal(rng));
        lp.bias = RowVector<float>::Zero(Eigen::Index(n_out));
        if (l < dims.num_layers()) {
            lp.gamma = RowVector<float>::Ones(Eigen::Index(n_out));
            lp.beta = RowVector<float>::Zero(Eigen::Index(n_out));
            lp.running_mean = RowVector<float>::Zero(Eigen::Index(n_out));
            lp.running_var = RowVector<float>::Ones(Eigen::Index(n_out));
        }
        p.layers.push_back(std::move(lp));
    }
    return p;
}

template <typename T>
ForwardResult<T> forward(const ParamSet<T>& params, const MaskSet& masks, const Matrix<T>& batch, Mode mode) {
    return run_forward(params, masks, batch, mode, true);
}

template <typename T>
Matrix<T> eval_logits(const ParamSet<T>& params, const MaskSet& masks, const Matrix<T>& batch) {
    return run_forward(params, masks, batch, Mode::eval, false).logits;
}

template <typename T>
void update_running_stats(ParamSet<T>& params, const ForwardCache<T>& cache) {
    const T momentum = T(kBatchNormMomentum);
    for (std::size_t l = 1; l <= cache.hidden.size(); ++l) {
        const auto& hc = cache.hidden[l - 1];
        auto& lp = params.layer(l);
        const T n = T(hc.normalized.rows());
        lp.running_mean = momentum * lp.running_mean + (T(1) - momentum) * hc.batch_mean;
        lp.running_var = momentum * lp.running_var + (T(1) - momentum) * (n / (n - T(1))) * hc.batch_var;
    }
}

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
    Matrix<T> out = logits;
    out.colwise() -= logits.rowwise().maxCoeff();
    out = out.array().exp().matrix();
    out.array().colwise() /= out.rowwise().sum().array();
    return out;
}

template <typename T>
T cross_entropy(const Matrix<T>& logits, std::span<const std::int32_t> labels) {
    if (labels.size() != std::size_t(logits.rows())) throw std::invalid_argument("one label per row required");
    T total = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto label = labels[std::size_t(i)];
        if (label < 0 || label >= logits.cols()) throw std::invalid_argument("label outside the output range");
        const T mx = logits.row(i).maxCoeff();
        const T lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        total += lse - logits(i, label);
    }
    return total / T(logits.rows());
}

template <typename T>
LossAndGrads<T> loss_and_grads(const ParamSet<T>& params, const MaskSet& masks, const Matrix<T>& batch,
                               std::span<const std::int32_t> labels) {
    LossAndGrads<T> out{T(0), params.zeros_like(), forward(params, masks, batch, Mode::train)};
    const auto& logits = out.result.logits;
    const auto& cache = out.result.cache;
    out.loss = cross_entropy(logits, labels);

    const Eigen::Index n = batch.rows();
    const T inv_n = T(1) / T(n);
    Matrix<T> delta = softmax(logits);
    for (Eigen::Index i = 0; i < n; ++i) delta(i, labels[std::size_t(i)]) -= T(1);
    delta *= inv_n;

    const std::size_t L = params.dims.num_layers();
    auto& g_head = out.grads.layer(L);
    g_head.weights.noalias() = cache.head_input.transpose() * delta;
    g_head.bias = delta.colwise().sum();
    Matrix<T> upstream = delta * params.layer(L).weights.transpose();

    for (std::size_t l = L - 1; l >= 1; --l) {
        const auto& hc = cache.hidden[l - 1];
        const auto& lp = params.layer(l);
        auto& g = out.grads.layer(l);

        // through ReLU
        Matrix<T> dy = (upstream.array() * (hc.output.array() > T(0)).template cast<T>()).matrix();
        g.gamma = (dy.array() * hc.normalized.array()).colwise().sum().matrix();
        g.beta = dy.colwise().sum();

        // through batch normalization (batch statistics)
        Matrix<T> dxhat = (dy.array().rowwise() * lp.gamma.array()).matrix();
        const RowVector<T> sum_dxhat = dxhat.colwise().sum();
        const RowVector<T> sum_dxhat_xhat = (dxhat.array() * hc.normalized.array()).colwise().sum().matrix();
        Matrix<T> dz = (T(n) * dxhat.array()).matrix();
        dz.rowwise() -= sum_dxhat;
        dz -= (hc.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
        dz.array().rowwise() *= (hc.inv_std.array() * inv_n);

        g.weights.noalias() = hc.input.transpose() * dz;
        g.weights = g.weights.cwiseProduct(masks.layer(l).template cast<T>());
        g.bias = dz.colwise().sum();
        if (l > 1) upstream.noalias() = dz * hc.masked_weights.transpose();
    }
    return out;
}

Matrix<float> gather_batch(const ImageDataset& ds, std::span<const std::size_t> indices) {
    const std::size_t n = ds.geometry.input_size();
    Matrix<float> batch(Eigen::Index(indices.size()), Eigen::Index(n));
    for (std::size_t r = 0; r < indices.size(); ++r) {
        auto img = ds.image(indices[r]);
        std::copy(img.begin(), img.end(), batch.row(Eigen::Index(r)).data());
    }
    return batch;
}

std::vector<std::int32_t> predict(const Matrix<float>& logits) {
    std::vector<std::int32_t> out(std::size_t(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < logits.cols(); ++k) {
            if (logits(i, k) > logits(i, best)) best = k;
        }
        out[std::size_t(i)] = std::int32_t(best);
    }
    return out;
}

namespace {

template <typename Fn>
void for_each_chunk(const ImageDataset& ds, std::size_t chunk, Fn&& fn) {
    if (chunk == 0) chunk = ds.size();
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t end = std::min(ds.size(), start + chunk);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
        fn(start, gather_batch(ds, idx));
    }
}

} // namespace

double accuracy(const Params& params, const MaskSet& masks, const ImageDataset& ds, std::size_t chunk) {
    if (ds.empty()) throw std::invalid_argument("accuracy of an empty dataset is undefined");
    std::size_t correct = 0;
    for_each_chunk(ds, chunk, [&](std::size_t start, const Matrix<float>& batch) {
        const auto pred = predict(eval_logits(params, masks, batch));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == ds.labels[start + i]) ++correct;
        }
    });
    return double(correct) / double(ds.size());
}

Matrix<float> hidden_activations(const Params& params, const MaskSet& masks, const ImageDataset& ds,
                                 std::size_t layer, std::size_t chunk) {
    if (layer < 1 || layer > params.dims.num_hidden()) throw std::out_of_range("not a hidden layer");
    Matrix<float> out(Eigen::Index(ds.size()), Eigen::Index(params.dims.sizes[layer]));
    for_each_chunk(ds, chunk, [&](std::size_t start, const Matrix<float>& batch) {
        const auto res = forward(params, masks, batch, Mode::eval);
        out.middleRows(Eigen::Index(start), batch.rows()) = res.cache.hidden[layer - 1].output;
    });
    return out;
}

MaskSet ablate_nodes(const MaskSet& masks, std::size_t layer, std::span<const std::size_t> nodes) {
    if (layer < 1 || layer > masks.num_layers()) throw std::out_of_range("ablation layer out of range");
    MaskSet out = masks;
    auto& m = out.layer(layer);
    for (auto k : nodes) {
        if (k >= std::size_t(m.cols())) {
            throw std::out_of_range("node " + std::to_string(k) + " out of range for layer " + std::to_string(layer));
        }
        m.col(Eigen::Index(k)).setZero();
    }
    return out;
}

#define TICKETS_INSTANTIATE(T)                                                                              \
    template struct ParamSet<T>;                                                                            \
    template ForwardResult<T> forward(const ParamSet<T>&, const MaskSet&, const Matrix<T>&, Mode);           \
    template Matrix<T> eval_logits(const ParamSet<T>&, const MaskSet&, const Matrix<T>&);                    \
    template void update_running_stats(ParamSet<T>&, const ForwardCache<T>&);                               \
    template Matrix<T> softmax(const Matrix<T>&);                                                           \
    template T cross_entropy(const Matrix<T>&, std::span<const std::int32_t>);                              \
    template LossAndGrads<T> loss_and_grads(const ParamSet<T>&, const MaskSet&, const Matrix<T>&,           \
                                            std::span<const std::int32_t>);

TICKETS_INSTANTIATE(float)
TICKETS_INSTANTIATE(double)

#undef TICKETS_INSTANTIATE

} // namespace tickets
