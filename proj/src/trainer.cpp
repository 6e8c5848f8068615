#include "tickets/trainer.hpp"
#include "tickets/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace tickets {

namespace {

template <typename M>
std::span<float> view(M& m) {
    return {m.data(), std::size_t(m.size())};
}

template <typename M>
std::span<const float> cview(const M& m) {
    return {m.data(), std::size_t(m.size())};
}

// Calls fn(param, grad, i) for every trainable tensor of layer pairs.
template <typename P, typename G, typename Fn>
void for_each_trainable(P& params, G& grads, Fn&& fn) {
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        auto& g = grads.layers[i];
        fn(p.weights, g.weights);
        fn(p.bias, g.bias);
        fn(p.gamma, g.gamma);
        fn(p.beta, g.beta);
    }
}

} // namespace

void TrainConfig::validate() const {
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and >= 0");
    if (rewind_step && *rewind_step > steps) throw std::invalid_argument("rewind_step must be <= steps");
    if (optimizer == OptimizerKind::adam) {
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
            throw std::invalid_argument("adam betas must be in [0, 1)");
        }
        if (!(adam.epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be > 0");
    }
}

TrainingDiverged::TrainingDiverged(std::size_t step, std::vector<TrainRecord> records)
    : std::runtime_error("training diverged (non-finite loss) at step " + std::to_string(step)),
      step_(step),
      records_(std::move(records)) {}

void sgd_update(std::span<float> params, std::span<const float> grads, float lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("parameter/gradient size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void sgd_step(Params& params, const Params& grads, float lr) {
    for_each_trainable(params, grads, [&](auto& p, const auto& g) { sgd_update(view(p), cview(g), lr); });
}

AdamState AdamState::zeros_like(const Params& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_update(std::span<float> params, std::span<const float> grads, std::span<float> m,
                 std::span<float> v, std::size_t t, float lr, const AdamSettings& s) {
    if (params.size() != grads.size() || m.size() != params.size() || v.size() != params.size()) {
        throw std::invalid_argument("adam state shape mismatch");
    }
    const float b1 = float(s.beta1);
    const float b2 = float(s.beta2);
    const float eps = float(s.epsilon);
    const float c1 = 1.0f - float(std::pow(s.beta1, double(t)));
    const float c2 = 1.0f - float(std::pow(s.beta2, double(t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grads[i];
        m[i] = b1 * m[i] + (1.0f - b1) * g;
        v[i] = b2 * v[i] + (1.0f - b2) * g * g;
        const float m_hat = m[i] / c1;
        const float v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

void adam_step(Params& params, const Params& grads, float lr, AdamState& state, const AdamSettings& s) {
    ++state.t;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        const auto& g = grads.layers[i];
        auto& m = state.first_moment.layers[i];
        auto& v = state.second_moment.layers[i];
        adam_update(view(p.weights), cview(g.weights), view(m.weights), view(v.weights), state.t, lr, s);
        adam_update(view(p.bias), cview(g.bias), view(m.bias), view(v.bias), state.t, lr, s);
        adam_update(view(p.gamma), cview(g.gamma), view(m.gamma), view(v.gamma), state.t, lr, s);
        adam_update(view(p.beta), cview(g.beta), view(m.beta), view(v.beta), state.t, lr, s);
    }
}

TrainResult train(Params params, const MaskSet& masks, const ImageDataset& train_ds,
                  const ImageDataset& val_ds, const TrainConfig& cfg) {
    cfg.validate();
    masks.validate(params.dims);

    TrainResult result;
    if (cfg.rewind_step && *cfg.rewind_step == 0) result.rewind_checkpoint = Checkpoint{0, params};
    if (cfg.steps == 0) {
        result.final_params = std::move(params);
        return result;
    }

    if (train_ds.empty()) throw std::invalid_argument("training set is empty");
    if (val_ds.empty()) throw std::invalid_argument("validation set is empty");
    if (train_ds.geometry.input_size() != params.dims.input_size()) {
        throw std::invalid_argument("dataset input size does not match the network");
    }
    if (train_ds.size() < cfg.batch_size) {
        throw std::invalid_argument("training set (" + std::to_string(train_ds.size()) +
                                    " images) is smaller than one batch (" + std::to_string(cfg.batch_size) + ")");
    }

    auto shuffle_rng = make_engine(cfg.seed, Stream::shuffle);
    auto augment_rng = make_engine(cfg.seed, Stream::augment);
    const auto& geom = train_ds.geometry;
    std::uniform_int_distribution<long> shift_x(0, long(geom.width) - 1);
    std::uniform_int_distribution<long> shift_y(0, long(geom.height) - 1);

    std::vector<std::size_t> order(train_ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();   // forces a shuffle before the first batch

    std::vector<std::int32_t> labels(cfg.batch_size);
    std::vector<Shift> shifts(cfg.batch_size);
    AdamState adam;
    if (cfg.optimizer == OptimizerKind::adam) adam = AdamState::zeros_like(params);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    const float lr = float(cfg.lr);

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        if (cursor + cfg.batch_size > order.size()) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            cursor = 0;
        }
        std::span<const std::size_t> idx(order.data() + cursor, cfg.batch_size);
        cursor += cfg.batch_size;

        Matrix<float> batch = gather_batch(train_ds, idx);
        for (std::size_t r = 0; r < idx.size(); ++r) labels[r] = train_ds.labels[idx[r]];
        if (cfg.translate_augment) {
            for (auto& s : shifts) s = {shift_x(augment_rng), shift_y(augment_rng)};
            auto moved = translate_wrap(std::span<const float>(batch.data(), std::size_t(batch.size())), geom, shifts);
            std::copy(moved.begin(), moved.end(), batch.data());
        }

        auto lg = loss_and_grads(params, masks, batch, labels);
        if (!std::isfinite(lg.loss)) throw TrainingDiverged(step, std::move(result.records));

        update_running_stats(params, lg.result.cache);
        if (cfg.optimizer == OptimizerKind::sgd) {
            sgd_step(params, lg.grads, lr);
        } else {
            adam_step(params, lg.grads, lr, adam, cfg.adam);
        }
        loss_sum += double(lg.loss);
        ++loss_count;

        if (cfg.rewind_step && *cfg.rewind_step == step) result.rewind_checkpoint = Checkpoint{step, params};

        const bool eval_now = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if (eval_now) {
            const double acc = accuracy(params, masks, val_ds);
            result.records.push_back({step, loss_sum / double(loss_count), acc});
            result.best_val = result.best_val ? std::max(*result.best_val, acc) : acc;
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    result.final_params = std::move(params);
    return result;
}

} // namespace tickets
