#pragma once

#include "tickets/datasets.hpp"
#include "tickets/network.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace tickets {

enum class OptimizerKind { sgd, adam };

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    std::size_t batch_size = 1000;
    double lr = 0.1;
    OptimizerKind optimizer = OptimizerKind::sgd;
    AdamSettings adam;
    std::size_t steps = 100000;
    // Validation cadence in steps; 0 evaluates only after the last step.
    std::size_t eval_every = 500;
    // Step at which a rewind checkpoint is captured (0 = the input params).
    std::optional<std::size_t> rewind_step = 1000;
    // Master seed for the shuffle and augmentation streams.
    std::uint64_t seed = 0;
    // Random cyclic (dx, dy) shift per image, redrawn for every mini-batch.
    bool translate_augment = false;

    void validate() const;
};

struct TrainRecord {
    std::size_t step = 0;
    double train_loss = 0.0;     // mean mini-batch loss since the previous record
    double val_accuracy = 0.0;
};

struct Checkpoint {
    std::size_t step = 0;
    Params params;
};

struct TrainResult {
    Params final_params;
    std::optional<double> best_val;   // empty when nothing was evaluated
    std::vector<TrainRecord> records;
    std::optional<Checkpoint> rewind_checkpoint;
};

// Non-finite training loss. Carries what was recorded before the failure.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t step, std::vector<TrainRecord> records);

    std::size_t step() const { return step_; }
    const std::vector<TrainRecord>& records() const { return records_; }

private:
    std::size_t step_;
    std::vector<TrainRecord> records_;
};

// w <- w - lr * g, elementwise.
void sgd_update(std::span<float> params, std::span<const float> grads, float lr);

// Plain SGD on weights, biases, gamma and beta. Running statistics are left
// alone. Masked weights stay put because their gradient is zero.
void sgd_step(Params& params, const Params& grads, float lr);

struct AdamState {
    Params first_moment;
    Params second_moment;
    std::size_t t = 0;

    static AdamState zeros_like(const Params& params);
};

// Bias-corrected Adam moment update; parameters with identically zero
// gradient keep zero moments and do not move.
void adam_update(std::span<float> params, std::span<const float> grads, std::span<float> m,
                 std::span<float> v, std::size_t t, float lr, const AdamSettings& s);

void adam_step(Params& params, const Params& grads, float lr, AdamState& state, const AdamSettings& s);

// Mini-batch training: each epoch is a fresh permutation of the training
// set, cut into full batches (the partial tail is dropped). Deterministic for
// a fixed config in single-threaded mode.
TrainResult train(Params params, const MaskSet& masks, const ImageDataset& train_ds,
                  const ImageDataset& val_ds, const TrainConfig& cfg);

} // namespace tickets
