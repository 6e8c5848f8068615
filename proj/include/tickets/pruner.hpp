#pragma once

#include "tickets/datasets.hpp"
#include "tickets/network.hpp"
#include "tickets/trainer.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace tickets {

// What rewinding restores from the checkpoint.
enum class RewindScope {
    full,           // weights, biases, batch norm parameters and running statistics
    weights_only,   // weight matrices only
};

struct ImpConfig {
    double prune_fraction = 0.3;
    std::size_t rewind_step = 1000;        // 0 rewinds to the initialization
    double stop_node_fraction = 0.8;
    std::size_t max_iterations = 30;
    std::vector<std::size_t> layers_to_prune;   // 1-based; empty = every hidden layer
    RewindScope rewind_scope = RewindScope::full;
    TrainConfig train;                     // train.rewind_step is ignored; rewind_step above rules

    void validate(const LayerDims& dims) const;
    std::vector<std::size_t> pruned_layers(const LayerDims& dims) const;
};

struct Density {
    std::vector<std::size_t> surviving;   // per mask layer
    std::vector<std::size_t> total;
    std::vector<double> per_layer;
    double global = 1.0;                  // total surviving / total prunable
};

struct ImpIteration {
    std::size_t n = 0;
    Density density;
    MaskSet masks;
    std::optional<double> best_val;
    std::vector<TrainRecord> records;
};

struct ImpRun {
    ImpConfig config;
    LayerDims dims;
    std::vector<ImpIteration> iterations;
    std::optional<Checkpoint> rewind_checkpoint;
};

class ImpDiverged : public std::runtime_error {
public:
    ImpDiverged(std::size_t iteration, const TrainingDiverged& cause);

    std::size_t iteration() const { return iteration_; }
    std::size_t step() const { return step_; }

private:
    std::size_t iteration_;
    std::size_t step_;
};

// floor(fraction * surviving), the per-step removal count.
std::size_t removal_count(std::size_t surviving, double fraction);

// Zeroes the `count` surviving entries of smallest |w|, ties broken by
// ascending flat (row-major) index.
void prune_smallest(const Matrix<float>& weights, MaskMatrix& mask, std::size_t count);

// For each listed layer independently, removes floor(fraction * surviving)
// of the surviving weights with the smallest magnitude.
MaskSet prune_step(const Params& params, const MaskSet& masks, double fraction,
                   std::span<const std::size_t> layers);

// Surviving-weight target of an IMP schedule after n iterations:
// ceil(total * (1 - fraction)^n).
std::size_t imp_target_count(std::size_t total, double fraction, std::size_t n);

// Magnitude pruning of IMP iteration n: each listed layer is cut down to
// imp_target_count(layer size, fraction, n) surviving weights.
MaskSet imp_prune(const Params& params, const MaskSet& masks, double fraction, std::size_t n,
                  std::span<const std::size_t> layers);

Density density(const MaskSet& masks);

// Restores parameters from the checkpoint. Masks are not touched: pruned
// weights keep their checkpoint value in storage and stay masked out.
Params rewind(const Params& current, const Checkpoint& ckpt, const MaskSet& masks,
              RewindScope scope = RewindScope::full);

// True when, in any listed layer, the fraction of nodes whose incoming mask
// column is entirely zero exceeds `threshold`.
bool stop_condition(const MaskSet& masks, double threshold, std::span<const std::size_t> layers = {});

// Removes floor(fraction * surviving) surviving entries uniformly at random
// in each listed layer.
MaskSet random_prune(const MaskSet& masks, double fraction, std::uint64_t seed,
                     std::span<const std::size_t> layers = {});

struct ImpObserver {
    // Called once the rewind checkpoint exists (during iteration 0).
    std::function<void(const Checkpoint&)> on_rewind_checkpoint;
    // Called after every completed iteration with the trained parameters.
    std::function<void(const ImpIteration&, const Params& final_params)> on_iteration;
};

// State needed to continue an interrupted run: the iterations completed so
// far, the rewind checkpoint and the trained parameters of the last one.
struct ImpResume {
    ImpRun run;
    Params last_final_params;
};

// Iterative magnitude pruning with rewinding. Iteration 0 trains the dense
// network from init_params(dims, train.seed) and captures the rewind
// checkpoint; iteration n prunes, rewinds and retrains. Stops after the
// iteration at which stop_condition holds, after max_iterations, or when a
// prune step removes nothing.
ImpRun run_imp(const LayerDims& dims, const ImageDataset& train_ds, const ImageDataset& val_ds,
               const ImpConfig& cfg, const ImpObserver& observer = {},
               std::optional<ImpResume> resume = std::nullopt);

} // namespace tickets
