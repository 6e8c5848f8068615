#include "tickets/pruner.hpp"
#include "tickets/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace tickets {

namespace {

std::vector<std::size_t> resolve_layers(const MaskSet& masks, std::span<const std::size_t> layers) {
    std::vector<std::size_t> out(layers.begin(), layers.end());
    if (out.empty()) {
        out.resize(masks.num_layers());
        std::iota(out.begin(), out.end(), std::size_t{1});
    }
    for (auto l : out) {
        if (l < 1 || l > masks.num_layers()) throw std::out_of_range("layer " + std::to_string(l) + " is not prunable");
    }
    return out;
}

std::vector<Eigen::Index> surviving_indices(const MaskMatrix& mask) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index k = 0; k < mask.size(); ++k) {
        if (mask.data()[k]) idx.push_back(k);
    }
    return idx;
}

} // namespace

ImpDiverged::ImpDiverged(std::size_t iteration, const TrainingDiverged& cause)
    : std::runtime_error("IMP iteration " + std::to_string(iteration) + ": " + cause.what()),
      iteration_(iteration),
      step_(cause.step()) {}

void ImpConfig::validate(const LayerDims& dims) const {
    dims.validate();
    if (!(prune_fraction > 0.0 && prune_fraction < 1.0)) throw std::invalid_argument("prune fraction must be in (0, 1)");
    if (!(stop_node_fraction > 0.0 && stop_node_fraction <= 1.0)) {
        throw std::invalid_argument("stop_node_fraction must be in (0, 1]");
    }
    if (rewind_step > train.steps) throw std::invalid_argument("rewind_step must be <= train steps");
    for (auto l : layers_to_prune) {
        if (l < 1 || l > dims.num_hidden()) throw std::invalid_argument("layers_to_prune holds a non-hidden layer");
    }
    TrainConfig t = train;
    t.rewind_step = rewind_step;
    t.validate();
}

std::vector<std::size_t> ImpConfig::pruned_layers(const LayerDims& dims) const {
    if (!layers_to_prune.empty()) return layers_to_prune;
    std::vector<std::size_t> out(dims.num_hidden());
    std::iota(out.begin(), out.end(), std::size_t{1});
    return out;
}

std::size_t removal_count(std::size_t surviving, double fraction) {
    // The guard keeps exact products such as 0.29 * 100 from flooring low.
    return static_cast<std::size_t>(std::floor(fraction * double(surviving) + 1e-9));
}

void prune_smallest(const Matrix<float>& weights, MaskMatrix& mask, std::size_t count) {
    if (weights.rows() != mask.rows() || weights.cols() != mask.cols()) {
        throw std::invalid_argument("weights and mask shapes differ");
    }
    auto idx = surviving_indices(mask);
    count = std::min(count, idx.size());
    if (count == 0) return;
    const float* w = weights.data();
    auto smaller = [w](Eigen::Index a, Eigen::Index b) {
        const float wa = std::abs(w[a]);
        const float wb = std::abs(w[b]);
        return wa < wb || (wa == wb && a < b);
    };
    std::nth_element(idx.begin(), idx.begin() + std::ptrdiff_t(count - 1), idx.end(), smaller);
    for (std::size_t k = 0; k < count; ++k) mask.data()[idx[k]] = 0;
}

MaskSet prune_step(const Params& params, const MaskSet& masks, double fraction,
                   std::span<const std::size_t> layers) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("prune fraction must be in (0, 1)");
    MaskSet out = masks;
    for (auto l : resolve_layers(masks, layers)) {
        auto& m = out.layer(l);
        const auto surviving = std::size_t(m.template cast<std::size_t>().sum());
        prune_smallest(params.layer(l).weights, m, removal_count(surviving, fraction));
    }
    return out;
}

std::size_t imp_target_count(std::size_t total, double fraction, std::size_t n) {
    const double exact = double(total) * std::pow(1.0 - fraction, double(n));
    // Relative guard so that e.g. 100 * 0.7 = 70.00000000000001 targets 70.
    return static_cast<std::size_t>(std::ceil(exact * (1.0 - 1e-12) - 1e-9));
}

MaskSet imp_prune(const Params& params, const MaskSet& masks, double fraction, std::size_t n,
                  std::span<const std::size_t> layers) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("prune fraction must be in (0, 1)");
    MaskSet out = masks;
    for (auto l : resolve_layers(masks, layers)) {
        auto& m = out.layer(l);
        const auto surviving = std::size_t(m.template cast<std::size_t>().sum());
        const auto target = imp_target_count(std::size_t(m.size()), fraction, n);
        if (surviving > target) prune_smallest(params.layer(l).weights, m, surviving - target);
    }
    return out;
}

Density density(const MaskSet& masks) {
    Density d;
    std::size_t alive = 0;
    std::size_t all = 0;
    for (const auto& m : masks.layers) {
        const auto s = std::size_t(m.template cast<std::size_t>().sum());
        const auto t = std::size_t(m.size());
        d.surviving.push_back(s);
        d.total.push_back(t);
        d.per_layer.push_back(t == 0 ? 1.0 : double(s) / double(t));
        alive += s;
        all += t;
    }
    d.global = all == 0 ? 1.0 : double(alive) / double(all);
    return d;
}

Params rewind(const Params& current, const Checkpoint& ckpt, const MaskSet& masks, RewindScope scope) {
    const auto& src = ckpt.params;
    if (!(src.dims == current.dims)) throw std::invalid_argument("checkpoint dims differ from the network");
    masks.validate(current.dims);
    if (scope == RewindScope::full) return src;
    Params out = current;
    for (std::size_t l = 1; l <= out.dims.num_layers(); ++l) out.layer(l).weights = src.layer(l).weights;
    return out;
}

bool stop_condition(const MaskSet& masks, double threshold, std::span<const std::size_t> layers) {
    for (auto l : resolve_layers(masks, layers)) {
        const auto& m = masks.layer(l);
        if (m.cols() == 0) continue;
        std::size_t dead = 0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if ((m.col(j).array() == 0).all()) ++dead;
        }
        if (double(dead) / double(m.cols()) > threshold) return true;
    }
    return false;
}

MaskSet random_prune(const MaskSet& masks, double fraction, std::uint64_t seed,
                     std::span<const std::size_t> layers) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("prune fraction must be in (0, 1)");
    MaskSet out = masks;
    for (auto l : resolve_layers(masks, layers)) {
        auto& m = out.layer(l);
        auto idx = surviving_indices(m);
        const std::size_t count = removal_count(idx.size(), fraction);
        auto rng = make_engine(seed, Stream::random_prune, l);
        // Partial Fisher-Yates: the first `count` slots end up a uniform sample.
        for (std::size_t k = 0; k < count; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
            std::swap(idx[k], idx[pick(rng)]);
            m.data()[idx[k]] = 0;
        }
    }
    return out;
}

namespace {

bool is_final(const ImpRun& run, const std::vector<std::size_t>& layers) {
    const auto& last = run.iterations.back();
    return last.n >= run.config.max_iterations ||
           stop_condition(last.masks, run.config.stop_node_fraction, layers);
}

ImpIteration make_iteration(std::size_t n, const MaskSet& masks, TrainResult& res) {
    return {n, density(masks), masks, res.best_val, std::move(res.records)};
}

} // namespace

ImpRun run_imp(const LayerDims& dims, const ImageDataset& train_ds, const ImageDataset& val_ds,
               const ImpConfig& cfg, const ImpObserver& observer, std::optional<ImpResume> resume) {
    cfg.validate(dims);
    const auto layers = cfg.pruned_layers(dims);

    auto train_iteration = [&](std::size_t n, Params params, const MaskSet& masks, bool capture) {
        TrainConfig tc = cfg.train;
        tc.rewind_step = capture ? std::optional<std::size_t>(cfg.rewind_step) : std::nullopt;
        tc.seed = derive_seed(cfg.train.seed, Stream::train, n);
        try {
            return train(std::move(params), masks, train_ds, val_ds, tc);
        } catch (const TrainingDiverged& e) {
            throw ImpDiverged(n, e);
        }
    };

    ImpRun run;
    Params last_final;
    if (resume) {
        run = std::move(resume->run);
        last_final = std::move(resume->last_final_params);
        if (!(run.dims == dims)) throw std::invalid_argument("resumed run has different layer dims");
        if (run.iterations.empty() || !run.rewind_checkpoint) {
            throw std::invalid_argument("resumed run lacks a completed dense iteration");
        }
        run.config = cfg;
        if (is_final(run, layers)) return run;
    } else {
        run.config = cfg;
        run.dims = dims;
        const MaskSet full = MaskSet::full(dims);
        auto res = train_iteration(0, init_params(dims, cfg.train.seed), full, true);
        run.rewind_checkpoint = std::move(res.rewind_checkpoint);
        if (observer.on_rewind_checkpoint) observer.on_rewind_checkpoint(*run.rewind_checkpoint);
        last_final = std::move(res.final_params);
        run.iterations.push_back(make_iteration(0, full, res));
        if (observer.on_iteration) observer.on_iteration(run.iterations.back(), last_final);
        if (is_final(run, layers)) return run;
    }

    for (std::size_t n = run.iterations.back().n + 1; n <= cfg.max_iterations; ++n) {
        const MaskSet& prev = run.iterations.back().masks;
        MaskSet masks = imp_prune(last_final, prev, cfg.prune_fraction, n, layers);
        if (masks == prev) break;
        Params start = rewind(last_final, *run.rewind_checkpoint, masks, cfg.rewind_scope);
        auto res = train_iteration(n, std::move(start), masks, false);
        last_final = std::move(res.final_params);
        run.iterations.push_back(make_iteration(n, masks, res));
        if (observer.on_iteration) observer.on_iteration(run.iterations.back(), last_final);
        if (stop_condition(masks, cfg.stop_node_fraction, layers)) break;
    }
    return run;
}

} // namespace tickets
