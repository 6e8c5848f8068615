#pragma once

#include "tickets/datasets.hpp"
#include "tickets/network.hpp"
#include "tickets/pruner.hpp"
#include "tickets/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tickets {

// Invalid or inconsistent run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DatasetFormat { idx, cifar, synthetic };
enum class ClusterChoice { none, random, semantic };

struct DatasetConfig {
    DatasetFormat format = DatasetFormat::synthetic;
    // idx: [images, labels]; cifar: batch files in order; synthetic: unused.
    std::vector<std::filesystem::path> paths;
    // Optional separate validation files (same format). When empty the
    // validation set is split off the training data (n_val images).
    std::vector<std::filesystem::path> val_paths;
    std::size_t n_val = 0;
    double fraction = 1.0;                  // training-set subsample
    std::size_t random_relabel = 0;         // > 0: uniform random labels in [0, k)
    ClusterChoice cluster_mode = ClusterChoice::none;
    std::size_t cluster_modulus = 10;
    std::filesystem::path mapping_path;
    double rotate_degrees = 0.0;
    bool translate_augment = false;
    std::uint64_t seed = 0;
    SyntheticSpec synthetic;                // used when format == synthetic
};

struct RunConfig {
    DatasetConfig dataset;
    LayerDims dims;
    ImpConfig imp;                          // imp.train holds the training section
    std::filesystem::path run_dir;

    TrainConfig train_config() const;       // training section with translate augmentation applied

    // Normalized JSON: every field present, paths absolute.
    nlohmann::json to_json() const;
};

// Parses and validates. Unknown keys anywhere are rejected. Relative paths
// are resolved against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct PreparedData {
    ImageDataset train;
    ImageDataset val;
};

// load -> relabel -> cluster -> rotate -> split (or separate val files) ->
// subsample the training part.
PreparedData prepare_data(const DatasetConfig& cfg);

} // namespace tickets
