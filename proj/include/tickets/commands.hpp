#pragma once

#include "tickets/datasets.hpp"
#include "tickets/observables.hpp"
#include "tickets/run_config.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tickets {

// Wrong command-line usage (exit code 2 at the CLI).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised by cmd_imp when stop_after iterations have completed in this
// invocation. Leaves a resumable run directory behind.
class RunInterrupted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense training. Writes manifest.json, curves.csv (training records),
// masks_000.tkms and one checkpoint per distinct step among {rewind_step,
// steps}. The dataset is loaded before the run directory is created.
void cmd_train(const RunConfig& cfg, std::ostream& log);

// Full IMP run. Per iteration n: masks_NNN.tkms, params_NNN.tkts (trained),
// train_NNN.csv; plus rewind.tkts and curves.csv. The manifest is rewritten
// after every iteration, and an incomplete run with the same configuration
// resumes from its last completed iteration.
void cmd_imp(const RunConfig& cfg, std::ostream& log, std::optional<std::size_t> stop_after = std::nullopt);

struct AnalyzeOptions {
    std::size_t iteration = 0;
    std::string observable;              // conn|locality|locality-binned|effmask|pixmap|binomial
    std::size_t layer = 1;
    Direction direction = Direction::in;
    ChannelMode channel = ChannelMode::same;
    std::size_t bin_width = 1;
    std::vector<std::size_t> edges;      // locality-binned
    std::filesystem::path out_dir;       // default: <run_dir>/analysis
};

// Returns the files written.
std::vector<std::filesystem::path> cmd_analyze(const std::filesystem::path& run_dir, const AnalyzeOptions& opt,
                                               std::ostream& log);

struct AblateOptions {
    std::size_t iteration = 0;
    std::size_t layer = 1;
    std::string order = "both";          // ascending|descending|both
    std::size_t points = 10;             // counts round(k * n_l / points), k = 0..points
    std::filesystem::path out_dir;
};

std::filesystem::path cmd_ablate(const std::filesystem::path& run_dir, const AblateOptions& opt, std::ostream& log);

struct ExportMasksOptions {
    std::size_t iteration = 0;
    std::size_t top = 30;
    bool weighted = false;
    std::size_t layer = 1;               // > 1 exports effective masks
    std::filesystem::path out_dir;
};

std::vector<std::filesystem::path> cmd_export_masks(const std::filesystem::path& run_dir,
                                                    const ExportMasksOptions& opt, std::ostream& log);

void cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& images, const std::filesystem::path& labels,
               std::ostream& log);

struct ClusterOptions {
    DatasetFormat format = DatasetFormat::idx;
    std::vector<std::filesystem::path> inputs;    // idx: [images, labels]; cifar: batch files
    std::vector<std::filesystem::path> outputs;   // idx: [images, labels]; cifar: [file]
    ClusterMode mode = ClusterMode::random;
    std::size_t modulus = 10;
    std::filesystem::path mapping;
};

void cmd_cluster(const ClusterOptions& opt, std::ostream& log);

} // namespace tickets
