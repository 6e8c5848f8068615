#pragma once

#include "tickets/datasets.hpp"
#include "tickets/network.hpp"
#include "tickets/observables.hpp"
#include "tickets/pruner.hpp"
#include "tickets/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tickets {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kMaskFileVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Checkpoints: "TKTS", u32 version, u32 L, u32 dims[L + 1], then per layer
// weights (row-major n_in x n_out), bias and, for hidden layers, gamma, beta,
// running mean, running variance. Little-endian f32 throughout.
// ---------------------------------------------------------------------------
std::vector<std::uint8_t> encode_checkpoint(const Params& params);
Params decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Masks: "TKMS", u32 version, u32 layer count, per layer {u32 rows, u32 cols,
// u64 surviving count}, then per layer the row-major bits, least significant
// bit first, each layer padded to a whole byte.
// ---------------------------------------------------------------------------
std::vector<std::uint8_t> encode_masks(const MaskSet& masks);
MaskSet decode_masks(std::span<const std::uint8_t> bytes);

void save_masks(const std::filesystem::path& path, const MaskSet& masks);
MaskSet load_masks(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Netpbm images
// ---------------------------------------------------------------------------

// Binary P5 (1 channel) or P6 (3 channels, channel c -> colour component c).
// `samples` is channel-planar like the network input.
std::vector<std::uint8_t> encode_netpbm(std::span<const std::uint8_t> samples, const ImageGeometry& geom);

// One mask row (or effective mask row) of input_size entries: 1 -> 255, 0 -> 0.
std::vector<std::uint8_t> mask_image_bytes(std::span<const std::uint8_t> row, const ImageGeometry& geom);

// Surviving values map affinely min -> 0, max -> 255; pruned entries take the
// byte that 0 maps to (clamped). All 128 when min == max or nothing survives.
std::vector<std::uint8_t> weighted_mask_image_bytes(std::span<const float> weights,
                                                    std::span<const std::uint8_t> row,
                                                    const ImageGeometry& geom);

void export_mask_image(std::span<const std::uint8_t> row, const ImageGeometry& geom,
                       const std::filesystem::path& path);
void export_weighted_mask_image(std::span<const float> weights, std::span<const std::uint8_t> row,
                                const ImageGeometry& geom, const std::filesystem::path& path);

// P5 of the (2W-1) x (2H-1) grid, row = dy + H - 1, scaled 0 -> 0, max -> 255.
std::vector<std::uint8_t> locality_image_bytes(const LocalityMap& map);
void export_locality_image(const LocalityMap& map, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

// Shortest decimal text that parses back to the same double.
std::string format_number(double v);
double parse_number(std::string_view text);

std::string locality_csv(const LocalityMap& map);
LocalityMap parse_locality_csv(std::string_view text);
void export_locality_csv(const LocalityMap& map, const std::filesystem::path& path);
LocalityMap load_locality_csv(const std::filesystem::path& path);

struct CurveRow {
    std::size_t iteration = 0;
    double u = 1.0;
    std::optional<double> best_val;   // empty field when nothing was evaluated

    bool operator==(const CurveRow&) const = default;
};

std::vector<CurveRow> curve_rows(const ImpRun& run);

// iteration,u,best_val
std::string curves_csv(std::span<const CurveRow> rows);
std::vector<CurveRow> parse_curves_csv(std::string_view text);
void export_curves_csv(std::span<const CurveRow> rows, const std::filesystem::path& path);
void export_curves_csv(const ImpRun& run, const std::filesystem::path& path);

// step,train_loss,val_accuracy
std::string records_csv(std::span<const TrainRecord> records);
std::vector<TrainRecord> parse_records_csv(std::string_view text);
void export_records_csv(std::span<const TrainRecord> records, const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run manifest (manifest.json in the run directory). File names are relative
// to the run directory.
// ---------------------------------------------------------------------------

struct ManifestCheckpoint {
    std::size_t step = 0;
    std::string file;
};

struct ManifestIteration {
    std::size_t n = 0;
    double u = 1.0;
    std::vector<double> layer_u;
    std::optional<double> best_val;
    std::string masks_file;
    std::string params_file;    // trained parameters at the end of the iteration
    std::string records_file;
};

struct RunManifest {
    std::uint32_t version = kManifestVersion;
    std::string kind;                     // "train" or "imp"
    std::string pixel_layout = kPixelLayout;
    nlohmann::json config;                // normalized run configuration
    ImageGeometry geometry;
    LayerDims dims;
    std::vector<ManifestCheckpoint> checkpoints;
    std::vector<ManifestIteration> iterations;
    std::string curves_file;
    bool complete = false;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);

    // Throws FormatError naming the first referenced file that is missing.
    void check_files(const std::filesystem::path& run_dir) const;

    const ManifestIteration& iteration(std::size_t n) const;
};

inline constexpr const char* kManifestName = "manifest.json";

// Written to a temporary file and renamed, so readers never see a torn file.
void save_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest);
RunManifest load_manifest(const std::filesystem::path& run_dir);

} // namespace tickets
