#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tickets {

// Raised for malformed or inconsistent files (datasets, checkpoints, masks).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Canonical input layout
//
// Every image is flattened channel-planar:
//   i = c * (H * W) + y * W + x
// All observables (displacements, per-pixel maps) and all exported files use
// this single definition.
// ---------------------------------------------------------------------------
inline constexpr const char* kPixelLayout = "i = c*H*W + y*W + x (channel-planar)";

struct ImageGeometry {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;

    std::size_t plane_size() const { return width * height; }
    std::size_t input_size() const { return width * height * channels; }

    // Throws std::invalid_argument unless width, height >= 1 and channels is 1 or 3.
    void validate() const;

    bool operator==(const ImageGeometry&) const = default;
};

struct PixelCoord {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t c = 0;

    bool operator==(const PixelCoord&) const = default;
};

std::size_t pixel_index(std::size_t x, std::size_t y, std::size_t c, const ImageGeometry& geom);

// Inverse of pixel_index.
PixelCoord pixel_coord(std::size_t index, const ImageGeometry& geom);

struct ImageDataset {
    ImageGeometry geometry;
    std::vector<float> pixels;          // size() x input_size, values in [0, 1]
    std::vector<std::int32_t> labels;   // each in [0, n_classes)
    std::size_t n_classes = 0;
    // Empty, or one flag per (x, y) position; 0 marks positions that carry
    // no source data (e.g. corners after rotation).
    std::vector<std::uint8_t> valid_mask;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }

    std::span<const float> image(std::size_t i) const;
    std::span<float> image(std::size_t i);

    // Checks shapes, label range and pixel range.
    void validate() const;

    // Dataset made of the listed images, in the listed order.
    ImageDataset select(std::span<const std::size_t> indices) const;
};

struct ClassMapping {
    std::vector<std::int32_t> table;   // original label -> macro label
    std::size_t n_macro = 0;

    void validate() const;

    // {"n_macro": int, "table": [int, ...]}
    static ClassMapping load_json(const std::filesystem::path& path);
    void save_json(const std::filesystem::path& path) const;
};

struct Rectangle {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t width = 0;
    std::size_t height = 0;

    bool contains(std::size_t px, std::size_t py) const {
        return px >= x && px < x + width && py >= y && py < y + height;
    }
};

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

// IDX image file (magic 0x00000803) paired with an IDX label file
// (magic 0x00000801). Image files are N x H x W (one channel) or
// N x C x H x W. Pixel bytes are scaled by 1/255.
ImageDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Writes the pair load_idx reads. Pixels are quantized to round(255 * v).
void save_idx(const ImageDataset& ds, const std::filesystem::path& images,
              const std::filesystem::path& labels);

// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-planar
// pixel bytes. Several files are concatenated in order.
ImageDataset load_cifar_binary(std::span<const std::filesystem::path> paths);

void save_cifar_binary(const ImageDataset& ds, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Generation and transforms
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    ImageGeometry geometry{32, 32, 1};
    std::size_t n_per_class = 100;
    Rectangle patch{12, 12, 6, 6};
    std::size_t n_classes = 4;
    double noise_sd = 0.3;
    std::uint64_t seed = 0;
};

// Levels used by generate_synthetic: patch pixels sit at one of two levels
// chosen by the class pattern, everything else at the background level.
inline constexpr float kSyntheticLow = 0.25f;
inline constexpr float kSyntheticHigh = 0.75f;
inline constexpr float kSyntheticBackground = 0.5f;

// Each class owns a distinct binary pattern over the patch pixels; the rest
// of the image is label-independent noise around the background level.
ImageDataset generate_synthetic(const SyntheticSpec& spec);

// The per-class patch patterns generate_synthetic uses, one flag per
// (patch pixel, channel) in canonical order restricted to the patch.
std::vector<std::vector<std::uint8_t>> synthetic_patterns(const SyntheticSpec& spec);

// floor(fraction * N) images drawn uniformly without replacement; the kept
// images stay in their original relative order.
ImageDataset subsample(const ImageDataset& ds, double fraction, std::uint64_t seed);

enum class ClusterMode { random, semantic };

// random: label mod `modulus` (10 macro classes by default). semantic:
// table lookup in `mapping`. Pixel data is copied untouched.
ImageDataset cluster_classes(const ImageDataset& ds, ClusterMode mode,
                             const ClassMapping* mapping = nullptr, std::size_t modulus = 10);

// Replaces every label by an independently drawn uniform label in
// [0, n_classes). Used to build tasks with no image-label relation.
ImageDataset randomize_labels(const ImageDataset& ds, std::size_t n_classes, std::uint64_t seed);

// Rotation about the pixel-center point ((W-1)/2, (H-1)/2), nearest
// neighbour, cropped to the original size. The angle is counterclockwise in
// the (x, y) index frame: at 90 degrees, destination (x, y) reads source
// (y, W-1-x). Destination pixels without a source are 0 and flagged in
// valid_mask.
ImageDataset rotate_images(const ImageDataset& ds, double degrees);

struct Shift {
    long dx = 0;
    long dy = 0;
};

// Cyclic shift of one image, identical across channels:
// dst(x, y) = src((x - dx) mod W, (y - dy) mod H).
void translate_wrap(std::span<const float> src, std::span<float> dst, const ImageGeometry& geom,
                    Shift shift);

// Shifts each image of a contiguous block by its own shift.
std::vector<float> translate_wrap(std::span<const float> block, const ImageGeometry& geom,
                                  std::span<const Shift> shifts);

// Disjoint, exhaustive split; deterministic per seed. Returns (train, val).
std::pair<ImageDataset, ImageDataset> split_train_val(const ImageDataset& ds, std::size_t n_val,
                                                      std::uint64_t seed);

} // namespace tickets
