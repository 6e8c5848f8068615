#include "tickets/datasets.hpp"
#include "tickets/rng.hpp"

#include "binary_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace tickets {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(size);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(size))) {
        throw FormatError("cannot read " + path.string());
    }
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

} // namespace detail

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::size_t max_label_plus_one(const std::vector<std::int32_t>& labels) {
    std::int32_t hi = -1;
    for (auto l : labels) hi = std::max(hi, l);
    return static_cast<std::size_t>(hi + 1);
}

} // namespace

void ImageGeometry::validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("image width and height must be >= 1");
    if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
}

std::size_t pixel_index(std::size_t x, std::size_t y, std::size_t c, const ImageGeometry& geom) {
    if (x >= geom.width || y >= geom.height || c >= geom.channels) {
        std::ostringstream oss;
        oss << "pixel (" << x << ", " << y << ", " << c << ") outside " << geom.width << "x"
            << geom.height << "x" << geom.channels;
        throw std::out_of_range(oss.str());
    }
    return c * geom.plane_size() + y * geom.width + x;
}

PixelCoord pixel_coord(std::size_t index, const ImageGeometry& geom) {
    if (index >= geom.input_size()) throw std::out_of_range("input index out of range");
    const std::size_t plane = geom.plane_size();
    const std::size_t c = index / plane;
    const std::size_t rest = index % plane;
    return {rest % geom.width, rest / geom.width, c};
}

std::span<const float> ImageDataset::image(std::size_t i) const {
    const std::size_t n = geometry.input_size();
    return std::span<const float>(pixels).subspan(i * n, n);
}

std::span<float> ImageDataset::image(std::size_t i) {
    const std::size_t n = geometry.input_size();
    return std::span<float>(pixels).subspan(i * n, n);
}

void ImageDataset::validate() const {
    geometry.validate();
    if (pixels.size() != labels.size() * geometry.input_size()) {
        throw std::invalid_argument("pixel buffer does not match image count and geometry");
    }
    for (auto l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= n_classes) {
            throw std::invalid_argument("label " + std::to_string(l) + " outside [0, n_classes)");
        }
    }
    for (float v : pixels) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("pixel value outside [0, 1]");
    }
    if (!valid_mask.empty() && valid_mask.size() != geometry.plane_size()) {
        throw std::invalid_argument("valid_mask must have one entry per pixel position");
    }
}

ImageDataset ImageDataset::select(std::span<const std::size_t> indices) const {
    ImageDataset out;
    out.geometry = geometry;
    out.n_classes = n_classes;
    out.valid_mask = valid_mask;
    const std::size_t n = geometry.input_size();
    out.pixels.resize(indices.size() * n);
    out.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        auto src = image(indices[k]);
        std::copy(src.begin(), src.end(), out.pixels.begin() + std::ptrdiff_t(k * n));
        out.labels.push_back(labels[indices[k]]);
    }
    return out;
}

void ClassMapping::validate() const {
    if (n_macro == 0) throw std::invalid_argument("class mapping needs n_macro >= 1");
    std::vector<bool> seen(n_macro, false);
    for (auto m : table) {
        if (m < 0 || static_cast<std::size_t>(m) >= n_macro) {
            throw std::invalid_argument("class mapping entry " + std::to_string(m) +
                                        " outside [0, n_macro)");
        }
        seen[static_cast<std::size_t>(m)] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw std::invalid_argument("class mapping leaves a macro class empty");
    }
}

ClassMapping ClassMapping::load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open class mapping " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("class mapping " + path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("n_macro") || !j.contains("table")) {
        throw FormatError("class mapping must be {\"n_macro\": int, \"table\": [int, ...]}");
    }
    for (const auto& [key, _] : j.items()) {
        if (key != "n_macro" && key != "table") throw FormatError("class mapping: unknown key " + key);
    }
    ClassMapping m;
    try {
        m.n_macro = j.at("n_macro").get<std::size_t>();
        m.table = j.at("table").get<std::vector<std::int32_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("class mapping: ") + e.what());
    }
    m.validate();
    return m;
}

void ClassMapping::save_json(const std::filesystem::path& path) const {
    nlohmann::json j{{"n_macro", n_macro}, {"table", table}};
    std::ofstream out(path);
    out << j.dump() << '\n';
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

ImageDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = detail::read_file(images);
    const auto lab = detail::read_file(labels);

    if (img.size() < 8) throw FormatError(images.string() + ": truncated IDX header");
    const std::uint32_t img_magic = detail::load_be_u32(img.data());
    // 0x803 for single-channel files, 0x804 for the channel-planar variant.
    if ((img_magic & ~0xffu) != (kIdxImageMagic & ~0xffu) || (img_magic & 0xff) < 3 || (img_magic & 0xff) > 4) {
        std::ostringstream oss;
        oss << images.string() << ": bad IDX image magic 0x" << std::hex << img_magic;
        throw FormatError(oss.str());
    }
    // Low byte of the magic is the number of dimensions.
    const std::size_t ndim = img_magic & 0xff;
    if (img.size() < 4 + 4 * ndim) throw FormatError(images.string() + ": truncated IDX header");
    std::vector<std::size_t> dims(ndim);
    for (std::size_t d = 0; d < ndim; ++d) dims[d] = detail::load_be_u32(img.data() + 4 + 4 * d);

    ImageGeometry geom;
    const std::size_t count = dims[0];
    if (ndim == 3) {
        geom = {dims[2], dims[1], 1};
    } else if (ndim == 4) {
        geom = {dims[3], dims[2], dims[1]};
    } else {
        throw FormatError(images.string() + ": IDX image files must have 3 or 4 dimensions");
    }
    geom.validate();

    const std::size_t header = 4 + 4 * ndim;
    const std::size_t payload = count * geom.input_size();
    if (img.size() - header < payload) throw FormatError(images.string() + ": truncated image data");
    if (img.size() - header > payload) throw FormatError(images.string() + ": trailing bytes");

    if (lab.size() < 8) throw FormatError(labels.string() + ": truncated IDX header");
    const std::uint32_t lab_magic = detail::load_be_u32(lab.data());
    if (lab_magic != kIdxLabelMagic) {
        std::ostringstream oss;
        oss << labels.string() << ": bad IDX label magic 0x" << std::hex << lab_magic;
        throw FormatError(oss.str());
    }
    const std::size_t n_labels = detail::load_be_u32(lab.data() + 4);
    if (lab.size() - 8 != n_labels) throw FormatError(labels.string() + ": truncated label data");
    if (n_labels != count) {
        throw FormatError("image/label count mismatch: " + std::to_string(count) + " images, " +
                          std::to_string(n_labels) + " labels");
    }

    ImageDataset ds;
    ds.geometry = geom;
    ds.pixels.resize(payload);
    for (std::size_t i = 0; i < payload; ++i) ds.pixels[i] = float(img[header + i]) / 255.0f;
    ds.labels.assign(lab.begin() + 8, lab.end());
    ds.n_classes = max_label_plus_one(ds.labels);
    return ds;
}

void save_idx(const ImageDataset& ds, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
    const auto& g = ds.geometry;
    std::vector<std::uint8_t> img;
    const bool planar = g.channels != 1;
    detail::append_be_u32(img, (kIdxImageMagic & ~0xffu) | (planar ? 4u : 3u));
    detail::append_be_u32(img, std::uint32_t(ds.size()));
    if (planar) detail::append_be_u32(img, std::uint32_t(g.channels));
    detail::append_be_u32(img, std::uint32_t(g.height));
    detail::append_be_u32(img, std::uint32_t(g.width));
    img.reserve(img.size() + ds.pixels.size());
    for (float v : ds.pixels) img.push_back(quantize(v));

    std::vector<std::uint8_t> lab;
    detail::append_be_u32(lab, kIdxLabelMagic);
    detail::append_be_u32(lab, std::uint32_t(ds.size()));
    for (auto l : ds.labels) {
        if (l < 0 || l > 255) throw std::invalid_argument("IDX labels must fit in one byte");
        lab.push_back(std::uint8_t(l));
    }
    detail::write_file(images, img);
    detail::write_file(labels, lab);
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary
// ---------------------------------------------------------------------------

ImageDataset load_cifar_binary(std::span<const std::filesystem::path> paths) {
    ImageDataset ds;
    ds.geometry = {kCifarSide, kCifarSide, 3};
    const std::size_t n = ds.geometry.input_size();
    for (const auto& path : paths) {
        const auto bytes = detail::read_file(path);
        if (bytes.size() % kCifarRecord != 0) {
            throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                              " is not a multiple of " + std::to_string(kCifarRecord));
        }
        const std::size_t records = bytes.size() / kCifarRecord;
        for (std::size_t r = 0; r < records; ++r) {
            const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
            ds.labels.push_back(rec[0]);
            // The record's R, G, B planes are already in canonical order.
            for (std::size_t i = 0; i < n; ++i) ds.pixels.push_back(float(rec[1 + i]) / 255.0f);
        }
    }
    ds.n_classes = max_label_plus_one(ds.labels);
    return ds;
}

void save_cifar_binary(const ImageDataset& ds, const std::filesystem::path& path) {
    if (ds.geometry != ImageGeometry{kCifarSide, kCifarSide, 3}) {
        throw std::invalid_argument("CIFAR binary records hold 32x32x3 images");
    }
    std::vector<std::uint8_t> out;
    out.reserve(ds.size() * kCifarRecord);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto l = ds.labels[i];
        if (l < 0 || l > 255) throw std::invalid_argument("CIFAR labels must fit in one byte");
        out.push_back(std::uint8_t(l));
        for (float v : ds.image(i)) out.push_back(quantize(v));
    }
    detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic patch dataset
// ---------------------------------------------------------------------------

namespace {

void check_patch(const SyntheticSpec& spec) {
    spec.geometry.validate();
    const auto& p = spec.patch;
    if (p.width == 0 || p.height == 0 || p.x + p.width > spec.geometry.width ||
        p.y + p.height > spec.geometry.height) {
        throw std::invalid_argument("synthetic patch must be non-empty and fit inside the image");
    }
    if (spec.n_classes < 2) throw std::invalid_argument("synthetic dataset needs >= 2 classes");
    if (spec.noise_sd < 0.0) throw std::invalid_argument("noise_sd must be >= 0");
    const std::size_t bits = p.width * p.height * spec.geometry.channels;
    if (bits < 63 && (std::uint64_t{1} << bits) < spec.n_classes) {
        throw std::invalid_argument("patch too small for distinct class patterns");
    }
}

} // namespace

std::vector<std::vector<std::uint8_t>> synthetic_patterns(const SyntheticSpec& spec) {
    check_patch(spec);
    const std::size_t bits = spec.patch.width * spec.patch.height * spec.geometry.channels;
    auto rng = make_engine(spec.seed, Stream::synthetic_pattern);
    std::bernoulli_distribution coin(0.5);
    std::vector<std::vector<std::uint8_t>> patterns;
    while (patterns.size() < spec.n_classes) {
        std::vector<std::uint8_t> p(bits);
        for (auto& b : p) b = coin(rng) ? 1 : 0;
        if (std::find(patterns.begin(), patterns.end(), p) == patterns.end()) patterns.push_back(p);
    }
    return patterns;
}

ImageDataset generate_synthetic(const SyntheticSpec& spec) {
    const auto patterns = synthetic_patterns(spec);
    const auto& g = spec.geometry;
    const auto& patch = spec.patch;

    ImageDataset ds;
    ds.geometry = g;
    ds.n_classes = spec.n_classes;
    const std::size_t total = spec.n_per_class * spec.n_classes;
    ds.pixels.resize(total * g.input_size());
    ds.labels.resize(total);

    auto rng = make_engine(spec.seed, Stream::synthetic_noise);
    std::normal_distribution<double> noise(0.0, 1.0);

    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t label = i % spec.n_classes;
        ds.labels[i] = static_cast<std::int32_t>(label);
        auto img = ds.image(i);
        std::size_t bit = 0;
        for (std::size_t c = 0; c < g.channels; ++c) {
            for (std::size_t y = 0; y < g.height; ++y) {
                for (std::size_t x = 0; x < g.width; ++x) {
                    float base = kSyntheticBackground;
                    if (patch.contains(x, y)) {
                        base = patterns[label][bit++] ? kSyntheticHigh : kSyntheticLow;
                    }
                    // Draw unconditionally so the noise stream does not depend on labels.
                    const double z = noise(rng);
                    const double v = spec.noise_sd == 0.0 ? base : base + spec.noise_sd * z;
                    img[pixel_index(x, y, c, g)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Subsets, relabeling
// ---------------------------------------------------------------------------

ImageDataset subsample(const ImageDataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must be in (0, 1]");
    if (fraction == 1.0) return ds;
    // The small guard keeps e.g. 0.29 * 100 at 29 despite binary rounding.
    const auto keep = static_cast<std::size_t>(std::floor(fraction * double(ds.size()) + 1e-9));
    if (keep < 1) throw std::invalid_argument("subsample would leave no images");
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    chosen.reserve(keep);
    auto rng = make_engine(seed, Stream::subsample);
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), keep, rng);
    return ds.select(chosen);
}

ImageDataset cluster_classes(const ImageDataset& ds, ClusterMode mode, const ClassMapping* mapping,
                             std::size_t modulus) {
    ImageDataset out = ds;
    if (mode == ClusterMode::random) {
        if (modulus < 1) throw std::invalid_argument("modulus must be >= 1");
        for (auto& l : out.labels) l = static_cast<std::int32_t>(std::size_t(l) % modulus);
        out.n_classes = modulus;
        return out;
    }
    if (mapping == nullptr) throw std::invalid_argument("semantic clustering requires a class mapping");
    mapping->validate();
    for (auto& l : out.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= mapping->table.size()) {
            throw std::invalid_argument("class mapping has no entry for label " + std::to_string(l));
        }
        l = mapping->table[static_cast<std::size_t>(l)];
    }
    out.n_classes = mapping->n_macro;
    return out;
}

ImageDataset randomize_labels(const ImageDataset& ds, std::size_t n_classes, std::uint64_t seed) {
    if (n_classes < 1) throw std::invalid_argument("n_classes must be >= 1");
    ImageDataset out = ds;
    auto rng = make_engine(seed, Stream::relabel);
    std::uniform_int_distribution<std::int32_t> pick(0, static_cast<std::int32_t>(n_classes) - 1);
    for (auto& l : out.labels) l = pick(rng);
    out.n_classes = n_classes;
    return out;
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

ImageDataset rotate_images(const ImageDataset& ds, double degrees) {
    const auto& g = ds.geometry;
    if (g.width != g.height) throw std::invalid_argument("rotation requires square images");

    const double theta = degrees * std::acos(-1.0) / 180.0;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    const double cx = (double(g.width) - 1.0) / 2.0;
    const double cy = (double(g.height) - 1.0) / 2.0;

    // source position for every destination position; -1 when none
    std::vector<std::ptrdiff_t> source(g.plane_size(), -1);
    std::vector<std::uint8_t> valid(g.plane_size(), 0);
    for (std::size_t y = 0; y < g.height; ++y) {
        for (std::size_t x = 0; x < g.width; ++x) {
            const double u = double(x) - cx;
            const double v = double(y) - cy;
            // inverse rotation of the destination point
            const double sx = cx + cs * u + sn * v;
            const double sy = cy - sn * u + cs * v;
            const long ix = std::lround(sx);
            const long iy = std::lround(sy);
            const std::size_t dst = y * g.width + x;
            if (ix < 0 || iy < 0 || ix >= long(g.width) || iy >= long(g.height)) continue;
            const std::size_t src = std::size_t(iy) * g.width + std::size_t(ix);
            if (!ds.valid_mask.empty() && !ds.valid_mask[src]) continue;
            source[dst] = std::ptrdiff_t(src);
            valid[dst] = 1;
        }
    }

    ImageDataset out = ds;
    out.valid_mask = std::move(valid);
    const std::size_t plane = g.plane_size();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto src = ds.image(i);
        auto dst = out.image(i);
        for (std::size_t c = 0; c < g.channels; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
                dst[c * plane + p] = source[p] < 0 ? 0.0f : src[c * plane + std::size_t(source[p])];
            }
        }
    }
    return out;
}

void translate_wrap(std::span<const float> src, std::span<float> dst, const ImageGeometry& geom,
                    Shift shift) {
    const std::size_t n = geom.input_size();
    if (src.size() != n || dst.size() != n) throw std::invalid_argument("image size mismatch");
    const long w = long(geom.width);
    const long h = long(geom.height);
    const long sx = ((shift.dx % w) + w) % w;
    const long sy = ((shift.dy % h) + h) % h;
    const std::size_t plane = geom.plane_size();
    for (std::size_t c = 0; c < geom.channels; ++c) {
        for (long y = 0; y < h; ++y) {
            const long from_y = (y - sy + h) % h;
            for (long x = 0; x < w; ++x) {
                const long from_x = (x - sx + w) % w;
                dst[c * plane + std::size_t(y * w + x)] = src[c * plane + std::size_t(from_y * w + from_x)];
            }
        }
    }
}

std::vector<float> translate_wrap(std::span<const float> block, const ImageGeometry& geom,
                                  std::span<const Shift> shifts) {
    const std::size_t n = geom.input_size();
    if (block.size() != shifts.size() * n) throw std::invalid_argument("one shift per image required");
    std::vector<float> out(block.size());
    for (std::size_t i = 0; i < shifts.size(); ++i) {
        translate_wrap(block.subspan(i * n, n), std::span<float>(out).subspan(i * n, n), geom, shifts[i]);
    }
    return out;
}

std::pair<ImageDataset, ImageDataset> split_train_val(const ImageDataset& ds, std::size_t n_val,
                                                      std::uint64_t seed) {
    if (n_val >= ds.size()) {
        throw std::invalid_argument("validation size " + std::to_string(n_val) +
                                    " must be smaller than the dataset (" + std::to_string(ds.size()) + ")");
    }
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_engine(seed, Stream::split);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> val(order.begin(), order.begin() + std::ptrdiff_t(n_val));
    std::vector<std::size_t> train(order.begin() + std::ptrdiff_t(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {ds.select(train), ds.select(val)};
}

} // namespace tickets
