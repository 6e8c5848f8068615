#include "tickets/datasets.hpp"

#include "support/fixtures.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace tickets;

namespace {

std::vector<std::uint8_t> be32(std::uint32_t v) {
    return {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8), std::uint8_t(v)};
}

void append(std::vector<std::uint8_t>& dst, const std::vector<std::uint8_t>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

// 2 images of 2x2, pixel bytes 0..7, labels 1 and 0.
void write_tiny_idx(const fixture::ScratchDir& dir, std::size_t n_labels = 2) {
    std::vector<std::uint8_t> img;
    append(img, be32(0x00000803));
    append(img, be32(2));
    append(img, be32(2));
    append(img, be32(2));
    for (std::uint8_t b = 0; b < 8; ++b) img.push_back(b == 7 ? 255 : b);
    fixture::write_bytes(dir / "img.idx", img);
    std::vector<std::uint8_t> lab;
    append(lab, be32(0x00000801));
    append(lab, be32(std::uint32_t(n_labels)));
    for (std::size_t i = 0; i < n_labels; ++i) lab.push_back(std::uint8_t(i == 0 ? 1 : 0));
    fixture::write_bytes(dir / "lab.idx", lab);
}

ImageDataset labelled(std::vector<std::int32_t> labels, std::size_t classes) {
    ImageDataset ds = fixture::random_dataset({2, 2, 1}, labels.size(), classes, 3);
    ds.labels = std::move(labels);
    return ds;
}

} // namespace

TEST(PixelIndex, ChannelPlanarLayout) {
    const ImageGeometry g{32, 32, 3};
    EXPECT_EQ(pixel_index(0, 0, 0, g), 0u);
    EXPECT_EQ(pixel_index(1, 0, 0, g), 1u);
    EXPECT_EQ(pixel_index(0, 0, 1, g), 1024u);
    EXPECT_EQ(pixel_index(0, 1, 0, g), 32u);
}

TEST(PixelIndex, OutOfRangeCoordinates) {
    const ImageGeometry g{4, 3, 1};
    EXPECT_THROW(pixel_index(4, 0, 0, g), std::out_of_range);
    EXPECT_THROW(pixel_index(0, 3, 0, g), std::out_of_range);
    EXPECT_THROW(pixel_index(0, 0, 1, g), std::out_of_range);
    EXPECT_THROW(pixel_coord(12, g), std::out_of_range);
}

TEST(PixelIndex, IsABijection) {
    for (const ImageGeometry g : {ImageGeometry{5, 3, 3}, ImageGeometry{1, 7, 1}, ImageGeometry{32, 32, 3}}) {
        for (std::size_t i = 0; i < g.input_size(); ++i) {
            const auto p = pixel_coord(i, g);
            ASSERT_EQ(pixel_index(p.x, p.y, p.c, g), i);
        }
    }
}

TEST(Geometry, Validation) {
    EXPECT_NO_THROW((ImageGeometry{1, 1, 3}.validate()));
    EXPECT_THROW((ImageGeometry{0, 1, 1}.validate()), std::invalid_argument);
    EXPECT_THROW((ImageGeometry{2, 2, 2}.validate()), std::invalid_argument);
    EXPECT_EQ((ImageGeometry{32, 32, 3}.input_size()), 3072u);
}

TEST(LoadIdx, HandBuiltPair) {
    fixture::ScratchDir dir;
    write_tiny_idx(dir);
    const auto ds = load_idx(dir / "img.idx", dir / "lab.idx");
    EXPECT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.geometry, (ImageGeometry{2, 2, 1}));
    EXPECT_EQ(ds.labels, (std::vector<std::int32_t>{1, 0}));
    EXPECT_FLOAT_EQ(ds.pixels[1], 1.0f / 255.0f);
    EXPECT_EQ(ds.pixels[7], 1.0f);
}

TEST(LoadIdx, CountMismatchIsRejected) {
    fixture::ScratchDir dir;
    write_tiny_idx(dir, 3);
    EXPECT_THROW(load_idx(dir / "img.idx", dir / "lab.idx"), FormatError);
}

TEST(LoadIdx, BadMagicAndTruncation) {
    fixture::ScratchDir dir;
    write_tiny_idx(dir);
    auto img = fixture::read_bytes(dir / "img.idx");
    auto bad = img;
    bad[3] = 0x01;
    fixture::write_bytes(dir / "bad.idx", bad);
    EXPECT_THROW(load_idx(dir / "bad.idx", dir / "lab.idx"), FormatError);
    img.pop_back();
    fixture::write_bytes(dir / "short.idx", img);
    EXPECT_THROW(load_idx(dir / "short.idx", dir / "lab.idx"), FormatError);
    EXPECT_THROW(load_idx(dir / "missing.idx", dir / "lab.idx"), FormatError);
}

TEST(LoadIdx, SaveRoundTrip) {
    fixture::ScratchDir dir;
    for (const ImageGeometry g : {ImageGeometry{3, 2, 1}, ImageGeometry{2, 2, 3}}) {
        auto ds = fixture::random_dataset(g, 5, 3, 7);
        for (auto& v : ds.pixels) v = std::round(v * 255.0f) / 255.0f;
        save_idx(ds, dir / "i.idx", dir / "l.idx");
        const auto back = load_idx(dir / "i.idx", dir / "l.idx");
        EXPECT_EQ(back.geometry, g);
        EXPECT_EQ(back.labels, ds.labels);
        ASSERT_EQ(back.pixels.size(), ds.pixels.size());
        for (std::size_t k = 0; k < ds.pixels.size(); ++k) EXPECT_FLOAT_EQ(back.pixels[k], ds.pixels[k]);
    }
}

TEST(LoadCifar, SingleRecord) {
    fixture::ScratchDir dir;
    std::vector<std::uint8_t> rec(3073, 0);
    rec[0] = 7;
    rec[1] = 255;          // red plane, pixel (0, 0)
    rec[1 + 1024 + 33] = 51;   // green plane, pixel (1, 1)
    fixture::write_bytes(dir / "b.bin", rec);
    const std::filesystem::path paths[] = {dir / "b.bin"};
    const auto ds = load_cifar_binary(paths);
    EXPECT_EQ(ds.size(), 1u);
    EXPECT_EQ(ds.labels[0], 7);
    EXPECT_EQ(ds.geometry, (ImageGeometry{32, 32, 3}));
    EXPECT_EQ(ds.pixels[pixel_index(0, 0, 0, ds.geometry)], 1.0f);
    EXPECT_FLOAT_EQ(ds.pixels[pixel_index(1, 1, 1, ds.geometry)], 0.2f);
}

TEST(LoadCifar, MissingLabelByteIsRejected) {
    fixture::ScratchDir dir;
    fixture::write_bytes(dir / "b.bin", std::vector<std::uint8_t>(3072, 0));
    const std::filesystem::path paths[] = {dir / "b.bin"};
    EXPECT_THROW(load_cifar_binary(paths), FormatError);
}

TEST(LoadCifar, SeveralFilesConcatenate) {
    fixture::ScratchDir dir;
    auto ds = fixture::random_dataset({32, 32, 3}, 3, 10, 1);
    save_cifar_binary(ds, dir / "a.bin");
    save_cifar_binary(ds.select(std::vector<std::size_t>{2}), dir / "b.bin");
    const std::filesystem::path paths[] = {dir / "a.bin", dir / "b.bin"};
    const auto back = load_cifar_binary(paths);
    EXPECT_EQ(back.size(), 4u);
    EXPECT_EQ(back.labels, (std::vector<std::int32_t>{0, 1, 2, 2}));
}

TEST(Synthetic, DeterministicAndWellFormed) {
    SyntheticSpec spec;
    spec.n_per_class = 5;
    spec.seed = 3;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.size(), 20u);
    EXPECT_NO_THROW(a.validate());
}

TEST(Synthetic, PatternsPairwiseDistinct) {
    SyntheticSpec spec;
    spec.patch = {0, 0, 2, 2};
    spec.n_classes = 16;   // every 4-bit pattern
    const auto pats = synthetic_patterns(spec);
    EXPECT_EQ(std::set(pats.begin(), pats.end()).size(), 16u);
    spec.n_classes = 17;
    EXPECT_THROW(synthetic_patterns(spec), std::invalid_argument);
}

TEST(Synthetic, NoiseFreeClassesAreIdentical) {
    SyntheticSpec spec;
    spec.geometry = {8, 8, 3};
    spec.patch = {2, 3, 4, 2};
    spec.noise_sd = 0.0;
    spec.n_per_class = 4;
    const auto ds = generate_synthetic(spec);
    for (std::size_t i = spec.n_classes; i < ds.size(); ++i) {
        const auto x = ds.image(i);
        const auto y = ds.image(i % spec.n_classes);
        EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    }
    // outside the patch every image sits at the background level
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t k = 0; k < spec.geometry.input_size(); ++k) {
            const auto p = pixel_coord(k, spec.geometry);
            if (!spec.patch.contains(p.x, p.y)) ASSERT_EQ(ds.image(i)[k], kSyntheticBackground);
        }
    }
}

TEST(Synthetic, OutsidePixelsIgnoreTheLabel) {
    // Same seed, different class count: outside-patch noise is drawn
    // unconditionally, so it does not depend on which label an image has.
    SyntheticSpec spec;
    spec.geometry = {6, 6, 1};
    spec.patch = {1, 1, 3, 3};
    spec.n_per_class = 6;
    spec.n_classes = 2;
    const auto a = generate_synthetic(spec);
    spec.n_per_class = 4;
    spec.n_classes = 3;
    const auto b = generate_synthetic(spec);
    for (std::size_t k = 0; k < a.pixels.size(); ++k) {
        const auto p = pixel_coord(k % 36, spec.geometry);
        if (!spec.patch.contains(p.x, p.y)) ASSERT_EQ(a.pixels[k], b.pixels[k]);
    }
}

TEST(Synthetic, LeastSquaresProbeOnPatchSeparatesNoiseFreeClasses) {
    SyntheticSpec spec;
    spec.geometry = {10, 10, 1};
    spec.patch = {3, 3, 4, 4};
    spec.n_classes = 6;
    spec.n_per_class = 10;
    spec.noise_sd = 0.0;
    const auto ds = generate_synthetic(spec);
    const long area = long(spec.patch.width * spec.patch.height);
    Eigen::MatrixXd x(long(ds.size()), area + 1);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(long(ds.size()), long(spec.n_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        long col = 0;
        for (std::size_t py = 0; py < spec.patch.height; ++py) {
            for (std::size_t px = 0; px < spec.patch.width; ++px) {
                x(long(i), col++) = ds.image(i)[pixel_index(spec.patch.x + px, spec.patch.y + py, 0, spec.geometry)];
            }
        }
        x(long(i), area) = 1.0;
        y(long(i), ds.labels[i]) = 1.0;
    }
    const Eigen::MatrixXd w = x.completeOrthogonalDecomposition().solve(y);
    const Eigen::MatrixXd scores = x * w;
    for (long i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        scores.row(i).maxCoeff(&best);
        EXPECT_EQ(best, ds.labels[std::size_t(i)]) << "image " << i;
    }
}

TEST(Synthetic, PatchOutsideImageIsRejected) {
    SyntheticSpec spec;
    spec.geometry = {8, 8, 1};
    spec.patch = {5, 0, 4, 2};
    EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
    spec.patch = {0, 0, 2, 2};
    spec.n_classes = 1;
    EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
}

TEST(Subsample, FloorCount) {
    const auto ds = fixture::random_dataset({2, 2, 1}, 100, 4, 1);
    EXPECT_EQ(subsample(ds, 0.3, 1).size(), 30u);
    EXPECT_EQ(subsample(ds, 0.29, 1).size(), 29u);
    EXPECT_THROW(subsample(ds, 0.001, 1), std::invalid_argument);
    EXPECT_THROW(subsample(ds, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(subsample(ds, 1.5, 1), std::invalid_argument);
}

TEST(Subsample, FullFractionIsIdentity) {
    const auto ds = fixture::random_dataset({2, 2, 1}, 17, 4, 1);
    const auto out = subsample(ds, 1.0, 9);
    EXPECT_EQ(out.pixels, ds.pixels);
    EXPECT_EQ(out.labels, ds.labels);
}

TEST(Subsample, DeterministicPerSeedAndComposes) {
    auto ds = fixture::random_dataset({1, 1, 1}, 200, 4, 1);
    for (std::size_t i = 0; i < ds.size(); ++i) ds.pixels[i] = float(i) / 200.0f;   // identify images
    EXPECT_EQ(subsample(ds, 0.4, 5).pixels, subsample(ds, 0.4, 5).pixels);
    EXPECT_NE(subsample(ds, 0.4, 5).pixels, subsample(ds, 0.4, 6).pixels);
    const auto once = subsample(ds, 0.4, 5);
    EXPECT_TRUE(std::is_sorted(once.pixels.begin(), once.pixels.end()));   // original relative order
    for (double f1 : {0.9, 0.55, 0.33}) {
        for (double f2 : {0.7, 0.5, 0.1}) {
            const auto twice = subsample(subsample(ds, f1, 1), f2, 2);
            const auto expect = std::size_t(std::floor(f2 * std::floor(f1 * 200.0 + 1e-9) + 1e-9));
            EXPECT_EQ(twice.size(), expect) << f1 << " " << f2;
        }
    }
}

TEST(Cluster, RandomModeIsLabelModTen) {
    auto ds = labelled({17, 9, 10, 0}, 20);
    const auto out = cluster_classes(ds, ClusterMode::random);
    EXPECT_EQ(out.labels, (std::vector<std::int32_t>{7, 9, 0, 0}));
    EXPECT_EQ(out.n_classes, 10u);
    EXPECT_EQ(out.pixels, ds.pixels);
}

TEST(Cluster, SemanticModeIsTableLookup) {
    auto ds = labelled({0, 1, 2, 2}, 3);
    ClassMapping m{{0, 0, 1}, 2};
    const auto out = cluster_classes(ds, ClusterMode::semantic, &m);
    EXPECT_EQ(out.labels, (std::vector<std::int32_t>{0, 0, 1, 1}));
    EXPECT_EQ(out.n_classes, 2u);
    EXPECT_EQ(out.pixels, ds.pixels);
}

TEST(Cluster, MappingMissingALabelIsRejected) {
    auto ds = labelled({0, 3}, 4);
    ClassMapping m{{0, 0, 1}, 2};
    EXPECT_THROW(cluster_classes(ds, ClusterMode::semantic, &m), std::invalid_argument);
    EXPECT_THROW(cluster_classes(ds, ClusterMode::semantic, nullptr), std::invalid_argument);
    ClassMapping gap{{0, 0, 2}, 3};   // macro class 1 empty
    EXPECT_THROW(gap.validate(), std::invalid_argument);
}

TEST(Cluster, MappingJsonRoundTrip) {
    fixture::ScratchDir dir;
    ClassMapping m{{1, 0, 1, 2}, 3};
    m.save_json(dir / "map.json");
    const auto back = ClassMapping::load_json(dir / "map.json");
    EXPECT_EQ(back.table, m.table);
    EXPECT_EQ(back.n_macro, 3u);
}

TEST(RandomizeLabels, RangeAndDeterminism) {
    const auto ds = fixture::random_dataset({2, 2, 1}, 400, 10, 1);
    const auto a = randomize_labels(ds, 3, 4);
    EXPECT_EQ(a.labels, randomize_labels(ds, 3, 4).labels);
    EXPECT_EQ(a.n_classes, 3u);
    std::set<std::int32_t> seen(a.labels.begin(), a.labels.end());
    EXPECT_EQ(seen, (std::set<std::int32_t>{0, 1, 2}));
    EXPECT_EQ(a.pixels, ds.pixels);
}

TEST(Rotate, ZeroDegreesIsIdentity) {
    const auto ds = fixture::random_dataset({6, 6, 3}, 3, 2, 1);
    const auto out = rotate_images(ds, 0.0);
    EXPECT_EQ(out.pixels, ds.pixels);
    EXPECT_TRUE(std::all_of(out.valid_mask.begin(), out.valid_mask.end(), [](auto v) { return v == 1; }));
}

TEST(Rotate, NinetyDegreesReadsTransposedSource) {
    const ImageGeometry g{5, 5, 1};
    auto ds = fixture::random_dataset(g, 1, 2, 1);
    const auto out = rotate_images(ds, 90.0);
    for (std::size_t y = 0; y < 5; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
            EXPECT_EQ(out.pixels[pixel_index(x, y, 0, g)], ds.pixels[pixel_index(y, 4 - x, 0, g)]);
        }
    }
}

TEST(Rotate, FourQuarterTurnsRestoreTheImage) {
    for (std::size_t side : {4u, 5u, 8u}) {
        const ImageGeometry g{side, side, 3};
        const auto ds = fixture::random_dataset(g, 2, 2, side);
        auto out = ds;
        for (int k = 0; k < 4; ++k) out = rotate_images(out, 90.0);
        for (std::size_t k = 0; k < ds.pixels.size(); ++k) {
            const auto p = pixel_coord(k % g.input_size(), g);
            if (out.valid_mask[p.y * side + p.x]) ASSERT_EQ(out.pixels[k], ds.pixels[k]);
        }
        // the centre of the image always survives
        EXPECT_EQ(out.valid_mask[(side / 2) * side + side / 2], 1);
    }
}

TEST(Rotate, TwentyDegreesFlagsCorners) {
    const ImageGeometry g{32, 32, 1};
    const auto out = rotate_images(fixture::random_dataset(g, 1, 2, 1), 20.0);
    for (std::size_t p : {std::size_t{0}, std::size_t{31}, std::size_t{31 * 32}, std::size_t{1023}}) {
        EXPECT_EQ(out.valid_mask[p], 0);
        EXPECT_EQ(out.pixels[p], 0.0f);
    }
    EXPECT_EQ(out.valid_mask[16 * 32 + 16], 1);
}

TEST(Rotate, NonSquareIsRejected) {
    EXPECT_THROW(rotate_images(fixture::random_dataset({4, 3, 1}, 1, 2, 1), 10.0), std::invalid_argument);
}

TEST(TranslateWrap, IdentityPeriodicityAndWrap) {
    const ImageGeometry g{4, 3, 3};
    const auto ds = fixture::random_dataset(g, 1, 2, 1);
    std::vector<float> out(g.input_size());
    translate_wrap(ds.pixels, out, g, {0, 0});
    EXPECT_EQ(out, ds.pixels);
    translate_wrap(ds.pixels, out, g, {4, 3});
    EXPECT_EQ(out, ds.pixels);
    translate_wrap(ds.pixels, out, g, {1, 0});
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < 3; ++y) {
            EXPECT_EQ(out[pixel_index(0, y, c, g)], ds.pixels[pixel_index(3, y, c, g)]);
        }
    }
}

TEST(TranslateWrap, InverseShiftRestoresExactly) {
    const ImageGeometry g{5, 4, 3};
    const auto ds = fixture::random_dataset(g, 3, 2, 1);
    const Shift fwd[] = {{1, 2}, {-3, 7}, {4, -1}};
    const Shift back[] = {{-1, -2}, {3, -7}, {-4, 1}};
    const auto moved = translate_wrap(ds.pixels, g, fwd);
    EXPECT_NE(moved, ds.pixels);
    EXPECT_EQ(translate_wrap(moved, g, back), ds.pixels);
}

TEST(Split, DisjointExhaustiveDeterministic) {
    auto ds = fixture::random_dataset({1, 1, 1}, 100, 4, 1);
    for (std::size_t i = 0; i < ds.size(); ++i) ds.pixels[i] = float(i) / 100.0f;
    const auto [train, val] = split_train_val(ds, 10, 3);
    EXPECT_EQ(train.size(), 90u);
    EXPECT_EQ(val.size(), 10u);
    std::set<float> all(train.pixels.begin(), train.pixels.end());
    for (float v : val.pixels) EXPECT_TRUE(all.insert(v).second);
    EXPECT_EQ(all.size(), 100u);
    EXPECT_EQ(split_train_val(ds, 10, 3).second.pixels, val.pixels);
    EXPECT_NE(split_train_val(ds, 10, 4).second.pixels, val.pixels);
}

TEST(Split, EdgeSizes) {
    const auto ds = fixture::random_dataset({1, 1, 1}, 10, 2, 1);
    const auto [train, val] = split_train_val(ds, 0, 1);
    EXPECT_EQ(train.size(), 10u);
    EXPECT_TRUE(val.empty());
    EXPECT_THROW(split_train_val(ds, 10, 1), std::invalid_argument);
}
