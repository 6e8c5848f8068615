#pragma once

// Small shared helpers for the unit tests.

#include "tickets/datasets.hpp"
#include "tickets/network.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fixture {

// Fresh directory per test, removed afterwards.
class ScratchDir {
public:
    ScratchDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string name = "tickets_test_";
        if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
        for (char& ch : name) {
            if (ch == '/') ch = '_';
        }
        path_ = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() { std::filesystem::remove_all(path_); }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Uniform random pixels, labels cycling through the classes.
inline tickets::ImageDataset random_dataset(const tickets::ImageGeometry& g, std::size_t n, std::size_t classes,
                                            std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> px(0.0f, 1.0f);
    tickets::ImageDataset ds;
    ds.geometry = g;
    ds.n_classes = classes;
    ds.pixels.resize(n * g.input_size());
    for (auto& v : ds.pixels) v = px(rng);
    for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(std::int32_t(i % classes));
    return ds;
}

inline tickets::Params random_params(const tickets::LayerDims& dims, std::uint64_t seed) {
    auto p = tickets::init_params(dims, seed);
    std::mt19937_64 rng(seed + 1000);
    std::normal_distribution<float> n(0.0f, 0.3f);
    std::uniform_real_distribution<float> var(0.5f, 2.0f);
    for (auto& lp : p.layers) {
        for (Eigen::Index k = 0; k < lp.bias.size(); ++k) lp.bias[k] = n(rng);
        for (Eigen::Index k = 0; k < lp.gamma.size(); ++k) {
            lp.gamma[k] = 1.0f + n(rng);
            lp.beta[k] = n(rng);
            lp.running_mean[k] = n(rng);
            lp.running_var[k] = var(rng);
        }
    }
    return p;
}

} // namespace fixture
