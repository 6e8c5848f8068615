#include "tickets/run_config.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace tickets;
using nlohmann::json;

namespace {

json minimal() {
    return {{"dataset",
             {{"format", "synthetic"},
              {"n_val", 20},
              {"synthetic", {{"width", 6}, {"height", 6}, {"n_per_class", 20}, {"patch", {1, 1, 3, 3}}}}}},
            {"network", {{"dims", {36, 10, 3}}}},
            {"train", {{"batch_size", 10}, {"steps", 30}}},
            {"output", {{"run_dir", "runs/a"}}}};
}

} // namespace

TEST(RunConfig, DefaultsAndRelativePaths) {
    const auto cfg = parse_run_config(minimal(), "/base");
    EXPECT_EQ(cfg.run_dir, std::filesystem::path("/base/runs/a"));
    EXPECT_EQ(cfg.imp.prune_fraction, 0.3);
    EXPECT_EQ(cfg.imp.rewind_step, 30u);   // default 1000 capped at the training length
    EXPECT_EQ(cfg.imp.stop_node_fraction, 0.8);
    EXPECT_EQ(cfg.imp.train.lr, 0.1);
    EXPECT_EQ(cfg.imp.train.optimizer, OptimizerKind::sgd);
    EXPECT_EQ(cfg.dataset.synthetic.n_classes, 4u);
    EXPECT_EQ(cfg.dims.sizes, (std::vector<std::size_t>{36, 10, 3}));
}

TEST(RunConfig, NormalizedJsonParsesToItself) {
    auto j = minimal();
    j["train"]["optimizer"] = "adam";
    j["imp"] = {{"p", 0.2}, {"rewind_step", 5}, {"layers_to_prune", {1}}, {"rewind_scope", "weights_only"}};
    const auto cfg = parse_run_config(j, "/base");
    const auto norm = cfg.to_json();
    EXPECT_EQ(parse_run_config(norm, "/elsewhere").to_json(), norm);
    EXPECT_EQ(norm["imp"]["rewind_scope"], "weights_only");
    EXPECT_EQ(norm["train"]["optimizer"], "adam");
}

TEST(RunConfig, UnknownKeysAreRejected) {
    for (const char* section : {"dataset", "train", "output"}) {
        auto j = minimal();
        j[section]["bogus"] = 1;
        EXPECT_THROW(parse_run_config(j, "/"), ConfigError) << section;
    }
    auto j = minimal();
    j["extra"] = json::object();
    EXPECT_THROW(parse_run_config(j, "/"), ConfigError);
    j = minimal();
    j["dataset"]["synthetic"]["colour"] = 1;
    EXPECT_THROW(parse_run_config(j, "/"), ConfigError);
}

TEST(RunConfig, InvalidValuesAreRejected) {
    auto expect_bad = [](auto edit) {
        auto j = minimal();
        edit(j);
        EXPECT_THROW(parse_run_config(j, "/"), ConfigError) << j.dump();
    };
    expect_bad([](json& j) { j["network"].erase("dims"); });
    expect_bad([](json& j) { j["network"]["dims"] = {36, 3}; });
    expect_bad([](json& j) { j["network"]["dims"] = {35, 10, 3}; });
    expect_bad([](json& j) { j["output"].erase("run_dir"); });
    expect_bad([](json& j) { j["dataset"]["n_val"] = 0; });
    expect_bad([](json& j) { j["dataset"]["format"] = "png"; });
    expect_bad([](json& j) { j["dataset"]["fraction"] = 0.0; });
    expect_bad([](json& j) { j["dataset"]["cluster_mode"] = "semantic"; });
    expect_bad([](json& j) { j["train"]["steps"] = "many"; });
    expect_bad([](json& j) { j["train"]["batch_size"] = 1; });
    expect_bad([](json& j) { j["imp"] = {{"p", 1.5}}; });
    expect_bad([](json& j) { j["imp"] = {{"rewind_step", 31}}; });
    expect_bad([](json& j) { j["imp"] = {{"layers_to_prune", {2}}}; });
    expect_bad([](json& j) {
        j["dataset"]["format"] = "idx";
        j["dataset"]["paths"] = {"only_one"};
    });
}

TEST(RunConfig, LoadsFromFileRelativeToItsDirectory) {
    fixture::ScratchDir dir;
    std::filesystem::create_directories(dir / "cfg");
    std::ofstream(dir / "cfg" / "run.json") << minimal().dump(2);
    const auto cfg = load_run_config(dir / "cfg" / "run.json");
    EXPECT_EQ(cfg.run_dir, dir.path() / "cfg" / "runs" / "a");
    std::ofstream(dir / "broken.json") << "{ not json";
    EXPECT_THROW(load_run_config(dir / "broken.json"), ConfigError);
    EXPECT_THROW(load_run_config(dir / "missing.json"), ConfigError);
}

TEST(PrepareData, SyntheticSplitAndSubsample) {
    auto j = minimal();
    j["dataset"]["fraction"] = 0.5;
    const auto cfg = parse_run_config(j, "/");
    const auto data = prepare_data(cfg.dataset);
    EXPECT_EQ(data.val.size(), 20u);
    EXPECT_EQ(data.train.size(), 30u);   // floor(0.5 * 60)
    const auto again = prepare_data(cfg.dataset);
    EXPECT_EQ(again.train.pixels, data.train.pixels);
}

TEST(PrepareData, RelabelAndClusterOrder) {
    auto j = minimal();
    j["dataset"]["random_relabel"] = 10;
    j["dataset"]["cluster_mode"] = "random";
    j["dataset"]["cluster_modulus"] = 2;
    const auto data = prepare_data(parse_run_config(j, "/").dataset);
    EXPECT_EQ(data.train.n_classes, 2u);
    for (auto l : data.train.labels) EXPECT_LT(l, 2);
}

TEST(PrepareData, IdxFilesWithSeparateValidation) {
    fixture::ScratchDir dir;
    const auto ds = fixture::random_dataset({3, 3, 1}, 12, 3, 1);
    save_idx(ds, dir / "ti", dir / "tl");
    save_idx(ds.select(std::vector<std::size_t>{0, 1, 2}), dir / "vi", dir / "vl");
    json j = minimal();
    j["dataset"] = {{"format", "idx"}, {"paths", {"ti", "tl"}}, {"val_paths", {"vi", "vl"}}};
    j["network"]["dims"] = {9, 4, 3};
    const auto data = prepare_data(parse_run_config(j, dir.path()).dataset);
    EXPECT_EQ(data.train.size(), 12u);
    EXPECT_EQ(data.val.size(), 3u);

    j["dataset"]["paths"] = {"nope", "tl"};
    EXPECT_THROW(prepare_data(parse_run_config(j, dir.path()).dataset), std::runtime_error);
}
