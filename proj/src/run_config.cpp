#include "tickets/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace tickets {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object and rejects anything it did not ask for.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    template <typename T>
    T require(const std::string& key) {
        if (!has(key)) throw ConfigError(where_ + "." + key + ": required");
        return get<T>(key, T{});
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, where_ + "." + key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : std::filesystem::absolute(base / path).lexically_normal();
}

std::vector<std::filesystem::path> resolve_all(const std::filesystem::path& base, const std::vector<std::string>& ps) {
    std::vector<std::filesystem::path> out;
    for (const auto& p : ps) out.push_back(resolve(base, p));
    return out;
}

std::vector<std::string> strings(const std::vector<std::filesystem::path>& ps) {
    std::vector<std::string> out;
    for (const auto& p : ps) out.push_back(p.string());
    return out;
}

template <typename E>
E pick(const std::string& where, const std::string& value, std::initializer_list<std::pair<const char*, E>> options) {
    std::string names;
    for (const auto& [name, e] : options) {
        if (value == name) return e;
        names += names.empty() ? name : std::string("|") + name;
    }
    throw ConfigError(where + ": '" + value + "' is not one of " + names);
}

const char* name_of(DatasetFormat f) {
    switch (f) {
    case DatasetFormat::idx: return "idx";
    case DatasetFormat::cifar: return "cifar";
    default: return "synthetic";
    }
}

const char* name_of(ClusterChoice c) {
    switch (c) {
    case ClusterChoice::random: return "random";
    case ClusterChoice::semantic: return "semantic";
    default: return "none";
    }
}

DatasetConfig parse_dataset(Section s, const std::filesystem::path& base) {
    DatasetConfig d;
    d.format = pick<DatasetFormat>("dataset.format", s.get<std::string>("format", "synthetic"),
                                   {{"idx", DatasetFormat::idx},
                                    {"cifar", DatasetFormat::cifar},
                                    {"synthetic", DatasetFormat::synthetic}});
    d.paths = resolve_all(base, s.get<std::vector<std::string>>("paths", {}));
    d.val_paths = resolve_all(base, s.get<std::vector<std::string>>("val_paths", {}));
    d.n_val = s.get<std::size_t>("n_val", 0);
    d.fraction = s.get<double>("fraction", 1.0);
    d.random_relabel = s.get<std::size_t>("random_relabel", 0);
    d.cluster_mode = pick<ClusterChoice>("dataset.cluster_mode", s.get<std::string>("cluster_mode", "none"),
                                         {{"none", ClusterChoice::none},
                                          {"random", ClusterChoice::random},
                                          {"semantic", ClusterChoice::semantic}});
    d.cluster_modulus = s.get<std::size_t>("cluster_modulus", 10);
    if (s.has("mapping_path")) d.mapping_path = resolve(base, s.get<std::string>("mapping_path", ""));
    d.rotate_degrees = s.get<double>("rotate_degrees", 0.0);
    d.translate_augment = s.get<bool>("translate_augment", false);
    d.seed = s.get<std::uint64_t>("seed", 0);

    auto syn = s.child("synthetic");
    d.synthetic.geometry.width = syn.get<std::size_t>("width", 32);
    d.synthetic.geometry.height = syn.get<std::size_t>("height", 32);
    d.synthetic.geometry.channels = syn.get<std::size_t>("channels", 1);
    d.synthetic.n_per_class = syn.get<std::size_t>("n_per_class", 100);
    d.synthetic.n_classes = syn.get<std::size_t>("n_classes", 4);
    d.synthetic.noise_sd = syn.get<double>("noise_sd", 0.3);
    const auto patch = syn.get<std::vector<std::size_t>>("patch", {12, 12, 6, 6});
    if (patch.size() != 4) throw ConfigError("dataset.synthetic.patch: expected [x, y, width, height]");
    d.synthetic.patch = {patch[0], patch[1], patch[2], patch[3]};
    syn.finish();
    s.finish();

    switch (d.format) {
    case DatasetFormat::idx:
        if (d.paths.size() != 2) throw ConfigError("dataset.paths: idx needs [images, labels]");
        if (!d.val_paths.empty() && d.val_paths.size() != 2) throw ConfigError("dataset.val_paths: idx needs [images, labels]");
        break;
    case DatasetFormat::cifar:
        if (d.paths.empty()) throw ConfigError("dataset.paths: cifar needs at least one batch file");
        break;
    case DatasetFormat::synthetic:
        if (!d.paths.empty() || !d.val_paths.empty()) throw ConfigError("dataset.paths: not used by synthetic data");
        break;
    }
    if (d.val_paths.empty() && d.n_val == 0) throw ConfigError("dataset: set n_val or val_paths");
    if (!d.val_paths.empty() && d.n_val != 0) throw ConfigError("dataset: n_val and val_paths are exclusive");
    if (!(d.fraction > 0.0 && d.fraction <= 1.0)) throw ConfigError("dataset.fraction must be in (0, 1]");
    if (d.cluster_mode == ClusterChoice::semantic && d.mapping_path.empty()) {
        throw ConfigError("dataset.mapping_path: required for semantic clustering");
    }
    if (d.cluster_mode == ClusterChoice::random && d.cluster_modulus < 1) {
        throw ConfigError("dataset.cluster_modulus must be >= 1");
    }
    return d;
}

} // namespace

TrainConfig RunConfig::train_config() const {
    TrainConfig t = imp.train;
    t.translate_augment = dataset.translate_augment;
    return t;
}

nlohmann::json RunConfig::to_json() const {
    const auto& d = dataset;
    const auto& t = imp.train;
    const auto& s = d.synthetic;
    json j;
    j["dataset"] = {{"format", name_of(d.format)},
                    {"paths", strings(d.paths)},
                    {"val_paths", strings(d.val_paths)},
                    {"n_val", d.n_val},
                    {"fraction", d.fraction},
                    {"random_relabel", d.random_relabel},
                    {"cluster_mode", name_of(d.cluster_mode)},
                    {"cluster_modulus", d.cluster_modulus},
                    {"mapping_path", d.mapping_path.empty() ? json(nullptr) : json(d.mapping_path.string())},
                    {"rotate_degrees", d.rotate_degrees},
                    {"translate_augment", d.translate_augment},
                    {"seed", d.seed},
                    {"synthetic",
                     {{"width", s.geometry.width},
                      {"height", s.geometry.height},
                      {"channels", s.geometry.channels},
                      {"n_per_class", s.n_per_class},
                      {"n_classes", s.n_classes},
                      {"noise_sd", s.noise_sd},
                      {"patch", {s.patch.x, s.patch.y, s.patch.width, s.patch.height}}}}};
    j["network"] = {{"dims", dims.sizes}};
    j["train"] = {{"batch_size", t.batch_size},
                  {"lr", t.lr},
                  {"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                  {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"epsilon", t.adam.epsilon}}},
                  {"steps", t.steps},
                  {"eval_every", t.eval_every},
                  {"seed", t.seed}};
    j["imp"] = {{"p", imp.prune_fraction},
                {"rewind_step", imp.rewind_step},
                {"stop_node_fraction", imp.stop_node_fraction},
                {"max_iterations", imp.max_iterations},
                {"layers_to_prune", imp.layers_to_prune},
                {"rewind_scope", imp.rewind_scope == RewindScope::full ? "full" : "weights_only"}};
    j["output"] = {{"run_dir", run_dir.string()}};
    return j;
}

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    Section root(j, "config");
    cfg.dataset = parse_dataset(root.child("dataset"), base_dir);

    auto net = root.child("network");
    cfg.dims.sizes = net.require<std::vector<std::size_t>>("dims");
    net.finish();
    try {
        cfg.dims.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("network.dims: ") + e.what());
    }

    auto tr = root.child("train");
    TrainConfig& t = cfg.imp.train;
    t.batch_size = tr.get<std::size_t>("batch_size", t.batch_size);
    t.lr = tr.get<double>("lr", t.lr);
    t.optimizer = pick<OptimizerKind>("train.optimizer", tr.get<std::string>("optimizer", "sgd"),
                                      {{"sgd", OptimizerKind::sgd}, {"adam", OptimizerKind::adam}});
    auto adam = tr.child("adam");
    t.adam.beta1 = adam.get<double>("beta1", t.adam.beta1);
    t.adam.beta2 = adam.get<double>("beta2", t.adam.beta2);
    t.adam.epsilon = adam.get<double>("epsilon", t.adam.epsilon);
    adam.finish();
    t.steps = tr.get<std::size_t>("steps", t.steps);
    t.eval_every = tr.get<std::size_t>("eval_every", t.eval_every);
    t.seed = tr.get<std::uint64_t>("seed", t.seed);
    tr.finish();

    auto imp = root.child("imp");
    cfg.imp.prune_fraction = imp.get<double>("p", cfg.imp.prune_fraction);
    cfg.imp.rewind_step = imp.get<std::size_t>("rewind_step", std::min(cfg.imp.rewind_step, t.steps));
    cfg.imp.stop_node_fraction = imp.get<double>("stop_node_fraction", cfg.imp.stop_node_fraction);
    cfg.imp.max_iterations = imp.get<std::size_t>("max_iterations", cfg.imp.max_iterations);
    cfg.imp.layers_to_prune = imp.get<std::vector<std::size_t>>("layers_to_prune", {});
    cfg.imp.rewind_scope = pick<RewindScope>("imp.rewind_scope", imp.get<std::string>("rewind_scope", "full"),
                                             {{"full", RewindScope::full}, {"weights_only", RewindScope::weights_only}});
    imp.finish();
    t.rewind_step = cfg.imp.rewind_step;

    auto out = root.child("output");
    cfg.run_dir = resolve(base_dir, out.require<std::string>("run_dir"));
    out.finish();
    root.finish();

    try {
        cfg.imp.validate(cfg.dims);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (cfg.dataset.format == DatasetFormat::synthetic) {
        try {
            cfg.dataset.synthetic.geometry.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("dataset.synthetic: ") + e.what());
        }
        if (cfg.dataset.synthetic.geometry.input_size() != cfg.dims.input_size()) {
            throw ConfigError("network.dims[0] does not match the synthetic image size");
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_run_config(j, std::filesystem::absolute(path).parent_path());
}

namespace {

ImageDataset load_files(const DatasetConfig& cfg, const std::vector<std::filesystem::path>& paths) {
    for (const auto& p : paths) {
        if (!std::filesystem::is_regular_file(p)) throw std::runtime_error(p.string() + ": no such dataset file");
    }
    if (cfg.format == DatasetFormat::idx) return load_idx(paths[0], paths[1]);
    return load_cifar_binary(paths);
}

ImageDataset relabel_and_transform(ImageDataset ds, const DatasetConfig& cfg, const ClassMapping* mapping,
                                   std::uint64_t relabel_seed) {
    if (cfg.random_relabel > 0) ds = randomize_labels(ds, cfg.random_relabel, relabel_seed);
    if (cfg.cluster_mode == ClusterChoice::random) {
        ds = cluster_classes(ds, ClusterMode::random, nullptr, cfg.cluster_modulus);
    } else if (cfg.cluster_mode == ClusterChoice::semantic) {
        ds = cluster_classes(ds, ClusterMode::semantic, mapping);
    }
    if (cfg.rotate_degrees != 0.0) ds = rotate_images(ds, cfg.rotate_degrees);
    return ds;
}

} // namespace

PreparedData prepare_data(const DatasetConfig& cfg) {
    std::optional<ClassMapping> mapping;
    if (cfg.cluster_mode == ClusterChoice::semantic) mapping = ClassMapping::load_json(cfg.mapping_path);
    const ClassMapping* map_ptr = mapping ? &*mapping : nullptr;

    ImageDataset all;
    if (cfg.format == DatasetFormat::synthetic) {
        SyntheticSpec spec = cfg.synthetic;
        spec.seed = cfg.seed;
        all = generate_synthetic(spec);
    } else {
        all = load_files(cfg, cfg.paths);
    }
    all = relabel_and_transform(std::move(all), cfg, map_ptr, cfg.seed);

    PreparedData out;
    if (!cfg.val_paths.empty()) {
        out.train = std::move(all);
        // Validation labels get their own relabel draw.
        out.val = relabel_and_transform(load_files(cfg, cfg.val_paths), cfg, map_ptr, cfg.seed + 1);
        if (!(out.val.geometry == out.train.geometry)) {
            throw std::runtime_error("validation images have a different geometry than training images");
        }
    } else {
        auto [tr, va] = split_train_val(all, cfg.n_val, cfg.seed);
        out.train = std::move(tr);
        out.val = std::move(va);
    }
    if (cfg.fraction < 1.0) out.train = subsample(out.train, cfg.fraction, cfg.seed);
    if (out.train.empty()) throw std::runtime_error("training set is empty after subsampling");
    return out;
}

} // namespace tickets
