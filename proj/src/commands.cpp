#include "tickets/commands.hpp"

#include "tickets/pruner.hpp"
#include "tickets/reports.hpp"
#include "tickets/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tickets {

namespace fs = std::filesystem;

namespace {

std::string numbered(const std::string& prefix, std::size_t n, const std::string& ext, int width = 3) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", width, n);
    return prefix + buf + ext;
}

std::string iter_tag(std::size_t n) { return numbered("iter", n, ""); }

void check_data(const RunConfig& cfg, const PreparedData& data) {
    if (data.train.geometry.input_size() != cfg.dims.input_size()) {
        throw ConfigError("network.dims[0] = " + std::to_string(cfg.dims.input_size()) + " but images have " +
                          std::to_string(data.train.geometry.input_size()) + " inputs");
    }
    if (data.train.n_classes > cfg.dims.output_size()) {
        throw ConfigError("dataset has " + std::to_string(data.train.n_classes) + " classes but the network has " +
                          std::to_string(cfg.dims.output_size()) + " outputs");
    }
}

std::vector<std::uint8_t> column(const MaskMatrix& m, std::size_t j) {
    std::vector<std::uint8_t> out(std::size_t(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[std::size_t(i)] = m(i, Eigen::Index(j));
    return out;
}

ManifestIteration manifest_entry(std::size_t n, const MaskSet& masks, std::optional<double> best_val) {
    const Density d = density(masks);
    ManifestIteration mi;
    mi.n = n;
    mi.u = d.global;
    mi.layer_u = d.per_layer;
    mi.best_val = best_val;
    mi.masks_file = numbered("masks_", n, ".tkms");
    return mi;
}

std::vector<CurveRow> manifest_curves(const RunManifest& man) {
    std::vector<CurveRow> rows;
    for (const auto& it : man.iterations) rows.push_back({it.n, it.u, it.best_val});
    return rows;
}

RunManifest fresh_manifest(const RunConfig& cfg, const PreparedData& data, const std::string& kind) {
    RunManifest man;
    man.kind = kind;
    man.config = cfg.to_json();
    man.geometry = data.train.geometry;
    man.dims = cfg.dims;
    man.curves_file = "curves.csv";
    return man;
}

// Mask of layer 1, or the effective mask of a deeper layer.
MaskMatrix footprint(const MaskSet& masks, std::size_t layer) {
    if (layer < 1 || layer > masks.num_layers()) {
        throw UsageError("--layer must be in [1, " + std::to_string(masks.num_layers()) + "]");
    }
    return layer == 1 ? masks.layer(1) : effective_masks(masks, layer);
}

struct LoadedIteration {
    RunManifest manifest;
    ManifestIteration entry;
    MaskSet masks;
};

LoadedIteration load_iteration(const fs::path& run_dir, std::size_t n) {
    LoadedIteration li;
    li.manifest = load_manifest(run_dir);
    li.entry = li.manifest.iteration(n);
    li.masks = load_masks(run_dir / li.entry.masks_file);
    li.masks.validate(li.manifest.dims);
    return li;
}

fs::path output_dir(const fs::path& run_dir, const fs::path& requested, const char* fallback) {
    fs::path out = requested.empty() ? run_dir / fallback : requested;
    fs::create_directories(out);
    return out;
}

const char* channel_name(ChannelMode m) { return m == ChannelMode::same ? "same" : "diff"; }

} // namespace

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void cmd_train(const RunConfig& cfg, std::ostream& log) {
    const PreparedData data = prepare_data(cfg.dataset);
    check_data(cfg, data);
    if (fs::exists(cfg.run_dir / kManifestName)) {
        throw std::runtime_error(cfg.run_dir.string() + " already holds a run");
    }

    TrainConfig tc = cfg.train_config();
    tc.rewind_step = cfg.imp.rewind_step;
    // Same seeds as iteration 0 of an IMP run with this config.
    tc.seed = derive_seed(cfg.imp.train.seed, Stream::train, 0);
    const MaskSet full = MaskSet::full(cfg.dims);
    auto res = train(init_params(cfg.dims, cfg.imp.train.seed), full, data.train, data.val, tc);

    fs::create_directories(cfg.run_dir);
    RunManifest man = fresh_manifest(cfg, data, "train");
    if (res.rewind_checkpoint && res.rewind_checkpoint->step != tc.steps) {
        const auto name = numbered("checkpoint_", res.rewind_checkpoint->step, ".tkts", 6);
        save_checkpoint(cfg.run_dir / name, res.rewind_checkpoint->params);
        man.checkpoints.push_back({res.rewind_checkpoint->step, name});
    }
    const auto final_name = numbered("checkpoint_", tc.steps, ".tkts", 6);
    save_checkpoint(cfg.run_dir / final_name, res.final_params);
    man.checkpoints.push_back({tc.steps, final_name});

    auto entry = manifest_entry(0, full, res.best_val);
    save_masks(cfg.run_dir / entry.masks_file, full);
    entry.params_file = final_name;
    entry.records_file = man.curves_file;
    export_records_csv(res.records, cfg.run_dir / man.curves_file);
    man.iterations.push_back(entry);
    man.complete = true;
    save_manifest(cfg.run_dir, man);

    log << "trained " << tc.steps << " steps";
    if (res.best_val) log << ", best val accuracy " << format_number(*res.best_val);
    log << "\n";
}

// ---------------------------------------------------------------------------
// imp
// ---------------------------------------------------------------------------

void cmd_imp(const RunConfig& cfg, std::ostream& log, std::optional<std::size_t> stop_after) {
    const PreparedData data = prepare_data(cfg.dataset);
    check_data(cfg, data);

    ImpConfig ic = cfg.imp;
    ic.train = cfg.train_config();
    const fs::path& dir = cfg.run_dir;

    RunManifest man = fresh_manifest(cfg, data, "imp");
    std::optional<ImpResume> resume;
    if (fs::exists(dir / kManifestName)) {
        RunManifest old = load_manifest(dir);
        if (old.kind != "imp") throw std::runtime_error(dir.string() + " holds a '" + old.kind + "' run");
        if (old.config != man.config) {
            throw std::runtime_error(dir.string() + " holds a run with a different configuration");
        }
        if (old.complete) {
            log << "run already complete: " << old.iterations.size() << " iterations\n";
            return;
        }
        old.check_files(dir);
        if (!old.iterations.empty() && !old.checkpoints.empty()) {
            ImpResume r;
            r.run.config = ic;
            r.run.dims = cfg.dims;
            r.run.rewind_checkpoint =
                Checkpoint{old.checkpoints.front().step, load_checkpoint(dir / old.checkpoints.front().file)};
            for (const auto& it : old.iterations) {
                ImpIteration ii;
                ii.n = it.n;
                ii.masks = load_masks(dir / it.masks_file);
                ii.masks.validate(cfg.dims);
                ii.density = density(ii.masks);
                ii.best_val = it.best_val;
                ii.records = parse_records_csv(read_text(dir / it.records_file));
                r.run.iterations.push_back(std::move(ii));
            }
            r.last_final_params = load_checkpoint(dir / old.iterations.back().params_file);
            resume = std::move(r);
            man = std::move(old);
            log << "resuming after iteration " << man.iterations.back().n << "\n";
        }
    } else {
        fs::create_directories(dir);
    }

    std::size_t completed_here = 0;
    ImpObserver obs;
    obs.on_rewind_checkpoint = [&](const Checkpoint& ckpt) {
        save_checkpoint(dir / "rewind.tkts", ckpt.params);
        man.checkpoints = {{ckpt.step, "rewind.tkts"}};
    };
    obs.on_iteration = [&](const ImpIteration& it, const Params& final_params) {
        auto entry = manifest_entry(it.n, it.masks, it.best_val);
        entry.params_file = numbered("params_", it.n, ".tkts");
        entry.records_file = numbered("train_", it.n, ".csv");
        save_masks(dir / entry.masks_file, it.masks);
        save_checkpoint(dir / entry.params_file, final_params);
        export_records_csv(it.records, dir / entry.records_file);
        man.iterations.push_back(entry);
        export_curves_csv(manifest_curves(man), dir / man.curves_file);
        save_manifest(dir, man);

        log << "iteration " << it.n << ": u=" << format_number(entry.u);
        if (it.best_val) log << " best_val=" << format_number(*it.best_val);
        log << "\n";
        if (stop_after && ++completed_here >= *stop_after) {
            throw RunInterrupted("stopped after " + std::to_string(completed_here) + " iteration(s)");
        }
    };

    run_imp(cfg.dims, data.train, data.val, ic, obs, std::move(resume));
    man.complete = true;
    export_curves_csv(manifest_curves(man), dir / man.curves_file);
    save_manifest(dir, man);
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

std::vector<fs::path> cmd_analyze(const fs::path& run_dir, const AnalyzeOptions& opt, std::ostream& log) {
    static const std::vector<std::string> kObservables = {"conn",   "locality", "locality-binned",
                                                          "effmask", "pixmap",  "binomial"};
    if (std::find(kObservables.begin(), kObservables.end(), opt.observable) == kObservables.end()) {
        throw UsageError("unknown observable '" + opt.observable +
                         "' (expected conn|locality|locality-binned|effmask|pixmap|binomial)");
    }
    const auto li = load_iteration(run_dir, opt.iteration);
    const auto& geom = li.manifest.geometry;
    const fs::path out = output_dir(run_dir, opt.out_dir, "analysis");
    const std::string tag = iter_tag(opt.iteration);
    const std::string lt = "_l" + std::to_string(opt.layer);
    std::vector<fs::path> written;

    if (opt.observable == "conn") {
        const auto h = connectivity(li.masks, opt.layer, opt.direction, opt.bin_width);
        const std::string base = tag + "_conn_" + (opt.direction == Direction::in ? "in" : "out") + lt;
        std::string nodes = "node,count\n";
        for (std::size_t j = 0; j < h.values.size(); ++j) {
            nodes += std::to_string(j) + ',' + std::to_string(h.values[j]) + '\n';
        }
        std::string hist = "lower,upper,count\n";
        for (const auto& b : h.bins) {
            hist += std::to_string(b.lower) + ',' + std::to_string(b.upper) + ',' + std::to_string(b.count) + '\n';
        }
        written.push_back(out / (base + "_nodes.csv"));
        write_text(written.back(), nodes);
        written.push_back(out / (base + "_hist.csv"));
        write_text(written.back(), hist);
    } else if (opt.observable == "locality") {
        const auto map = locality_map(footprint(li.masks, opt.layer), geom, opt.channel, opt.layer);
        const std::string base = tag + "_locality_" + channel_name(opt.channel) + lt;
        written.push_back(out / (base + ".csv"));
        export_locality_csv(map, written.back());
        written.push_back(out / (base + ".pgm"));
        export_locality_image(map, written.back());
    } else if (opt.observable == "locality-binned") {
        if (opt.edges.empty()) throw UsageError("locality-binned needs --edges");
        const auto maps = locality_map_binned(footprint(li.masks, opt.layer), geom, opt.channel, opt.edges, opt.layer);
        for (std::size_t k = 0; k < maps.size(); ++k) {
            const std::string range = std::to_string(opt.edges[k]) + "-" +
                                      (k + 1 < opt.edges.size() ? std::to_string(opt.edges[k + 1]) : std::string("inf"));
            const std::string base = tag + "_locality_" + channel_name(opt.channel) + lt + "_cin" + range;
            written.push_back(out / (base + ".csv"));
            export_locality_csv(maps[k], written.back());
            written.push_back(out / (base + ".pgm"));
            export_locality_image(maps[k], written.back());
        }
    } else if (opt.observable == "effmask") {
        const MaskMatrix mu = footprint(li.masks, opt.layer);
        const std::string base = tag + "_effmask" + lt;
        MaskSet single;
        single.layers.push_back(mu);
        written.push_back(out / (base + ".tkms"));
        save_masks(written.back(), single);
        const auto sizes = column_sums(mu);
        std::string csv = "node,footprint\n";
        for (std::size_t j = 0; j < sizes.size(); ++j) csv += std::to_string(j) + ',' + std::to_string(sizes[j]) + '\n';
        written.push_back(out / (base + "_footprint.csv"));
        write_text(written.back(), csv);
    } else if (opt.observable == "pixmap") {
        const auto per_input = row_sums(footprint(li.masks, opt.layer));
        const std::size_t top = per_input.empty() ? 0 : *std::max_element(per_input.begin(), per_input.end());
        std::vector<std::uint8_t> samples(per_input.size(), 0);
        std::string csv = "x,y,c,count\n";
        for (std::size_t i = 0; i < per_input.size(); ++i) {
            const auto pc = pixel_coord(i, geom);
            csv += std::to_string(pc.x) + ',' + std::to_string(pc.y) + ',' + std::to_string(pc.c) + ',' +
                   std::to_string(per_input[i]) + '\n';
            if (top > 0) samples[i] = std::uint8_t(std::lround(255.0 * double(per_input[i]) / double(top)));
        }
        const std::string base = tag + "_pixmap" + lt;
        written.push_back(out / (base + ".csv"));
        write_text(written.back(), csv);
        written.push_back(out / (base + (geom.channels == 1 ? ".pgm" : ".ppm")));
        const auto img = encode_netpbm(samples, geom);
        write_text(written.back(), std::string_view(reinterpret_cast<const char*>(img.data()), img.size()));
    } else {   // binomial
        if (opt.layer < 1 || opt.layer > li.masks.num_layers()) {
            throw UsageError("--layer must be in [1, " + std::to_string(li.masks.num_layers()) + "]");
        }
        const auto& m = li.masks.layer(opt.layer);
        const auto c_in = column_sums(m);
        const std::size_t n = std::size_t(m.rows());
        const double u = density(li.masks).per_layer[opt.layer - 1];
        const auto pmf = binomial_reference(n, u, n);
        const auto chi = chi_square_gof(c_in, pmf);
        std::vector<std::size_t> observed(n + 1, 0);
        for (auto c : c_in) ++observed[c];
        std::string csv = "k,observed,expected\n";
        for (std::size_t k = 0; k <= n; ++k) {
            csv += std::to_string(k) + ',' + std::to_string(observed[k]) + ',' +
                   format_number(double(c_in.size()) * pmf[k]) + '\n';
        }
        const std::string base = tag + "_binomial" + lt;
        written.push_back(out / (base + ".csv"));
        write_text(written.back(), csv);
        written.push_back(out / (base + "_chi2.csv"));
        write_text(written.back(), "statistic,dof,p_value\n" + format_number(chi.statistic) + ',' +
                                       std::to_string(chi.dof) + ',' + format_number(chi.p_value) + '\n');
        log << "chi-square " << format_number(chi.statistic) << " on " << chi.dof << " dof, p = "
            << format_number(chi.p_value) << "\n";
    }
    for (const auto& p : written) log << p.string() << "\n";
    return written;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

fs::path cmd_ablate(const fs::path& run_dir, const AblateOptions& opt, std::ostream& log) {
    if (opt.order != "ascending" && opt.order != "descending" && opt.order != "both") {
        throw UsageError("--order must be ascending, descending or both");
    }
    if (opt.points < 1) throw UsageError("--points must be >= 1");
    const auto li = load_iteration(run_dir, opt.iteration);
    if (opt.layer < 1 || opt.layer > li.masks.num_layers()) {
        throw UsageError("--layer must be in [1, " + std::to_string(li.masks.num_layers()) + "]");
    }
    const RunConfig cfg = parse_run_config(li.manifest.config, run_dir);
    const PreparedData data = prepare_data(cfg.dataset);
    const Params params = load_checkpoint(run_dir / li.entry.params_file);

    const std::size_t n_l = li.manifest.dims.sizes[opt.layer];
    std::vector<std::size_t> counts;
    for (std::size_t k = 0; k <= opt.points; ++k) {
        const auto c = std::size_t(std::llround(double(k) * double(n_l) / double(opt.points)));
        if (counts.empty() || counts.back() != c) counts.push_back(c);
    }

    std::string csv = "order,removed,accuracy\n";
    for (auto order : {AblationOrder::ascending, AblationOrder::descending}) {
        const char* name = order == AblationOrder::ascending ? "ascending" : "descending";
        if (opt.order != "both" && opt.order != name) continue;
        for (const auto& p : ablation_curve(params, li.masks, data.val, order, counts, opt.layer)) {
            csv += std::string(name) + ',' + std::to_string(p.removed) + ',' + format_number(p.accuracy) + '\n';
        }
    }
    const fs::path out = output_dir(run_dir, opt.out_dir, "analysis") /
                         (iter_tag(opt.iteration) + "_ablation_l" + std::to_string(opt.layer) + ".csv");
    write_text(out, csv);
    log << out.string() << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// export-masks
// ---------------------------------------------------------------------------

std::vector<fs::path> cmd_export_masks(const fs::path& run_dir, const ExportMasksOptions& opt, std::ostream& log) {
    const auto li = load_iteration(run_dir, opt.iteration);
    const MaskMatrix mu = footprint(li.masks, opt.layer);
    const std::size_t n_l = std::size_t(mu.cols());
    if (opt.top > n_l) {
        throw UsageError("--top " + std::to_string(opt.top) + " exceeds the " + std::to_string(n_l) +
                         " nodes of layer " + std::to_string(opt.layer));
    }
    if (opt.weighted && opt.layer != 1) throw UsageError("--weighted is only defined for layer 1");
    std::vector<fs::path> written;
    if (opt.top == 0) return written;

    std::optional<Params> params;
    if (opt.weighted) params = load_checkpoint(run_dir / li.entry.params_file);
    const auto& geom = li.manifest.geometry;
    const auto rank = ablation_ranking(li.masks, opt.layer, AblationOrder::descending);
    const fs::path out = output_dir(run_dir, opt.out_dir, "masks");
    const char* ext = geom.channels == 1 ? ".pgm" : ".ppm";

    for (std::size_t r = 0; r < opt.top; ++r) {
        const std::size_t j = rank[r];
        const auto row = column(mu, j);
        std::string name = iter_tag(opt.iteration) + "_l" + std::to_string(opt.layer) + numbered("_rank", r, "", 2) +
                           numbered("_node", j, "", 4) + (opt.weighted ? "_weighted" : "") + ext;
        written.push_back(out / name);
        if (opt.weighted) {
            const auto& w = params->layer(1).weights;
            std::vector<float> col(std::size_t(w.rows()));
            for (Eigen::Index i = 0; i < w.rows(); ++i) col[std::size_t(i)] = w(i, Eigen::Index(j));
            export_weighted_mask_image(col, row, geom, written.back());
        } else {
            export_mask_image(row, geom, written.back());
        }
    }
    log << "wrote " << written.size() << " images to " << out.string() << "\n";
    return written;
}

// ---------------------------------------------------------------------------
// synth, cluster
// ---------------------------------------------------------------------------

void cmd_synth(const SyntheticSpec& spec, const fs::path& images, const fs::path& labels, std::ostream& log) {
    const auto ds = generate_synthetic(spec);
    save_idx(ds, images, labels);
    log << "wrote " << ds.size() << " images (" << spec.n_classes << " classes)\n";
}

void cmd_cluster(const ClusterOptions& opt, std::ostream& log) {
    const bool idx = opt.format == DatasetFormat::idx;
    if (idx && (opt.inputs.size() != 2 || opt.outputs.size() != 2)) {
        throw UsageError("idx clustering needs --input images labels and --output images labels");
    }
    if (!idx && (opt.inputs.empty() || opt.outputs.size() != 1)) {
        throw UsageError("cifar clustering needs --input files... and one --output file");
    }
    for (const auto& p : opt.inputs) {
        if (!fs::is_regular_file(p)) throw std::runtime_error(p.string() + ": no such file");
    }
    ImageDataset ds = idx ? load_idx(opt.inputs[0], opt.inputs[1]) : load_cifar_binary(opt.inputs);
    std::optional<ClassMapping> mapping;
    if (opt.mode == ClusterMode::semantic) mapping = ClassMapping::load_json(opt.mapping);
    ds = cluster_classes(ds, opt.mode, mapping ? &*mapping : nullptr, opt.modulus);
    if (idx) {
        save_idx(ds, opt.outputs[0], opt.outputs[1]);
    } else {
        save_cifar_binary(ds, opt.outputs[0]);
    }
    log << "relabelled " << ds.size() << " images into " << ds.n_classes << " classes\n";
}

} // namespace tickets
