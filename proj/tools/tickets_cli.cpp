// tickets: IMP with rewinding on fully-connected image classifiers, plus the
// structural observables of the resulting masks.

#include "tickets/commands.hpp"
#include "tickets/reports.hpp"
#include "tickets/run_config.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <iostream>

namespace {

using namespace tickets;

std::vector<std::size_t> parse_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (item.empty()) throw UsageError("bad list '" + text + "'");
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || item.front() == '-') throw UsageError("bad list entry '" + item + "'");
        out.push_back(std::size_t(v));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lottery-ticket pruning of fully-connected networks and mask analysis"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker threads for linear algebra")->check(CLI::PositiveNumber);

    // train / imp
    std::string config_path;
    auto* train = app.add_subcommand("train", "Dense training from a JSON run config");
    train->add_option("--config", config_path, "Run configuration")->required();
    std::size_t stop_after = 0;
    auto* imp = app.add_subcommand("imp", "Iterative magnitude pruning with rewinding");
    imp->add_option("--config", config_path, "Run configuration")->required();
    imp->add_option("--stop-after", stop_after)->group("");   // testing aid: interrupt after N iterations

    // analyze
    AnalyzeOptions an;
    std::string run_dir;
    std::string direction = "in";
    std::string channel = "same";
    std::string edges;
    auto* analyze = app.add_subcommand("analyze", "Compute an observable for one iteration of a run");
    analyze->add_option("run_dir", run_dir, "Run directory")->required();
    analyze->add_option("iteration", an.iteration, "IMP iteration")->required();
    analyze->add_option("observable", an.observable, "conn|locality|locality-binned|effmask|pixmap|binomial")
        ->required();
    analyze->add_option("--layer", an.layer, "Layer (1-based); deeper layers use effective masks");
    analyze->add_option("--direction", direction, "in|out (conn)")->check(CLI::IsMember({"in", "out"}));
    analyze->add_option("--channel", channel, "same|diff (locality)")->check(CLI::IsMember({"same", "diff"}));
    analyze->add_option("--bin-width", an.bin_width, "Histogram bin width (conn)")->check(CLI::PositiveNumber);
    analyze->add_option("--edges", edges, "Ascending C^in bin edges, comma separated (locality-binned)");
    analyze->add_option("--out", an.out_dir, "Output directory (default <run_dir>/analysis)");

    // ablate
    AblateOptions ab;
    auto* ablate = app.add_subcommand("ablate", "Accuracy while removing nodes ranked by C^in");
    ablate->add_option("run_dir", run_dir, "Run directory")->required();
    ablate->add_option("iteration", ab.iteration, "IMP iteration")->required();
    ablate->add_option("--order", ab.order, "ascending|descending|both")
        ->check(CLI::IsMember({"ascending", "descending", "both"}));
    ablate->add_option("--points", ab.points, "Number of steps between 0 and all nodes")->check(CLI::PositiveNumber);
    ablate->add_option("--layer", ab.layer, "Layer (1-based)");
    ablate->add_option("--out", ab.out_dir, "Output directory (default <run_dir>/analysis)");

    // export-masks
    ExportMasksOptions ex;
    auto* export_masks = app.add_subcommand("export-masks", "Images of the masks of the most connected nodes");
    export_masks->add_option("run_dir", run_dir, "Run directory")->required();
    export_masks->add_option("iteration", ex.iteration, "IMP iteration")->required();
    export_masks->add_option("--top", ex.top, "Number of nodes, by descending C^in");
    export_masks->add_flag("--weighted", ex.weighted, "Trained weights instead of the binary mask (layer 1)");
    export_masks->add_option("--layer", ex.layer, "Layer (1-based); deeper layers use effective masks");
    export_masks->add_option("--out", ex.out_dir, "Output directory (default <run_dir>/masks)");

    // synth
    SyntheticSpec spec;
    std::string patch = "12,12,6,6";
    std::string out_images, out_labels;
    auto* synth = app.add_subcommand("synth", "Write a synthetic patch dataset as IDX files");
    synth->add_option("--out-images", out_images)->required();
    synth->add_option("--out-labels", out_labels)->required();
    synth->add_option("--width", spec.geometry.width);
    synth->add_option("--height", spec.geometry.height);
    synth->add_option("--channels", spec.geometry.channels)->check(CLI::IsMember({1, 3}));
    synth->add_option("--n-per-class", spec.n_per_class);
    synth->add_option("--classes", spec.n_classes);
    synth->add_option("--noise", spec.noise_sd);
    synth->add_option("--patch", patch, "x,y,width,height");
    synth->add_option("--seed", spec.seed);

    // cluster
    ClusterOptions cl;
    std::string format = "idx";
    std::string mode = "random";
    std::vector<std::string> inputs, outputs;
    std::string mapping;
    auto* cluster = app.add_subcommand("cluster", "Rewrite labels into macro classes");
    cluster->add_option("--format", format)->check(CLI::IsMember({"idx", "cifar"}));
    cluster->add_option("--input", inputs, "idx: images labels; cifar: batch files")->required();
    cluster->add_option("--output", outputs, "idx: images labels; cifar: one file")->required();
    cluster->add_option("--mode", mode)->check(CLI::IsMember({"random", "semantic"}));
    cluster->add_option("--modulus", cl.modulus)->check(CLI::PositiveNumber);
    cluster->add_option("--mapping", mapping, "JSON class mapping (semantic)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "tickets: " << e.what() << "\n";
        return 2;
    }

    Eigen::setNbThreads(threads);
    auto& log = std::cout;
    try {
        if (*train) {
            cmd_train(load_run_config(config_path), log);
        } else if (*imp) {
            cmd_imp(load_run_config(config_path), log,
                    stop_after > 0 ? std::optional<std::size_t>(stop_after) : std::nullopt);
        } else if (*analyze) {
            an.direction = direction == "in" ? Direction::in : Direction::out;
            an.channel = channel == "same" ? ChannelMode::same : ChannelMode::different;
            if (!edges.empty()) an.edges = parse_list(edges);
            cmd_analyze(run_dir, an, log);
        } else if (*ablate) {
            cmd_ablate(run_dir, ab, log);
        } else if (*export_masks) {
            cmd_export_masks(run_dir, ex, log);
        } else if (*synth) {
            const auto p = parse_list(patch);
            if (p.size() != 4) throw UsageError("--patch needs x,y,width,height");
            spec.patch = {p[0], p[1], p[2], p[3]};
            cmd_synth(spec, out_images, out_labels, log);
        } else if (*cluster) {
            cl.format = format == "idx" ? DatasetFormat::idx : DatasetFormat::cifar;
            cl.mode = mode == "random" ? ClusterMode::random : ClusterMode::semantic;
            cl.inputs.assign(inputs.begin(), inputs.end());
            cl.outputs.assign(outputs.begin(), outputs.end());
            cl.mapping = mapping;
            cmd_cluster(cl, log);
        }
    } catch (const UsageError& e) {
        std::cerr << "tickets: usage: " << e.what() << "\n";
        return 2;
    } catch (const RunInterrupted& e) {
        std::cerr << "tickets: interrupted: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "tickets: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
