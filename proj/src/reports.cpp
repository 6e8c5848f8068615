#include "tickets/reports.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace tickets {

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'K', 'T', 'S'};
constexpr char kMaskMagic[4] = {'T', 'K', 'M', 'S'};

void append_magic(std::vector<std::uint8_t>& out, const char (&magic)[4]) {
    for (char c : magic) out.push_back(std::uint8_t(c));
}

void expect_magic(detail::ByteReader& r, const char (&magic)[4], const std::string& what) {
    auto m = r.take(4);
    if (!std::equal(m.begin(), m.end(), magic, magic + 4, [](std::uint8_t a, char b) { return a == std::uint8_t(b); })) {
        throw FormatError(what + ": bad magic");
    }
}

template <typename M>
void append_floats(std::vector<std::uint8_t>& out, const M& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) detail::append_le_f32(out, m.data()[k]);
}

template <typename M>
void read_floats(detail::ByteReader& r, M& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.le_f32();
}

// Splits text into lines, dropping a trailing '\r'.
std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (nl == std::string_view::npos) break;
        text.remove_prefix(nl + 1);
    }
    return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    for (;;) {
        auto comma = line.find(',');
        out.push_back(line.substr(0, comma));
        if (comma == std::string_view::npos) break;
        line.remove_prefix(comma + 1);
    }
    return out;
}

template <typename Int>
Int parse_int(std::string_view text) {
    Int v{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw FormatError("bad integer '" + std::string(text) + "'");
    }
    return v;
}

} // namespace

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Params& params) {
    params.dims.validate();
    std::vector<std::uint8_t> out;
    append_magic(out, kCheckpointMagic);
    detail::append_le_u32(out, kCheckpointVersion);
    detail::append_le_u32(out, std::uint32_t(params.dims.num_layers()));
    for (auto s : params.dims.sizes) detail::append_le_u32(out, std::uint32_t(s));
    for (std::size_t l = 1; l <= params.dims.num_layers(); ++l) {
        const auto& lp = params.layer(l);
        append_floats(out, lp.weights);
        append_floats(out, lp.bias);
        if (l <= params.dims.num_hidden()) {
            append_floats(out, lp.gamma);
            append_floats(out, lp.beta);
            append_floats(out, lp.running_mean);
            append_floats(out, lp.running_var);
        }
    }
    return out;
}

Params decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    expect_magic(r, kCheckpointMagic, "checkpoint");
    const auto version = r.le_u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto n_layers = r.le_u32();
    if (n_layers < 2 || n_layers > 1024) throw FormatError("checkpoint: bad layer count");
    Params p;
    for (std::uint32_t k = 0; k <= n_layers; ++k) p.dims.sizes.push_back(r.le_u32());
    try {
        p.dims.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    // Check the payload size before allocating anything.
    std::size_t floats = 0;
    for (std::size_t l = 1; l <= p.dims.num_layers(); ++l) {
        const std::size_t n_in = p.dims.sizes[l - 1];
        const std::size_t n_out = p.dims.sizes[l];
        floats += n_in * n_out + n_out + (l <= p.dims.num_hidden() ? 4 * n_out : 0);
    }
    if (r.remaining() != 4 * floats) {
        throw FormatError(r.remaining() < 4 * floats ? "checkpoint: truncated file" : "checkpoint: trailing bytes");
    }
    for (std::size_t l = 1; l <= p.dims.num_layers(); ++l) {
        const auto n_in = Eigen::Index(p.dims.sizes[l - 1]);
        const auto n_out = Eigen::Index(p.dims.sizes[l]);
        LayerParams<float> lp;
        lp.weights.resize(n_in, n_out);
        lp.bias.resize(n_out);
        read_floats(r, lp.weights);
        read_floats(r, lp.bias);
        if (l <= p.dims.num_hidden()) {
            lp.gamma.resize(n_out);
            lp.beta.resize(n_out);
            lp.running_mean.resize(n_out);
            lp.running_var.resize(n_out);
            read_floats(r, lp.gamma);
            read_floats(r, lp.beta);
            read_floats(r, lp.running_mean);
            read_floats(r, lp.running_var);
        }
        p.layers.push_back(std::move(lp));
    }
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const Params& params) {
    detail::write_file(path, encode_checkpoint(params));
}

Params load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(detail::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_masks(const MaskSet& masks) {
    std::vector<std::uint8_t> out;
    append_magic(out, kMaskMagic);
    detail::append_le_u32(out, kMaskFileVersion);
    detail::append_le_u32(out, std::uint32_t(masks.num_layers()));
    for (const auto& m : masks.layers) {
        detail::append_le_u32(out, std::uint32_t(m.rows()));
        detail::append_le_u32(out, std::uint32_t(m.cols()));
        std::uint64_t pop = 0;
        for (Eigen::Index k = 0; k < m.size(); ++k) pop += m.data()[k] != 0;
        detail::append_le_u64(out, pop);
    }
    for (const auto& m : masks.layers) {
        const std::size_t start = out.size();
        out.resize(start + (std::size_t(m.size()) + 7) / 8, 0);
        for (Eigen::Index k = 0; k < m.size(); ++k) {
            if (m.data()[k]) out[start + std::size_t(k) / 8] |= std::uint8_t(1u << (k % 8));
        }
    }
    return out;
}

MaskSet decode_masks(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "mask file");
    expect_magic(r, kMaskMagic, "mask file");
    const auto version = r.le_u32();
    if (version != kMaskFileVersion) throw FormatError("mask file: unsupported version " + std::to_string(version));
    const auto n_layers = r.le_u32();
    if (n_layers > 1024) throw FormatError("mask file: bad layer count");
    struct Header {
        std::uint32_t rows, cols;
        std::uint64_t pop;
    };
    std::vector<Header> headers;
    std::size_t payload = 0;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        Header h{r.le_u32(), r.le_u32(), 0};
        h.pop = r.le_u64();
        payload += (std::size_t(h.rows) * h.cols + 7) / 8;
        headers.push_back(h);
    }
    if (r.remaining() != payload) {
        throw FormatError(r.remaining() < payload ? "mask file: truncated file" : "mask file: trailing bytes");
    }
    MaskSet masks;
    for (std::size_t l = 0; l < headers.size(); ++l) {
        const auto& h = headers[l];
        MaskMatrix m(Eigen::Index(h.rows), Eigen::Index(h.cols));
        const auto bits = r.take((std::size_t(m.size()) + 7) / 8);
        std::uint64_t pop = 0;
        for (Eigen::Index k = 0; k < m.size(); ++k) {
            m.data()[k] = std::uint8_t((bits[std::size_t(k) / 8] >> (k % 8)) & 1u);
            pop += m.data()[k];
        }
        if (pop != h.pop) {
            throw FormatError("mask file: layer " + std::to_string(l + 1) + " has " + std::to_string(pop) +
                              " surviving weights, header records " + std::to_string(h.pop));
        }
        masks.layers.push_back(std::move(m));
    }
    return masks;
}

void save_masks(const std::filesystem::path& path, const MaskSet& masks) {
    detail::write_file(path, encode_masks(masks));
}

MaskSet load_masks(const std::filesystem::path& path) {
    try {
        return decode_masks(detail::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_netpbm(std::span<const std::uint8_t> samples, const ImageGeometry& geom) {
    geom.validate();
    if (samples.size() != geom.input_size()) {
        throw std::invalid_argument("image has " + std::to_string(samples.size()) + " samples, geometry needs " +
                                    std::to_string(geom.input_size()));
    }
    const std::string header = std::string(geom.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(geom.width) +
                               " " + std::to_string(geom.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const std::size_t plane = geom.plane_size();
    for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < geom.channels; ++c) out.push_back(samples[c * plane + p]);
    }
    return out;
}

std::vector<std::uint8_t> mask_image_bytes(std::span<const std::uint8_t> row, const ImageGeometry& geom) {
    std::vector<std::uint8_t> samples(row.size());
    std::transform(row.begin(), row.end(), samples.begin(), [](std::uint8_t m) { return m ? 255 : 0; });
    return encode_netpbm(samples, geom);
}

std::vector<std::uint8_t> weighted_mask_image_bytes(std::span<const float> weights,
                                                    std::span<const std::uint8_t> row,
                                                    const ImageGeometry& geom) {
    if (weights.size() != row.size()) throw std::invalid_argument("weights and mask rows differ in length");
    double lo = INFINITY;
    double hi = -INFINITY;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (!row[i]) continue;
        lo = std::min(lo, double(weights[i]));
        hi = std::max(hi, double(weights[i]));
    }
    std::vector<std::uint8_t> samples(row.size(), 128);
    if (lo < hi) {
        auto to_byte = [&](double v) {
            return std::uint8_t(std::clamp(std::lround(255.0 * (v - lo) / (hi - lo)), 0L, 255L));
        };
        const std::uint8_t zero = to_byte(0.0);
        for (std::size_t i = 0; i < row.size(); ++i) samples[i] = row[i] ? to_byte(weights[i]) : zero;
    }
    return encode_netpbm(samples, geom);
}

void export_mask_image(std::span<const std::uint8_t> row, const ImageGeometry& geom,
                       const std::filesystem::path& path) {
    detail::write_file(path, mask_image_bytes(row, geom));
}

void export_weighted_mask_image(std::span<const float> weights, std::span<const std::uint8_t> row,
                                const ImageGeometry& geom, const std::filesystem::path& path) {
    detail::write_file(path, weighted_mask_image_bytes(weights, row, geom));
}

std::vector<std::uint8_t> locality_image_bytes(const LocalityMap& map) {
    const std::int64_t top = map.grid.empty() ? 0 : *std::max_element(map.grid.begin(), map.grid.end());
    std::vector<std::uint8_t> samples(map.grid.size(), 0);
    if (top > 0) {
        for (std::size_t k = 0; k < samples.size(); ++k) {
            samples[k] = std::uint8_t(std::lround(255.0 * double(std::max<std::int64_t>(map.grid[k], 0)) / double(top)));
        }
    }
    return encode_netpbm(samples, ImageGeometry{map.grid_width(), map.grid_height(), 1});
}

void export_locality_image(const LocalityMap& map, const std::filesystem::path& path) {
    detail::write_file(path, locality_image_bytes(map));
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
    return std::string(buf, ptr);
}

double parse_number(std::string_view text) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw FormatError("bad number '" + std::string(text) + "'");
    }
    return v;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    detail::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

std::string locality_csv(const LocalityMap& map) {
    std::ostringstream out;
    out << "# layout: " << kPixelLayout << "\n";
    out << "# width=" << map.width << " height=" << map.height
        << " channels=" << (map.mode == ChannelMode::same ? "same" : "different") << " layer=" << map.layer << "\n";
    out << "dx,dy,count\n";
    const long w = long(map.width);
    const long h = long(map.height);
    for (long dy = -(h - 1); dy <= h - 1; ++dy) {
        for (long dx = -(w - 1); dx <= w - 1; ++dx) out << dx << ',' << dy << ',' << map.at(dx, dy) << '\n';
    }
    return out.str();
}

LocalityMap parse_locality_csv(std::string_view text) {
    const auto lines = split_lines(text);
    std::optional<std::size_t> width, height, layer;
    std::optional<ChannelMode> mode;
    std::size_t k = 0;
    for (; k < lines.size() && !lines[k].empty() && lines[k].front() == '#'; ++k) {
        std::istringstream words{std::string(lines[k].substr(1))};
        std::string word;
        while (words >> word) {
            const auto eq = word.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = word.substr(0, eq);
            const std::string value = word.substr(eq + 1);
            if (key == "width") width = parse_int<std::size_t>(value);
            else if (key == "height") height = parse_int<std::size_t>(value);
            else if (key == "layer") layer = parse_int<std::size_t>(value);
            else if (key == "channels") {
                if (value == "same") mode = ChannelMode::same;
                else if (value == "different") mode = ChannelMode::different;
                else throw FormatError("locality csv: bad channel mode '" + value + "'");
            }
        }
    }
    if (!width || !height || !mode || !layer) throw FormatError("locality csv: missing geometry comment");
    if (k >= lines.size() || lines[k] != "dx,dy,count") throw FormatError("locality csv: missing header");
    ++k;
    LocalityMap map = make_locality_map(ImageGeometry{*width, *height, 1}, *mode, *layer);
    std::vector<std::uint8_t> seen(map.grid.size(), 0);
    for (; k < lines.size(); ++k) {
        if (lines[k].empty()) continue;
        const auto f = split_fields(lines[k]);
        if (f.size() != 3) throw FormatError("locality csv: expected 3 fields");
        const long dx = parse_int<long>(f[0]);
        const long dy = parse_int<long>(f[1]);
        if (std::labs(dx) >= long(*width) || std::labs(dy) >= long(*height)) {
            throw FormatError("locality csv: displacement out of range");
        }
        const std::size_t cell = std::size_t(dy + long(*height) - 1) * map.grid_width() + std::size_t(dx + long(*width) - 1);
        if (seen[cell]++) throw FormatError("locality csv: duplicate displacement");
        map.grid[cell] = parse_int<std::int64_t>(f[2]);
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw FormatError("locality csv: missing displacements");
    return map;
}

void export_locality_csv(const LocalityMap& map, const std::filesystem::path& path) {
    write_text(path, locality_csv(map));
}

LocalityMap load_locality_csv(const std::filesystem::path& path) {
    return parse_locality_csv(read_text(path));
}

std::vector<CurveRow> curve_rows(const ImpRun& run) {
    std::vector<CurveRow> rows;
    for (const auto& it : run.iterations) rows.push_back({it.n, it.density.global, it.best_val});
    return rows;
}

std::string curves_csv(std::span<const CurveRow> rows) {
    std::string out = "iteration,u,best_val\n";
    for (const auto& r : rows) {
        out += std::to_string(r.iteration) + ',' + format_number(r.u) + ',' +
               (r.best_val ? format_number(*r.best_val) : std::string()) + '\n';
    }
    return out;
}

std::vector<CurveRow> parse_curves_csv(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines[0] != "iteration,u,best_val") throw FormatError("curves csv: bad header");
    std::vector<CurveRow> rows;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        if (lines[k].empty()) continue;
        const auto f = split_fields(lines[k]);
        if (f.size() != 3) throw FormatError("curves csv: expected 3 fields");
        CurveRow r{parse_int<std::size_t>(f[0]), parse_number(f[1]), std::nullopt};
        if (!f[2].empty()) r.best_val = parse_number(f[2]);
        rows.push_back(r);
    }
    return rows;
}

void export_curves_csv(std::span<const CurveRow> rows, const std::filesystem::path& path) {
    write_text(path, curves_csv(rows));
}

void export_curves_csv(const ImpRun& run, const std::filesystem::path& path) {
    export_curves_csv(curve_rows(run), path);
}

std::string records_csv(std::span<const TrainRecord> records) {
    std::string out = "step,train_loss,val_accuracy\n";
    for (const auto& r : records) {
        out += std::to_string(r.step) + ',' + format_number(r.train_loss) + ',' + format_number(r.val_accuracy) + '\n';
    }
    return out;
}

std::vector<TrainRecord> parse_records_csv(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines[0] != "step,train_loss,val_accuracy") throw FormatError("records csv: bad header");
    std::vector<TrainRecord> out;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        if (lines[k].empty()) continue;
        const auto f = split_fields(lines[k]);
        if (f.size() != 3) throw FormatError("records csv: expected 3 fields");
        out.push_back({parse_int<std::size_t>(f[0]), parse_number(f[1]), parse_number(f[2])});
    }
    return out;
}

void export_records_csv(std::span<const TrainRecord> records, const std::filesystem::path& path) {
    write_text(path, records_csv(records));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

nlohmann::json RunManifest::to_json() const {
    using nlohmann::json;
    json its = json::array();
    for (const auto& it : iterations) {
        its.push_back({{"n", it.n},
                       {"u", it.u},
                       {"layer_u", it.layer_u},
                       {"best_val", it.best_val ? json(*it.best_val) : json(nullptr)},
                       {"masks", it.masks_file},
                       {"params", it.params_file},
                       {"records", it.records_file}});
    }
    json cps = json::array();
    for (const auto& c : checkpoints) cps.push_back({{"step", c.step}, {"file", c.file}});
    return {{"format_version", version}, {"kind", kind},          {"pixel_layout", pixel_layout},
            {"config", config},          {"dims", dims.sizes},
            {"geometry", {{"width", geometry.width}, {"height", geometry.height}, {"channels", geometry.channels}}},    {"checkpoints", cps},
            {"iterations", its},         {"curves", curves_file}, {"complete", complete}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.version = j.at("format_version").get<std::uint32_t>();
        if (m.version != kManifestVersion) throw FormatError("manifest: unsupported version " + std::to_string(m.version));
        m.kind = j.at("kind").get<std::string>();
        m.pixel_layout = j.at("pixel_layout").get<std::string>();
        m.config = j.at("config");
        m.dims.sizes = j.at("dims").get<std::vector<std::size_t>>();
        const auto& g = j.at("geometry");
        m.geometry = {g.at("width").get<std::size_t>(), g.at("height").get<std::size_t>(),
                      g.at("channels").get<std::size_t>()};
        for (const auto& c : j.at("checkpoints")) {
            m.checkpoints.push_back({c.at("step").get<std::size_t>(), c.at("file").get<std::string>()});
        }
        for (const auto& it : j.at("iterations")) {
            ManifestIteration mi;
            mi.n = it.at("n").get<std::size_t>();
            mi.u = it.at("u").get<double>();
            mi.layer_u = it.at("layer_u").get<std::vector<double>>();
            if (!it.at("best_val").is_null()) mi.best_val = it.at("best_val").get<double>();
            mi.masks_file = it.at("masks").get<std::string>();
            mi.params_file = it.at("params").get<std::string>();
            mi.records_file = it.at("records").get<std::string>();
            m.iterations.push_back(std::move(mi));
        }
        m.curves_file = j.at("curves").get<std::string>();
        m.complete = j.at("complete").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    if (m.pixel_layout != kPixelLayout) throw FormatError("manifest: unknown pixel layout '" + m.pixel_layout + "'");
    return m;
}

void RunManifest::check_files(const std::filesystem::path& run_dir) const {
    auto check = [&](const std::string& f) {
        if (f.empty()) return;
        const std::filesystem::path rel(f);
        if (rel.is_absolute() || f.find("..") != std::string::npos) {
            throw FormatError("manifest: file '" + f + "' escapes the run directory");
        }
        if (!std::filesystem::is_regular_file(run_dir / rel)) throw FormatError("manifest: missing file '" + f + "'");
    };
    for (const auto& c : checkpoints) check(c.file);
    for (const auto& it : iterations) {
        check(it.masks_file);
        check(it.params_file);
        check(it.records_file);
    }
    check(curves_file);
}

const ManifestIteration& RunManifest::iteration(std::size_t n) const {
    for (const auto& it : iterations) {
        if (it.n == n) return it;
    }
    throw std::out_of_range("run has no iteration " + std::to_string(n) + " (recorded: 0.." +
                            (iterations.empty() ? std::string("none") : std::to_string(iterations.back().n)) + ")");
}

void save_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest) {
    const auto tmp = run_dir / (std::string(kManifestName) + ".tmp");
    write_text(tmp, manifest.to_json().dump(2) + "\n");
    std::filesystem::rename(tmp, run_dir / kManifestName);
}

RunManifest load_manifest(const std::filesystem::path& run_dir) {
    const auto path = run_dir / kManifestName;
    if (!std::filesystem::exists(path)) throw std::runtime_error(path.string() + ": no manifest (not a run directory)");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return RunManifest::from_json(j);
}

} // namespace tickets
