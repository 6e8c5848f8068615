#include "tickets/observables.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tickets {

std::vector<HistogramBin> histogram(std::span<const std::size_t> values, std::size_t bin_width) {
    if (bin_width == 0) throw std::invalid_argument("bin width must be >= 1");
    std::size_t hi = 0;
    for (auto v : values) hi = std::max(hi, v);
    const std::size_t n_bins = hi / bin_width + 1;
    std::vector<HistogramBin> bins(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) bins[b] = {0, b * bin_width, (b + 1) * bin_width};
    for (auto v : values) ++bins[v / bin_width].count;
    return bins;
}

std::vector<std::size_t> column_sums(const MaskMatrix& m) {
    std::vector<std::size_t> out(std::size_t(m.cols()), 0);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const std::uint8_t* row = m.row(i).data();
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[std::size_t(j)] += row[j];
    }
    return out;
}

std::vector<std::size_t> row_sums(const MaskMatrix& m) {
    std::vector<std::size_t> out(std::size_t(m.rows()), 0);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const std::uint8_t* row = m.row(i).data();
        out[std::size_t(i)] = std::accumulate(row, row + m.cols(), std::size_t{0});
    }
    return out;
}

ConnectivityHistogram connectivity(const MaskSet& masks, std::size_t layer, Direction direction,
                                   std::size_t bin_width) {
    ConnectivityHistogram h;
    h.layer = layer;
    h.direction = direction;
    if (direction == Direction::in) {
        if (layer < 1 || layer > masks.num_layers()) {
            throw std::out_of_range("C^in needs a masked layer in [1, " + std::to_string(masks.num_layers()) + "]");
        }
        h.values = column_sums(masks.layer(layer));
    } else {
        if (layer + 1 > masks.num_layers()) {
            throw std::out_of_range("C^out of layer " + std::to_string(layer) + " needs masked layer " +
                                    std::to_string(layer + 1));
        }
        h.values = row_sums(masks.layer(layer + 1));
    }
    h.bins = histogram(h.values, bin_width);
    return h;
}

// ---------------------------------------------------------------------------
// Locality maps
// ---------------------------------------------------------------------------

std::int64_t LocalityMap::at(long dx, long dy) const {
    return grid.at(std::size_t(dy + long(height) - 1) * grid_width() + std::size_t(dx + long(width) - 1));
}

std::int64_t& LocalityMap::at(long dx, long dy) {
    return grid.at(std::size_t(dy + long(height) - 1) * grid_width() + std::size_t(dx + long(width) - 1));
}

std::int64_t LocalityMap::total() const {
    return std::accumulate(grid.begin(), grid.end(), std::int64_t{0});
}

LocalityMap make_locality_map(const ImageGeometry& geom, ChannelMode mode, std::size_t layer) {
    geom.validate();
    LocalityMap map;
    map.width = geom.width;
    map.height = geom.height;
    map.mode = mode;
    map.layer = layer;
    map.grid.assign(map.grid_width() * map.grid_height(), 0);
    return map;
}

namespace {

struct Point {
    long x;
    long y;
};

// Surviving pixels of one node, split by channel.
using NodePixels = std::vector<std::vector<Point>>;

void check_mask_geometry(const MaskMatrix& mask, const ImageGeometry& geom) {
    geom.validate();
    if (std::size_t(mask.rows()) != geom.input_size()) {
        throw std::invalid_argument("mask has " + std::to_string(mask.rows()) + " input rows, geometry has " +
                                    std::to_string(geom.input_size()) + " inputs");
    }
}

std::vector<NodePixels> pixels_by_node(const MaskMatrix& mask, const ImageGeometry& geom) {
    std::vector<NodePixels> nodes(std::size_t(mask.cols()), NodePixels(geom.channels));
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
        const auto pc = pixel_coord(std::size_t(i), geom);
        const std::uint8_t* row = mask.row(i).data();
        for (Eigen::Index j = 0; j < mask.cols(); ++j) {
            if (row[j]) nodes[std::size_t(j)][pc.c].push_back({long(pc.x), long(pc.y)});
        }
    }
    return nodes;
}

void accumulate_node(const NodePixels& px, LocalityMap& map) {
    const long gw = long(map.grid_width());
    const long ox = long(map.width) - 1;
    const long oy = long(map.height) - 1;
    auto* grid = map.grid.data();
    auto pairs = [&](const std::vector<Point>& a, const std::vector<Point>& b, bool skip_self) {
        for (std::size_t p = 0; p < a.size(); ++p) {
            for (std::size_t q = 0; q < b.size(); ++q) {
                if (skip_self && p == q) continue;
                ++grid[(b[q].y - a[p].y + oy) * gw + (b[q].x - a[p].x + ox)];
            }
        }
    };
    for (std::size_t c = 0; c < px.size(); ++c) {
        if (map.mode == ChannelMode::same) {
            pairs(px[c], px[c], true);
        } else {
            for (std::size_t c2 = 0; c2 < px.size(); ++c2) {
                if (c2 != c) pairs(px[c], px[c2], false);
            }
        }
    }
}

} // namespace

LocalityMap locality_map(const MaskMatrix& mask, const ImageGeometry& geom, ChannelMode mode, std::size_t layer) {
    check_mask_geometry(mask, geom);
    LocalityMap map = make_locality_map(geom, mode, layer);
    for (const auto& node : pixels_by_node(mask, geom)) accumulate_node(node, map);
    return map;
}

std::vector<LocalityMap> locality_map_binned(const MaskMatrix& mask, const ImageGeometry& geom,
                                             ChannelMode mode, std::span<const std::size_t> edges,
                                             std::size_t layer) {
    check_mask_geometry(mask, geom);
    if (!std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
        throw std::invalid_argument("bin edges must be strictly ascending");
    }
    std::vector<LocalityMap> maps(edges.size(), make_locality_map(geom, mode, layer));
    const auto c_in = column_sums(mask);
    const auto nodes = pixels_by_node(mask, geom);
    for (std::size_t j = 0; j < nodes.size(); ++j) {
        auto it = std::upper_bound(edges.begin(), edges.end(), c_in[j]);
        if (it == edges.begin()) continue;   // below the first edge
        accumulate_node(nodes[j], maps[std::size_t(it - edges.begin()) - 1]);
    }
    return maps;
}

// ---------------------------------------------------------------------------
// Effective masks
// ---------------------------------------------------------------------------

MaskMatrix effective_masks(std::span<const MaskMatrix> chain) {
    if (chain.empty()) throw std::invalid_argument("effective mask chain is empty");
    for (std::size_t k = 1; k < chain.size(); ++k) {
        if (chain[k - 1].cols() != chain[k].rows()) {
            throw std::invalid_argument("mask chain shapes do not compose at link " + std::to_string(k));
        }
    }
    const std::size_t n_in = std::size_t(chain[0].rows());
    const std::size_t words = (n_in + 63) / 64;

    // Footprint of every node of the current layer as a bitset over inputs.
    std::vector<std::vector<std::uint64_t>> reach(std::size_t(chain[0].cols()), std::vector<std::uint64_t>(words, 0));
    for (Eigen::Index i = 0; i < chain[0].rows(); ++i) {
        for (Eigen::Index j = 0; j < chain[0].cols(); ++j) {
            if (chain[0](i, j)) reach[std::size_t(j)][std::size_t(i) / 64] |= std::uint64_t{1} << (i % 64);
        }
    }
    for (std::size_t k = 1; k < chain.size(); ++k) {
        const auto& m = chain[k];
        std::vector<std::vector<std::uint64_t>> next(std::size_t(m.cols()), std::vector<std::uint64_t>(words, 0));
        for (Eigen::Index a = 0; a < m.rows(); ++a) {
            const auto& src = reach[std::size_t(a)];
            for (Eigen::Index b = 0; b < m.cols(); ++b) {
                if (!m(a, b)) continue;
                auto& dst = next[std::size_t(b)];
                for (std::size_t w = 0; w < words; ++w) dst[w] |= src[w];
            }
        }
        reach = std::move(next);
    }

    MaskMatrix mu = MaskMatrix::Zero(Eigen::Index(n_in), Eigen::Index(reach.size()));
    for (std::size_t j = 0; j < reach.size(); ++j) {
        for (std::size_t i = 0; i < n_in; ++i) {
            mu(Eigen::Index(i), Eigen::Index(j)) = std::uint8_t((reach[j][i / 64] >> (i % 64)) & 1u);
        }
    }
    return mu;
}

MaskMatrix effective_masks(const MaskSet& masks, std::size_t layer) {
    if (layer < 1 || layer > masks.num_layers()) throw std::out_of_range("effective mask layer out of range");
    return effective_masks(std::span<const MaskMatrix>(masks.layers.data(), layer));
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

std::vector<std::size_t> ablation_ranking(const MaskSet& masks, std::size_t layer, AblationOrder order) {
    if (layer < 1 || layer > masks.num_layers()) throw std::out_of_range("ablation layer out of range");
    const auto c_in = column_sums(masks.layer(layer));
    std::vector<std::size_t> rank(c_in.size());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        return order == AblationOrder::ascending ? c_in[a] < c_in[b] : c_in[a] > c_in[b];
    });
    return rank;
}

std::vector<AblationPoint> ablation_curve(const Params& params, const MaskSet& masks, const ImageDataset& ds,
                                          AblationOrder order, std::span<const std::size_t> counts,
                                          std::size_t layer) {
    const auto rank = ablation_ranking(masks, layer, order);
    std::vector<AblationPoint> out;
    out.reserve(counts.size());
    for (auto count : counts) {
        if (count > rank.size()) {
            throw std::out_of_range("cannot ablate " + std::to_string(count) + " of " + std::to_string(rank.size()) +
                                    " nodes");
        }
        const auto ablated = ablate_nodes(masks, layer, std::span<const std::size_t>(rank.data(), count));
        out.push_back({count, accuracy(params, ablated, ds)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binomial reference and goodness of fit
// ---------------------------------------------------------------------------

std::vector<double> binomial_reference(std::size_t n, double u, std::size_t k_max) {
    if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("u must be in [0, 1]");
    std::vector<double> pmf(k_max + 1, 0.0);
    if (u == 0.0 || u == 1.0) {
        const std::size_t k = u == 0.0 ? 0 : n;
        if (k <= k_max) pmf[k] = 1.0;
        return pmf;
    }
    const double lu = std::log(u);
    const double l1u = std::log1p(-u);
    const double ln_n = std::lgamma(double(n) + 1.0);
    for (std::size_t k = 0; k <= std::min(k_max, n); ++k) {
        const double log_p = ln_n - std::lgamma(double(k) + 1.0) - std::lgamma(double(n - k) + 1.0) +
                             double(k) * lu + double(n - k) * l1u;
        pmf[k] = std::exp(log_p);
    }
    return pmf;
}

ChiSquareResult chi_square_gof(std::span<const std::size_t> samples, std::span<const double> pmf,
                               double min_expected) {
    if (samples.empty() || pmf.empty()) throw std::invalid_argument("chi-square needs samples and a pmf");
    const double total = double(samples.size());
    const std::size_t K = pmf.size();

    std::vector<double> observed(K, 0.0);
    for (auto s : samples) observed[std::min(s, K - 1)] += 1.0;
    std::vector<double> expected(K);
    double mass = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        expected[k] = total * pmf[k];
        mass += pmf[k];
    }
    // Mass beyond the pmf's range joins the last category, as do samples there.
    expected[K - 1] += total * std::max(0.0, 1.0 - mass);

    std::vector<std::pair<double, double>> cells;   // (observed, expected)
    double obs_acc = 0.0;
    double exp_acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        obs_acc += observed[k];
        exp_acc += expected[k];
        if (exp_acc >= min_expected) {
            cells.emplace_back(obs_acc, exp_acc);
            obs_acc = exp_acc = 0.0;
        }
    }
    if (exp_acc > 0.0 || obs_acc > 0.0) {
        if (cells.empty()) {
            cells.emplace_back(obs_acc, exp_acc);
        } else {
            cells.back().first += obs_acc;
            cells.back().second += exp_acc;
        }
    }

    ChiSquareResult r;
    for (const auto& [o, e] : cells) {
        if (e > 0.0) r.statistic += (o - e) * (o - e) / e;
    }
    r.dof = cells.size() > 1 ? cells.size() - 1 : 0;
    r.p_value = r.dof == 0 ? 1.0 : boost::math::gamma_q(double(r.dof) / 2.0, r.statistic / 2.0);
    return r;
}

// ---------------------------------------------------------------------------
// Top activations, regions
// ---------------------------------------------------------------------------

std::vector<std::size_t> top_activations(const Params& params, const MaskSet& masks, const ImageDataset& ds,
                                         std::size_t layer, std::size_t node, std::size_t k) {
    if (layer < 1 || layer > params.dims.num_hidden()) throw std::out_of_range("not a hidden layer");
    if (node >= params.dims.sizes[layer]) throw std::out_of_range("node index out of range");
    if (k > ds.size()) throw std::out_of_range("k exceeds the dataset size");
    const auto act = hidden_activations(params, masks, ds, layer);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto col = act.col(Eigen::Index(node));
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return col(Eigen::Index(a)) > col(Eigen::Index(b)); });
    idx.resize(k);
    return idx;
}

double region_fraction(const MaskMatrix& mask, const ImageGeometry& geom, const Rectangle& region) {
    check_mask_geometry(mask, geom);
    const auto per_input = row_sums(mask);
    std::size_t inside = 0;
    std::size_t all = 0;
    for (std::size_t i = 0; i < per_input.size(); ++i) {
        const auto pc = pixel_coord(i, geom);
        all += per_input[i];
        if (region.contains(pc.x, pc.y)) inside += per_input[i];
    }
    return all == 0 ? 0.0 : double(inside) / double(all);
}

} // namespace tickets
