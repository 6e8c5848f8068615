#pragma once

#include "tickets/datasets.hpp"
#include "tickets/network.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tickets {

enum class Direction { in, out };

struct HistogramBin {
    std::size_t count = 0;
    std::size_t lower = 0;   // inclusive
    std::size_t upper = 0;   // exclusive
};

struct ConnectivityHistogram {
    std::vector<std::size_t> values;   // one per node
    std::vector<HistogramBin> bins;
    std::size_t layer = 0;
    Direction direction = Direction::in;
};

// Fixed-width bins [k * width, (k + 1) * width) covering 0..max(values).
std::vector<HistogramBin> histogram(std::span<const std::size_t> values, std::size_t bin_width);

// in:  C^{in,l}_j  = sum_i m^l_ij   for the nodes of layer l (l >= 1).
// out: C^{out,l}_j = sum_i m^{l+1}_ji for the nodes of layer l (l >= 0), so
//      layer 0 gives the per-pixel connectivity of the input.
ConnectivityHistogram connectivity(const MaskSet& masks, std::size_t layer, Direction direction,
                                   std::size_t bin_width = 1);

// Column sums / row sums of a single binary matrix.
std::vector<std::size_t> column_sums(const MaskMatrix& m);
std::vector<std::size_t> row_sums(const MaskMatrix& m);

enum class ChannelMode { same, different };

// S(d): for every node and every ordered pair of distinct surviving inputs
// (i, i') of that node, one count at d = (x' - x, y' - y). `same` keeps pairs
// within one channel (so d = 0 never occurs); `different` keeps pairs across
// distinct channels (d = 0 allowed).
struct LocalityMap {
    std::size_t width = 0;    // image width W; grid is (2W-1) x (2H-1)
    std::size_t height = 0;
    ChannelMode mode = ChannelMode::same;
    std::size_t layer = 1;
    std::vector<std::int64_t> grid;   // row-major, row = dy + H - 1, column = dx + W - 1

    std::size_t grid_width() const { return 2 * width - 1; }
    std::size_t grid_height() const { return 2 * height - 1; }
    std::int64_t at(long dx, long dy) const;
    std::int64_t& at(long dx, long dy);
    std::int64_t total() const;

    bool operator==(const LocalityMap&) const = default;
};

LocalityMap make_locality_map(const ImageGeometry& geom, ChannelMode mode, std::size_t layer = 1);

// `mask` has one row per input (canonical layout) and one column per node:
// a layer-1 mask or an effective mask.
LocalityMap locality_map(const MaskMatrix& mask, const ImageGeometry& geom, ChannelMode mode,
                         std::size_t layer = 1);

// Restricted to the nodes whose column sum lies in [edges[k], edges[k+1]);
// the last bin is unbounded above.
std::vector<LocalityMap> locality_map_binned(const MaskMatrix& mask, const ImageGeometry& geom,
                                             ChannelMode mode, std::span<const std::size_t> edges,
                                             std::size_t layer = 1);

// mu = θ(m^1 m^2 ... m^k - 1/2): input i reaches node j through at least one
// path of surviving weights.
MaskMatrix effective_masks(std::span<const MaskMatrix> chain);

// The chain m^1..m^layer of a mask set composed into input footprints.
MaskMatrix effective_masks(const MaskSet& masks, std::size_t layer);

enum class AblationOrder { ascending, descending };

struct AblationPoint {
    std::size_t removed = 0;
    double accuracy = 0.0;
};

// Nodes of `layer` ranked by C^in (ties by node index). For each count, the
// first `count` ranked nodes are ablated and the network is evaluated with no
// further training.
std::vector<AblationPoint> ablation_curve(const Params& params, const MaskSet& masks,
                                          const ImageDataset& ds, AblationOrder order,
                                          std::span<const std::size_t> counts, std::size_t layer = 1);

std::vector<std::size_t> ablation_ranking(const MaskSet& masks, std::size_t layer, AblationOrder order);

// Binomial(n, u) pmf for k = 0..k_max, evaluated in log space.
std::vector<double> binomial_reference(std::size_t n, double u, std::size_t k_max);

struct ChiSquareResult {
    double statistic = 0.0;
    std::size_t dof = 0;
    double p_value = 1.0;
};

// Pearson goodness-of-fit of integer samples against a pmf over 0..pmf.size()-1.
// Adjacent categories are pooled from both tails until every expected count is
// at least `min_expected`; probability outside the pmf's support joins the
// upper tail.
ChiSquareResult chi_square_gof(std::span<const std::size_t> samples, std::span<const double> pmf,
                               double min_expected = 5.0);

// The k dataset indices with the largest eval-mode post-ReLU activation of
// one node, descending, ties by dataset index.
std::vector<std::size_t> top_activations(const Params& params, const MaskSet& masks, const ImageDataset& ds,
                                         std::size_t layer, std::size_t node, std::size_t k);

// Fraction of the surviving entries of `mask` whose input pixel lies inside
// `region` (any channel).
double region_fraction(const MaskMatrix& mask, const ImageGeometry& geom, const Rectangle& region);

} // namespace tickets
