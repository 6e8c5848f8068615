#include "tickets/network.hpp"

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace tickets;

namespace {

MaskSet random_masks(const LayerDims& dims, std::uint64_t seed, double keep) {
    std::mt19937_64 rng(seed);
    MaskSet m = MaskSet::full(dims);
    for (auto& layer : m.layers) layer = oracle::random_mask(rng, layer.rows(), layer.cols(), keep);
    return m;
}

Matrix<float> random_batch(long rows, long cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.5f, 0.4f);
    Matrix<float> b(rows, cols);
    for (long k = 0; k < b.size(); ++k) b.data()[k] = n(rng);
    return b;
}

} // namespace

TEST(LayerDims, Validation) {
    EXPECT_NO_THROW((LayerDims{{4, 3, 2}}.validate()));
    EXPECT_THROW((LayerDims{{4, 2}}.validate()), std::invalid_argument);
    EXPECT_THROW((LayerDims{{4, 0, 2}}.validate()), std::invalid_argument);
    EXPECT_EQ((LayerDims{{4, 3, 3, 2}}.num_hidden()), 2u);
}

TEST(InitParams, ShapesAndConstants) {
    const LayerDims dims{{6, 5, 4, 3}};
    const auto p = init_params(dims, 1);
    ASSERT_EQ(p.layers.size(), 3u);
    EXPECT_EQ(p.layer(1).weights.rows(), 6);
    EXPECT_EQ(p.layer(1).weights.cols(), 5);
    for (std::size_t l = 1; l <= 3; ++l) {
        EXPECT_TRUE((p.layer(l).bias.array() == 0.0f).all());
        EXPECT_EQ(p.layer(l).has_batch_norm(), l < 3);
    }
    for (std::size_t l = 1; l <= 2; ++l) {
        EXPECT_TRUE((p.layer(l).gamma.array() == 1.0f).all());
        EXPECT_TRUE((p.layer(l).beta.array() == 0.0f).all());
        EXPECT_TRUE((p.layer(l).running_mean.array() == 0.0f).all());
        EXPECT_TRUE((p.layer(l).running_var.array() == 1.0f).all());
    }
    EXPECT_TRUE(p == init_params(dims, 1));
    EXPECT_FALSE(p == init_params(dims, 2));
}

TEST(InitParams, LayerOneVarianceMatchesFanSum) {
    const LayerDims dims{{3072, 1024, 10}};
    const auto p = init_params(dims, 5);
    const auto& w = p.layer(1).weights;
    const double mean = w.cast<double>().mean();
    const double var = (w.cast<double>().array() - mean).square().sum() / double(w.size() - 1);
    const double expected = 2.0 / 4096.0;
    EXPECT_NEAR(expected, 4.883e-4, 1e-7);
    EXPECT_NEAR(var / expected, 1.0, 0.05);
    EXPECT_NEAR(mean, 0.0, 1e-4);
}

TEST(Forward, AllZeroMaskGivesHeadBias) {
    const LayerDims dims{{5, 4, 3, 2}};
    auto p = init_params(dims, 1);
    p.layer(3).bias << 0.25f, -1.5f;
    MaskSet zero = MaskSet::full(dims);
    for (auto& m : zero.layers) m.setZero();
    const auto batch = random_batch(6, 5, 2);
    for (Mode mode : {Mode::train, Mode::eval}) {
        const auto r = forward(p, zero, batch, mode);
        for (long i = 0; i < 6; ++i) {
            EXPECT_EQ(r.logits(i, 0), 0.25f);
            EXPECT_EQ(r.logits(i, 1), -1.5f);
        }
    }
}

TEST(Forward, MaskedWeightValuesDoNotMatter) {
    const LayerDims dims{{6, 5, 4, 3}};
    auto p = fixture::random_params(dims, 3);
    const auto masks = random_masks(dims, 4, 0.5);
    const auto batch = random_batch(7, 6, 5);
    auto q = p;
    auto zeroed = p;
    for (std::size_t l = 1; l <= masks.num_layers(); ++l) {
        const auto& m = masks.layer(l);
        for (long k = 0; k < m.size(); ++k) {
            if (!m.data()[k]) {
                q.layer(l).weights.data()[k] = 123.0f;
                zeroed.layer(l).weights.data()[k] = 0.0f;
            }
        }
    }
    for (Mode mode : {Mode::train, Mode::eval}) {
        const auto ref = forward(p, masks, batch, mode).logits;
        EXPECT_EQ(ref, forward(q, masks, batch, mode).logits);
        EXPECT_EQ(ref, forward(zeroed, masks, batch, mode).logits);
    }
}

TEST(Forward, TinyNetMatchesScalarArithmetic) {
    const LayerDims dims{{2, 2, 2}};
    Params p = init_params(dims, 0);
    p.layer(1).weights << 0.5f, -1.0f, 2.0f, 0.25f;
    p.layer(1).bias << 0.1f, -0.2f;
    p.layer(1).gamma << 1.5f, 0.8f;
    p.layer(1).beta << 0.3f, -0.1f;
    p.layer(1).running_mean << 0.2f, -0.4f;
    p.layer(1).running_var << 2.0f, 0.5f;
    p.layer(2).weights << 1.0f, -0.5f, 0.75f, 2.0f;
    p.layer(2).bias << 0.05f, -0.05f;
    Matrix<float> batch(2, 2);
    batch << 1.0f, 2.0f, -0.5f, 0.3f;
    const MaskSet full = MaskSet::full(dims);

    const double eps = kBatchNormEpsilon;
    auto hand = [&](bool train) {
        double z[2][2], a[2][2], out[2][2];
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                z[i][j] = double(batch(i, 0)) * p.layer(1).weights(0, j) +
                          double(batch(i, 1)) * p.layer(1).weights(1, j) + p.layer(1).bias[j];
            }
        }
        for (int j = 0; j < 2; ++j) {
            double mu = p.layer(1).running_mean[j], var = p.layer(1).running_var[j];
            if (train) {
                mu = (z[0][j] + z[1][j]) / 2.0;
                var = ((z[0][j] - mu) * (z[0][j] - mu) + (z[1][j] - mu) * (z[1][j] - mu)) / 2.0;
            }
            for (int i = 0; i < 2; ++i) {
                const double y = p.layer(1).gamma[j] * (z[i][j] - mu) / std::sqrt(var + eps) + p.layer(1).beta[j];
                a[i][j] = y > 0.0 ? y : 0.0;
            }
        }
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                out[i][j] = a[i][0] * p.layer(2).weights(0, j) + a[i][1] * p.layer(2).weights(1, j) + p.layer(2).bias[j];
            }
        }
        return std::vector<double>{out[0][0], out[0][1], out[1][0], out[1][1]};
    };
    for (bool train : {true, false}) {
        const auto logits = forward(p, full, batch, train ? Mode::train : Mode::eval).logits;
        const auto ref = hand(train);
        for (int k = 0; k < 4; ++k) EXPECT_NEAR(logits.data()[k], ref[std::size_t(k)], 1e-6) << train << k;
    }
}

TEST(Forward, RejectsBadShapes) {
    const LayerDims dims{{4, 3, 2}};
    const auto p = init_params(dims, 1);
    const auto full = MaskSet::full(dims);
    EXPECT_THROW(forward(p, full, random_batch(3, 5, 1), Mode::eval), std::invalid_argument);
    EXPECT_THROW(forward(p, full, random_batch(1, 4, 1), Mode::train), std::invalid_argument);
    EXPECT_NO_THROW(forward(p, full, random_batch(1, 4, 1), Mode::eval));
    MaskSet wrong = full;
    wrong.layers[0] = MaskMatrix::Ones(3, 3);
    EXPECT_THROW(forward(p, wrong, random_batch(3, 4, 1), Mode::eval), std::invalid_argument);
}

TEST(Forward, TrainModeBatchNormIsStandardized) {
    const LayerDims dims{{10, 8, 3}};
    const auto p = fixture::random_params(dims, 7);
    const auto r = forward(p, MaskSet::full(dims), random_batch(32, 10, 8), Mode::train);
    const auto& xhat = r.cache.hidden[0].normalized;
    const auto var_of = [](const auto& col) {
        const double mean = col.mean();
        return (col.array() - mean).square().mean();
    };
    for (long j = 0; j < xhat.cols(); ++j) {
        EXPECT_LT(std::fabs(xhat.col(j).cast<double>().mean()), 1e-5);
        // eps keeps the variance just under one: v / (v + eps)
        const double v = r.cache.hidden[0].batch_var[j];
        EXPECT_NEAR(var_of(xhat.col(j).cast<double>().eval()), v / (v + 1e-5), 1e-5);
    }
}

TEST(Forward, EvalModeIsDeterministic) {
    const LayerDims dims{{10, 8, 8, 3}};
    const auto p = fixture::random_params(dims, 7);
    const auto masks = random_masks(dims, 2, 0.6);
    const auto batch = random_batch(9, 10, 3);
    EXPECT_EQ(eval_logits(p, masks, batch), eval_logits(p, masks, batch));
    EXPECT_EQ(eval_logits(p, masks, batch), forward(p, masks, batch, Mode::eval).logits);
}

TEST(RunningStats, MomentumAndUnbiasedVariance) {
    const LayerDims dims{{3, 2, 2}};
    auto p = fixture::random_params(dims, 1);
    const auto batch = random_batch(4, 3, 2);
    const auto before = p.layer(1);
    const auto r = forward(p, MaskSet::full(dims), batch, Mode::train);
    update_running_stats(p, r.cache);
    const auto& hc = r.cache.hidden[0];
    const double n = 4.0;
    for (long j = 0; j < 2; ++j) {
        EXPECT_NEAR(p.layer(1).running_mean[j], 0.9 * before.running_mean[j] + 0.1 * hc.batch_mean[j], 1e-6);
        EXPECT_NEAR(p.layer(1).running_var[j], 0.9 * before.running_var[j] + 0.1 * hc.batch_var[j] * n / (n - 1),
                    1e-6);
    }
}

TEST(Softmax, RowsSumToOne) {
    const Matrix<float> logits = random_batch(20, 7, 4) * 10.0f;
    const auto s = softmax(logits);
    for (long i = 0; i < s.rows(); ++i) EXPECT_NEAR(s.row(i).sum(), 1.0f, 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
    const Matrix<double> logits = Matrix<double>::Constant(3, 10, 0.7);
    const std::vector<std::int32_t> labels{0, 4, 9};
    EXPECT_NEAR(cross_entropy(logits, std::span<const std::int32_t>(labels)), std::log(10.0), 1e-12);
    EXPECT_NEAR(std::log(10.0), 2.302585, 1e-6);
    const std::vector<std::int32_t> bad{0, 4, 10};
    EXPECT_THROW(cross_entropy(logits, std::span<const std::int32_t>(bad)), std::invalid_argument);
}

TEST(Gradients, MaskedWeightsGetZero) {
    const LayerDims dims{{6, 5, 4, 3}};
    const auto p = fixture::random_params(dims, 2);
    const auto masks = random_masks(dims, 3, 0.5);
    const std::vector<std::int32_t> labels{0, 1, 2, 0, 1, 2};
    const auto lg = loss_and_grads(p, masks, random_batch(6, 6, 4), std::span<const std::int32_t>(labels));
    for (std::size_t l = 1; l <= masks.num_layers(); ++l) {
        for (long k = 0; k < masks.layer(l).size(); ++k) {
            if (!masks.layer(l).data()[k]) EXPECT_EQ(lg.grads.layer(l).weights.data()[k], 0.0f);
        }
    }
}

TEST(Gradients, MatchFiniteDifferencesOnWidthEightNets) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const LayerDims dims{{5, 8, 8, 3}};
        const auto p = fixture::random_params(dims, seed).cast<double>();
        const auto masks = random_masks(dims, seed + 10, 0.7);
        const auto batch = random_batch(10, 5, seed + 20).cast<double>().eval();
        std::vector<std::int32_t> labels;
        for (int i = 0; i < 10; ++i) labels.push_back(i % 3);
        const auto lg = loss_and_grads(p, masks, batch, std::span<const std::int32_t>(labels));
        const auto fd = oracle::finite_difference(p, masks, batch, labels, 1e-5);
        double worst = 0.0;
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            auto cmp = [&](const auto& a, const auto& b) {
                for (Eigen::Index k = 0; k < a.size(); ++k) {
                    worst = std::max(worst, oracle::relative_error(a.data()[k], b.data()[k]));
                }
            };
            cmp(lg.grads.layers[l].weights, fd.layers[l].weights);
            cmp(lg.grads.layers[l].bias, fd.layers[l].bias);
            cmp(lg.grads.layers[l].gamma, fd.layers[l].gamma);
            cmp(lg.grads.layers[l].beta, fd.layers[l].beta);
        }
        EXPECT_LT(worst, 1e-4) << "seed " << seed;
    }
}

TEST(Accuracy, PerfectAndMajorityPredictors) {
    const LayerDims dims{{4, 3, 3}};
    auto p = init_params(dims, 1);
    auto ds = fixture::random_dataset({2, 2, 1}, 10, 3, 1);
    p.layer(2).weights.setZero();
    p.layer(2).bias << 1.0f, 0.0f, 0.0f;   // always class 0
    ds.labels = {0, 0, 0, 0, 0, 0, 1, 2, 2, 1};
    EXPECT_DOUBLE_EQ(accuracy(p, MaskSet::full(dims), ds), 0.6);
    for (auto& l : ds.labels) l = 0;
    EXPECT_DOUBLE_EQ(accuracy(p, MaskSet::full(dims), ds), 1.0);
    p.layer(2).bias << 1.0f, 1.0f, 0.0f;   // tie: lowest index wins
    EXPECT_DOUBLE_EQ(accuracy(p, MaskSet::full(dims), ds, 3), 1.0);
    EXPECT_THROW(accuracy(p, MaskSet::full(dims), ds.select(std::vector<std::size_t>{})), std::invalid_argument);
}

TEST(Accuracy, UntrainedNetIsAtChance) {
    const LayerDims dims{{16, 32, 1000}};
    const auto p = init_params(dims, 11);
    const auto ds = fixture::random_dataset({4, 4, 1}, 20000, 1000, 12);
    const double acc = accuracy(p, MaskSet::full(dims), ds);
    EXPECT_LT(acc, 3e-3);
}

TEST(Predict, LowestIndexOnTies) {
    Matrix<float> logits(2, 3);
    logits << 1, 1, 0, 0, 2, 2;
    EXPECT_EQ(predict(logits), (std::vector<std::int32_t>{0, 1}));
}

TEST(AblateNodes, ZeroesIncomingColumnsOnly) {
    const LayerDims dims{{6, 5, 4, 3}};
    const auto masks = random_masks(dims, 1, 0.8);
    const std::size_t none[] = {0};
    EXPECT_TRUE(ablate_nodes(masks, 1, std::span<const std::size_t>(none, 0)) == masks);
    const std::size_t nodes[] = {1, 3};
    const auto out = ablate_nodes(masks, 1, nodes);
    EXPECT_TRUE((out.layer(1).col(1).array() == 0).all());
    EXPECT_TRUE((out.layer(1).col(3).array() == 0).all());
    EXPECT_TRUE(out.layer(1).col(0) == masks.layer(1).col(0));
    EXPECT_TRUE(out.layer(2) == masks.layer(2));
    const std::size_t bad[] = {5};
    EXPECT_THROW(ablate_nodes(masks, 1, bad), std::out_of_range);
    EXPECT_THROW(ablate_nodes(masks, 3, nodes), std::out_of_range);
}

TEST(AblateNodes, AblatingADeadNodeChangesNothing) {
    const LayerDims dims{{6, 5, 4, 3}};
    const auto p = fixture::random_params(dims, 5);
    auto masks = random_masks(dims, 2, 0.8);
    masks.layer(1).col(2).setZero();
    const std::size_t dead[] = {2};
    const auto batch = random_batch(8, 6, 1);
    EXPECT_EQ(eval_logits(p, masks, batch), eval_logits(p, ablate_nodes(masks, 1, dead), batch));
}

TEST(HiddenActivations, MatchForwardCache) {
    const LayerDims dims{{4, 5, 3, 2}};
    const auto p = fixture::random_params(dims, 5);
    const auto masks = random_masks(dims, 2, 0.8);
    const auto ds = fixture::random_dataset({2, 2, 1}, 7, 2, 4);
    std::vector<std::size_t> all(7);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto r = forward(p, masks, gather_batch(ds, all), Mode::eval);
    EXPECT_TRUE(hidden_activations(p, masks, ds, 2, 3).isApprox(r.cache.hidden[1].output, 1e-6f));
}
