#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace engageformer;

namespace {

// Random encoder layer parameters bound as leaves. `mag` scales the weight
// range; zero gives an exact identity layer.
EncoderLayerValues make_layer(Graph<double>& g, Rng& r, std::size_t d, std::size_t heads,
                              std::size_t mlp, double mag, double drop_prob) {
    const std::size_t dh = d / heads;
    auto u = [&](Shape s) { return g.leaf(r.uniform_tensor<double>(std::move(s), -mag, mag)); };
    EncoderLayerValues lv;
    Tensor<double> ones({1, d});
    ones.fill(1.0);
    lv.ln1_gamma = g.leaf(ones);
    lv.ln1_beta = g.leaf(Tensor<double>({1, d}));
    for (std::size_t h = 0; h < heads; ++h) {
        lv.att.wq.push_back(u({d, dh}));
        lv.att.bq.push_back(u({1, dh}));
        lv.att.wk.push_back(u({d, dh}));
        lv.att.bk.push_back(u({1, dh}));
        lv.att.wv.push_back(u({d, dh}));
        lv.att.bv.push_back(u({1, dh}));
    }
    lv.att.wo = u({heads * dh, d});
    lv.att.bo = u({1, d});
    lv.ln2_gamma = g.leaf(ones);
    lv.ln2_beta = g.leaf(Tensor<double>({1, d}));
    lv.mlp_w1 = u({d, mlp});
    lv.mlp_b1 = u({1, mlp});
    lv.mlp_w2 = u({mlp, d});
    lv.mlp_b2 = u({1, d});
    lv.drop_prob = drop_prob;
    return lv;
}

}  // namespace

TEST(Encoder, AttentionRowsSumToOne) {
    Graph<double> g;
    Rng r(21);
    Value z = g.leaf(r.uniform_tensor<double>({6, 8}, -1, 1));
    EncoderLayerValues lv = make_layer(g, r, 8, 2, 16, 0.7, 0.0);
    AttentionTrace trace;
    encoder_layer(g, z, lv, Rng(0), false, &trace);
    ASSERT_EQ(trace.head_attention.size(), 2u);
    for (Value a : trace.head_attention) {
        const Tensor<double>& at = g.val(a);
        ASSERT_EQ(at.rows(), 6u);
        ASSERT_EQ(at.cols(), 6u);
        for (std::size_t i = 0; i < at.rows(); ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < at.cols(); ++j) {
                sum += at(i, j);
                EXPECT_GE(at(i, j), 0.0);
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(Encoder, HeadDimensionFloorsAndProjectsBack) {
    // d=8, 3 heads: d_head = 2, concatenated width 6, wo maps 6 -> 8.
    Graph<double> g;
    Rng r(22);
    Value z = g.leaf(r.uniform_tensor<double>({5, 8}, -1, 1));
    EncoderLayerValues lv = make_layer(g, r, 8, 3, 16, 0.5, 0.0);
    EXPECT_EQ(g.val(lv.att.wq[0]).cols(), 2u);
    EXPECT_EQ(g.val(lv.att.wo).rows(), 6u);
    Value out = encoder_layer(g, z, lv, Rng(0), false);
    EXPECT_EQ(g.val(out).shape(), (Shape{5, 8}));
    EXPECT_TRUE(g.val(out).all_finite());
}

TEST(Encoder, ZeroWeightsGiveExactIdentity) {
    // Both residual branches collapse to zero, so the layer is the identity.
    Graph<double> g;
    Rng r(23);
    Tensor<double> zt = r.uniform_tensor<double>({4, 8}, -1, 1);
    Value z = g.leaf(zt);
    EncoderLayerValues lv = make_layer(g, r, 8, 2, 16, 0.0, 0.0);
    Value out = encoder_layer(g, z, lv, Rng(0), false);
    const Tensor<double>& ot = g.val(out);
    for (std::size_t i = 0; i < zt.numel(); ++i) EXPECT_DOUBLE_EQ(ot[i], zt[i]);
}

TEST(Encoder, DropRateLinearRamp) {
    EXPECT_DOUBLE_EQ(drop_rate_for_layer(0, 3, 0.1), 0.0);
    EXPECT_DOUBLE_EQ(drop_rate_for_layer(1, 3, 0.1), 0.05);
    EXPECT_DOUBLE_EQ(drop_rate_for_layer(2, 3, 0.1), 0.1);
    EXPECT_DOUBLE_EQ(drop_rate_for_layer(0, 1, 0.5), 0.0);  // single layer: no drop
    EXPECT_DOUBLE_EQ(drop_rate_for_layer(1, 2, 0.3), 0.3);
}

TEST(Encoder, InferenceIgnoresDropProbability) {
    Graph<double> g;
    Rng r(24);
    Tensor<double> zt = r.uniform_tensor<double>({4, 8}, -1, 1);
    Rng pr(25);
    EncoderLayerValues lv = make_layer(g, pr, 8, 2, 16, 0.6, 0.9);
    Value out_drop = encoder_layer(g, g.leaf(zt), lv, Rng(1), false);
    EncoderLayerValues lv0 = lv;
    lv0.drop_prob = 0.0;
    Value out_plain = encoder_layer(g, g.leaf(zt), lv0, Rng(99), false);
    const Tensor<double>&a = g.val(out_drop), &b = g.val(out_plain);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(Encoder, KeptBranchScalesByInverseKeepProbability) {
    // Zero the MLP so only the attention branch matters; with p = 0.5 a kept
    // branch must be exactly twice the inference branch.
    Rng r(26);
    Tensor<double> zt = r.uniform_tensor<double>({4, 8}, -1, 1);

    std::uint64_t keep_seed = 0;
    for (std::uint64_t s = 0; s < 64; ++s) {
        Rng probe(s);
        if (!probe.bernoulli(0.5)) {  // first draw keeps the attention branch
            keep_seed = s;
            break;
        }
    }

    Graph<double> g;
    Rng pr(27);
    EncoderLayerValues lv = make_layer(g, pr, 8, 2, 16, 0.6, 0.5);
    // Zero mlp_w1/b1/w2/b2: the second branch contributes nothing.
    lv.mlp_w1 = g.leaf(Tensor<double>({8, 16}));
    lv.mlp_b1 = g.leaf(Tensor<double>({1, 16}));
    lv.mlp_w2 = g.leaf(Tensor<double>({16, 8}));
    lv.mlp_b2 = g.leaf(Tensor<double>({1, 8}));

    Value train_out = encoder_layer(g, g.leaf(zt), lv, Rng(keep_seed), true);
    Value inf_out = encoder_layer(g, g.leaf(zt), lv, Rng(0), false);
    const Tensor<double>&to = g.val(train_out), &io = g.val(inf_out);
    for (std::size_t i = 0; i < zt.numel(); ++i)
        EXPECT_NEAR(to[i] - zt[i], 2.0 * (io[i] - zt[i]), 1e-9);
}

TEST(Encoder, DropDecisionsDrawUpFrontInBranchOrder) {
    // The attention decision is the stream's first draw and the MLP decision
    // the second, whether or not the first branch was built.
    std::uint64_t seed_drop_keep = std::uint64_t(-1);
    for (std::uint64_t s = 0; s < 256 && seed_drop_keep == std::uint64_t(-1); ++s) {
        Rng probe(s);
        const bool d1 = probe.bernoulli(0.5);
        const bool d2 = probe.bernoulli(0.5);
        if (d1 && !d2) seed_drop_keep = s;  // drop attention, keep MLP
    }
    ASSERT_NE(seed_drop_keep, std::uint64_t(-1));

    Graph<double> g;
    Rng r(28), pr(29);
    Tensor<double> zt = r.uniform_tensor<double>({4, 8}, -1, 1);
    EncoderLayerValues lv = make_layer(g, pr, 8, 2, 16, 0.6, 0.5);
    Value out = encoder_layer(g, g.leaf(zt), lv, Rng(seed_drop_keep), true);

    // Expected: y = z (attention dropped), out = y + 2 * mlp_branch(y).
    EncoderLayerValues lv_inf = lv;
    lv_inf.drop_prob = 0.0;
    // Kill the attention branch exactly by zeroing wo/bo.
    lv_inf.att.wo = g.leaf(Tensor<double>({8, 8}));
    lv_inf.att.bo = g.leaf(Tensor<double>({1, 8}));
    Value ref = encoder_layer(g, g.leaf(zt), lv_inf, Rng(0), false);
    const Tensor<double>&ot = g.val(out), &rt = g.val(ref);
    for (std::size_t i = 0; i < zt.numel(); ++i)
        EXPECT_NEAR(ot[i] - zt[i], 2.0 * (rt[i] - zt[i]), 1e-9);
}

TEST(Encoder, RunStackMatchesManualSequence) {
    Graph<double> g;
    Rng r(30), pr(31);
    Tensor<double> zt = r.uniform_tensor<double>({4, 8}, -1, 1);
    std::vector<EncoderLayerValues> layers{make_layer(g, pr, 8, 2, 16, 0.5, 0.0),
                                           make_layer(g, pr, 8, 2, 16, 0.5, 0.0)};
    const Rng stack_rng(77);
    Value a = run_stack(g, g.leaf(zt), layers, stack_rng, false);
    Value m = encoder_layer(g, g.leaf(zt), layers[0], stack_rng.derive(0), false);
    m = encoder_layer(g, m, layers[1], stack_rng.derive(1), false);
    const Tensor<double>&at = g.val(a), &mt = g.val(m);
    for (std::size_t i = 0; i < at.numel(); ++i) EXPECT_DOUBLE_EQ(at[i], mt[i]);
}

TEST(Encoder, PermutationEquivariance) {
    // Permuting input rows permutes output rows (inference, no drop).
    Graph<double> g;
    Rng r(32), pr(33);
    Tensor<double> zt = r.uniform_tensor<double>({5, 8}, -1, 1);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor<double> zp({5, 8});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) zp(i, j) = zt(perm[i], j);
    EncoderLayerValues lv = make_layer(g, pr, 8, 2, 16, 0.6, 0.0);
    Value out = encoder_layer(g, g.leaf(zt), lv, Rng(0), false);
    Value out_p = encoder_layer(g, g.leaf(zp), lv, Rng(0), false);
    const Tensor<double>&o = g.val(out), &op = g.val(out_p);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(op(i, j), o(perm[i], j), 1e-9);
}

TEST(Encoder, LayerGradsMatchFiniteDifferences) {
    Rng r(34);
    Tensor<double> w = r.uniform_tensor<double>({4, 8}, -1, 1);
    Tensor<double> zt = r.uniform_tensor<double>({4, 8}, -1, 1);
    auto build = [&](Graph<double>& g, const std::vector<Value>& in) {
        Rng pr(35);
        EncoderLayerValues lv = make_layer(g, pr, 8, 2, 16, 0.5, 0.0);
        Value out = encoder_layer(g, in[0], lv, Rng(0), false);
        return engageformer::testutil::weighted_sum(g, out, w);
    };
    EXPECT_LE(engageformer::testutil::max_fd_rel_err(build, {zt}), 1e-7);
}
