#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support/fixtures.hpp"

using namespace spycer;
using ad::Tape;
using T = ad::Tensor<double>;

namespace {

void zero(T t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
}

T input_batch(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto raw = gradcheck::random_patches(n, rng);
    const auto st = ChannelStats::from_samples(raw);
    std::vector<PatchSample> norm;
    for (const auto& p : raw) norm.push_back(normalize_inputs(p, st));
    return model::patches_to_tensor<double>(norm);
}

} // namespace

TEST(SpycerNet, DefaultParameterCountIsSmall) {
    std::mt19937_64 rng(1);
    const model::SpycerNet<float> net(model::ModelConfig{}, rng);
    EXPECT_LT(net.parameter_count(), 60000u);
}

TEST(SpycerNet, ZeroedResidualBranchIsIdentity) {
    std::mt19937_64 rng(2);
    model::ModelConfig mc;
    mc.width = 6;
    mc.blocks = 2;
    const model::SpycerNet<double> net(mc, rng);
    zero(net.block_convs(1).second.weight);
    zero(net.block_convs(1).second.bias);
    const auto h = gradcheck::random_tensor({6, 2, 7, 7}, rng);
    Tape<double> tape;
    const auto out = net.block(tape, 1, h);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(out[i], h[i]);
}

TEST(SpycerNet, ZeroHeadGivesDenormalizationOffset) {
    std::mt19937_64 rng(3);
    model::SpycerNet<double> net(model::ModelConfig{}, rng);
    zero(net.head().weight);
    zero(net.head().bias);
    net.target_mean = 17.25;
    net.target_std = 4.0;
    Tape<double> tape;
    const auto y = net.forward(tape, input_batch(3, 4));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 17.25);
}

TEST(SpycerNet, InferenceIsBitIdentical) {
    std::mt19937_64 rng(5);
    const model::SpycerNet<float> net(model::ModelConfig{}, rng);
    const auto x = input_batch(4, 6);
    const ad::Tensor<float> xf(x.shape(), std::vector<float>(x.values().begin(), x.values().end()));
    Tape<float> t1, t2;
    const auto a = net.forward(t1, xf), b = net.forward(t2, xf);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Attention, SimplexOnRandomInputs) {
    std::mt19937_64 rng(7);
    const model::AttentionModule<double> att(model::ModelConfig{}, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const auto patches = gradcheck::random_patches(3, rng);
        Tape<double> tape;
        const auto w = att.weights(tape, model::indices_to_tensor<double>(patches), trial % 2 == 0, rng);
        for (std::size_t n = 0; n < 3; ++n) {
            double s = 0.0;
            for (std::size_t p = 0; p < kPatchPixels; ++p) {
                EXPECT_GE(w[n * kPatchPixels + p], 0.0);
                s += w[n * kPatchPixels + p];
            }
            EXPECT_EQ(w[n * kPatchPixels + kPatchRadius * kPatchSize + kPatchRadius], 0.0);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Attention, EqualLogitsGiveGaussianProfile) {
    std::mt19937_64 rng(8);
    const model::AttentionModule<double> att(model::ModelConfig{}, rng);
    Tape<double> tape;
    const auto plain = att.weights_from_logits(tape, T::zeros({4, 1, 7, 7}), false);
    for (std::size_t p = 0; p < kPatchPixels; ++p)
        if (p != kPatchRadius * kPatchSize + kPatchRadius) EXPECT_NEAR(plain[p], 1.0 / 48.0, 1e-15);
    const auto w = att.weights_from_logits(tape, T::zeros({4, 1, 7, 7}));
    EXPECT_NEAR(w[3 * 7 + 4] / w[6 * 7 + 6], std::exp(17.0 / 4.5), 1e-9 * std::exp(17.0 / 4.5));
    EXPECT_NEAR(std::exp(17.0 / 4.5), 43.7188, 1e-4);
    for (std::size_t a = 0; a < kPatchPixels; ++a)
        for (std::size_t b = 0; b < kPatchPixels; ++b) {
            if (a == 24 || b == 24) continue;
            const auto d2 = [](std::size_t p) {
                const int r = static_cast<int>(p / 7) - 3, c = static_cast<int>(p % 7) - 3;
                return r * r + c * c;
            };
            if (d2(a) < d2(b)) EXPECT_GT(w[a], w[b]);
        }
    EXPECT_EQ(model::gaussian_kernel(1.5)[24], 1.0);
}

TEST(Attention, SharedHeadsEqualSingleHead) {
    model::ModelConfig one, many;
    one.heads = 1;
    many.heads = 3;
    std::mt19937_64 r1(9), r2(10);
    const model::AttentionModule<double> single(one, r1);
    const model::AttentionModule<double> multi(many, r2);
    const auto src = single.parameters();
    const auto dst = multi.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const auto& s = src[i % src.size()].tensor;
        auto d = dst[i].tensor;
        for (std::size_t k = 0; k < s.size(); ++k) d[k] = s[k];
    }
    std::mt19937_64 rng(11);
    const auto idx = model::indices_to_tensor<double>(gradcheck::random_patches(2, rng));
    Tape<double> tape;
    const auto a = single.weights(tape, idx, false, rng), b = multi.weights(tape, idx, false, rng);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Attention, DropoutOnlyWhenTraining) {
    std::mt19937_64 rng(12);
    const model::AttentionModule<double> att(model::ModelConfig{}, rng);
    const auto idx = model::indices_to_tensor<double>(gradcheck::random_patches(2, rng));
    Tape<double> tape;
    const auto a = att.logits(tape, idx, false, rng), b = att.logits(tape, idx, false, rng);
    const auto c = att.logits(tape, idx, true, rng), d = att.logits(tape, idx, true, rng);
    bool differ = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i], b[i]);
        differ = differ || c[i] != d[i];
    }
    EXPECT_TRUE(differ);
}

TEST(Attention, ZeroWeightsZeroLogitsAndTranslationEquality) {
    std::mt19937_64 rng(13);
    const model::AttentionModule<double> att(model::ModelConfig{}, rng);
    std::mt19937_64 r2(14);
    auto patches = gradcheck::random_patches(1, r2);
    for (int k = kNdvi; k <= kNdbi; ++k)
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 7; ++c) patches[0].at(k, r, c) = 0.25f * static_cast<float>(k - kNdwi);
    Tape<double> tape;
    const auto idx = model::indices_to_tensor<double>(patches);
    const auto logits = att.logits(tape, idx, false, rng);
    for (std::size_t h = 0; h < att.head_count(); ++h)
        for (int r = 1; r < 6; ++r)
            for (int c = 1; c < 6; ++c) EXPECT_NEAR(logits[h * 49 + static_cast<std::size_t>(r * 7 + c)], logits[h * 49 + 24], 1e-12);
    for (auto& p : att.parameters()) zero(p.tensor);
    const auto z = att.logits(tape, idx, false, rng);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], 0.0);
}

TEST(SpycerModel, CheckpointReloadPredictsIdentically) {
    const auto sc = sim::simulate(testutil::tiny_sim());
    const auto r = train::train<float>(sc.scene, sc.sensors, testutil::tiny_train(2));
    const auto back = model::SpycerModel<float>::from_entries(ckpt::decode(ckpt::encode(r.model.to_entries())));
    const auto samples = train::build_samples(sc.scene, sc.sensors);
    EXPECT_EQ(train::predict_centers(r.model, samples), train::predict_centers(back, samples));
    EXPECT_EQ(train::attention_map(r.model, samples[0]), train::attention_map(back, samples[0]));
}
