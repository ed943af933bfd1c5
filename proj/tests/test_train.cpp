#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support/fixtures.hpp"

using namespace spycer;
using ad::Tape;
using testutil::error_kind;
using physics::kInteriorPixels;

namespace {

std::array<double, kPatchPixels> interior_uniform() {
    std::array<double, kPatchPixels> w{};
    for (int r = 1; r < 6; ++r)
        for (int c = 1; c < 6; ++c) w[static_cast<std::size_t>(r * 7 + c)] = 1.0;
    w[24] = 0.0;
    return w;
}

struct Fixture {
    model::SpycerModel<double> model;
    std::vector<PatchSample> raw, norm;
};

Fixture make_fixture(std::size_t n, std::uint64_t seed) {
    Fixture f;
    model::ModelConfig mc;
    mc.width = 4;
    mc.blocks = 1;
    mc.heads = 2;
    mc.attention_hidden = 4;
    f.model = model::SpycerModel<double>(mc, seed);
    std::mt19937_64 rng(seed);
    f.raw = gradcheck::random_patches(n, rng);
    f.model.stats = ChannelStats::from_samples(f.raw);
    f.model.net.target_mean = 20.0;
    f.model.net.target_std = 3.0;
    for (const auto& p : f.raw) f.norm.push_back(normalize_inputs(p, f.model.stats));
    return f;
}

/// Loss of one patch assembled from plain-array pieces.
double reference_loss(const Fixture& f, std::size_t i, const train::TrainConfig& cfg, bool neighbors) {
    const std::array<PatchSample, 1> raw{f.raw[i]};
    const auto pred = train::predict_maps(f.model, raw)[0];
    const std::array<PatchSample, 1> norm{f.norm[i]};
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::vector<double> days{f.raw[i].timestamp.day_of_year};
    const auto dtdt = physics::temporal_derivative(
        tape, [&](Tape<double>& t, const ad::Tensor<double>& x) { return f.model.net.forward(t, x); },
        model::patches_to_tensor<double>(norm), days, cfg.physics.eps_t);
    const std::vector<double> lst(f.raw[i].lst_patch_raw.begin(), f.raw[i].lst_patch_raw.end());
    const auto residual = physics::adr_residual(pred, lst, dtdt.values(), cfg.physics);
    std::array<double, kPatchPixels> w{};
    if (neighbors) w = train::attention_map(f.model, f.raw[i], cfg.ablation != train::Ablation::NoGaussian);
    return train::patch_loss(pred, f.raw[i].target_nsat, w, residual, cfg.physics.lambda);
}

double batch_total(const Fixture& f, const train::TrainConfig& cfg) {
    Tape<double> tape;
    std::mt19937_64 rng(0);
    return train::batch_loss<double>(tape, f.model, f.norm, f.raw, cfg, false, rng).total.item();
}

} // namespace

TEST(PatchLoss, HandEvaluatedCases) {
    std::array<double, kPatchPixels> pred{};
    pred.fill(20.0);
    const std::array<double, kInteriorPixels> zero{};
    std::array<double, kInteriorPixels> ones{};
    ones.fill(1.0);
    const auto w = interior_uniform();
    EXPECT_EQ(train::patch_loss(pred, 20.0, w, zero, 0.9), 0.0);
    EXPECT_EQ(train::patch_loss(pred, 18.0, w, zero, 0.9), 4.0);
    EXPECT_NEAR(train::patch_loss(pred, 20.0, w, ones, 0.9), 1.8, 1e-15);
}

TEST(PatchLoss, NonNegativeOnRandomInputs) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::array<double, kPatchPixels> pred{}, w{};
        std::array<double, kInteriorPixels> r{};
        for (auto& v : pred) v = 20.0 + n(rng);
        for (auto& v : w) v = u(rng);
        for (auto& v : r) v = n(rng);
        EXPECT_GE(train::patch_loss(pred, 20.0 + n(rng), w, r, u(rng)), 0.0);
    }
}

TEST(BatchLoss, MatchesPlainReferenceForEveryAblation) {
    const auto f = make_fixture(4, 3);
    for (auto ab : {train::Ablation::Full, train::Ablation::NoGaussian, train::Ablation::NoNeighborPhysics}) {
        train::TrainConfig cfg;
        cfg.ablation = ab;
        double sum = 0.0;
        for (std::size_t i = 0; i < f.raw.size(); ++i)
            sum += reference_loss(f, i, cfg, ab != train::Ablation::NoNeighborPhysics);
        EXPECT_NEAR(batch_total(f, cfg), sum / static_cast<double>(f.raw.size()), 1e-9 * sum) << train::to_string(ab);
    }
}

TEST(BatchLoss, NoNeighborEqualsFullWithZeroNeighborWeights) {
    const auto f = make_fixture(3, 4);
    train::TrainConfig cfg;
    double sum = 0.0;
    for (std::size_t i = 0; i < f.raw.size(); ++i) sum += reference_loss(f, i, cfg, false);
    cfg.ablation = train::Ablation::NoNeighborPhysics;
    EXPECT_NEAR(batch_total(f, cfg), sum / 3.0, 1e-9 * sum);
}

TEST(BatchLoss, AttentionGetsNoGradientWithoutPhysics) {
    const auto f = make_fixture(3, 5);
    train::TrainConfig cfg;
    cfg.physics.lambda = 0.0;
    Tape<double> tape;
    std::mt19937_64 rng(0);
    const auto loss = train::batch_loss<double>(tape, f.model, f.norm, f.raw, cfg, true, rng);
    tape.backward(loss.total);
    for (auto& p : f.model.attention.parameters())
        for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0) << p.name;
    double net_grad = 0.0;
    for (auto& p : f.model.net.parameters())
        for (double g : p.tensor.grad()) net_grad += std::abs(g);
    EXPECT_GT(net_grad, 0.0);
}

TEST(Train, SinglePatchRegressionConverges) {
    const auto f = make_fixture(1, 6);
    auto cfg = testutil::tiny_train(2000);
    cfg.physics.lambda = 0.0;
    cfg.batch_size = 1;
    const auto r = train::train_on_samples<double>(f.raw, cfg);
    EXPECT_NEAR(train::predict_centers(r.model, f.raw)[0], f.raw[0].target_nsat, 1e-2);
}

TEST(Train, DeterministicCheckpoint) {
    const auto sc = sim::simulate(testutil::tiny_sim());
    const auto a = train::train<float>(sc.scene, sc.sensors, testutil::tiny_train(3));
    const auto b = train::train<float>(sc.scene, sc.sensors, testutil::tiny_train(3));
    EXPECT_EQ(ckpt::encode(train::checkpoint_entries(a)), ckpt::encode(train::checkpoint_entries(b)));
    EXPECT_EQ(train::history_csv(a.history), train::history_csv(b.history));
}

TEST(Train, AblationsProduceFiniteHistories) {
    const auto sc = sim::simulate(testutil::tiny_sim());
    for (auto ab : {train::Ablation::NoNeighborPhysics, train::Ablation::NoGaussian}) {
        auto cfg = testutil::tiny_train(3);
        cfg.ablation = ab;
        const auto r = train::train<float>(sc.scene, sc.sensors, cfg);
        ASSERT_EQ(r.history.size(), 3u);
        for (const auto& h : r.history) EXPECT_TRUE(std::isfinite(h.total));
    }
}

TEST(Train, LossTrendsDown) {
    const auto sc = sim::simulate(testutil::tiny_sim(2));
    const auto r = train::train<float>(sc.scene, sc.sensors, testutil::tiny_train(60));
    auto median = [&](std::size_t from) {
        std::vector<double> v;
        for (std::size_t i = from; i < from + 10; ++i) v.push_back(r.history[i].total);
        std::nth_element(v.begin(), v.begin() + 5, v.end());
        return v[5];
    };
    EXPECT_LT(median(50), median(0));
}

TEST(Train, NeedsTwoSensors) {
    const auto sc = sim::simulate(testutil::tiny_sim());
    const std::vector<std::string> one{sc.sensors.sensors.front().id};
    EXPECT_EQ(error_kind([&] { train::train<float>(sc.scene, sc.sensors, testutil::tiny_train(1), one); }),
              ErrorKind::InsufficientData);
}

TEST(Train, AblationNames) {
    EXPECT_EQ(train::ablation_from_string("config1"), train::Ablation::NoNeighborPhysics);
    EXPECT_EQ(train::ablation_from_string("no_gaussian"), train::Ablation::NoGaussian);
    EXPECT_EQ(error_kind([] { train::ablation_from_string("x"); }), ErrorKind::Config);
}
