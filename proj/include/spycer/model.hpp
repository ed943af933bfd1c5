/**
 * @file model.hpp
 * @brief Residual CNN producing a dense 7x7 NSAT map per patch, and the
 *        multi-head convolutional attention over the patch neighbors.
 */
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spycer/checkpoint.hpp"
#include "spycer/grid.hpp"
#include "spycer/optim.hpp"
#include "spycer/tensor.hpp"

namespace spycer::model {

using ad::Tape;
using ad::Tensor;

struct ModelConfig {
    int width = 32;
    int blocks = 3;
    int heads = 4;
    int attention_hidden = 16;
    double attention_dropout = 0.15;
    double sigma = 1.5; // Gaussian decay, pixels

    void validate() const {
        if (width < 1 || blocks < 0 || heads < 1 || attention_hidden < 1)
            fail(ErrorKind::Config, "model sizes must be positive");
        if (!(attention_dropout >= 0.0 && attention_dropout < 1.0))
            fail(ErrorKind::Config, "attention_dropout must be in [0, 1)");
        if (!(sigma > 0.0)) fail(ErrorKind::Config, "sigma must be > 0");
    }
};

template <typename T>
struct Conv {
    Tensor<T> weight; // [out, in, k, k]
    Tensor<T> bias;   // [out]

    Conv() = default;
    Conv(int in, int out, int k, std::mt19937_64& rng, double gain = 1.0) {
        const auto fan_in = static_cast<double>(in * k * k);
        std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / fan_in));
        std::vector<T> w(static_cast<std::size_t>(out * in * k * k));
        for (auto& v : w) v = static_cast<T>(normal(rng));
        weight = Tensor<T>({static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(k),
                            static_cast<std::size_t>(k)},
                           std::move(w), true);
        bias = Tensor<T>::zeros({static_cast<std::size_t>(out)}, true);
    }

    Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return tape.conv2d(x, weight, bias); }
};

/// Channel-major batch [8, N, 7, 7] from normalized patches.
template <typename T>
Tensor<T> patches_to_tensor(std::span<const PatchSample> patches) {
    const std::size_t n = patches.size();
    std::vector<T> v(kChannels * n * kPatchPixels);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < kChannels; ++c)
            for (std::size_t p = 0; p < kPatchPixels; ++p)
                v[(c * n + i) * kPatchPixels + p] = static_cast<T>(patches[i].channels[c * kPatchPixels + p]);
    return Tensor<T>({kChannels, n, kPatchSize, kPatchSize}, std::move(v));
}

/// Raw spectral indices [3, N, 7, 7] (NDVI, NDWI, NDBI in [-1, 1]) for the
/// attention heads, taken from unnormalized patches.
template <typename T>
Tensor<T> indices_to_tensor(std::span<const PatchSample> raw_patches) {
    const std::size_t n = raw_patches.size();
    std::vector<T> v(3 * n * kPatchPixels);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < kPatchPixels; ++p)
                v[(c * n + i) * kPatchPixels + p] =
                    static_cast<T>(raw_patches[i].channels[(kNdvi + c) * kPatchPixels + p]);
    return Tensor<T>({3, n, kPatchSize, kPatchSize}, std::move(v));
}

template <typename T>
class SpycerNet {
public:
    SpycerNet() = default;
    SpycerNet(const ModelConfig& cfg, std::mt19937_64& rng) {
        stem_ = Conv<T>(kChannels, cfg.width, 3, rng);
        for (int b = 0; b < cfg.blocks; ++b) {
            Conv<T> c1(cfg.width, cfg.width, 3, rng);
            Conv<T> c2(cfg.width, cfg.width, 3, rng, 0.5);
            blocks_.push_back({std::move(c1), std::move(c2)});
        }
        head_ = Conv<T>(cfg.width, 1, 1, rng, 0.5);
    }

    /// Target denormalization: output_degC = out * target_std + target_mean.
    T target_mean = T(0);
    T target_std = T(1);

    /// x [8, N, 7, 7] normalized -> [1, N, 7, 7] in degC.
    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        auto h = tape.relu(stem_(tape, x));
        for (const auto& [c1, c2] : blocks_) h = tape.add(h, c2(tape, tape.relu(c1(tape, h))));
        return tape.affine(head_(tape, h), target_std, target_mean);
    }

    /// Output of residual block `b` applied to `h` (exposed for tests).
    Tensor<T> block(Tape<T>& tape, std::size_t b, const Tensor<T>& h) const {
        const auto& [c1, c2] = blocks_.at(b);
        return tape.add(h, c2(tape, tape.relu(c1(tape, h))));
    }

    std::vector<ad::NamedTensor<T>> parameters() const {
        std::vector<ad::NamedTensor<T>> out{{"net.stem.weight", stem_.weight}, {"net.stem.bias", stem_.bias}};
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const auto p = "net.block" + std::to_string(b);
            out.push_back({p + ".conv1.weight", blocks_[b].first.weight});
            out.push_back({p + ".conv1.bias", blocks_[b].first.bias});
            out.push_back({p + ".conv2.weight", blocks_[b].second.weight});
            out.push_back({p + ".conv2.bias", blocks_[b].second.bias});
        }
        out.push_back({"net.head.weight", head_.weight});
        out.push_back({"net.head.bias", head_.bias});
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor.size();
        return n;
    }

    const Conv<T>& stem() const { return stem_; }
    const Conv<T>& head() const { return head_; }
    std::size_t block_count() const { return blocks_.size(); }
    const std::pair<Conv<T>, Conv<T>>& block_convs(std::size_t b) const { return blocks_.at(b); }

private:
    Conv<T> stem_;
    std::vector<std::pair<Conv<T>, Conv<T>>> blocks_;
    Conv<T> head_;
};

/// exp(-(dx^2 + dy^2) / (2 sigma^2)) over the 7x7 patch, offsets in pixels.
inline std::array<double, kPatchPixels> gaussian_kernel(double sigma) {
    std::array<double, kPatchPixels> g{};
    for (int r = 0; r < kPatchSize; ++r)
        for (int c = 0; c < kPatchSize; ++c) {
            const double dy = r - kPatchRadius, dx = c - kPatchRadius;
            g[static_cast<std::size_t>(r * kPatchSize + c)] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    return g;
}

inline std::array<std::uint8_t, kPatchPixels> center_mask() {
    std::array<std::uint8_t, kPatchPixels> m{};
    m[kPatchRadius * kPatchSize + kPatchRadius] = 1;
    return m;
}

template <typename T>
class AttentionModule {
public:
    AttentionModule() = default;
    AttentionModule(const ModelConfig& cfg, std::mt19937_64& rng) : dropout_(cfg.attention_dropout), sigma_(cfg.sigma) {
        for (int h = 0; h < cfg.heads; ++h) {
            Conv<T> c1(3, cfg.attention_hidden, 3, rng);
            Conv<T> c2(cfg.attention_hidden, 1, 1, rng);
            heads_.push_back({std::move(c1), std::move(c2)});
        }
    }

    std::size_t head_count() const { return heads_.size(); }
    double sigma() const { return sigma_; }
    double dropout_rate() const { return dropout_; }

    /// indices [3, N, 7, 7] -> logits [H, N, 7, 7].
    Tensor<T> logits(Tape<T>& tape, const Tensor<T>& indices, bool train, std::mt19937_64& rng) const {
        if (indices.rank() != 4 || indices.dim(0) != 3)
            fail(ErrorKind::ShapeMismatch, "attention expects [3, N, 7, 7] indices");
        std::vector<Tensor<T>> maps;
        maps.reserve(heads_.size());
        for (const auto& [c1, c2] : heads_) {
            auto h = tape.dropout(tape.relu(c1(tape, indices)), dropout_, train, rng);
            maps.push_back(c2(tape, h));
        }
        return tape.concat(maps, 0);
    }

    /// Per-head softmax over the 48 neighbors (center masked), head average,
    /// optional Gaussian distance modulation, renormalization over the 48
    /// neighbors. Returns [N, 49]; the center column is exactly 0.
    Tensor<T> weights(Tape<T>& tape, const Tensor<T>& indices, bool train, std::mt19937_64& rng,
                      bool gaussian = true) const {
        return weights_from_logits(tape, logits(tape, indices, train, rng), gaussian);
    }

    Tensor<T> weights_from_logits(Tape<T>& tape, const Tensor<T>& logits, bool gaussian = true) const {
        const std::size_t H = logits.dim(0), N = logits.dim(1);
        static const auto mask = center_mask();
        auto probs = tape.softmax(tape.reshape(logits, {H * N, kPatchPixels}), 1, mask);
        const Tensor<T> mean_row = Tensor<T>::filled({1, H}, T(1) / static_cast<T>(H));
        auto avg = tape.matmul(mean_row, tape.reshape(probs, {H, N * kPatchPixels}));
        if (gaussian) {
            const auto g = gaussian_kernel(sigma_);
            std::vector<T> tiled(N * kPatchPixels);
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t p = 0; p < kPatchPixels; ++p) tiled[i * kPatchPixels + p] = static_cast<T>(g[p]);
            avg = tape.mul(avg, Tensor<T>({1, N * kPatchPixels}, std::move(tiled)));
        }
        return tape.normalize(tape.reshape(avg, {N, kPatchPixels}), 1);
    }

    std::vector<ad::NamedTensor<T>> parameters() const {
        std::vector<ad::NamedTensor<T>> out;
        for (std::size_t h = 0; h < heads_.size(); ++h) {
            const auto p = "att.head" + std::to_string(h);
            out.push_back({p + ".conv1.weight", heads_[h].first.weight});
            out.push_back({p + ".conv1.bias", heads_[h].first.bias});
            out.push_back({p + ".conv2.weight", heads_[h].second.weight});
            out.push_back({p + ".conv2.bias", heads_[h].second.bias});
        }
        return out;
    }

private:
    std::vector<std::pair<Conv<T>, Conv<T>>> heads_;
    double dropout_ = 0.15;
    double sigma_ = 1.5;
};

template <typename T>
std::vector<Tensor<T>> tensors_of(const std::vector<ad::NamedTensor<T>>& named) {
    std::vector<Tensor<T>> out;
    out.reserve(named.size());
    for (const auto& n : named) out.push_back(n.tensor);
    return out;
}

/// Everything needed for inference: network, attention, input statistics.
template <typename T>
struct SpycerModel {
    ModelConfig config;
    SpycerNet<T> net;
    AttentionModule<T> attention;
    ChannelStats stats;

    SpycerModel() = default;
    SpycerModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
        cfg.validate();
        std::mt19937_64 rng(seed);
        net = SpycerNet<T>(cfg, rng);
        attention = AttentionModule<T>(cfg, rng);
    }

    std::vector<ckpt::Entry> to_entries() const {
        std::vector<ckpt::Entry> out;
        const Tensor<T> cfg({6}, {static_cast<T>(config.width), static_cast<T>(config.blocks),
                                  static_cast<T>(config.heads), static_cast<T>(config.attention_hidden),
                                  static_cast<T>(config.attention_dropout), static_cast<T>(config.sigma)});
        out.push_back(ckpt::to_entry("model.config", cfg));
        std::vector<T> norm{net.target_mean, net.target_std};
        for (double m : stats.mean) norm.push_back(static_cast<T>(m));
        for (double s : stats.stddev) norm.push_back(static_cast<T>(s));
        out.push_back(ckpt::to_entry("model.normalization", Tensor<T>({norm.size()}, norm)));
        for (const auto& p : net.parameters()) out.push_back(ckpt::to_entry(p.name, p.tensor));
        for (const auto& p : attention.parameters()) out.push_back(ckpt::to_entry(p.name, p.tensor));
        return out;
    }

    static SpycerModel from_entries(const std::vector<ckpt::Entry>& entries) {
        const auto& c = ckpt::find(entries, "model.config");
        if (c.data.size() != 6) fail(ErrorKind::Format, "bad model.config entry");
        ModelConfig cfg;
        cfg.width = static_cast<int>(c.data[0]);
        cfg.blocks = static_cast<int>(c.data[1]);
        cfg.heads = static_cast<int>(c.data[2]);
        cfg.attention_hidden = static_cast<int>(c.data[3]);
        cfg.attention_dropout = c.data[4];
        cfg.sigma = c.data[5];
        SpycerModel m(cfg, 0);
        const auto& n = ckpt::find(entries, "model.normalization");
        if (n.data.size() != 2 + 2 * kChannels) fail(ErrorKind::Format, "bad model.normalization entry");
        m.net.target_mean = static_cast<T>(n.data[0]);
        m.net.target_std = static_cast<T>(n.data[1]);
        for (std::size_t i = 0; i < kChannels; ++i) {
            m.stats.mean[i] = n.data[2 + i];
            m.stats.stddev[i] = n.data[2 + kChannels + i];
        }
        for (auto& p : m.net.parameters()) ckpt::load_into(ckpt::find(entries, p.name), p.tensor);
        for (auto& p : m.attention.parameters()) ckpt::load_into(ckpt::find(entries, p.name), p.tensor);
        return m;
    }
};

} // namespace spycer::model
