/**
 * @file train.hpp
 * @brief Semi-supervised patch loss and the training loop.
 *
 * Per patch:
 *
 *   L = (T_hat(center) - T_obs)^2
 *       + lambda * ( r(center)^2 + sum_{interior neighbors} w(x', y') r(x', y')^2 )
 *
 * where r is the diffusion-reaction residual and w are the attention weights
 * restricted to the 5x5 interior (minus center) and renormalized to sum 1.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spycer/grid.hpp"
#include "spycer/model.hpp"
#include "spycer/optim.hpp"
#include "spycer/physics.hpp"
#include "spycer/tensor.hpp"

namespace spycer::train {

using ad::Tape;
using ad::Tensor;
using physics::kInterior;
using physics::kInteriorPixels;

enum class Ablation { Full, NoNeighborPhysics, NoGaussian };

inline const char* to_string(Ablation a) {
    switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoNeighborPhysics: return "no_neighbor_physics";
    case Ablation::NoGaussian: return "no_gaussian";
    }
    return "?";
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::Full;
    if (s == "no_neighbor_physics" || s == "config1") return Ablation::NoNeighborPhysics;
    if (s == "no_gaussian" || s == "config2") return Ablation::NoGaussian;
    fail(ErrorKind::Config, "unknown ablation '" + s + "'");
}

struct TrainConfig {
    int epochs = 2000;
    double lr_model = 3e-3;
    double lr_attention = 5e-5;
    int batch_size = 64;
    std::uint64_t seed = 7;
    Ablation ablation = Ablation::Full;
    physics::PhysicsConfig physics;
    model::ModelConfig model;

    void validate() const {
        if (epochs < 1) fail(ErrorKind::Config, "epochs must be >= 1");
        if (batch_size < 1) fail(ErrorKind::Config, "batch_size must be >= 1");
        if (!(lr_model > 0.0) || !(lr_attention > 0.0)) fail(ErrorKind::Config, "learning rates must be > 0");
        physics.validate();
        model.validate();
    }
};

struct EpochRecord {
    int epoch = 0;
    double sup_loss = 0.0;
    double phys_loss = 0.0;
    double total = 0.0;
};

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,sup_loss,phys_loss,total\n";
    char buf[160];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", r.epoch, r.sup_loss, r.phys_loss, r.total);
        out += buf;
    }
    return out;
}

/// Reference single-patch loss on plain arrays. `weights` is the 7x7
/// attention map; only its interior non-center entries are used, after
/// renormalization to sum 1 (a zero sum drops the neighbor term).
inline double patch_loss(std::span<const double> pred, double target, std::span<const double> weights,
                         std::span<const double> residual, double lambda) {
    if (pred.size() != kPatchPixels || weights.size() != kPatchPixels || residual.size() != kInteriorPixels)
        fail(ErrorKind::ShapeMismatch, "patch_loss expects 7x7 pred/weights and 5x5 residual");
    const int center = kPatchRadius * kPatchSize + kPatchRadius;
    const int rc = (kInterior / 2) * kInterior + kInterior / 2;
    const double sup = (pred[static_cast<std::size_t>(center)] - target) * (pred[static_cast<std::size_t>(center)] - target);
    double wsum = 0.0;
    for (int i = 0; i < kInterior; ++i)
        for (int j = 0; j < kInterior; ++j)
            if (i * kInterior + j != rc) wsum += weights[static_cast<std::size_t>((i + 1) * kPatchSize + j + 1)];
    double neighbors = 0.0;
    if (wsum > 0.0)
        for (int i = 0; i < kInterior; ++i)
            for (int j = 0; j < kInterior; ++j) {
                const int k = i * kInterior + j;
                if (k == rc) continue;
                const double w = weights[static_cast<std::size_t>((i + 1) * kPatchSize + j + 1)] / wsum;
                neighbors += w * residual[static_cast<std::size_t>(k)] * residual[static_cast<std::size_t>(k)];
            }
    const double r0 = residual[static_cast<std::size_t>(rc)];
    return sup + lambda * (r0 * r0 + neighbors);
}

/// Raw patches for every (sensor, date) reading with a complete patch.
inline std::vector<PatchSample> build_samples(const Scene& scene, const SensorNetwork& sensors,
                                              std::span<const std::string> ids = {}) {
    std::vector<PatchSample> out;
    for (const auto& s : sensors.sensors) {
        if (!ids.empty() && std::find(ids.begin(), ids.end(), s.id) == ids.end()) continue;
        for (const auto& d : scene.dates) {
            if (!s.readings.count(d.date_label)) continue;
            if (!patch_is_complete(scene, s.pixel_row, s.pixel_col, d)) continue;
            out.push_back(extract_patch(scene, s, d.date_label));
        }
    }
    return out;
}

template <typename T>
struct BatchLoss {
    Tensor<T> total;
    Tensor<T> sup;  // summed over the batch
    Tensor<T> phys; // summed over the batch, before lambda
};

/// Constant [1, N, 5, 5] with 1 at the interior center of every sample.
template <typename T>
Tensor<T> center_indicator(std::size_t n) {
    std::vector<T> v(n * kInteriorPixels, T(0));
    for (std::size_t i = 0; i < n; ++i) v[i * kInteriorPixels + (kInterior / 2) * kInterior + kInterior / 2] = T(1);
    return Tensor<T>({1, n, kInterior, kInterior}, std::move(v));
}

/// Interior neighbor weights [1, N, 5, 5] (center 0, each sample sums to 1)
/// from attention weights [N, 49].
template <typename T>
Tensor<T> interior_weights(Tape<T>& tape, const Tensor<T>& weights) {
    const std::size_t n = weights.dim(0);
    auto w = tape.crop(tape.reshape(weights, {1, n, kPatchSize, kPatchSize}), 1, 1, kInterior, kInterior);
    w = tape.normalize(tape.reshape(w, {n, kInteriorPixels}), 1);
    return tape.reshape(w, {1, n, kInterior, kInterior});
}

/// Loss of one batch. `normalized` feeds the network, `raw` supplies the
/// spectral indices, raw LST and targets.
template <typename T>
BatchLoss<T> batch_loss(Tape<T>& tape, const model::SpycerModel<T>& m, std::span<const PatchSample> normalized,
                        std::span<const PatchSample> raw, const TrainConfig& cfg, bool train, std::mt19937_64& rng) {
    const std::size_t n = normalized.size();
    const auto& phys = cfg.physics;
    const auto x = model::patches_to_tensor<T>(normalized);
    auto out = m.net.forward(tape, physics::time_perturbed_batch(x, phys.eps_t));
    auto pred = tape.slice(out, 1, 0, n);

    std::vector<double> days(n);
    std::vector<T> lst(n * kPatchPixels), target(n);
    for (std::size_t i = 0; i < n; ++i) {
        days[i] = raw[i].timestamp.day_of_year;
        target[i] = static_cast<T>(raw[i].target_nsat);
        for (std::size_t p = 0; p < kPatchPixels; ++p) lst[i * kPatchPixels + p] = static_cast<T>(raw[i].lst_patch_raw[p]);
    }
    auto dTdt = physics::combine_time_derivative(tape, tape.slice(out, 1, n, 2 * n), tape.slice(out, 1, 2 * n, 3 * n),
                                                 tape.slice(out, 1, 3 * n, 4 * n), tape.slice(out, 1, 4 * n, 5 * n),
                                                 days, phys.eps_t);
    auto residual = physics::adr_residual(tape, pred, Tensor<T>({1, n, kPatchSize, kPatchSize}, std::move(lst)), dTdt, phys);

    auto center = tape.crop(pred, kPatchRadius, kPatchRadius, 1, 1);
    auto sup = tape.sum(tape.square(tape.sub(center, Tensor<T>({1, n, 1, 1}, std::move(target)))));

    Tensor<T> weights = center_indicator<T>(n);
    if (cfg.ablation != Ablation::NoNeighborPhysics) {
        const auto idx = model::indices_to_tensor<T>(raw);
        auto att = m.attention.weights(tape, idx, train, rng, cfg.ablation != Ablation::NoGaussian);
        weights = tape.add(interior_weights(tape, att), weights);
    }
    auto phys_sum = tape.sum(tape.mul(weights, tape.square(residual)));
    auto total = tape.scale(tape.add(sup, tape.scale(phys_sum, static_cast<T>(phys.lambda))), T(1) / static_cast<T>(n));
    return {total, sup, phys_sum};
}

template <typename T>
struct TrainResult {
    model::SpycerModel<T> model;
    std::vector<EpochRecord> history;
    ad::Adam<T> model_optimizer;
    ad::Adam<T> attention_optimizer;
};

/// Mean/std of the targets, rounded through float so a checkpointed model
/// reproduces the in-memory one exactly.
inline std::pair<double, double> target_stats(std::span<const PatchSample> samples) {
    double sum = 0.0, sq = 0.0;
    for (const auto& s : samples) {
        sum += s.target_nsat;
        sq += s.target_nsat * s.target_nsat;
    }
    const double n = static_cast<double>(samples.size());
    const double mean = sum / n;
    double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
    if (sd < 1e-6) sd = 1.0;
    return {static_cast<float>(mean), static_cast<float>(sd)};
}

inline ChannelStats float_rounded(ChannelStats st) {
    for (auto& v : st.mean) v = static_cast<float>(v);
    for (auto& v : st.stddev) v = static_cast<float>(v);
    return st;
}

/// Trains on prepared raw samples (at least one).
template <typename T = float, typename Progress = std::nullptr_t>
TrainResult<T> train_on_samples(std::span<const PatchSample> raw, const TrainConfig& cfg, Progress progress = nullptr) {
    cfg.validate();
    if (raw.empty()) fail(ErrorKind::InsufficientData, "no training patches");

    TrainResult<T> result;
    auto& m = result.model;
    m = model::SpycerModel<T>(cfg.model, derive_seed(cfg.seed, 0xA11));
    m.stats = float_rounded(ChannelStats::from_samples(raw));
    const auto [tmean, tstd] = target_stats(raw);
    m.net.target_mean = static_cast<T>(tmean);
    m.net.target_std = static_cast<T>(tstd);

    std::vector<PatchSample> normalized;
    normalized.reserve(raw.size());
    for (const auto& p : raw) normalized.push_back(normalize_inputs(p, m.stats));

    result.model_optimizer = ad::Adam<T>(model::tensors_of(m.net.parameters()), cfg.lr_model);
    result.attention_optimizer = ad::Adam<T>(model::tensors_of(m.attention.parameters()), cfg.lr_attention);

    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5EED));
    std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 0xD0));
    std::vector<std::size_t> order(raw.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<PatchSample> bn, br;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double sup_sum = 0.0, phys_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            bn.clear();
            br.clear();
            for (std::size_t i = start; i < end; ++i) {
                bn.push_back(normalized[order[i]]);
                br.push_back(raw[order[i]]);
            }
            Tape<T> tape;
            result.model_optimizer.zero_grad();
            result.attention_optimizer.zero_grad();
            auto loss = batch_loss<T>(tape, m, bn, br, cfg, true, dropout_rng);
            const double value = loss.total.item();
            if (!std::isfinite(value))
                fail(ErrorKind::NumericFailure, "non-finite training loss at epoch " + std::to_string(epoch));
            sup_sum += loss.sup.item();
            phys_sum += loss.phys.item();
            tape.backward(loss.total);
            result.model_optimizer.step();
            result.attention_optimizer.step();
        }
        const double n = static_cast<double>(raw.size());
        EpochRecord rec{epoch, sup_sum / n, phys_sum / n, (sup_sum + cfg.physics.lambda * phys_sum) / n};
        result.history.push_back(rec);
        if constexpr (!std::is_same_v<Progress, std::nullptr_t>) progress(rec);
    }
    return result;
}

/// Trains on every reading of the given sensors (all when `ids` is empty).
template <typename T = float>
TrainResult<T> train(const Scene& scene, const SensorNetwork& sensors, const TrainConfig& cfg,
                     std::span<const std::string> ids = {}) {
    std::size_t used = 0;
    for (const auto& s : sensors.sensors)
        if (ids.empty() || std::find(ids.begin(), ids.end(), s.id) != ids.end()) ++used;
    if (used < 2) fail(ErrorKind::InsufficientData, "training needs at least 2 sensors, got " + std::to_string(used));
    const auto samples = build_samples(scene, sensors, ids);
    if (samples.empty()) fail(ErrorKind::InsufficientData, "no complete training patches");
    return train_on_samples<T>(samples, cfg);
}

/// Checkpoint entries: model plus both optimizer states.
template <typename T>
std::vector<ckpt::Entry> checkpoint_entries(const TrainResult<T>& r) {
    auto entries = r.model.to_entries();
    auto add_opt = [&](const std::string& prefix, const ad::Adam<T>& opt) {
        entries.push_back(ckpt::to_entry(prefix + ".step", Tensor<T>({1}, {static_cast<T>(opt.step_count())})));
        for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
            entries.push_back(ckpt::to_entry(prefix + ".m." + std::to_string(i), opt.first_moments()[i]));
            entries.push_back(ckpt::to_entry(prefix + ".v." + std::to_string(i), opt.second_moments()[i]));
        }
    };
    add_opt("adam.model", r.model_optimizer);
    add_opt("adam.attention", r.attention_optimizer);
    return entries;
}

// ----- inference ------------------------------------------------------------

/// Dense 7x7 predictions (degC) for raw patches, dropout off.
template <typename T>
std::vector<std::array<double, kPatchPixels>> predict_maps(const model::SpycerModel<T>& m,
                                                           std::span<const PatchSample> raw,
                                                           std::size_t chunk = 512) {
    std::vector<std::array<double, kPatchPixels>> out(raw.size());
    Tape<T> tape;
    tape.set_grad_enabled(false);
    std::vector<PatchSample> norm;
    for (std::size_t start = 0; start < raw.size(); start += chunk) {
        const std::size_t end = std::min(raw.size(), start + chunk);
        norm.clear();
        for (std::size_t i = start; i < end; ++i) norm.push_back(normalize_inputs(raw[i], m.stats));
        const auto y = m.net.forward(tape, model::patches_to_tensor<T>(norm));
        for (std::size_t i = start; i < end; ++i)
            for (std::size_t p = 0; p < kPatchPixels; ++p) out[i][p] = y[(i - start) * kPatchPixels + p];
    }
    return out;
}

template <typename T>
std::vector<double> predict_centers(const model::SpycerModel<T>& m, std::span<const PatchSample> raw) {
    const auto maps = predict_maps(m, raw);
    std::vector<double> out(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) out[i] = maps[i][kPatchRadius * kPatchSize + kPatchRadius];
    return out;
}

/// 7x7 attention map (dropout off) for one raw patch.
template <typename T>
std::array<double, kPatchPixels> attention_map(const model::SpycerModel<T>& m, const PatchSample& raw, bool gaussian = true) {
    Tape<T> tape;
    tape.set_grad_enabled(false);
    std::mt19937_64 rng(0);
    const std::array<PatchSample, 1> one{raw};
    const auto w = m.attention.weights(tape, model::indices_to_tensor<T>(one), false, rng, gaussian);
    std::array<double, kPatchPixels> out{};
    for (std::size_t p = 0; p < kPatchPixels; ++p) out[p] = w[p];
    return out;
}

/// Center residual of the physics constraint for raw patches (degC/day).
template <typename T>
std::vector<double> center_residuals(const model::SpycerModel<T>& m, std::span<const PatchSample> raw,
                                     const physics::PhysicsConfig& phys, std::size_t chunk = 256) {
    std::vector<double> out(raw.size());
    std::vector<PatchSample> norm;
    for (std::size_t start = 0; start < raw.size(); start += chunk) {
        const std::size_t end = std::min(raw.size(), start + chunk);
        norm.clear();
        for (std::size_t i = start; i < end; ++i) norm.push_back(normalize_inputs(raw[i], m.stats));
        Tape<T> tape;
        tape.set_grad_enabled(false);
        TrainConfig cfg;
        cfg.physics = phys;
        const std::size_t n = end - start;
        const auto x = model::patches_to_tensor<T>(norm);
        auto o = m.net.forward(tape, physics::time_perturbed_batch(x, phys.eps_t));
        std::vector<double> days(n);
        std::vector<T> lst(n * kPatchPixels);
        for (std::size_t i = 0; i < n; ++i) {
            days[i] = raw[start + i].timestamp.day_of_year;
            for (std::size_t p = 0; p < kPatchPixels; ++p) lst[i * kPatchPixels + p] = static_cast<T>(raw[start + i].lst_patch_raw[p]);
        }
        auto dTdt = physics::combine_time_derivative(tape, tape.slice(o, 1, n, 2 * n), tape.slice(o, 1, 2 * n, 3 * n),
                                                     tape.slice(o, 1, 3 * n, 4 * n), tape.slice(o, 1, 4 * n, 5 * n),
                                                     days, phys.eps_t);
        auto r = physics::adr_residual(tape, tape.slice(o, 1, 0, n),
                                       Tensor<T>({1, n, kPatchSize, kPatchSize}, std::move(lst)), dTdt, phys);
        for (std::size_t i = 0; i < n; ++i)
            out[start + i] = r[i * kInteriorPixels + (kInterior / 2) * kInterior + kInterior / 2];
    }
    return out;
}

} // namespace spycer::train
