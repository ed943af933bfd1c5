/**
 * @file gradcheck.hpp
 * @brief Analytic gradients against central finite differences (double).
 *
 * Every check builds a scalar loss from seeded random inputs, runs the
 * backward pass, then perturbs each parameter entry by +-eps. The error of
 * one tensor is max|analytic - numeric| / max(max|numeric|, max|analytic|),
 * with the denominator floored at 1e-3 of the largest gradient in the
 * instance (some gradients are exactly 0, e.g. a bias feeding a softmax).
 * Instances whose relu inputs come within `kink` of 0 are redrawn.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spycer/grid.hpp"
#include "spycer/model.hpp"
#include "spycer/parallel.hpp"
#include "spycer/tensor.hpp"
#include "spycer/train.hpp"

namespace spycer::gradcheck {

using ad::Tape;
using Tensor = ad::Tensor<double>;

inline constexpr double kScaleFloor = 1e-3;

struct Options {
    int seeds = 10;
    double eps = 1e-5;
    double tolerance = 1e-6;
    double kink = 1e-3;
    std::uint64_t seed = 7;
    bool inject_fault = false;
};

struct CheckResult {
    std::string name;
    double max_rel_error = 0.0;
    int instances = 0;
    bool passed = false;
};

/// A loss over a set of differentiable tensors; `build` is re-run for
/// every finite-difference evaluation and must be deterministic.
struct Instance {
    std::vector<Tensor> params;
    std::function<Tensor(Tape<double>&)> build;
};

/// Max relative error over all tensors of one instance, or a negative value
/// when the instance sits too close to a relu kink.
inline double instance_error(Instance& inst, const Options& opt) {
    for (auto& p : inst.params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape<double> tape;
    tape.inject_fault(opt.inject_fault);
    const auto loss = inst.build(tape);
    if (tape.relu_margin() < opt.kink) return -1.0;
    tape.backward(loss);

    auto eval = [&] {
        Tape<double> t;
        t.set_grad_enabled(false);
        return inst.build(t).item();
    };
    std::vector<std::pair<double, double>> per_tensor; // (max diff, max magnitude)
    double global = 0.0;
    for (auto& p : inst.params) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double v = p[i];
            p[i] = v + opt.eps;
            const double up = eval();
            p[i] = v - opt.eps;
            const double down = eval();
            p[i] = v;
            const double numeric = (up - down) / (2.0 * opt.eps);
            diff = std::max(diff, std::abs(analytic[i] - numeric));
            scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
        }
        per_tensor.emplace_back(diff, scale);
        global = std::max(global, scale);
    }
    double worst = 0.0;
    for (const auto& [diff, scale] : per_tensor) {
        const double denom = std::max(scale, kScaleFloor * global);
        if (denom > 0.0) worst = std::max(worst, diff / denom);
    }
    return worst;
}

/// Runs `make(rng)` for `opt.seeds` seeds, redrawing kink-adjacent
/// instances (up to 200 draws per seed).
inline CheckResult run_check(const std::string& name, const std::function<Instance(std::mt19937_64&)>& make,
                             const Options& opt) {
    CheckResult r{name, 0.0, 0, true};
    for (int s = 0; s < opt.seeds; ++s) {
        std::mt19937_64 rng(derive_seed(opt.seed, std::hash<std::string>{}(name) + static_cast<std::uint64_t>(s)));
        double err = -1.0;
        for (int attempt = 0; attempt < 200 && err < 0.0; ++attempt) {
            auto inst = make(rng);
            err = instance_error(inst, opt);
        }
        if (err < 0.0) fail(ErrorKind::NumericFailure, name + ": no kink-free instance found");
        r.max_rel_error = std::max(r.max_rel_error, err);
        ++r.instances;
    }
    r.passed = r.max_rel_error < opt.tolerance;
    return r;
}

// ----- instance factories ---------------------------------------------------

inline Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

/// sum(c * y) with fixed random c, so every output entry carries a distinct
/// upstream gradient.
inline Tensor weighted_sum(Tape<double>& tape, const Tensor& y, const Tensor& c) {
    return tape.sum(tape.mul(y, c));
}

/// Raw synthetic patches with plausible ranges.
inline std::vector<PatchSample> random_patches(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<PatchSample> out(n);
    for (auto& p : out) {
        p.timestamp.day_of_year = 365.0 * (u(rng) + 1.0) / 2.0;
        p.timestamp.date_label = "2025-01-01";
        const auto [s, c] = encode_time(p.timestamp.day_of_year);
        const double base = 20.0 + 5.0 * u(rng);
        for (int r = 0; r < kPatchSize; ++r)
            for (int q = 0; q < kPatchSize; ++q) {
                const double lst = base + 3.0 * u(rng);
                p.lst_patch_raw[static_cast<std::size_t>(r * kPatchSize + q)] = static_cast<float>(lst);
                p.at(kLst, r, q) = static_cast<float>(lst);
                p.at(kXOff, r, q) = static_cast<float>(q - kPatchRadius) / kPatchRadius;
                p.at(kYOff, r, q) = static_cast<float>(r - kPatchRadius) / kPatchRadius;
                p.at(kSinT, r, q) = static_cast<float>(s);
                p.at(kCosT, r, q) = static_cast<float>(c);
                for (int k = kNdvi; k <= kNdbi; ++k) p.at(k, r, q) = static_cast<float>(0.9 * u(rng));
            }
        p.target_nsat = base + u(rng);
    }
    return out;
}

inline model::ModelConfig small_model() {
    model::ModelConfig c;
    c.width = 4;
    c.blocks = 2;
    c.heads = 2;
    c.attention_hidden = 4;
    return c;
}

inline std::vector<CheckResult> run_all(const Options& opt) {
    std::vector<CheckResult> out;
    auto add = [&](const std::string& name, auto make) { out.push_back(run_check(name, make, opt)); };

    add("elementwise add/sub/mul", [](std::mt19937_64& rng) {
        auto a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
        const auto c = random_tensor({3, 5}, rng).detach();
        return Instance{{a, b}, [a, b, c](Tape<double>& t) {
                            return weighted_sum(t, t.mul(t.add(a, b), t.sub(a, b)), c);
                        }};
    });
    add("affine/square/mean", [](std::mt19937_64& rng) {
        auto a = random_tensor({4, 3}, rng);
        const auto c = random_tensor({4, 3}, rng).detach();
        return Instance{{a}, [a, c](Tape<double>& t) {
                            return t.add(weighted_sum(t, t.square(t.affine(a, 1.7, -0.3)), c), t.mean(t.square(a)));
                        }};
    });
    add("relu", [](std::mt19937_64& rng) {
        auto a = random_tensor({6, 7}, rng);
        const auto c = random_tensor({6, 7}, rng).detach();
        return Instance{{a}, [a, c](Tape<double>& t) { return weighted_sum(t, t.relu(a), c); }};
    });
    add("dropout (train)", [](std::mt19937_64& rng) {
        auto a = random_tensor({5, 8}, rng);
        const auto c = random_tensor({5, 8}, rng).detach();
        const auto mask_seed = rng();
        return Instance{{a}, [a, c, mask_seed](Tape<double>& t) {
                            std::mt19937_64 r(mask_seed);
                            return weighted_sum(t, t.dropout(a, 0.3, true, r), c);
                        }};
    });
    add("masked softmax", [](std::mt19937_64& rng) {
        auto a = random_tensor({3, 49}, rng, -2.0, 2.0);
        const auto c = random_tensor({3, 49}, rng).detach();
        return Instance{{a}, [a, c](Tape<double>& t) {
                            static const auto mask = model::center_mask();
                            return weighted_sum(t, t.softmax(a, 1, mask), c);
                        }};
    });
    add("normalize", [](std::mt19937_64& rng) {
        auto a = random_tensor({3, 6}, rng, 0.1, 1.0);
        const auto c = random_tensor({3, 6}, rng).detach();
        return Instance{{a}, [a, c](Tape<double>& t) { return weighted_sum(t, t.normalize(a, 1), c); }};
    });
    add("reshape/slice/concat/crop", [](std::mt19937_64& rng) {
        auto a = random_tensor({1, 4, 7, 7}, rng), b = random_tensor({1, 2, 7, 7}, rng);
        const auto c = random_tensor({2, 3, 5, 5}, rng).detach();
        return Instance{{a, b}, [a, b, c](Tape<double>& t) {
                            auto j = t.concat({t.slice(a, 1, 1, 4), t.slice(t.reshape(b, {2, 1, 7, 7}), 0, 0, 1)}, 1);
                            j = t.concat({j, t.square(j)}, 0);
                            return weighted_sum(t, t.slice(t.crop(j, 1, 2, 5, 5), 1, 0, 3), c);
                        }};
    });
    add("matmul/add_bias", [](std::mt19937_64& rng) {
        auto a = random_tensor({4, 3}, rng), b = random_tensor({3, 5}, rng), bias = random_tensor({5}, rng);
        const auto c = random_tensor({4, 5}, rng).detach();
        return Instance{{a, b, bias}, [a, b, bias, c](Tape<double>& t) {
                            return weighted_sum(t, t.add_bias(t.matmul(a, b), bias), c);
                        }};
    });
    add("conv2d 3x3", [](std::mt19937_64& rng) {
        auto x = random_tensor({3, 2, 7, 7}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
        const auto c = random_tensor({4, 2, 7, 7}, rng).detach();
        return Instance{{x, w, b}, [x, w, b, c](Tape<double>& t) { return weighted_sum(t, t.conv2d(x, w, b), c); }};
    });
    add("conv2d 1x1", [](std::mt19937_64& rng) {
        auto x = random_tensor({3, 2, 7, 7}, rng), w = random_tensor({2, 3, 1, 1}, rng), b = random_tensor({2}, rng);
        const auto c = random_tensor({2, 2, 7, 7}, rng).detach();
        return Instance{{x, w, b}, [x, w, b, c](Tape<double>& t) { return weighted_sum(t, t.conv2d(x, w, b), c); }};
    });
    add("spycer network", [](std::mt19937_64& rng) {
        auto m = std::make_shared<model::SpycerModel<double>>(small_model(), rng());
        m->net.target_mean = 20.0;
        m->net.target_std = 2.0;
        const auto raw = random_patches(2, rng);
        m->stats = ChannelStats::from_samples(raw);
        std::vector<PatchSample> norm;
        for (const auto& p : raw) norm.push_back(normalize_inputs(p, m->stats));
        const auto x = model::patches_to_tensor<double>(norm);
        const auto c = random_tensor({1, 2, 7, 7}, rng).detach();
        return Instance{model::tensors_of(m->net.parameters()),
                        [m, x, c](Tape<double>& t) { return weighted_sum(t, m->net.forward(t, x), c); }};
    });
    add("attention module", [](std::mt19937_64& rng) {
        auto m = std::make_shared<model::SpycerModel<double>>(small_model(), rng());
        const auto raw = random_patches(2, rng);
        const auto idx = model::indices_to_tensor<double>(raw);
        const auto c = random_tensor({2, 49}, rng).detach();
        const auto drop_seed = rng();
        return Instance{model::tensors_of(m->attention.parameters()), [m, idx, c, drop_seed](Tape<double>& t) {
                            std::mt19937_64 r(drop_seed);
                            return weighted_sum(t, m->attention.weights(t, idx, true, r, true), c);
                        }};
    });
    add("patch loss (full model)", [](std::mt19937_64& rng) {
        auto m = std::make_shared<model::SpycerModel<double>>(small_model(), rng());
        m->net.target_mean = 20.0;
        m->net.target_std = 2.0;
        auto raw = std::make_shared<std::vector<PatchSample>>(random_patches(2, rng));
        m->stats = ChannelStats::from_samples(*raw);
        auto norm = std::make_shared<std::vector<PatchSample>>();
        for (const auto& p : *raw) norm->push_back(normalize_inputs(p, m->stats));
        auto params = model::tensors_of(m->net.parameters());
        for (const auto& p : model::tensors_of(m->attention.parameters())) params.push_back(p);
        const auto drop_seed = rng();
        return Instance{params, [m, raw, norm, drop_seed](Tape<double>& t) {
                            std::mt19937_64 r(drop_seed);
                            train::TrainConfig cfg;
                            return train::batch_loss<double>(t, *m, *norm, *raw, cfg, true, r).total;
                        }};
    });
    return out;
}

} // namespace spycer::gradcheck
