/**
 * @file baselines.hpp
 * @brief Pixel-wise reference regressors (LR, RF, GB, MLP) and IDW maps.
 *
 * Baselines see only the sensor pixel: center LST, scene-normalized absolute
 * coordinates, time encoding and the three spectral indices.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spycer/grid.hpp"
#include "spycer/optim.hpp"
#include "spycer/parallel.hpp"
#include "spycer/tensor.hpp"

namespace spycer::baselines {

inline constexpr std::size_t kFeatures = 8;
using Features = std::array<double, kFeatures>;

struct FeatureRow {
    Features x{};
    double target = 0.0;
};

/// [LST, x, y, sin_t, cos_t, NDVI, NDWI, NDBI] at the patch center; x and y
/// are column and row scaled to [0, 1] over the scene.
inline FeatureRow feature_row(const PatchSample& raw, const GridMeta& meta) {
    FeatureRow r;
    auto center = [&](int ch) { return static_cast<double>(raw.at(ch, kPatchRadius, kPatchRadius)); };
    r.x = {center(kLst),
           static_cast<double>(raw.grid_pixel.col) / std::max(1, meta.width - 1),
           static_cast<double>(raw.grid_pixel.row) / std::max(1, meta.height - 1),
           center(kSinT),
           center(kCosT),
           center(kNdvi),
           center(kNdwi),
           center(kNdbi)};
    r.target = raw.target_nsat;
    return r;
}

inline std::vector<FeatureRow> feature_rows(std::span<const PatchSample> raw, const GridMeta& meta) {
    std::vector<FeatureRow> out;
    out.reserve(raw.size());
    for (const auto& p : raw) out.push_back(feature_row(p, meta));
    return out;
}

// ----- linear regression ----------------------------------------------------

struct LinearModel {
    double intercept = 0.0;
    Features coef{};

    double predict(const Features& x) const {
        double y = intercept;
        for (std::size_t j = 0; j < kFeatures; ++j) y += coef[j] * x[j];
        return y;
    }
};

/// Centered ridge regression (ridge 1e-8) solved in double precision.
inline LinearModel fit_lr(std::span<const FeatureRow> rows, double ridge = 1e-8) {
    if (rows.size() < 2) fail(ErrorKind::InsufficientData, "linear regression needs >= 2 rows");
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(kFeatures);
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rows[static_cast<std::size_t>(i)].x[static_cast<std::size_t>(j)];
        y(i) = rows[static_cast<std::size_t>(i)].target;
    }
    bool identical = true;
    for (Eigen::Index i = 1; i < n && identical; ++i) identical = X.row(i) == X.row(0);
    if (identical) fail(ErrorKind::Degenerate, "all feature rows are identical");

    const Eigen::RowVectorXd mx = X.colwise().mean();
    const double my = y.mean();
    X.rowwise() -= mx;
    y.array() -= my;
    Eigen::MatrixXd A = X.transpose() * X;
    A.diagonal().array() += ridge;
    const Eigen::VectorXd beta = A.ldlt().solve(X.transpose() * y);

    LinearModel m;
    for (Eigen::Index j = 0; j < p; ++j) m.coef[static_cast<std::size_t>(j)] = beta(j);
    m.intercept = my - mx.dot(beta);
    return m;
}

// ----- regression trees -----------------------------------------------------

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(const Features& x) const {
        int k = 0;
        while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(k)];
            k = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(k)].value;
    }
};

namespace detail {

struct TreeBuilder {
    std::span<const FeatureRow> rows;
    std::span<const double> targets;
    int max_depth = 0;
    std::size_t min_leaf = 1;
    Tree tree;
    std::vector<std::pair<double, double>> scratch;

    int build(std::vector<std::size_t>& idx, std::size_t begin, std::size_t end, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        double sum = 0.0;
        for (std::size_t i = begin; i < end; ++i) sum += targets[idx[i]];
        const std::size_t n = end - begin;
        tree.nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(n);
        if (depth >= max_depth || n < 2 * min_leaf) return id;

        double best_gain = 0.0, best_thr = 0.0;
        int best_f = -1;
        const double total_sq = sum * sum / static_cast<double>(n);
        for (std::size_t f = 0; f < kFeatures; ++f) {
            scratch.clear();
            for (std::size_t i = begin; i < end; ++i) scratch.emplace_back(rows[idx[i]].x[f], targets[idx[i]]);
            std::sort(scratch.begin(), scratch.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            double left = 0.0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                left += scratch[k].second;
                if (scratch[k].first == scratch[k + 1].first) continue;
                const std::size_t nl = k + 1, nr = n - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                const double right = sum - left;
                const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) - total_sq;
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_f = static_cast<int>(f);
                    best_thr = 0.5 * (scratch[k].first + scratch[k + 1].first);
                }
            }
        }
        if (best_f < 0) return id;
        const auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                        idx.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t i) {
                                            return rows[i].x[static_cast<std::size_t>(best_f)] <= best_thr;
                                        });
        const auto split = static_cast<std::size_t>(mid - idx.begin());
        const int l = build(idx, begin, split, depth + 1);
        const int r = build(idx, split, end, depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best_f;
        node.threshold = best_thr;
        node.left = l;
        node.right = r;
        return id;
    }
};

} // namespace detail

/// Variance-reduction regression tree over the rows listed in `idx`
/// (duplicates allowed, as in a bootstrap sample).
inline Tree fit_tree(std::span<const FeatureRow> rows, std::span<const double> targets, std::vector<std::size_t> idx,
                     int max_depth) {
    detail::TreeBuilder b;
    b.rows = rows;
    b.targets = targets;
    b.max_depth = max_depth;
    b.build(idx, 0, idx.size(), 0);
    return std::move(b.tree);
}

enum class EnsembleMode { RandomForest, GradientBoosting };

struct EnsembleConfig {
    EnsembleMode mode = EnsembleMode::RandomForest;
    int trees = 300;
    int max_depth = 15;
    double shrinkage = 1.0;

    static EnsembleConfig random_forest() { return {EnsembleMode::RandomForest, 300, 15, 1.0}; }
    static EnsembleConfig gradient_boosting() { return {EnsembleMode::GradientBoosting, 500, 6, 0.05}; }
};

struct TreeEnsemble {
    EnsembleConfig config;
    double base = 0.0;
    std::vector<Tree> trees;

    double predict(const Features& x) const {
        if (config.mode == EnsembleMode::RandomForest) {
            double s = 0.0;
            for (const auto& t : trees) s += t.predict(x);
            return s / static_cast<double>(trees.size());
        }
        double y = base;
        for (const auto& t : trees) y += config.shrinkage * t.predict(x);
        return y;
    }
};

inline TreeEnsemble fit_forest(std::span<const FeatureRow> rows, const EnsembleConfig& cfg, std::uint64_t seed,
                               unsigned threads = 1) {
    if (rows.size() < 5) fail(ErrorKind::InsufficientData, "tree ensembles need >= 5 rows");
    if (cfg.trees < 1 || cfg.max_depth < 0) fail(ErrorKind::Config, "bad ensemble configuration");
    TreeEnsemble ens;
    ens.config = cfg;
    const std::size_t n = rows.size();
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = rows[i].target;

    if (cfg.mode == EnsembleMode::RandomForest) {
        ens.trees.resize(static_cast<std::size_t>(cfg.trees));
        parallel_for(ens.trees.size(), threads, [&](std::size_t t) {
            std::mt19937_64 rng(derive_seed(seed, t));
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            std::vector<std::size_t> idx(n);
            for (auto& i : idx) i = pick(rng);
            ens.trees[t] = fit_tree(rows, y, std::move(idx), cfg.max_depth);
        });
        return ens;
    }

    ens.base = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    std::vector<double> pred(n, ens.base), resid(n);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (int t = 0; t < cfg.trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - pred[i];
        ens.trees.push_back(fit_tree(rows, resid, all, cfg.max_depth));
        for (std::size_t i = 0; i < n; ++i) pred[i] += cfg.shrinkage * ens.trees.back().predict(rows[i].x);
    }
    return ens;
}

// ----- MLP --------------------------------------------------------------------

struct MlpConfig {
    int hidden = 64;
    double lr = 0.03;
    int epochs = 2000;
};

struct Mlp {
    std::array<ad::Tensor<double>, 3> weight; // [in, out]
    std::array<ad::Tensor<double>, 3> bias;
    Features mean{};
    Features stddev{};
    double target_mean = 0.0;
    double target_std = 1.0;

    ad::Tensor<double> forward(ad::Tape<double>& tape, const ad::Tensor<double>& x) const {
        auto h = tape.relu(tape.add_bias(tape.matmul(x, weight[0]), bias[0]));
        h = tape.relu(tape.add_bias(tape.matmul(h, weight[1]), bias[1]));
        return tape.add_bias(tape.matmul(h, weight[2]), bias[2]);
    }

    ad::Tensor<double> inputs(std::span<const Features> xs) const {
        std::vector<double> v;
        v.reserve(xs.size() * kFeatures);
        for (const auto& x : xs)
            for (std::size_t j = 0; j < kFeatures; ++j) v.push_back((x[j] - mean[j]) / stddev[j]);
        return ad::Tensor<double>({xs.size(), kFeatures}, std::move(v));
    }

    std::vector<double> predict(std::span<const Features> xs) const {
        ad::Tape<double> tape;
        tape.set_grad_enabled(false);
        const auto out = forward(tape, inputs(xs));
        std::vector<double> y(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) y[i] = out[i] * target_std + target_mean;
        return y;
    }

    double predict(const Features& x) const { return predict(std::span<const Features>(&x, 1))[0]; }
};

/// Two relu hidden layers, full-batch Adam on standardized inputs/targets.
inline Mlp fit_mlp(std::span<const FeatureRow> rows, std::uint64_t seed, const MlpConfig& cfg = {}) {
    if (rows.size() < 5) fail(ErrorKind::InsufficientData, "MLP needs >= 5 rows");
    Mlp m;
    const double n = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < kFeatures; ++j) {
        double s = 0.0, sq = 0.0;
        for (const auto& r : rows) {
            s += r.x[j];
            sq += r.x[j] * r.x[j];
        }
        m.mean[j] = s / n;
        m.stddev[j] = std::max(std::sqrt(std::max(0.0, sq / n - m.mean[j] * m.mean[j])), 1e-6);
    }
    double s = 0.0, sq = 0.0;
    for (const auto& r : rows) {
        s += r.target;
        sq += r.target * r.target;
    }
    m.target_mean = s / n;
    m.target_std = std::max(std::sqrt(std::max(0.0, sq / n - m.target_mean * m.target_mean)), 1e-6);

    std::mt19937_64 rng(seed);
    const std::array<std::size_t, 4> sizes{kFeatures, static_cast<std::size_t>(cfg.hidden),
                                           static_cast<std::size_t>(cfg.hidden), 1};
    std::vector<ad::Tensor<double>> params;
    for (std::size_t l = 0; l < 3; ++l) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(sizes[l])));
        std::vector<double> w(sizes[l] * sizes[l + 1]);
        for (auto& v : w) v = normal(rng);
        m.weight[l] = ad::Tensor<double>({sizes[l], sizes[l + 1]}, std::move(w), true);
        m.bias[l] = ad::Tensor<double>::zeros({sizes[l + 1]}, true);
        params.push_back(m.weight[l]);
        params.push_back(m.bias[l]);
    }

    std::vector<Features> xs;
    std::vector<double> ys;
    for (const auto& r : rows) {
        xs.push_back(r.x);
        ys.push_back((r.target - m.target_mean) / m.target_std);
    }
    const auto x = m.inputs(xs);
    const ad::Tensor<double> y({rows.size(), 1}, ys);
    ad::Adam<double> opt(params, cfg.lr);
    for (int e = 0; e < cfg.epochs; ++e) {
        ad::Tape<double> tape;
        opt.zero_grad();
        auto loss = tape.mean(tape.square(tape.sub(m.forward(tape, x), y)));
        tape.backward(loss);
        opt.step();
    }
    return m;
}

// ----- IDW --------------------------------------------------------------------

struct PointValue {
    double x = 0.0; // meters
    double y = 0.0;
    double value = 0.0;
};

inline double idw_at(std::span<const PointValue> points, double x, double y, double power = 2.0) {
    if (points.empty()) fail(ErrorKind::NoSensors, "IDW needs at least one sensor");
    double num = 0.0, den = 0.0;
    for (const auto& p : points) {
        const double d = std::hypot(x - p.x, y - p.y);
        if (d == 0.0) return p.value;
        const double w = std::pow(d, -power);
        num += w * p.value;
        den += w;
    }
    return num / den;
}

/// IDW surface over every pixel center from the sensors reading at `date`.
inline VariableGrid idw_map(const SensorNetwork& sensors, const std::string& date, const GridMeta& meta,
                            double power = 2.0) {
    std::vector<PointValue> pts;
    for (const auto& s : sensors.sensors) {
        const auto it = s.readings.find(date);
        if (it == s.readings.end()) continue;
        const auto [x, y] = meta.pixel_center(s.pixel_row, s.pixel_col);
        pts.push_back({x, y, it->second});
    }
    if (pts.empty()) fail(ErrorKind::NoSensors, "no sensor readings at " + date);
    VariableGrid g(meta);
    for (int r = 0; r < meta.height; ++r)
        for (int c = 0; c < meta.width; ++c) {
            const auto [x, y] = meta.pixel_center(r, c);
            g.values[g.index(r, c)] = static_cast<float>(idw_at(pts, x, y, power));
        }
    return g;
}

// ----- uniform interface ----------------------------------------------------

using Predictor = std::function<double(const Features&)>;

inline bool is_baseline(const std::string& method) {
    return method == "lr" || method == "rf" || method == "gb" || method == "mlp";
}

/// Fits one of lr, rf, gb, mlp and returns a pointwise predictor.
inline Predictor fit_baseline(const std::string& method, std::span<const FeatureRow> rows, std::uint64_t seed,
                              unsigned threads = 1, int mlp_epochs = 2000) {
    if (method == "lr") return [m = fit_lr(rows)](const Features& x) { return m.predict(x); };
    if (method == "rf")
        return [m = fit_forest(rows, EnsembleConfig::random_forest(), seed, threads)](const Features& x) {
            return m.predict(x);
        };
    if (method == "gb")
        return [m = fit_forest(rows, EnsembleConfig::gradient_boosting(), seed, threads)](const Features& x) {
            return m.predict(x);
        };
    if (method == "mlp") {
        MlpConfig cfg;
        cfg.epochs = mlp_epochs;
        return [m = fit_mlp(rows, seed, cfg)](const Features& x) { return m.predict(x); };
    }
    fail(ErrorKind::Config, "unknown baseline method '" + method + "'");
}

} // namespace spycer::baselines
