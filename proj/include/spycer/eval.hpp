/**
 * @file eval.hpp
 * @brief Monte Carlo cross-validation, metrics and exported artifacts.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spycer/baselines.hpp"
#include "spycer/grid.hpp"
#include "spycer/parallel.hpp"
#include "spycer/train.hpp"

namespace spycer::eval {

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

struct FoldPlan {
    std::uint64_t master_seed = 0;
    std::vector<Fold> folds;
};

inline std::size_t test_count(std::size_t n) { return (n + 4) / 5; }

/// Independent uniform draws of ceil(0.2 N) test sensors per fold.
inline FoldPlan make_folds(const std::vector<std::string>& ids, int n_folds, std::uint64_t seed) {
    if (ids.size() < 5) fail(ErrorKind::InsufficientSensors, "cross-validation needs >= 5 sensors");
    if (n_folds < 1) fail(ErrorKind::Config, "folds must be >= 1");
    FoldPlan plan{seed, {}};
    const std::size_t k = test_count(ids.size());
    for (int f = 0; f < n_folds; ++f) {
        std::mt19937_64 rng(derive_seed(seed, 0xF01D0000ull + static_cast<std::uint64_t>(f)));
        std::vector<std::size_t> order(ids.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
        Fold fold;
        for (std::size_t i = 0; i < order.size(); ++i) (i < k ? fold.test_ids : fold.train_ids).push_back(ids[order[i]]);
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
    if (pred.empty() || pred.size() != truth.size()) fail(ErrorKind::EmptyInput, "rmse needs equal nonzero lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double mae(std::span<const double> pred, std::span<const double> truth) {
    if (pred.empty() || pred.size() != truth.size()) fail(ErrorKind::EmptyInput, "mae needs equal nonzero lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
    return s / static_cast<double>(pred.size());
}

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"spycer", "spycer_cfg1", "spycer_cfg2", "lr", "rf", "gb", "mlp", "oracle"};
    return m;
}

inline bool is_spycer(const std::string& m) { return m == "spycer" || m == "spycer_cfg1" || m == "spycer_cfg2"; }

inline train::Ablation ablation_of(const std::string& m) {
    if (m == "spycer_cfg1") return train::Ablation::NoNeighborPhysics;
    if (m == "spycer_cfg2") return train::Ablation::NoGaussian;
    return train::Ablation::Full;
}

struct EvalConfig {
    int folds = 10;
    std::uint64_t seed = 7;
    unsigned threads = 1;
    int mlp_epochs = 2000;
    train::TrainConfig train;
};

struct Prediction {
    std::string sensor;
    std::string date;
    double predicted = 0.0;
    double observed = 0.0;
};

struct FoldRecord {
    std::string method;
    int fold = 0;
    std::string month; // "all" for the whole fold
    double rmse = 0.0;
    double mae = 0.0;
    std::size_t count = 0;
};

struct Cell {
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    double mae_mean = 0.0;
    double mae_std = 0.0;
    int folds = 0;
};

struct MetricsTable {
    std::vector<std::string> methods;
    std::vector<std::string> months; // followed by "all"
    std::map<std::pair<std::string, std::string>, Cell> cells;

    const Cell& at(const std::string& method, const std::string& month) const {
        const auto it = cells.find({method, month});
        if (it == cells.end()) fail(ErrorKind::MissingVariable, "no metrics for " + method + "/" + month);
        return it->second;
    }

    std::string csv() const {
        std::string out = "method,month,rmse_mean,rmse_std,mae_mean,mae_std,folds\n";
        char buf[256];
        for (const auto& m : methods)
            for (const auto& mo : months) {
                const auto& c = at(m, mo);
                std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%d\n", m.c_str(), mo.c_str(), c.rmse_mean,
                              c.rmse_std, c.mae_mean, c.mae_std, c.folds);
                out += buf;
            }
        return out;
    }
};

struct ExperimentResult {
    MetricsTable table;
    std::vector<FoldRecord> records;
    std::vector<std::vector<Prediction>> predictions; // [method * folds + fold]

    std::string records_csv() const {
        std::string out = "method,fold,month,rmse,mae,count\n";
        char buf[256];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof buf, "%s,%d,%s,%.9g,%.9g,%zu\n", r.method.c_str(), r.fold, r.month.c_str(), r.rmse,
                          r.mae, r.count);
            out += buf;
        }
        return out;
    }
};

/// Raw patches of the given sensors for every date they have a reading.
inline std::vector<PatchSample> samples_for(const Scene& scene, const SensorNetwork& sensors,
                                            std::span<const std::string> ids) {
    return train::build_samples(scene, sensors, ids);
}

/// Trains `method` on `train_ids` and predicts every test patch.
inline std::vector<double> fit_predict(const std::string& method, const Scene& scene, const SensorNetwork& sensors,
                                       std::span<const std::string> train_ids, std::span<const PatchSample> test,
                                       std::uint64_t seed, const EvalConfig& cfg) {
    if (method == "oracle") {
        std::vector<double> out;
        for (const auto& p : test) out.push_back(p.target_nsat);
        return out;
    }
    if (is_spycer(method)) {
        auto tc = cfg.train;
        tc.seed = seed;
        tc.ablation = ablation_of(method);
        const auto trained = train::train<float>(scene, sensors, tc, train_ids);
        return train::predict_centers(trained.model, test);
    }
    if (baselines::is_baseline(method)) {
        const auto train_rows = baselines::feature_rows(samples_for(scene, sensors, train_ids), scene.meta);
        const auto predict = baselines::fit_baseline(method, train_rows, seed, 1, cfg.mlp_epochs);
        std::vector<double> out;
        for (const auto& p : test) out.push_back(predict(baselines::feature_row(p, scene.meta).x));
        return out;
    }
    fail(ErrorKind::Config, "unknown method '" + method + "'");
}

/// Runs every (method, fold) pair, scoring test-sensor readings per month and
/// overall. Each pair uses the seed derive_seed(master, fold), so all
/// methods of one fold start from the same stream.
inline ExperimentResult run_experiment(const Scene& scene, const SensorNetwork& sensors,
                                       const std::vector<std::string>& methods, const FoldPlan& plan,
                                       const EvalConfig& cfg) {
    for (const auto& m : methods)
        if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
            fail(ErrorKind::Config, "unknown method '" + m + "'");
    const std::size_t F = plan.folds.size();
    ExperimentResult res;
    res.predictions.resize(methods.size() * F);

    parallel_for(methods.size() * F, cfg.threads, [&](std::size_t task) {
        const auto& method = methods[task / F];
        const std::size_t f = task % F;
        const auto& fold = plan.folds[f];
        std::vector<PatchSample> test;
        std::vector<std::string> owner;
        for (const auto& id : fold.test_ids) {
            const std::array<std::string, 1> one{id};
            for (auto& p : samples_for(scene, sensors, one)) {
                test.push_back(std::move(p));
                owner.push_back(id);
            }
        }
        const auto preds =
            fit_predict(method, scene, sensors, fold.train_ids, test, derive_seed(plan.master_seed, f), cfg);
        auto& out = res.predictions[task];
        for (std::size_t i = 0; i < test.size(); ++i)
            out.push_back({owner[i], test[i].timestamp.date_label, preds[i], test[i].target_nsat});
    });

    auto& table = res.table;
    table.methods = methods;
    table.months = scene.months();
    table.months.push_back("all");
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::map<std::string, std::vector<std::pair<double, double>>> per_month;
        for (std::size_t f = 0; f < F; ++f) {
            const auto& preds = res.predictions[mi * F + f];
            for (const auto& month : table.months) {
                std::vector<double> p, t;
                for (const auto& q : preds)
                    if (month == "all" || q.date.substr(0, 7) == month) {
                        p.push_back(q.predicted);
                        t.push_back(q.observed);
                    }
                if (p.empty()) continue;
                const double r = rmse(p, t), a = mae(p, t);
                res.records.push_back({methods[mi], static_cast<int>(f), month, r, a, p.size()});
                per_month[month].push_back({r, a});
            }
        }
        for (const auto& month : table.months) {
            const auto& v = per_month[month];
            Cell c;
            c.folds = static_cast<int>(v.size());
            if (!v.empty()) {
                for (const auto& [r, a] : v) {
                    c.rmse_mean += r;
                    c.mae_mean += a;
                }
                c.rmse_mean /= static_cast<double>(v.size());
                c.mae_mean /= static_cast<double>(v.size());
                for (const auto& [r, a] : v) {
                    c.rmse_std += (r - c.rmse_mean) * (r - c.rmse_mean);
                    c.mae_std += (a - c.mae_mean) * (a - c.mae_mean);
                }
                c.rmse_std = std::sqrt(c.rmse_std / static_cast<double>(v.size()));
                c.mae_std = std::sqrt(c.mae_std / static_cast<double>(v.size()));
            }
            table.cells[{methods[mi], month}] = c;
        }
    }
    return res;
}

// ----- artifacts --------------------------------------------------------------

/// Center-pixel predictions at every pixel whose patch fits; 3-pixel nodata
/// margin.
template <typename T>
VariableGrid export_map(const model::SpycerModel<T>& m, const Scene& scene, const std::string& date) {
    const auto& ts = scene.date(date);
    VariableGrid g(scene.meta);
    std::vector<PatchSample> patches;
    for (int r = 0; r < scene.meta.height; ++r)
        for (int c = 0; c < scene.meta.width; ++c) {
            if (patch_is_complete(scene, r, c, ts)) patches.push_back(extract_patch_at(scene, {r, c}, ts));
            else g.set_nodata(r, c);
        }
    const auto pred = train::predict_centers(m, patches);
    for (std::size_t i = 0; i < patches.size(); ++i)
        g.at(patches[i].grid_pixel.row, patches[i].grid_pixel.col) = static_cast<float>(pred[i]);
    return g;
}

/// Pixel-wise baseline map over the same support as the SPyCer map.
inline VariableGrid export_map(const baselines::Predictor& predict, const Scene& scene, const std::string& date) {
    const auto& ts = scene.date(date);
    VariableGrid g(scene.meta);
    for (int r = 0; r < scene.meta.height; ++r)
        for (int c = 0; c < scene.meta.width; ++c) {
            if (!patch_is_complete(scene, r, c, ts)) {
                g.set_nodata(r, c);
                continue;
            }
            g.at(r, c) = static_cast<float>(predict(baselines::feature_row(extract_patch_at(scene, {r, c}, ts), scene.meta).x));
        }
    return g;
}

/// Center residual of the physics constraint at every pixel (degC/day).
template <typename T>
VariableGrid residual_map(const model::SpycerModel<T>& m, const Scene& scene, const std::string& date,
                          const physics::PhysicsConfig& phys) {
    const auto& ts = scene.date(date);
    VariableGrid g(scene.meta);
    std::vector<PatchSample> patches;
    for (int r = 0; r < scene.meta.height; ++r)
        for (int c = 0; c < scene.meta.width; ++c) {
            if (patch_is_complete(scene, r, c, ts)) patches.push_back(extract_patch_at(scene, {r, c}, ts));
            else g.set_nodata(r, c);
        }
    const auto res = train::center_residuals(m, patches, phys);
    for (std::size_t i = 0; i < patches.size(); ++i)
        g.at(patches[i].grid_pixel.row, patches[i].grid_pixel.col) = static_cast<float>(res[i]);
    return g;
}

/// Per-date prediction vs reading for the listed sensors. `predict` maps
/// raw patches to center predictions.
template <typename Predict>
std::string temporal_curves(Predict&& predict, const Scene& scene, const SensorNetwork& sensors,
                            std::span<const std::string> ids) {
    std::string out = "sensor,date,day_of_year,predicted_c,observed_c\n";
    char buf[256];
    for (const auto& id : ids) {
        const auto* s = sensors.find(id);
        if (!s) fail(ErrorKind::MissingVariable, "unknown sensor '" + id + "'");
        std::vector<PatchSample> patches;
        for (const auto& d : scene.dates)
            if (s->readings.count(d.date_label) && patch_is_complete(scene, s->pixel_row, s->pixel_col, d))
                patches.push_back(extract_patch(scene, *s, d.date_label));
        const std::vector<double> pred = predict(std::span<const PatchSample>(patches));
        for (std::size_t i = 0; i < patches.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s,%s,%g,%.6f,%.6f\n", id.c_str(), patches[i].timestamp.date_label.c_str(),
                          patches[i].timestamp.day_of_year, pred[i], patches[i].target_nsat);
            out += buf;
        }
    }
    return out;
}

/// 7 rows of 7 comma-separated weights.
inline std::string attention_csv(const std::array<double, kPatchPixels>& w) {
    std::string out;
    char buf[64];
    for (int r = 0; r < kPatchSize; ++r) {
        for (int c = 0; c < kPatchSize; ++c) {
            std::snprintf(buf, sizeof buf, c ? ",%.9g" : "%.9g", w[static_cast<std::size_t>(r * kPatchSize + c)]);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

} // namespace spycer::eval
