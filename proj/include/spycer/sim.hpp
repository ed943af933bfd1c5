/**
 * @file sim.hpp
 * @brief Synthetic scene generator and diffusion-reaction integrator.
 *
 * Air temperature evolves as
 *
 *   dT_a/dt = K_eff * Lap(T_a) - (u, v) . grad(T_a) + alpha * (T_s - T_a)
 *
 * with K_eff = K * h^2 per day, so that K is a dimensionless coefficient
 * and K_eff * Lap5 = K * (N + S + E + W - 4C) in degC/day. Time is in
 * days, h in meters. Explicit Euler, 5-point stencil, first-order upwind
 * advection, zero-flux boundaries. The land surface forcing is held
 * piecewise constant: over (d_{k-1}, d_k] it equals the LST of date k.
 *
 * Class index means, LST offsets and the seasonal curve are synthetic
 * constants of this generator.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <tuple>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "spycer/error.hpp"
#include "spycer/grid.hpp"
#include "spycer/parallel.hpp"

namespace spycer::sim {

enum class LandClass : std::uint8_t { Vegetation = 0, Water = 1, BuiltUp = 2, Bare = 3 };

inline constexpr std::array<const char*, 4> kClassNames{"vegetation", "water", "built_up", "bare"};

// NDVI, NDWI, NDBI means per class.
inline constexpr std::array<std::array<double, 3>, 4> kClassIndexMeans{{
    {0.7, -0.3, -0.4},
    {-0.1, 0.6, -0.5},
    {0.1, -0.4, 0.5},
    {0.2, -0.2, 0.1},
}};
inline constexpr std::array<double, 4> kClassLstOffset{-2.0, -4.0, 4.0, 2.0};
inline constexpr double kIndexNoiseStd = 0.05;

inline double seasonal_lst(double day) {
    return 15.0 + 10.0 * std::sin(2.0 * std::numbers::pi * (day - 80.0) / kDaysPerYear);
}

struct SimConfig {
    GridMeta grid{128, 128, 10.0, 500000.0, 4800000.0, "UTM 31N"};
    int n_dates = 12;
    double date_spacing_days = 15.0;
    double first_day = 90.0; // zero-based day of year (90 = 1 April)
    int year = 2025;
    double spinup_days = 15.0;
    double dt = 0.25;        // initial Euler sub-step, days; halved until stable
    double K_true = 0.8;
    double alpha_true = 0.5;
    double wind_u = 0.0;     // m/day, eastward
    double wind_v = 0.0;     // m/day, northward
    double noise_lst_std = 2.0;
    double noise_sensor_std = 0.3;
    double lst_field_amplitude = 3.0;
    double landcover_scale_px = 12.0; // shortest cosine-mode wavelength
    std::array<double, 4> class_fractions{0.4, 0.1, 0.3, 0.2}; // veg, water, built, bare
    int n_sensors = 33;
    int min_separation_px = 5;
    std::uint64_t seed = 7;

    void validate() const {
        grid.validate();
        if (n_dates < 1) fail(ErrorKind::Config, "n_dates must be >= 1");
        if (!(date_spacing_days > 0.0)) fail(ErrorKind::Config, "date_spacing_days must be > 0");
        if (!(first_day >= 0.0)) fail(ErrorKind::Config, "first_day must be >= 0");
        if (first_day + (n_dates - 1) * date_spacing_days >= kDaysPerYear)
            fail(ErrorKind::Config, "dates must stay within one year");
        if (!(spinup_days >= 0.0)) fail(ErrorKind::Config, "spinup_days must be >= 0");
        if (!(dt > 0.0)) fail(ErrorKind::Config, "dt must be > 0");
        if (!(K_true >= 0.0) || !(alpha_true >= 0.0))
            fail(ErrorKind::Config, "K_true and alpha_true must be >= 0");
        if (!(noise_lst_std >= 0.0) || !(noise_sensor_std >= 0.0))
            fail(ErrorKind::Config, "noise levels must be >= 0");
        if (n_sensors < 5) fail(ErrorKind::Config, "n_sensors must be >= 5");
        double total = 0.0;
        for (double f : class_fractions) {
            if (!(f >= 0.0)) fail(ErrorKind::Config, "class fractions must be >= 0");
            total += f;
        }
        if (!(total > 0.0)) fail(ErrorKind::Config, "class fractions must not all be 0");
    }

    /// Left-hand side of the explicit stability bound for a sub-step.
    double stability_number(double step) const {
        const double h = grid.resolution_m;
        return step * (4.0 * K_true + alpha_true + std::abs(wind_u) / h + std::abs(wind_v) / h);
    }
};

inline nlohmann::json to_json(const SimConfig& c) {
    return {
        {"grid", {{"width", c.grid.width}, {"height", c.grid.height},
                  {"resolution_m", c.grid.resolution_m}, {"origin_x", c.grid.origin_x},
                  {"origin_y", c.grid.origin_y}, {"crs_label", c.grid.crs_label}}},
        {"n_dates", c.n_dates},
        {"date_spacing_days", c.date_spacing_days},
        {"first_day", c.first_day},
        {"year", c.year},
        {"spinup_days", c.spinup_days},
        {"dt", c.dt},
        {"K_true", c.K_true},
        {"alpha_true", c.alpha_true},
        {"wind_u", c.wind_u},
        {"wind_v", c.wind_v},
        {"noise_lst_std", c.noise_lst_std},
        {"noise_sensor_std", c.noise_sensor_std},
        {"lst_field_amplitude", c.lst_field_amplitude},
        {"landcover_scale_px", c.landcover_scale_px},
        {"class_fractions", c.class_fractions},
        {"n_sensors", c.n_sensors},
        {"min_separation_px", c.min_separation_px},
        {"seed", c.seed},
    };
}

/// Sum of seeded cosine modes with roughly unit variance.
class CosineField {
public:
    CosineField(std::mt19937_64& rng, int modes, double min_wavelength, double max_wavelength) {
        std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double amp = std::sqrt(2.0 / modes);
        for (int m = 0; m < modes; ++m) {
            const double theta = angle(rng);
            const double lambda = min_wavelength * std::pow(max_wavelength / min_wavelength, unit(rng));
            const double k = 2.0 * std::numbers::pi / lambda;
            modes_.push_back({k * std::cos(theta), k * std::sin(theta), angle(rng), amp});
        }
    }

    double operator()(int row, int col) const {
        double v = 0.0;
        for (const auto& m : modes_) v += m.amp * std::cos(m.kx * col + m.ky * row + m.phase);
        return v;
    }

private:
    struct Mode {
        double kx, ky, phase, amp;
    };
    std::vector<Mode> modes_;
};

struct Landcover {
    GridMeta meta;
    std::vector<LandClass> classes;
    VariableGrid ndvi, ndwi, ndbi;

    LandClass at(int row, int col) const {
        return classes[static_cast<std::size_t>(row) * static_cast<std::size_t>(meta.width) +
                       static_cast<std::size_t>(col)];
    }
};

/// Smooth random field thresholded into land classes by quantile, with
/// per-class spectral index means plus N(0, 0.05) noise, clamped to [-1, 1].
/// Classes are ordered along the field as water < vegetation < bare < built-up.
inline Landcover gen_landcover(const SimConfig& config) {
    std::mt19937_64 rng(derive_seed(config.seed, 1));
    const auto& meta = config.grid;
    const CosineField field(rng, 24, config.landcover_scale_px, 6.0 * config.landcover_scale_px);

    const std::size_t n = meta.cell_count();
    std::vector<double> values(n);
    for (int r = 0; r < meta.height; ++r)
        for (int c = 0; c < meta.width; ++c)
            values[static_cast<std::size_t>(r * meta.width + c)] = field(r, c);

    // Field order -> class order.
    const std::array<LandClass, 4> order{LandClass::Water, LandClass::Vegetation, LandClass::Bare,
                                         LandClass::BuiltUp};
    std::array<double, 4> frac{};
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
        frac[static_cast<std::size_t>(k)] =
            config.class_fractions[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        total += frac[static_cast<std::size_t>(k)];
    }
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::array<double, 3> cut{};
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) {
        acc += frac[static_cast<std::size_t>(k)] / total;
        const auto idx = static_cast<std::size_t>(std::clamp(acc * static_cast<double>(n), 0.0, static_cast<double>(n)));
        cut[static_cast<std::size_t>(k)] = idx >= n ? std::numeric_limits<double>::infinity()
                                                    : (idx == 0 ? -std::numeric_limits<double>::infinity() : sorted[idx]);
    }

    Landcover lc{meta, std::vector<LandClass>(n), VariableGrid(meta), VariableGrid(meta), VariableGrid(meta)};
    std::normal_distribution<double> noise(0.0, kIndexNoiseStd);
    for (std::size_t i = 0; i < n; ++i) {
        int k = 0;
        while (k < 3 && values[i] >= cut[static_cast<std::size_t>(k)]) ++k;
        // Skip empty classes so a zero fraction never receives cells.
        while (frac[static_cast<std::size_t>(k)] == 0.0) k = (k + 1) % 4;
        const LandClass cls = order[static_cast<std::size_t>(k)];
        lc.classes[i] = cls;
        const auto& means = kClassIndexMeans[static_cast<std::size_t>(cls)];
        lc.ndvi.values[i] = static_cast<float>(means[0] + noise(rng));
        lc.ndwi.values[i] = static_cast<float>(means[1] + noise(rng));
        lc.ndbi.values[i] = static_cast<float>(means[2] + noise(rng));
    }
    lc.ndvi.clamp_unit();
    lc.ndwi.clamp_unit();
    lc.ndbi.clamp_unit();
    return lc;
}

inline std::vector<TimeStamp> make_dates(const SimConfig& config) {
    std::vector<TimeStamp> dates;
    for (int k = 0; k < config.n_dates; ++k) {
        const double day = config.first_day + k * config.date_spacing_days;
        dates.push_back({day, format_date(config.year, static_cast<int>(std::floor(day)))});
    }
    return dates;
}

/// LST(i, j, d) = seasonal(d) + class offset + amplitude * field_d(i, j)
///                + N(0, noise_lst_std).
inline std::vector<VariableGrid> gen_lst_forcing(const Landcover& lc, const std::vector<TimeStamp>& dates,
                                                 const SimConfig& config) {
    std::mt19937_64 rng(derive_seed(config.seed, 2));
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto& meta = lc.meta;
    std::vector<VariableGrid> out;
    out.reserve(dates.size());
    for (const auto& ts : dates) {
        const CosineField field(rng, 16, 2.0 * config.landcover_scale_px, 8.0 * config.landcover_scale_px);
        const double base = seasonal_lst(ts.day_of_year);
        VariableGrid g(meta);
        for (int r = 0; r < meta.height; ++r) {
            for (int c = 0; c < meta.width; ++c) {
                const double smooth = config.lst_field_amplitude == 0.0 ? 0.0 : config.lst_field_amplitude * field(r, c);
                const double eps = noise(rng);
                const double v = base + kClassLstOffset[static_cast<std::size_t>(lc.at(r, c))] + smooth +
                                 config.noise_lst_std * eps;
                g.at(r, c) = static_cast<float>(v);
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// Dense double-precision field used by the integrator.
struct Field {
    int width = 0;
    int height = 0;
    std::vector<double> v;

    Field() = default;
    Field(int w, int h, double fill = 0.0)
        : width(w), height(h), v(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}
    explicit Field(const VariableGrid& g) : width(g.meta.width), height(g.meta.height), v(g.values.begin(), g.values.end()) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r * width + c)]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r * width + c)]; }
    /// Zero-flux (mirror) boundary read.
    double clamped(int r, int c) const {
        return at(std::clamp(r, 0, height - 1), std::clamp(c, 0, width - 1));
    }
};

struct AdrCoefficients {
    double K = 0.8;     // dimensionless; K_eff = K h^2 per day
    double alpha = 0.5; // 1/day
    double wind_u = 0.0;
    double wind_v = 0.0;
    double h = 10.0;
};

/// One explicit Euler step of the advection-diffusion-reaction equation.
inline Field euler_step(const Field& ta, const Field& ts, const AdrCoefficients& k, double dt) {
    Field next(ta.width, ta.height);
    const double inv_h = 1.0 / k.h;
    for (int r = 0; r < ta.height; ++r) {
        for (int c = 0; c < ta.width; ++c) {
            const double center = ta.at(r, c);
            // K_eff * Lap5 with K_eff = K h^2 cancels the 1/h^2 of the stencil.
            const double diffusion = k.K * (ta.clamped(r - 1, c) + ta.clamped(r + 1, c) + ta.clamped(r, c - 1) +
                                            ta.clamped(r, c + 1) - 4.0 * center);
            double advection = 0.0;
            if (k.wind_u > 0.0) advection += k.wind_u * (center - ta.clamped(r, c - 1)) * inv_h;
            else if (k.wind_u < 0.0) advection += k.wind_u * (ta.clamped(r, c + 1) - center) * inv_h;
            // y grows northward, i.e. toward smaller row indices.
            if (k.wind_v > 0.0) advection += k.wind_v * (center - ta.clamped(r + 1, c)) * inv_h;
            else if (k.wind_v < 0.0) advection += k.wind_v * (ta.clamped(r - 1, c) - center) * inv_h;
            const double reaction = k.alpha * (ts.at(r, c) - center);
            next.at(r, c) = center + dt * (diffusion - advection + reaction);
        }
    }
    return next;
}

struct AdrResult {
    std::vector<Field> snapshots;     // T_a at each date
    std::vector<Field> before;        // T_a one sub-step before each snapshot
    std::vector<double> step_days;    // sub-step used on the interval ending at each date
    double dt = 0.0;                  // stable sub-step bound actually used
};

/// Picks the sub-step: halves `dt` until the stability number is below 1.
inline double stable_dt(const SimConfig& config) {
    double dt = config.dt;
    while (config.stability_number(dt) >= 1.0) {
        dt *= 0.5;
        if (dt < 1e-6) fail(ErrorKind::StabilityFailure, "sub-step underflowed below 1e-6 day");
    }
    return dt;
}

/// Integrates from (first date - spinup) with T_a initialized to the first
/// LST grid, storing a snapshot at every date.
inline AdrResult integrate_adr(const std::vector<VariableGrid>& lst_series, const std::vector<TimeStamp>& dates,
                               const SimConfig& config) {
    if (lst_series.size() != dates.size() || dates.empty())
        fail(ErrorKind::MissingVariable, "one LST grid per date is required");
    AdrResult result;
    result.dt = stable_dt(config);
    const AdrCoefficients coef{config.K_true, config.alpha_true, config.wind_u, config.wind_v,
                               config.grid.resolution_m};

    Field ta(lst_series.front());
    Field prev = ta;
    double t = dates.front().day_of_year - config.spinup_days;
    for (std::size_t k = 0; k < dates.size(); ++k) {
        const Field ts(lst_series[k]);
        const double span = dates[k].day_of_year - t;
        const auto steps = static_cast<long>(std::ceil(span / result.dt - 1e-9));
        const double step = steps > 0 ? span / static_cast<double>(steps) : 0.0;
        for (long s = 0; s < steps; ++s) {
            prev = std::move(ta);
            ta = euler_step(prev, ts, coef, step);
        }
        if (steps == 0) prev = ta;
        for (double v : ta.v)
            if (!std::isfinite(v)) fail(ErrorKind::NumericFailure, "non-finite air temperature");
        t = dates[k].day_of_year;
        result.snapshots.push_back(ta);
        result.before.push_back(prev);
        result.step_days.push_back(step);
    }
    return result;
}

struct SyntheticScene {
    Scene scene;
    SensorNetwork sensors;
    SimConfig provenance;
    std::vector<LandClass> classes;
    // sensor id -> date -> noise added to the truth value
    std::map<std::string, std::map<std::string, double>> sensor_noise;
};

/// Uniform sampling of margin-respecting pixels without replacement with a
/// minimum pairwise separation; readings are truth plus sensor noise.
inline void sample_sensors(SyntheticScene& out, const SimConfig& config) {
    const auto& meta = config.grid;
    const int lo = kPatchRadius;
    const int hi_r = meta.height - kPatchRadius - 1;
    const int hi_c = meta.width - kPatchRadius - 1;
    if (hi_r < lo || hi_c < lo) fail(ErrorKind::PlacementFailure, "grid too small for sensor margins");

    std::mt19937_64 rng(derive_seed(config.seed, 3));
    std::uniform_int_distribution<int> rows(lo, hi_r), cols(lo, hi_c);
    std::vector<PixelIndex> placed;
    long rejections = 0;
    const long max_rejections = 10L * config.n_sensors;
    const double min_sep2 = static_cast<double>(config.min_separation_px) * config.min_separation_px;
    while (static_cast<int>(placed.size()) < config.n_sensors) {
        const PixelIndex p{rows(rng), cols(rng)};
        bool ok = true;
        for (const auto& q : placed) {
            const double dr = p.row - q.row, dc = p.col - q.col;
            if (dr * dr + dc * dc < min_sep2) {
                ok = false;
                break;
            }
        }
        if (!ok) {
            if (++rejections > max_rejections)
                fail(ErrorKind::PlacementFailure, "cannot place " + std::to_string(config.n_sensors) +
                                                      " sensors with the requested separation");
            continue;
        }
        placed.push_back(p);
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    out.sensors.sensors.clear();
    for (std::size_t i = 0; i < placed.size(); ++i) {
        Sensor s;
        char id[32];
        std::snprintf(id, sizeof id, "S%02zu", i + 1);
        s.id = id;
        std::tie(s.x_utm, s.y_utm) = meta.pixel_center(placed[i].row, placed[i].col);
        s.pixel_row = placed[i].row;
        s.pixel_col = placed[i].col;
        for (const auto& d : out.scene.dates) {
            const double truth = out.scene.get(Scene::truth_key(d.date_label)).at(s.pixel_row, s.pixel_col);
            const double e = config.noise_sensor_std * noise(rng);
            s.readings[d.date_label] = std::clamp(truth + e, -60.0, 60.0);
            out.sensor_noise[s.id][d.date_label] = e;
        }
        out.sensors.sensors.push_back(std::move(s));
    }
}

inline VariableGrid to_grid(const Field& f, const GridMeta& meta) {
    VariableGrid g(meta);
    for (std::size_t i = 0; i < f.v.size(); ++i) g.values[i] = static_cast<float>(f.v[i]);
    return g;
}

/// Full pipeline: land cover, LST forcing, integration, sensor sampling.
inline SyntheticScene simulate(const SimConfig& config) {
    config.validate();
    SyntheticScene out;
    out.provenance = config;
    auto& scene = out.scene;
    scene.meta = config.grid;
    scene.dates = make_dates(config);

    const auto lc = gen_landcover(config);
    out.classes = lc.classes;
    for (const auto& month : scene.months()) {
        scene.variables.emplace(Scene::index_key("ndvi", month), lc.ndvi);
        scene.variables.emplace(Scene::index_key("ndwi", month), lc.ndwi);
        scene.variables.emplace(Scene::index_key("ndbi", month), lc.ndbi);
    }
    auto lst = gen_lst_forcing(lc, scene.dates, config);
    const auto adr = integrate_adr(lst, scene.dates, config);
    for (std::size_t k = 0; k < scene.dates.size(); ++k) {
        const auto& label = scene.dates[k].date_label;
        scene.variables.emplace(Scene::truth_key(label), to_grid(adr.snapshots[k], config.grid));
        scene.variables.emplace(Scene::lst_key(label), std::move(lst[k]));
    }
    sample_sensors(out, config);
    return out;
}

} // namespace spycer::sim
