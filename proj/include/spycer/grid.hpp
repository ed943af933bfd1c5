/**
 * @file grid.hpp
 * @brief Georeferenced grids, sensors and 7x7 multi-channel patches.
 *
 * Conventions:
 *  - grids are row-major, row 0 is the northern edge;
 *  - pixel (row, col) has its center at
 *      (origin_x + col * resolution_m, origin_y - row * resolution_m);
 *  - a patch is 8 channels of 7x7, channel order
 *      [LST, x_off, y_off, sin_t, cos_t, NDVI, NDWI, NDBI].
 */
#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spycer/error.hpp"

namespace spycer {

inline constexpr int kPatchSize = 7;
inline constexpr int kPatchRadius = 3;
inline constexpr int kPatchPixels = kPatchSize * kPatchSize;
inline constexpr int kChannels = 8;
inline constexpr double kDaysPerYear = 365.0;

enum Channel : int {
    kLst = 0,
    kXOff = 1,
    kYOff = 2,
    kSinT = 3,
    kCosT = 4,
    kNdvi = 5,
    kNdwi = 6,
    kNdbi = 7,
};

struct PixelIndex {
    int row = 0;
    int col = 0;
    friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

struct GridMeta {
    int width = 0;
    int height = 0;
    double resolution_m = 10.0;
    double origin_x = 0.0;
    double origin_y = 0.0;
    std::string crs_label = "UTM";

    void validate() const {
        if (width < kPatchSize || height < kPatchSize)
            fail(ErrorKind::Format, "grid must be at least 7x7");
        if (!(resolution_m > 0.0)) fail(ErrorKind::Format, "resolution_m must be positive");
    }

    std::size_t cell_count() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }

    std::pair<double, double> pixel_center(int row, int col) const {
        return {origin_x + col * resolution_m, origin_y - row * resolution_m};
    }

    bool contains(int row, int col) const {
        return row >= 0 && col >= 0 && row < height && col < width;
    }

    /// True when a full 7x7 patch centered at (row, col) lies inside the grid.
    bool patch_feasible(int row, int col) const {
        return row >= kPatchRadius && col >= kPatchRadius && row < height - kPatchRadius &&
               col < width - kPatchRadius;
    }

    friend bool operator==(const GridMeta&, const GridMeta&) = default;
};

/// One gridded variable. Values are stored as 32-bit floats, matching the
/// on-disk format so that in-memory and reloaded scenes are identical.
struct VariableGrid {
    GridMeta meta;
    std::vector<float> values;
    std::vector<std::uint8_t> nodata_mask;

    VariableGrid() = default;
    explicit VariableGrid(GridMeta m, float fill = 0.0f)
        : meta(std::move(m)), values(meta.cell_count(), fill), nodata_mask(meta.cell_count(), 0) {}

    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(meta.width) +
               static_cast<std::size_t>(col);
    }
    float& at(int row, int col) { return values[index(row, col)]; }
    float at(int row, int col) const { return values[index(row, col)]; }
    bool is_nodata(int row, int col) const { return nodata_mask[index(row, col)] != 0; }

    void set_nodata(int row, int col) {
        const auto i = index(row, col);
        nodata_mask[i] = 1;
        values[i] = std::numeric_limits<float>::quiet_NaN();
    }

    /// Clamp to [-1, 1]; spectral index grids are always stored clamped.
    void clamp_unit() {
        for (auto& v : values)
            if (std::isfinite(v)) v = std::clamp(v, -1.0f, 1.0f);
    }
};

/// Day-of-year encoding on the unit circle.
inline std::pair<double, double> encode_time(double day_of_year) {
    const double phase = 2.0 * std::numbers::pi * day_of_year / kDaysPerYear;
    return {std::sin(phase), std::cos(phase)};
}

struct TimeStamp {
    double day_of_year = 0.0;
    std::string date_label;

    std::string month_label() const { return date_label.substr(0, 7); }
    int month() const { return std::stoi(date_label.substr(5, 2)); }
};

/// Parses "YYYY-MM-DD" into a TimeStamp; day_of_year is zero-based
/// (1 January = 0) and wrapped into [0, 365).
inline TimeStamp parse_date(const std::string& label) {
    using namespace std::chrono;
    if (label.size() != 10 || label[4] != '-' || label[7] != '-')
        fail(ErrorKind::Format, "date must be YYYY-MM-DD: '" + label + "'");
    int y = 0;
    unsigned m = 0, d = 0;
    try {
        y = std::stoi(label.substr(0, 4));
        m = static_cast<unsigned>(std::stoi(label.substr(5, 2)));
        d = static_cast<unsigned>(std::stoi(label.substr(8, 2)));
    } catch (...) {
        fail(ErrorKind::Format, "date must be YYYY-MM-DD: '" + label + "'");
    }
    const year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) fail(ErrorKind::Format, "invalid calendar date '" + label + "'");
    const auto doy = (sys_days{ymd} - sys_days{year{y} / January / 1}).count();
    return {std::fmod(static_cast<double>(doy), kDaysPerYear), label};
}

/// Formats zero-based day `doy` of `year` as "YYYY-MM-DD".
inline std::string format_date(int year_value, int doy) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{year{year_value} / January / 1} + days{doy}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

/// Nearest pixel center for a UTM position, rounding half away from zero.
/// Throws OutOfBounds when the pixel is outside the grid or closer than
/// three pixels to a border.
inline PixelIndex project_sensor(double x_utm, double y_utm, const GridMeta& meta) {
    const double r = std::round((meta.origin_y - y_utm) / meta.resolution_m);
    const double c = std::round((x_utm - meta.origin_x) / meta.resolution_m);
    if (!std::isfinite(r) || !std::isfinite(c) || r < 0 || c < 0 || r >= meta.height ||
        c >= meta.width)
        fail(ErrorKind::OutOfBounds, "sensor position outside the grid");
    const PixelIndex p{static_cast<int>(r), static_cast<int>(c)};
    if (!meta.patch_feasible(p.row, p.col))
        fail(ErrorKind::OutOfBounds, "sensor within 3 pixels of the grid border");
    return p;
}

inline std::pair<double, double> unproject(PixelIndex p, const GridMeta& meta) {
    return meta.pixel_center(p.row, p.col);
}

struct Sensor {
    std::string id;
    double x_utm = 0.0;
    double y_utm = 0.0;
    int pixel_row = 0;
    int pixel_col = 0;
    std::map<std::string, double> readings; // date_label -> NSAT degC

    PixelIndex pixel() const { return {pixel_row, pixel_col}; }
};

struct SensorNetwork {
    std::vector<Sensor> sensors;

    const Sensor* find(const std::string& id) const {
        for (const auto& s : sensors)
            if (s.id == id) return &s;
        return nullptr;
    }
    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(sensors.size());
        for (const auto& s : sensors) out.push_back(s.id);
        return out;
    }
};

/// Stack of gridded variables. Keys follow the bundle file stems:
/// "lst_<date>", "ndvi_<month>", "ndwi_<month>", "ndbi_<month>",
/// "nsat_truth_<date>".
struct Scene {
    GridMeta meta;
    std::vector<TimeStamp> dates;
    std::map<std::string, VariableGrid> variables;

    static std::string lst_key(const std::string& date) { return "lst_" + date; }
    static std::string truth_key(const std::string& date) { return "nsat_truth_" + date; }
    static std::string index_key(const std::string& index, const std::string& month) {
        return index + "_" + month;
    }

    const VariableGrid& get(const std::string& key) const {
        const auto it = variables.find(key);
        if (it == variables.end()) fail(ErrorKind::MissingVariable, "scene has no '" + key + "'");
        return it->second;
    }
    const VariableGrid* find(const std::string& key) const {
        const auto it = variables.find(key);
        return it == variables.end() ? nullptr : &it->second;
    }
    const TimeStamp& date(const std::string& label) const {
        for (const auto& d : dates)
            if (d.date_label == label) return d;
        fail(ErrorKind::MissingVariable, "scene has no date '" + label + "'");
    }
    bool has_truth() const {
        for (const auto& d : dates)
            if (!find(truth_key(d.date_label))) return false;
        return !dates.empty();
    }
    std::vector<std::string> months() const {
        std::vector<std::string> out;
        for (const auto& d : dates) {
            const auto m = d.month_label();
            if (out.empty() || out.back() != m) out.push_back(m);
        }
        return out;
    }
};

struct PatchSample {
    std::array<float, kChannels * kPatchPixels> channels{};
    double target_nsat = 0.0;
    PixelIndex center{kPatchRadius, kPatchRadius};
    PixelIndex grid_pixel{};
    TimeStamp timestamp;
    std::array<float, kPatchPixels> lst_patch_raw{};

    float& at(int channel, int row, int col) {
        return channels[static_cast<std::size_t>(channel * kPatchPixels + row * kPatchSize + col)];
    }
    float at(int channel, int row, int col) const {
        return channels[static_cast<std::size_t>(channel * kPatchPixels + row * kPatchSize + col)];
    }
};

/// True when every grid needed by the patch at (row, col, date) exists and
/// none of the 49 pixels is nodata.
inline bool patch_is_complete(const Scene& scene, int row, int col, const TimeStamp& ts) {
    if (!scene.meta.patch_feasible(row, col)) return false;
    const VariableGrid* grids[4] = {
        scene.find(Scene::lst_key(ts.date_label)),
        scene.find(Scene::index_key("ndvi", ts.month_label())),
        scene.find(Scene::index_key("ndwi", ts.month_label())),
        scene.find(Scene::index_key("ndbi", ts.month_label())),
    };
    for (const auto* g : grids) {
        if (!g) return false;
        for (int dr = -kPatchRadius; dr <= kPatchRadius; ++dr)
            for (int dc = -kPatchRadius; dc <= kPatchRadius; ++dc)
                if (g->is_nodata(row + dr, col + dc)) return false;
    }
    return true;
}

/// Builds the raw (unnormalized) patch centered at a grid pixel. Offset
/// channels hold the fixed pixel-offset / 3 encoding; target is left 0.
inline PatchSample extract_patch_at(const Scene& scene, PixelIndex center, const TimeStamp& ts) {
    if (!scene.meta.patch_feasible(center.row, center.col))
        fail(ErrorKind::OutOfBounds, "patch center too close to the border");
    const auto& lst = scene.get(Scene::lst_key(ts.date_label));
    const auto month = ts.month_label();
    const auto& ndvi = scene.get(Scene::index_key("ndvi", month));
    const auto& ndwi = scene.get(Scene::index_key("ndwi", month));
    const auto& ndbi = scene.get(Scene::index_key("ndbi", month));
    const auto [s, c] = encode_time(ts.day_of_year);

    PatchSample p;
    p.grid_pixel = center;
    p.timestamp = ts;
    for (int r = 0; r < kPatchSize; ++r) {
        for (int q = 0; q < kPatchSize; ++q) {
            const int gr = center.row + r - kPatchRadius;
            const int gc = center.col + q - kPatchRadius;
            const float t = lst.at(gr, gc);
            p.lst_patch_raw[static_cast<std::size_t>(r * kPatchSize + q)] = t;
            p.at(kLst, r, q) = t;
            p.at(kXOff, r, q) = static_cast<float>(q - kPatchRadius) / kPatchRadius;
            p.at(kYOff, r, q) = static_cast<float>(r - kPatchRadius) / kPatchRadius;
            p.at(kSinT, r, q) = static_cast<float>(s);
            p.at(kCosT, r, q) = static_cast<float>(c);
            p.at(kNdvi, r, q) = ndvi.at(gr, gc);
            p.at(kNdwi, r, q) = ndwi.at(gr, gc);
            p.at(kNdbi, r, q) = ndbi.at(gr, gc);
        }
    }
    return p;
}

inline PatchSample extract_patch(const Scene& scene, const Sensor& sensor, const std::string& date) {
    const auto it = sensor.readings.find(date);
    if (it == sensor.readings.end())
        fail(ErrorKind::MissingReading, "sensor '" + sensor.id + "' has no reading at " + date);
    const auto& ts = scene.date(date);
    if (!scene.find(Scene::lst_key(date)))
        fail(ErrorKind::MissingVariable, "no LST grid for " + date);
    auto p = extract_patch_at(scene, sensor.pixel(), ts);
    p.target_nsat = it->second;
    return p;
}

/// Per-channel z-score statistics. Only LST and the spectral-index channels
/// are z-scored; coordinate and time channels keep their fixed encodings.
struct ChannelStats {
    std::array<double, kChannels> mean{};
    std::array<double, kChannels> stddev{1, 1, 1, 1, 1, 1, 1, 1};

    static constexpr double kStdFloor = 1e-6;
    static constexpr std::array<int, 4> kScored{kLst, kNdvi, kNdwi, kNdbi};

    static ChannelStats from_samples(std::span<const PatchSample> samples) {
        ChannelStats st;
        if (samples.empty()) return st;
        for (int ch : kScored) {
            double sum = 0.0, sq = 0.0;
            std::size_t n = 0;
            for (const auto& p : samples) {
                for (int i = 0; i < kPatchPixels; ++i) {
                    const double v = p.channels[static_cast<std::size_t>(ch * kPatchPixels + i)];
                    sum += v;
                    sq += v * v;
                    ++n;
                }
            }
            const double m = sum / static_cast<double>(n);
            const double var = std::max(0.0, sq / static_cast<double>(n) - m * m);
            st.mean[static_cast<std::size_t>(ch)] = m;
            st.stddev[static_cast<std::size_t>(ch)] = std::max(std::sqrt(var), kStdFloor);
        }
        return st;
    }
};

inline PatchSample normalize_inputs(PatchSample patch, const ChannelStats& stats) {
    for (int ch : ChannelStats::kScored) {
        const double m = stats.mean[static_cast<std::size_t>(ch)];
        const double s = std::max(stats.stddev[static_cast<std::size_t>(ch)], ChannelStats::kStdFloor);
        for (int i = 0; i < kPatchPixels; ++i) {
            auto& v = patch.channels[static_cast<std::size_t>(ch * kPatchPixels + i)];
            v = static_cast<float>((v - m) / s);
        }
    }
    for (int r = 0; r < kPatchSize; ++r) {
        for (int c = 0; c < kPatchSize; ++c) {
            patch.at(kXOff, r, c) = static_cast<float>(c - kPatchRadius) / kPatchRadius;
            patch.at(kYOff, r, c) = static_cast<float>(r - kPatchRadius) / kPatchRadius;
        }
    }
    return patch;
}

} // namespace spycer
