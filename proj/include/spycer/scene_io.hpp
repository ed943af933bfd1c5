/**
 * @file scene_io.hpp
 * @brief Scene bundle and sensor CSV readers/writers.
 *
 * A bundle is a directory with `manifest.json` and one headerless raw file
 * per variable: little-endian float32, row-major, NaN marks nodata.
 * Sensor CSV: header `id,x_utm,y_utm,date,tair_c`, one row per reading.
 */
#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spycer/error.hpp"
#include "spycer/grid.hpp"

namespace spycer::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kSceneFormat = "spycer-scene";
inline constexpr int kSceneVersion = 1;

/// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_real(std::string_view text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end)
        fail(ErrorKind::Format, "not a number: '" + std::string(text) + "'");
    return v;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << text;
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_f32(const fs::path& path, std::span<const float> values) {
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(values[i]);
        if constexpr (std::endian::native == std::endian::big)
            bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) |
                   (bits >> 24);
        std::memcpy(bytes.data() + 4 * i, &bits, 4);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
    const std::string bytes = read_text(path);
    if (bytes.size() != expected * 4)
        fail(ErrorKind::Format, path.string() + ": expected " + std::to_string(expected * 4) +
                                    " bytes, found " + std::to_string(bytes.size()));
    std::vector<float> values(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, bytes.data() + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big)
            bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) |
                   (bits >> 24);
        values[i] = std::bit_cast<float>(bits);
    }
    return values;
}

inline json meta_to_json(const GridMeta& m) {
    return json{{"width", m.width},           {"height", m.height},
                {"resolution_m", m.resolution_m}, {"origin_x", m.origin_x},
                {"origin_y", m.origin_y},     {"crs_label", m.crs_label}};
}

inline GridMeta meta_from_json(const json& j) {
    GridMeta m;
    try {
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        m.resolution_m = j.at("resolution_m").get<double>();
        m.origin_x = j.at("origin_x").get<double>();
        m.origin_y = j.at("origin_y").get<double>();
        m.crs_label = j.value("crs_label", std::string("UTM"));
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("grid metadata: ") + e.what());
    }
    m.validate();
    return m;
}

/// Writes a single grid (values with NaN for nodata).
inline void write_grid(const fs::path& path, const VariableGrid& g) {
    write_f32(path, g.values);
}

inline VariableGrid read_grid(const fs::path& path, const GridMeta& meta) {
    VariableGrid g(meta);
    g.values = read_f32(path, meta.cell_count());
    for (std::size_t i = 0; i < g.values.size(); ++i)
        g.nodata_mask[i] = std::isnan(g.values[i]) ? 1 : 0;
    return g;
}

inline void write_scene(const fs::path& dir, const Scene& scene) {
    fs::create_directories(dir);
    json dates = json::array();
    for (const auto& d : scene.dates)
        dates.push_back({{"label", d.date_label}, {"day_of_year", d.day_of_year}});
    json vars = json::array();
    for (const auto& [key, grid] : scene.variables) {
        if (!(grid.meta == scene.meta)) fail(ErrorKind::Format, "grid '" + key + "' meta mismatch");
        vars.push_back(key);
        write_grid(dir / (key + ".f32"), grid);
    }
    const json manifest{{"format", kSceneFormat}, {"version", kSceneVersion},
                        {"grid", meta_to_json(scene.meta)}, {"dates", dates},
                        {"months", scene.months()}, {"variables", vars}};
    write_text(dir / kManifestName, manifest.dump(2) + "\n");
}

inline Scene read_scene(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / kManifestName));
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("manifest: ") + e.what());
    }
    if (manifest.value("format", std::string()) != kSceneFormat)
        fail(ErrorKind::Format, "not a scene bundle: " + dir.string());
    Scene scene;
    scene.meta = meta_from_json(manifest.at("grid"));
    try {
        for (const auto& d : manifest.at("dates")) {
            TimeStamp ts;
            ts.date_label = d.at("label").get<std::string>();
            ts.day_of_year = d.at("day_of_year").get<double>();
            if (!(ts.day_of_year >= 0.0 && ts.day_of_year < kDaysPerYear))
                fail(ErrorKind::Format, "day_of_year out of [0, 365)");
            scene.dates.push_back(ts);
        }
        for (const auto& v : manifest.at("variables")) {
            const auto key = v.get<std::string>();
            scene.variables.emplace(key, read_grid(dir / (key + ".f32"), scene.meta));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("manifest: ") + e.what());
    }
    return scene;
}

/// Sensor rows in file order of sensors, then date order of each sensor.
inline std::string sensors_to_csv(const SensorNetwork& net) {
    std::string out = "id,x_utm,y_utm,date,tair_c\n";
    for (const auto& s : net.sensors)
        for (const auto& [date, value] : s.readings)
            out += s.id + "," + format_real(s.x_utm) + "," + format_real(s.y_utm) + "," + date +
                   "," + format_real(value) + "\n";
    return out;
}

inline void write_sensors(const fs::path& path, const SensorNetwork& net) {
    write_text(path, sensors_to_csv(net));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

/// Parses sensor CSV and projects sensors onto `meta`. Sensors that fall
/// outside the grid or inside the 3-pixel margin are dropped and their ids
/// reported through `rejected`.
inline SensorNetwork parse_sensors(const std::string& text, const GridMeta& meta,
                                   std::vector<std::string>* rejected = nullptr) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::Format, "empty sensor CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.starts_with("\xEF\xBB\xBF")) line = line.substr(3);
    if (line != "id,x_utm,y_utm,date,tair_c")
        fail(ErrorKind::Format, "sensor CSV header must be 'id,x_utm,y_utm,date,tair_c'");

    SensorNetwork net;
    std::vector<std::string> dropped;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 5)
            fail(ErrorKind::Format, "sensor CSV line " + std::to_string(line_no) + ": 5 fields expected");
        const double x = parse_real(cells[1]);
        const double y = parse_real(cells[2]);
        const auto ts = parse_date(cells[3]);
        const double t = parse_real(cells[4]);
        if (!(t >= -60.0 && t <= 60.0))
            fail(ErrorKind::Format, "reading out of [-60, 60] degC on line " + std::to_string(line_no));

        if (std::find(dropped.begin(), dropped.end(), cells[0]) != dropped.end()) continue;
        auto it = std::find_if(net.sensors.begin(), net.sensors.end(),
                               [&](const Sensor& s) { return s.id == cells[0]; });
        if (it == net.sensors.end()) {
            Sensor s;
            s.id = cells[0];
            s.x_utm = x;
            s.y_utm = y;
            try {
                const auto p = project_sensor(x, y, meta);
                s.pixel_row = p.row;
                s.pixel_col = p.col;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::OutOfBounds) throw;
                dropped.push_back(s.id);
                continue;
            }
            net.sensors.push_back(std::move(s));
            it = std::prev(net.sensors.end());
        } else if (it->x_utm != x || it->y_utm != y) {
            fail(ErrorKind::Format, "sensor '" + cells[0] + "' changes position on line " +
                                        std::to_string(line_no));
        }
        it->readings[ts.date_label] = t;
    }
    if (rejected) *rejected = dropped;
    return net;
}

inline SensorNetwork read_sensors(const fs::path& path, const GridMeta& meta,
                                  std::vector<std::string>* rejected = nullptr) {
    return parse_sensors(read_text(path), meta, rejected);
}

} // namespace spycer::io
