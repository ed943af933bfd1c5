/**
 * @file config.hpp
 * @brief Run configuration: INI-style text with [sim], [physics], [train],
 *        [model] and [eval] sections.
 *
 *   # comment
 *   [train]
 *   epochs = 2000
 *
 * Unknown sections or keys are errors. `to_ini` writes every key, so the
 * echoed file reproduces the run on its own.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "spycer/error.hpp"
#include "spycer/eval.hpp"
#include "spycer/scene_io.hpp"
#include "spycer/sim.hpp"
#include "spycer/train.hpp"

namespace spycer::config {

struct RunConfig {
    sim::SimConfig sim;
    train::TrainConfig train;
    int folds = 10;
    int mlp_epochs = 2000;
    std::vector<std::string> methods{"spycer", "lr", "rf", "gb", "mlp"};
    bool h_explicit = false; // physics.h given; otherwise it follows the grid

    /// Physics grid spacing follows the scene unless set explicitly.
    void bind_to_grid(const GridMeta& meta) {
        if (!h_explicit) train.physics.h = meta.resolution_m;
    }

    eval::EvalConfig eval_config(unsigned threads) const {
        eval::EvalConfig e;
        e.folds = folds;
        e.seed = train.seed;
        e.threads = threads;
        e.mlp_epochs = mlp_epochs;
        e.train = train;
        return e;
    }

    void set_seed(std::uint64_t seed) {
        sim.seed = seed;
        train.seed = seed;
    }

    void validate() const {
        sim.validate();
        train.validate();
        if (folds < 1) fail(ErrorKind::Config, "folds must be >= 1");
        if (mlp_epochs < 1) fail(ErrorKind::Config, "mlp_epochs must be >= 1");
    }
};

namespace detail {

struct Field {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline double to_real(const std::string& key, const std::string& v) {
    try {
        return io::parse_real(v);
    } catch (const Error&) {
        fail(ErrorKind::Config, "'" + key + "' expects a number, got '" + v + "'");
    }
}

inline long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long n = std::stoll(v, &pos);
        if (pos == v.size()) return n;
    } catch (...) {
    }
    fail(ErrorKind::Config, "'" + key + "' expects an integer, got '" + v + "'");
}

inline Field real(const std::string& sec, const std::string& key, double& ref) {
    return {sec, key, [&ref] { return io::format_real(ref); }, [&ref, key](const std::string& v) { ref = to_real(key, v); }};
}

inline Field integer(const std::string& sec, const std::string& key, int& ref) {
    return {sec, key, [&ref] { return std::to_string(ref); },
            [&ref, key](const std::string& v) { ref = static_cast<int>(to_int(key, v)); }};
}

inline Field seed(const std::string& sec, const std::string& key, std::uint64_t& ref) {
    return {sec, key, [&ref] { return std::to_string(ref); },
            [&ref, key](const std::string& v) {
                const auto n = to_int(key, v);
                if (n < 0) fail(ErrorKind::Config, "'" + key + "' must be >= 0");
                ref = static_cast<std::uint64_t>(n);
            }};
}

inline std::vector<Field> fields(RunConfig& c) {
    auto& s = c.sim;
    auto& t = c.train;
    std::vector<Field> f{
        integer("sim", "width", s.grid.width),
        integer("sim", "height", s.grid.height),
        real("sim", "resolution_m", s.grid.resolution_m),
        real("sim", "origin_x", s.grid.origin_x),
        real("sim", "origin_y", s.grid.origin_y),
        {"sim", "crs_label", [&s] { return s.grid.crs_label; }, [&s](const std::string& v) { s.grid.crs_label = v; }},
        integer("sim", "n_dates", s.n_dates),
        real("sim", "date_spacing_days", s.date_spacing_days),
        real("sim", "first_day", s.first_day),
        integer("sim", "year", s.year),
        real("sim", "spinup_days", s.spinup_days),
        real("sim", "dt", s.dt),
        real("sim", "K_true", s.K_true),
        real("sim", "alpha_true", s.alpha_true),
        real("sim", "wind_u", s.wind_u),
        real("sim", "wind_v", s.wind_v),
        real("sim", "noise_lst_std", s.noise_lst_std),
        real("sim", "noise_sensor_std", s.noise_sensor_std),
        real("sim", "lst_field_amplitude", s.lst_field_amplitude),
        real("sim", "landcover_scale_px", s.landcover_scale_px),
        real("sim", "fraction_vegetation", s.class_fractions[0]),
        real("sim", "fraction_water", s.class_fractions[1]),
        real("sim", "fraction_built_up", s.class_fractions[2]),
        real("sim", "fraction_bare", s.class_fractions[3]),
        integer("sim", "n_sensors", s.n_sensors),
        integer("sim", "min_separation_px", s.min_separation_px),
        seed("sim", "seed", s.seed),
        real("physics", "K", t.physics.K),
        real("physics", "alpha", t.physics.alpha),
        real("physics", "lambda", t.physics.lambda),
        real("physics", "sigma", t.physics.sigma),
        real("physics", "eps_t", t.physics.eps_t),
        real("physics", "h", t.physics.h),
        integer("train", "epochs", t.epochs),
        real("train", "lr_model", t.lr_model),
        real("train", "lr_attention", t.lr_attention),
        integer("train", "batch_size", t.batch_size),
        seed("train", "seed", t.seed),
        {"train", "ablation", [&t] { return std::string(train::to_string(t.ablation)); },
         [&t](const std::string& v) { t.ablation = train::ablation_from_string(v); }},
        integer("model", "width", t.model.width),
        integer("model", "blocks", t.model.blocks),
        integer("model", "heads", t.model.heads),
        integer("model", "attention_hidden", t.model.attention_hidden),
        real("model", "attention_dropout", t.model.attention_dropout),
        integer("eval", "folds", c.folds),
        integer("eval", "mlp_epochs", c.mlp_epochs),
        {"eval", "methods",
         [&c] {
             std::string out;
             for (const auto& m : c.methods) out += (out.empty() ? "" : ",") + m;
             return out;
         },
         [&c](const std::string& v) {
             c.methods.clear();
             std::stringstream ss(v);
             std::string item;
             while (std::getline(ss, item, ','))
                 if (!trim(item).empty()) c.methods.push_back(trim(item));
         }},
    };
    return f;
}

} // namespace detail

/// Applies `text` on top of `base`.
inline RunConfig parse(const std::string& text, RunConfig base = {}) {
    auto fields = detail::fields(base);
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto where = " (line " + std::to_string(lineno) + ")";
        if (line.front() == '[') {
            if (line.back() != ']') fail(ErrorKind::Config, "malformed section header" + where);
            section = detail::trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const auto& f : fields) known = known || f.section == section;
            if (!known) fail(ErrorKind::Config, "unknown section [" + section + "]" + where);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(ErrorKind::Config, "expected key = value" + where);
        if (section.empty()) fail(ErrorKind::Config, "key outside of any section" + where);
        const auto key = detail::trim(line.substr(0, eq));
        const auto value = detail::trim(line.substr(eq + 1));
        bool done = false;
        for (auto& f : fields)
            if (f.section == section && f.key == key) {
                f.set(value);
                base.h_explicit = base.h_explicit || (section == "physics" && key == "h");
                done = true;
                break;
            }
        if (!done) fail(ErrorKind::Config, "unknown key '" + key + "' in [" + section + "]" + where);
    }
    base.bind_to_grid(base.sim.grid);
    base.train.model.sigma = base.train.physics.sigma;
    return base;
}

inline RunConfig load(const std::filesystem::path& path) { return parse(io::read_text(path)); }

/// Every key with its resolved value.
inline std::string to_ini(RunConfig c) {
    std::string out, section;
    for (const auto& f : detail::fields(c)) {
        if (f.section != section) {
            if (!section.empty()) out += '\n';
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += f.key + " = " + f.get() + "\n";
    }
    return out;
}

} // namespace spycer::config
