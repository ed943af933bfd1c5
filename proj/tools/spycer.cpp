// Command-line entry point: simulate, train, predict, eval, ablate,
// baseline, residual, attn, curves, gradcheck.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spycer/spycer.hpp"

namespace fs = std::filesystem;
using namespace spycer;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    unsigned threads = 0;
    bool force = false;
};

config::RunConfig resolve(const Common& c) {
    auto cfg = c.config.empty() ? config::RunConfig{} : config::load(c.config);
    if (c.seed_given) cfg.set_seed(c.seed);
    cfg.validate();
    return cfg;
}

unsigned worker_count(const Common& c) { return c.threads > 0 ? c.threads : threads_from_env(); }

/// Refuses to replace an existing output unless --force was given.
void claim(const fs::path& path, bool force) {
    if (fs::exists(path) && !force)
        fail(ErrorKind::Usage, path.string() + " exists; pass --force to overwrite");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
    return out.parent_path() / (out.stem().string() + suffix);
}

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
    if (with_config) cmd->add_option("--config", c.config, "Configuration file")->check(CLI::ExistingFile);
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_given = true; }, "Master seed");
    cmd->add_option("--threads", c.threads, "Worker threads (default: SPYCER_THREADS or 1)");
    cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

void write_map(const fs::path& out, const VariableGrid& g, const std::string& date, const std::string& what) {
    io::write_grid(out, g);
    const nlohmann::json j{{"variable", what}, {"date", date}, {"grid", io::meta_to_json(g.meta)},
                           {"encoding", "float32 little-endian row-major, NaN = nodata"}};
    io::write_text(sibling(out, ".json"), j.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

model::SpycerModel<float> load_model(const std::string& path) {
    return model::SpycerModel<float>::from_entries(ckpt::read_file(path));
}

SensorNetwork load_sensors(const std::string& path, const Scene& scene) {
    std::vector<std::string> rejected;
    auto net = io::read_sensors(path, scene.meta, &rejected);
    for (const auto& id : rejected) std::cerr << "warning: sensor " << id << " is outside the usable grid, skipped\n";
    return net;
}

void print_table(const eval::MetricsTable& t) {
    std::printf("%-12s %-8s %16s %16s\n", "method", "month", "RMSE", "MAE");
    for (const auto& m : t.methods)
        for (const auto& mo : t.months) {
            const auto& c = t.at(m, mo);
            std::printf("%-12s %-8s %8.3f +- %5.3f %8.3f +- %5.3f\n", m.c_str(), mo.c_str(), c.rmse_mean, c.rmse_std,
                        c.mae_mean, c.mae_std);
        }
}

int run(int argc, char** argv) {
    CLI::App app{"Physics-guided near-surface air temperature estimation"};
    app.require_subcommand(1);
    Common common;
    std::string scene_dir, sensors_csv, out, checkpoint, date, methods, ablation, method, sensor_id, ids;
    int folds = 0;
    int epochs = 0;
    bool inject_fault = false, no_gaussian = false;

    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic scene bundle");
    add_common(simulate, common);
    simulate->add_option("--out", out, "Output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "Train a model on all sensors");
    add_common(train_cmd, common);
    train_cmd->add_option("--scene", scene_dir)->required();
    train_cmd->add_option("--sensors", sensors_csv)->required();
    train_cmd->add_option("--out", out, "Checkpoint path")->required();
    train_cmd->add_option("--ablation", ablation, "full | no_neighbor_physics | no_gaussian");
    train_cmd->add_option("--epochs", epochs, "Override train.epochs");

    auto* predict = app.add_subcommand("predict", "Export a full NSAT map for one date");
    add_common(predict, common, false);
    predict->add_option("--scene", scene_dir)->required();
    predict->add_option("--checkpoint", checkpoint)->required();
    predict->add_option("--date", date)->required();
    predict->add_option("--out", out, "Output .f32 grid")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Monte Carlo cross-validation");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--scene", scene_dir)->required();
    eval_cmd->add_option("--sensors", sensors_csv)->required();
    eval_cmd->add_option("--methods", methods, "Comma-separated methods");
    eval_cmd->add_option("--folds", folds, "Number of folds");
    eval_cmd->add_option("--out", out, "Metrics table CSV")->required();

    auto* ablate = app.add_subcommand("ablate", "Full model against both ablation configurations");
    add_common(ablate, common);
    ablate->add_option("--scene", scene_dir)->required();
    ablate->add_option("--sensors", sensors_csv)->required();
    ablate->add_option("--folds", folds, "Number of folds");
    ablate->add_option("--out", out, "Metrics table CSV")->required();

    auto* baseline = app.add_subcommand("baseline", "Fit a reference method on all sensors");
    add_common(baseline, common);
    baseline->add_option("--method", method)->required()->check(CLI::IsMember({"lr", "rf", "gb", "mlp", "idw"}));
    baseline->add_option("--scene", scene_dir)->required();
    baseline->add_option("--sensors", sensors_csv)->required();
    baseline->add_option("--out", out, "Predictions CSV")->required();
    std::string map_out;
    baseline->add_option("--date", date, "Date for --map");
    baseline->add_option("--map", map_out, "Also export a full map (.f32) for --date");

    auto* residual = app.add_subcommand("residual", "Export the physics residual grid for one date");
    add_common(residual, common);
    residual->add_option("--scene", scene_dir)->required();
    residual->add_option("--checkpoint", checkpoint)->required();
    residual->add_option("--date", date)->required();
    residual->add_option("--out", out, "Output .f32 grid")->required();

    auto* attn = app.add_subcommand("attn", "Export the 7x7 attention map at one sensor");
    add_common(attn, common, false);
    attn->add_option("--scene", scene_dir)->required();
    attn->add_option("--sensors", sensors_csv)->required();
    attn->add_option("--checkpoint", checkpoint)->required();
    attn->add_option("--sensor", sensor_id)->required();
    attn->add_option("--date", date)->required();
    attn->add_option("--out", out, "CSV path (default: stdout)");
    attn->add_flag("--no-gaussian", no_gaussian, "Skip the distance modulation");

    auto* curves = app.add_subcommand("curves", "Per-date predictions against readings");
    add_common(curves, common, false);
    curves->add_option("--scene", scene_dir)->required();
    curves->add_option("--sensors", sensors_csv)->required();
    curves->add_option("--checkpoint", checkpoint)->required();
    curves->add_option("--ids", ids, "Comma-separated sensor ids (default: all)");
    curves->add_option("--out", out, "CSV path")->required();

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Verify analytic gradients by finite differences");
    add_common(gradcheck_cmd, common, false);
    gradcheck_cmd->add_flag("--inject-fault", inject_fault)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    configure_allocator();

    if (*simulate) {
        auto cfg = resolve(common);
        claim(out, common.force);
        if (common.force && fs::exists(out)) fs::remove_all(out);
        const auto sc = sim::simulate(cfg.sim);
        io::write_scene(out, sc.scene);
        io::write_sensors(fs::path(out) / "sensors.csv", sc.sensors);
        io::write_text(fs::path(out) / "sim_provenance.json", sim::to_json(sc.provenance).dump(2) + "\n");
        io::write_text(fs::path(out) / "config.ini", config::to_ini(cfg));
        std::printf("scene %dx%d, %zu dates, %zu sensors -> %s\n", cfg.sim.grid.width, cfg.sim.grid.height,
                    sc.scene.dates.size(), sc.sensors.sensors.size(), out.c_str());
        return 0;
    }

    if (*train_cmd) {
        auto cfg = resolve(common);
        if (!ablation.empty()) cfg.train.ablation = train::ablation_from_string(ablation);
        if (epochs > 0) cfg.train.epochs = epochs;
        const auto scene = io::read_scene(scene_dir);
        const auto sensors = load_sensors(sensors_csv, scene);
        cfg.bind_to_grid(scene.meta);
        claim(out, common.force);
        const auto r = train::train<float>(scene, sensors, cfg.train);
        ckpt::write_file(out, train::checkpoint_entries(r));
        io::write_text(sibling(out, ".history.csv"), train::history_csv(r.history));
        io::write_text(sibling(out, ".config.ini"), config::to_ini(cfg));
        const auto& last = r.history.back();
        std::printf("trained %d epochs: sup %.4f phys %.4f -> %s\n", last.epoch, last.sup_loss, last.phys_loss,
                    out.c_str());
        return 0;
    }

    if (*predict) {
        const auto scene = io::read_scene(scene_dir);
        const auto m = load_model(checkpoint);
        claim(out, common.force);
        write_map(out, eval::export_map(m, scene, date), date, "nsat_pred");
        return 0;
    }

    if (*eval_cmd || *ablate) {
        auto cfg = resolve(common);
        if (folds > 0) cfg.folds = folds;
        if (*ablate) cfg.methods = {"spycer", "spycer_cfg1", "spycer_cfg2"};
        else if (!methods.empty()) cfg.methods = split_list(methods);
        const auto scene = io::read_scene(scene_dir);
        const auto sensors = load_sensors(sensors_csv, scene);
        cfg.bind_to_grid(scene.meta);
        claim(out, common.force);
        const auto plan = eval::make_folds(sensors.ids(), cfg.folds, cfg.train.seed);
        const auto res = eval::run_experiment(scene, sensors, cfg.methods, plan, cfg.eval_config(worker_count(common)));
        io::write_text(out, res.table.csv());
        io::write_text(sibling(out, ".folds.csv"), res.records_csv());
        io::write_text(sibling(out, ".config.ini"), config::to_ini(cfg));
        print_table(res.table);
        return 0;
    }

    if (*baseline) {
        auto cfg = resolve(common);
        const auto scene = io::read_scene(scene_dir);
        const auto sensors = load_sensors(sensors_csv, scene);
        claim(out, common.force);
        std::string csv = "sensor,date,predicted_c,observed_c\n";
        char buf[256];
        if (method == "idw") {
            // Leave-one-out: each sensor is predicted from all the others.
            for (const auto& s : sensors.sensors)
                for (const auto& [d, value] : s.readings) {
                    std::vector<baselines::PointValue> pts;
                    for (const auto& o : sensors.sensors) {
                        const auto it = o.readings.find(d);
                        if (&o == &s || it == o.readings.end()) continue;
                        const auto [x, y] = scene.meta.pixel_center(o.pixel_row, o.pixel_col);
                        pts.push_back({x, y, it->second});
                    }
                    const auto [x, y] = scene.meta.pixel_center(s.pixel_row, s.pixel_col);
                    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", s.id.c_str(), d.c_str(),
                                  baselines::idw_at(pts, x, y), value);
                    csv += buf;
                }
            if (!map_out.empty()) {
                if (date.empty()) fail(ErrorKind::Usage, "--map needs --date");
                claim(map_out, common.force);
                write_map(map_out, baselines::idw_map(sensors, date, scene.meta), date, "nsat_idw");
            }
        } else {
            const auto ids_all = sensors.ids();
            const auto samples = train::build_samples(scene, sensors, ids_all);
            const auto rows = baselines::feature_rows(samples, scene.meta);
            const auto predict_fn = baselines::fit_baseline(method, rows, cfg.train.seed, worker_count(common),
                                                            cfg.mlp_epochs);
            for (const auto& s : sensors.sensors)
                for (const auto& d : scene.dates) {
                    if (!s.readings.count(d.date_label) || !patch_is_complete(scene, s.pixel_row, s.pixel_col, d))
                        continue;
                    const auto p = extract_patch(scene, s, d.date_label);
                    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", s.id.c_str(), d.date_label.c_str(),
                                  predict_fn(baselines::feature_row(p, scene.meta).x), p.target_nsat);
                    csv += buf;
                }
            if (!map_out.empty()) {
                if (date.empty()) fail(ErrorKind::Usage, "--map needs --date");
                claim(map_out, common.force);
                write_map(map_out, eval::export_map(predict_fn, scene, date), date, "nsat_" + method);
            }
        }
        io::write_text(out, csv);
        return 0;
    }

    if (*residual) {
        auto cfg = resolve(common);
        const auto scene = io::read_scene(scene_dir);
        cfg.bind_to_grid(scene.meta);
        const auto m = load_model(checkpoint);
        claim(out, common.force);
        write_map(out, eval::residual_map(m, scene, date, cfg.train.physics), date, "physics_residual");
        return 0;
    }

    if (*attn) {
        const auto scene = io::read_scene(scene_dir);
        const auto sensors = load_sensors(sensors_csv, scene);
        const auto* s = sensors.find(sensor_id);
        if (!s) fail(ErrorKind::MissingVariable, "unknown sensor '" + sensor_id + "'");
        const auto m = load_model(checkpoint);
        const auto patch = extract_patch(scene, *s, date);
        const auto csv = eval::attention_csv(train::attention_map(m, patch, !no_gaussian));
        if (out.empty()) {
            std::fputs(csv.c_str(), stdout);
        } else {
            claim(out, common.force);
            io::write_text(out, csv);
        }
        return 0;
    }

    if (*curves) {
        const auto scene = io::read_scene(scene_dir);
        const auto sensors = load_sensors(sensors_csv, scene);
        const auto m = load_model(checkpoint);
        const auto list = ids.empty() ? sensors.ids() : split_list(ids);
        claim(out, common.force);
        io::write_text(out, eval::temporal_curves(
                                [&](std::span<const PatchSample> p) { return train::predict_centers(m, p); }, scene,
                                sensors, list));
        return 0;
    }

    if (*gradcheck_cmd) {
        gradcheck::Options opt;
        if (common.seed_given) opt.seed = common.seed;
        opt.inject_fault = inject_fault;
        bool ok = true;
        for (const auto& r : gradcheck::run_all(opt)) {
            std::printf("%-28s max rel err %.3e over %d instances  %s\n", r.name.c_str(), r.max_rel_error,
                        r.instances, r.passed ? "ok" : "FAILED");
            ok = ok && r.passed;
        }
        std::printf("gradcheck %s (tolerance %.0e)\n", ok ? "passed" : "FAILED", opt.tolerance);
        return ok ? 0 : 3;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
