// Shared helpers for the unit tests.
#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "spycer/spycer.hpp"

namespace testutil {

inline spycer::sim::SimConfig tiny_sim(std::uint64_t seed = 5) {
    spycer::sim::SimConfig c;
    c.grid.width = 40;
    c.grid.height = 40;
    c.n_dates = 4;
    c.n_sensors = 8;
    c.min_separation_px = 3;
    c.seed = seed;
    return c;
}

inline spycer::train::TrainConfig tiny_train(int epochs = 3) {
    spycer::train::TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 16;
    t.model.width = 4;
    t.model.blocks = 1;
    t.model.heads = 2;
    t.model.attention_hidden = 4;
    return t;
}

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path = std::filesystem::temp_directory_path() /
               ("spycer_test_" + std::string(info ? info->name() : "x") + "_" + name);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename Fn>
spycer::ErrorKind error_kind(Fn&& fn) {
    try {
        fn();
    } catch (const spycer::Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected spycer::Error";
    return spycer::ErrorKind::Usage;
}

} // namespace testutil
