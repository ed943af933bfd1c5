#include <cstring>

#include <gtest/gtest.h>

#include "support/fixtures.hpp"

using namespace spycer;
using testutil::error_kind;
using testutil::slurp;
using testutil::TempDir;

TEST(F32, RoundTripsBitExactlyIncludingNan) {
    TempDir dir("f32");
    GridMeta m{9, 8, 10.0, 0.0, 0.0, "t"};
    VariableGrid g(m, 1.5f);
    g.at(2, 3) = -0.0f;
    g.at(4, 4) = 1e-40f;
    g.set_nodata(7, 8);
    io::write_grid(dir.path / "g.f32", g);
    const auto back = io::read_grid(dir.path / "g.f32", m);
    EXPECT_EQ(std::memcmp(back.values.data(), g.values.data(), g.values.size() * 4), 0);
    EXPECT_TRUE(back.is_nodata(7, 8));
    EXPECT_FALSE(back.is_nodata(0, 0));
    EXPECT_EQ(slurp(dir.path / "g.f32").size(), m.cell_count() * 4);
}

TEST(F32, WrongSizeIsFormatError) {
    TempDir dir("f32size");
    io::write_f32(dir.path / "g.f32", std::vector<float>(10, 0.0f));
    EXPECT_EQ(error_kind([&] { io::read_f32(dir.path / "g.f32", 11); }), ErrorKind::Format);
}

TEST(SceneBundle, RoundTripsByteIdentically) {
    TempDir dir("bundle");
    const auto sc = sim::simulate(testutil::tiny_sim());
    io::write_scene(dir.path / "a", sc.scene);
    const auto back = io::read_scene(dir.path / "a");
    io::write_scene(dir.path / "b", back);
    EXPECT_TRUE(back.meta == sc.scene.meta);
    ASSERT_EQ(back.variables.size(), sc.scene.variables.size());
    for (const auto& e : std::filesystem::directory_iterator(dir.path / "a"))
        EXPECT_EQ(slurp(e.path()), slurp(dir.path / "b" / e.path().filename())) << e.path();
}

TEST(SceneBundle, MissingManifestOrWrongFormat) {
    TempDir dir("nomanifest");
    EXPECT_NE(error_kind([&] { io::read_scene(dir.path); }), ErrorKind::Usage);
    io::write_text(dir.path / "manifest.json", R"({"format": "other"})");
    EXPECT_EQ(error_kind([&] { io::read_scene(dir.path); }), ErrorKind::Format);
}

TEST(SensorCsv, ParsesAndRejectsMarginSensors) {
    const GridMeta m{64, 64, 10.0, 500000.0, 4800000.0, "t"};
    const std::string text = "id,x_utm,y_utm,date,tair_c\n"
                             "A,500100,4799900,2025-06-01,21.5\n"
                             "A,500100,4799900,2025-06-16,22\n"
                             "B,500000,4800000,2025-06-01,20\n";
    std::vector<std::string> rejected;
    const auto net = io::parse_sensors(text, m, &rejected);
    ASSERT_EQ(net.sensors.size(), 1u);
    EXPECT_EQ(net.sensors[0].pixel(), (PixelIndex{10, 10}));
    EXPECT_EQ(net.sensors[0].readings.size(), 2u);
    EXPECT_EQ(rejected, std::vector<std::string>{"B"});
}

TEST(SensorCsv, MalformedInputs) {
    const GridMeta m{64, 64, 10.0, 500000.0, 4800000.0, "t"};
    EXPECT_EQ(error_kind([&] { io::parse_sensors("id,x\n", m); }), ErrorKind::Format);
    EXPECT_EQ(error_kind([&] { io::parse_sensors("id,x_utm,y_utm,date,tair_c\nA,1,2,2025-06-01\n", m); }),
              ErrorKind::Format);
    EXPECT_EQ(error_kind([&] {
                  io::parse_sensors("id,x_utm,y_utm,date,tair_c\nA,500100,4799900,2025-06-01,99\n", m);
              }),
              ErrorKind::Format);
}

TEST(SensorCsv, RoundTrip) {
    const auto sc = sim::simulate(testutil::tiny_sim());
    const auto text = io::sensors_to_csv(sc.sensors);
    const auto back = io::parse_sensors(text, sc.scene.meta);
    EXPECT_EQ(io::sensors_to_csv(back), text);
    for (std::size_t i = 0; i < back.sensors.size(); ++i)
        EXPECT_EQ(back.sensors[i].readings, sc.sensors.sensors[i].readings);
}

TEST(Checkpoint, EncodeDecodeIsExact) {
    std::vector<ckpt::Entry> entries(2);
    entries[0].name = "a";
    entries[0].dims = {2, 3};
    entries[0].data = {1, 2, 3, 4, 5, -0.0f};
    entries[1].name = "b.scalar";
    entries[1].dims = {1};
    entries[1].data = {3.25f};
    const auto bytes = ckpt::encode(entries);
    EXPECT_EQ(ckpt::encode(ckpt::decode(bytes)), bytes);
    EXPECT_EQ(error_kind([&] { ckpt::decode(bytes.substr(0, bytes.size() - 1)); }), ErrorKind::Format);
    EXPECT_EQ(error_kind([&] { ckpt::decode("XXXX" + bytes.substr(4)); }), ErrorKind::Format);
}
