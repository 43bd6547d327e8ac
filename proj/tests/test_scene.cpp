#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "cfg/scene.hpp"
#include "support.hpp"

using namespace cfg;
using nlohmann::json;
using cfg::testing::scene_path;

namespace {

json minimal_disc() {
  return json::parse(R"({
    "factors": "static",
    "bodies": [{"name": "disc", "shape": {"type": "circle", "radius": 0.1}, "mass": 1.0}],
    "environment": [{"name": "ground", "shape": {"type": "halfplane", "normal": [0, 1], "offset": 0}}]
  })");
}

// Path of the SchemaError raised for j, or "<none>".
std::string error_path(const json& j) {
  try {
    parse_scene(j);
  } catch (const SchemaError& e) {
    return e.path();
  }
  return "<none>";
}

}  // namespace

TEST(LoadScene, MinimalDisc) {
  const Scene s = parse_scene(minimal_disc());
  ASSERT_EQ(s.bodies.size(), 1u);
  ASSERT_EQ(s.environment.size(), 1u);
  EXPECT_TRUE(s.environment[0].shape.is_half_plane());
  EXPECT_TRUE(s.bodies[0].shapes[0].is_circle());
  EXPECT_EQ(s.task, Task::Static);
  // Defaults: SI units, mu 0.5, h 0.05, standard gravity, default perturbations.
  EXPECT_DOUBLE_EQ(s.friction, 0.5);
  EXPECT_DOUBLE_EQ(s.time_step, 0.05);
  EXPECT_DOUBLE_EQ(s.gravity.y(), -9.81);
  EXPECT_EQ(s.perturbations.size(), 2u);
  EXPECT_NEAR(s.bodies[0].inertia, 0.5 * 0.01, 1e-15);  // solid disc
}

TEST(LoadScene, NegativeMassNamesTheField) {
  json j = minimal_disc();
  j["bodies"][0]["mass"] = -1.0;
  EXPECT_EQ(error_path(j), "scene.bodies[0].mass");
  j["bodies"][0]["mass"] = 0.0;
  EXPECT_EQ(error_path(j), "scene.bodies[0].mass");
}

TEST(LoadScene, MissingFactorsKey) {
  json j = minimal_disc();
  j.erase("factors");
  EXPECT_EQ(error_path(j), "scene.factors");
  j["factors"] = "dynamic";
  EXPECT_EQ(error_path(j), "scene.factors");
}

TEST(LoadScene, UnknownKeysAreRejected) {
  json j = minimal_disc();
  j["colour"] = "red";
  EXPECT_EQ(error_path(j), "scene.colour");
  j = minimal_disc();
  j["bodies"][0]["shape"]["radius_mm"] = 3;
  EXPECT_EQ(error_path(j), "scene.bodies[0].shape.radius_mm");
  j = minimal_disc();
  j["weights"] = {{"not-a-label", 1.0}};
  EXPECT_EQ(error_path(j), "scene.weights.not-a-label");
}

TEST(LoadScene, InvariantViolations) {
  json j = minimal_disc();
  j["friction"] = -0.1;
  EXPECT_EQ(error_path(j), "scene.friction");
  j = minimal_disc();
  j["time_step"] = 0.0;
  EXPECT_EQ(error_path(j), "scene.time_step");
  j = minimal_disc();
  j["contacts"] = json::array({{{"a", "disc"}, {"b", "table"}}});
  EXPECT_EQ(error_path(j), "scene.contacts[0].b");
  j = minimal_disc();
  j["bodies"][0]["shape"] = {{"type", "halfplane"}, {"normal", {0, 1}}, {"offset", 0}};
  EXPECT_EQ(error_path(j), "scene.bodies[0].shape.type");
}

TEST(LoadScene, ParseErrorsAndMissingFiles) {
  EXPECT_THROW(load_scene("/nonexistent/scene.json"), SchemaError);
  const std::string path = ::testing::TempDir() + "/broken_scene.json";
  std::ofstream(path) << "{\"factors\": \"static\",\n \"bodies\": [ }";
  try {
    load_scene(path);
    FAIL() << "expected a parse error";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(LoadScene, ShippedScenesLoad) {
  for (const char* name : {"disc_ground.json", "placement_square.json", "placement_Lshape.json", "pivot_box.json"})
    EXPECT_NO_THROW(load_scene(scene_path(name))) << name;
  const Scene pivot = load_scene(scene_path("pivot_box.json"));
  EXPECT_EQ(pivot.task, Task::Stick);
  EXPECT_EQ(pivot.horizon, 5);
  EXPECT_EQ(pivot.contacts.size(), 2u);
  EXPECT_TRUE(pivot.perturbations.empty());
}
