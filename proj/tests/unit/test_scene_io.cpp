#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "ctt/errors.hpp"
#include "ctt/scene_io.hpp"
#include "ctt/synth.hpp"
#include "test_util.hpp"

using namespace ctt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ctt_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  const auto p = s.find(from);
  EXPECT_NE(p, std::string::npos) << from;
  if (p != std::string::npos) s.replace(p, from.size(), to);
  return s;
}

}  // namespace

TEST(SceneIO, RoundTripIsBitwise) {
  for (int k = 0; k < kNumTemplates; ++k)
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Scene s = gen_scene(default_template(static_cast<TemplateKind>(k)), seed);
      const Scene r = scene_from_json(scene_to_json(s));
      EXPECT_EQ(r, s);
      EXPECT_EQ(scene_to_json(r), scene_to_json(s));
    }
}

TEST(SceneIO, AwkwardDoublesSurvive) {
  Scene s = test::two_lane_scene(2);
  s.agents[0].history[0].pose.x = 1.0 / 3.0;
  s.agents[0].history[1].pose.y = std::numeric_limits<double>::denorm_min();
  s.agents[1].history[0].speed = 0.1 + 0.2;
  s.agents[1].statics = {AgentType::Cyclist, 1.7999999999999998, 0.6};
  s.agents[1].history[0].valid = false;
  s.agents[0].future.reset();
  s.agents[1].future.reset();
  EXPECT_EQ(scene_from_json(scene_to_json(s)), s);
}

TEST(SceneIO, FileRoundTripAndListing) {
  const fs::path d = temp_dir("io");
  const Scene a = gen_scene(default_template(TemplateKind::Merge), 3);
  const Scene b = gen_scene(default_template(TemplateKind::Intersection), 4);
  write_scene(b, d / "b.json");
  write_scene(a, d / "a.json");
  std::ofstream(d / "notes.txt") << "ignore me";
  const auto files = list_scene_files(d);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].filename(), "a.json");
  EXPECT_EQ(read_scene(files[0]), a);
  EXPECT_EQ(read_scene(files[1]), b);
  fs::remove_all(d);
}

TEST(SceneIO, TruncatedFileIsRejected) {
  const std::string text = scene_to_json(gen_scene(default_template(TemplateKind::Overtake), 5));
  for (size_t cut : {text.size() / 3, text.size() / 2, text.size() - 2}) {
    try {
      (void)scene_from_json(text.substr(0, cut));
      ADD_FAILURE() << "accepted a truncated file";
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find("line"), std::string::npos) << e.what();
    }
  }
}

TEST(SceneIO, UnknownFieldsWarn) {
  const Scene s = test::two_lane_scene(2);
  std::string text = scene_to_json(s);
  text = replace_once(text, "\"dt\"", "\"weather\": \"rain\", \"dt\"");
  text = replace_once(text, "\"half_width\"", "\"surface\": 3, \"half_width\"");
  std::vector<std::string> warnings;
  EXPECT_EQ(scene_from_json(text, &warnings), s);
  ASSERT_EQ(warnings.size(), 2u);
  EXPECT_NE(warnings[0].find("weather"), std::string::npos);
  EXPECT_NE(warnings[1].find("surface"), std::string::npos);
}

TEST(SceneIO, VersionMismatch) {
  const std::string text = scene_to_json(test::two_lane_scene(1));
  EXPECT_THROW(scene_from_json(replace_once(text, "\"version\": 1", "\"version\": 2")), VersionMismatch);
}

TEST(SceneIO, FieldErrorsNameTheField) {
  const std::string text = scene_to_json(test::two_lane_scene(1));
  try {
    (void)scene_from_json(replace_once(text, "\"half_width\": 1.75", "\"half_width\": \"wide\""));
    ADD_FAILURE();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("half_width"), std::string::npos) << e.what();
  }
  EXPECT_THROW(scene_from_json(replace_once(text, "\"type\": \"vehicle\"", "\"type\": \"tram\"")), ParseError);
  EXPECT_THROW(scene_from_json("[1, 2, 3]"), ParseError);
  EXPECT_THROW(read_scene("/nonexistent/scene.json"), Error);
}

TEST(SceneIO, InvalidScenesAreNotWritten) {
  Scene s = test::two_lane_scene(2);
  s.agents[1].history.pop_back();
  const fs::path d = temp_dir("invalid");
  EXPECT_THROW(write_scene(s, d / "x.json"), Error);
  EXPECT_FALSE(fs::exists(d / "x.json"));
  fs::remove_all(d);
}
