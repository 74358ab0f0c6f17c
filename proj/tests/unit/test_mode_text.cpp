#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ctt/errors.hpp"
#include "ctt/mode_text.hpp"

using namespace ctt;

namespace {

std::vector<SceneMode> all_modes(int n, int m) {
  std::vector<SceneMode> out;
  const int P = num_pairs(n);
  const std::uint64_t total = sm_cardinality(n, m);
  for (std::uint64_t code = 0; code < total; ++code) {
    std::uint64_t c = code;
    SceneMode sm;
    for (int i = 0; i < n; ++i) {
      sm.a2l.push_back(static_cast<int>(c % static_cast<std::uint64_t>(m + 1)));
      c /= static_cast<std::uint64_t>(m + 1);
    }
    for (int p = 0; p < P; ++p) {
      sm.a2a.push_back(static_cast<Homotopy>(c % 3));
      c /= 3;
    }
    out.push_back(sm);
  }
  return out;
}

int count_lines(const std::string& s) {
  std::istringstream is(s);
  int n = 0;
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST(ModeText, ExhaustiveRoundTripSmallScenes) {
  int checked = 0;
  for (int n = 1; n <= 3; ++n)
    for (int m = 0; m <= 3; ++m)
      for (const SceneMode& sm : all_modes(n, m)) {
        const std::string text = sm_to_text(sm);
        ASSERT_EQ(text_to_sm(text, n, m), sm) << text;
        EXPECT_EQ(count_lines(text), n + num_pairs(n));
        ++checked;
      }
  EXPECT_EQ(checked, 1 + 2 + 3 + 4 + 3 * (1 + 4 + 9 + 16) + 27 * (1 + 8 + 27 + 64));
}

TEST(ModeText, RandomRoundTripWithProbabilities) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 1 + static_cast<int>(rng() % 6), m = static_cast<int>(rng() % 5);
    SceneMode sm;
    MarginalDist md;
    md.num_agents = n;
    md.num_lanes = m;
    std::uniform_real_distribution<double> u(-5, 0);
    for (int i = 0; i < n; ++i) sm.a2l.push_back(static_cast<int>(rng() % static_cast<unsigned>(m + 1)));
    for (int p = 0; p < num_pairs(n); ++p) sm.a2a.push_back(static_cast<Homotopy>(rng() % 3));
    for (int k = 0; k < n * (m + 1); ++k) md.a2l_logp.push_back(u(rng));
    for (int k = 0; k < 3 * num_pairs(n); ++k) md.a2a_logp.push_back(u(rng));
    const std::string plain = sm_to_text(sm), annotated = sm_to_text(sm, &md);
    EXPECT_EQ(text_to_sm(plain, n, m), sm);
    EXPECT_EQ(text_to_sm(annotated, n, m), sm);
    EXPECT_EQ(sm_to_text(sm), plain);
    EXPECT_NE(annotated.find("(p="), std::string::npos);
  }
}

TEST(ModeText, GrammarExamples) {
  EXPECT_EQ(sm_to_text(SceneMode{{1}, {}}), "agent 0 ends on lane 1\n");
  const std::string t = sm_to_text(SceneMode{{0, 2}, {Homotopy::CW}});
  EXPECT_NE(t.find("agent 0 ends on no lane"), std::string::npos);
  EXPECT_NE(t.find("agent 0 and agent 1 pass clockwise"), std::string::npos);
}

TEST(ModeText, SwappedPairsCanonicalize) {
  const std::string text =
      "agent 2 ends on lane 1\n"
      "agent 1 and agent 0 pass counterclockwise\n"
      "\n"
      "agent 0 ends on no lane\n"
      "agent 2 and agent 1 keep their relative bearing\n"
      "agent 1 ends on lane 2 (p=0.250000)\n"
      "agent 0 and agent 2 pass clockwise\n";
  const SceneMode sm = text_to_sm(text, 3, 2);
  EXPECT_EQ(sm, (SceneMode{{0, 2, 1}, {Homotopy::CCW, Homotopy::CW, Homotopy::S}}));
}

TEST(ModeText, MissingFactorsAreIncomplete) {
  EXPECT_THROW(text_to_sm("agent 0 ends on lane 1\nagent 1 ends on lane 1\n", 2, 1), IncompleteMode);
  EXPECT_THROW(text_to_sm("agent 0 ends on lane 1\nagent 0 and agent 1 pass clockwise\n", 2, 1), IncompleteMode);
}

TEST(ModeText, MalformedLinesNameTheLine) {
  const auto expect_line = [](const std::string& text, const std::string& line_no) {
    try {
      (void)text_to_sm(text, 2, 2);
      ADD_FAILURE() << text;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find("line " + line_no), std::string::npos) << e.what();
    }
  };
  expect_line("agent 0 ends on lane 1\nagent 1 yields to agent 0\n", "2");
  expect_line("agent 0 ends on lane 3\n", "1");
  expect_line("agent 0 ends on lane 1\nagent 0 ends on lane 2\n", "2");
  expect_line("agent 0 ends on lane 1\nagent 5 ends on lane 1\n", "2");
  expect_line("agent 0 and agent 0 pass clockwise\n", "1");
  expect_line("agent 0 ends on lane 1\nagent 1 ends on lane 1\nagent 1 and agent 0 pass clockwise\n"
              "agent 0 and agent 1 pass clockwise\n",
              "4");
}
