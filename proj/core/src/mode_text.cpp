#include "ctt/mode_text.hpp"

#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

#include "ctt/errors.hpp"

namespace ctt {

namespace {

size_t sz(int v) { return static_cast<size_t>(v); }

std::string prob_suffix(double logp) {
  char buf[48];
  std::snprintf(buf, sizeof buf, " (p=%.6f)", std::exp(logp));
  return buf;
}

const char* pair_phrase(Homotopy h) {
  switch (h) {
    case Homotopy::CW:
      return "pass clockwise";
    case Homotopy::S:
      return "keep their relative bearing";
    case Homotopy::CCW:
      return "pass counterclockwise";
  }
  return "";
}

}  // namespace

std::string sm_to_text(const SceneMode& sm, const MarginalDist* probs) {
  const int n = sm.num_agents();
  std::ostringstream out;
  for (int i = 0; i < n; ++i) {
    const int lane = sm.a2l[sz(i)];
    out << "agent " << i << " ends on ";
    if (lane == 0)
      out << "no lane";
    else
      out << "lane " << lane;
    if (probs) out << prob_suffix(probs->a2l(i, lane));
    out << '\n';
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const int p = pair_index(i, j, n);
      const Homotopy h = sm.a2a[sz(p)];
      out << "agent " << i << " and agent " << j << ' ' << pair_phrase(h);
      if (probs) out << prob_suffix(probs->a2a(p, h));
      out << '\n';
    }
  return out.str();
}

SceneMode text_to_sm(const std::string& text, int num_agents, int num_lanes) {
  static const std::regex lane_re(R"(agent (\d+) ends on (?:lane (\d+)|(no lane))(?: \(p=[0-9.eE+-]+\))?)");
  static const std::regex pair_re(
      R"(agent (\d+) and agent (\d+) (keep their relative bearing|pass clockwise|pass counterclockwise)(?: \(p=[0-9.eE+-]+\))?)");
  const int n = num_agents;
  SceneMode sm;
  sm.a2l.assign(sz(n), 0);
  sm.a2a.assign(sz(num_pairs(n)), Homotopy::S);
  std::vector<bool> have_l(sz(n), false), have_h(sz(num_pairs(n)), false);

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError("line " + std::to_string(lineno) + ": " + why + ": '" + line + "'");
  };
  auto agent = [&](const std::string& s) {
    if (s.size() > 9) fail("agent index out of range");
    const int a = std::stoi(s);
    if (a >= n) fail("agent index out of range");
    return a;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::smatch m;
    if (std::regex_match(line, m, lane_re)) {
      const int i = agent(m[1].str());
      int lane = 0;
      if (m[2].matched) {
        if (m[2].str().size() > 9) fail("lane out of range");
        lane = std::stoi(m[2].str());
        if (lane < 1 || lane > num_lanes) fail("lane out of range");
      }
      if (have_l[sz(i)]) fail("duplicate lane mode");
      have_l[sz(i)] = true;
      sm.a2l[sz(i)] = lane;
    } else if (std::regex_match(line, m, pair_re)) {
      const int i = agent(m[1].str());
      const int j = agent(m[2].str());
      if (i == j) fail("pair of identical agents");
      const int p = pair_index(i, j, n);
      if (have_h[sz(p)]) fail("duplicate pair mode");
      have_h[sz(p)] = true;
      const std::string rel = m[3].str();
      sm.a2a[sz(p)] = rel == "pass clockwise" ? Homotopy::CW : rel == "pass counterclockwise" ? Homotopy::CCW : Homotopy::S;
    } else {
      fail("unrecognized line");
    }
  }
  for (int i = 0; i < n; ++i)
    if (!have_l[sz(i)]) throw IncompleteMode("missing lane mode for agent " + std::to_string(i));
  for (int p = 0; p < num_pairs(n); ++p)
    if (!have_h[sz(p)]) {
      const auto [i, j] = pair_agents(p, n);
      throw IncompleteMode("missing pair mode for agents " + std::to_string(i) + " and " + std::to_string(j));
    }
  return sm;
}

}  // namespace ctt
