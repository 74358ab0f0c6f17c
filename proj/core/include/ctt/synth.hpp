#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "ctt/scene.hpp"

namespace ctt {

enum class TemplateKind : std::uint8_t { StraightMultiLane, Merge, Intersection, Overtake, ParkedMergeIn };
inline constexpr int kNumTemplates = 5;

std::string_view to_string(TemplateKind k);
std::optional<TemplateKind> template_from_string(std::string_view s);

/// Templates whose scripted interactions may bring footprints into contact.
bool is_adversarial(TemplateKind k);

struct ScenarioTemplate {
  TemplateKind kind = TemplateKind::StraightMultiLane;
  int lanes = 3;                  // parallel lanes where the layout allows it
  double lane_length = 180.0;     // m
  double lane_spacing = 3.6;      // m
  int min_agents = 2;
  int max_agents = 4;
  double min_speed = 8.0;         // m/s
  double max_speed = 14.0;        // m/s
  double lane_change_prob = 0.25; // StraightMultiLane only
  int history_len = 4;
  int future_len = 12;
  double dt = 0.25;               // s
  double dt_history = 0.5;        // s, a multiple of dt
  bool random_transform = true;
  int max_retries = 200;
};

ScenarioTemplate default_template(TemplateKind k);

/// Deterministic per (template, seed). Futures come from a pure-pursuit
/// controller driving the unicycle dynamics; non-adversarial templates are
/// rejection-sampled until footprints never overlap. Throws GenerationFailed.
Scene gen_scene(const ScenarioTemplate& tpl, std::uint64_t seed);

/// Minimum over frames and agent pairs of dist - (r_i + r_j) using the disc
/// footprint approximation; history and future frames included.
double min_clearance(const Scene& scene);

}  // namespace ctt
