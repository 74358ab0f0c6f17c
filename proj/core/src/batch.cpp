#include "ctt/batch.hpp"

#include <algorithm>

#include "ctt/errors.hpp"

namespace ctt {

SceneBatch batch_scenes(const std::vector<Scene>& scenes, const ModelConfig& cfg, int max_agents, int max_lanes) {
  if (scenes.empty()) throw Error("batch_scenes: empty scene list");
  SceneBatch b;
  b.num_agents = max_agents;
  b.num_lanes = max_lanes;
  for (const auto& s : scenes) {
    b.num_agents = std::max(b.num_agents, s.num_agents());
    b.num_lanes = std::max(b.num_lanes, s.num_lanes());
  }
  b.inputs.reserve(scenes.size());
  for (const auto& s : scenes) b.inputs.push_back(prepare_input(s, cfg, b.num_agents, b.num_lanes));
  return b;
}

}  // namespace ctt
