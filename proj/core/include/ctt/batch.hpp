#pragma once

#include <vector>

#include "ctt/model.hpp"
#include "ctt/scene.hpp"

namespace ctt {

/// Scenes converted to model inputs padded to a common (N, M).
struct SceneBatch {
  int num_agents = 0;
  int num_lanes = 0;
  std::vector<ModelInput> inputs;

  int size() const { return static_cast<int>(inputs.size()); }
};

/// Pads to the batch maxima, or to (max_agents, max_lanes) when larger.
/// Throws ctt::Error on an empty list.
SceneBatch batch_scenes(const std::vector<Scene>& scenes, const ModelConfig& cfg, int max_agents = 0,
                        int max_lanes = 0);

}  // namespace ctt
