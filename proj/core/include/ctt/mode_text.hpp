#pragma once

#include <string>

#include "ctt/mode_label.hpp"
#include "ctt/sm_sampling.hpp"

namespace ctt {

/// Line grammar, one factor per line (agents 0-based, lanes 1-based):
///
///   agent <i> ends on lane <k>
///   agent <i> ends on no lane
///   agent <i> and agent <j> keep their relative bearing
///   agent <i> and agent <j> pass clockwise
///   agent <i> and agent <j> pass counterclockwise
///
/// Each line may end with " (p=<prob>)". Blank lines are ignored.
std::string sm_to_text(const SceneMode& sm, const MarginalDist* probs = nullptr);

/// Inverse of sm_to_text. Pairs may be written in either order. Throws
/// ParseError naming the offending line, IncompleteMode if a factor is missing.
SceneMode text_to_sm(const std::string& text, int num_agents, int num_lanes);

}  // namespace ctt
