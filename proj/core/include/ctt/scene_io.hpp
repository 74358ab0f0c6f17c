#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctt/scene.hpp"

namespace ctt {

inline constexpr int kSceneFormatVersion = 1;

/// JSON scene log. Units: meters, seconds, m/s. Doubles are written with
/// round-trip precision, so read(write(s)) == s bitwise.
std::string scene_to_json(const Scene& scene);
/// Unknown fields are ignored and reported through `warnings`.
Scene scene_from_json(const std::string& text, std::vector<std::string>* warnings = nullptr,
                      const std::string& source = "<string>");

void write_scene(const Scene& scene, const std::filesystem::path& path);
Scene read_scene(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

/// Scene files (*.json) in a directory, sorted by name.
std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& dir);

}  // namespace ctt
