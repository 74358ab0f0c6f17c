#include "ctt/scene_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ctt/errors.hpp"

namespace ctt {

namespace {

using json = nlohmann::json;

json frame_to_json(const TrackFrame& f) {
  return json{{"x", f.pose.x},         {"y", f.pose.y},     {"sin_h", f.pose.sin_h},
              {"cos_h", f.pose.cos_h}, {"speed", f.speed},  {"valid", f.valid}};
}

class Reader {
 public:
  Reader(std::string source, std::vector<std::string>* warnings) : source_(std::move(source)), warnings_(warnings) {}

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ParseError(source_ + ": field '" + field + "': " + what);
  }

  const json& member(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(join(path, key), "missing");
    return *it;
  }

  double number(const json& obj, const std::string& key, const std::string& path) const {
    const json& v = member(obj, key, path);
    if (!v.is_number()) fail(join(path, key), "expected a number");
    return v.get<double>();
  }

  int integer(const json& obj, const std::string& key, const std::string& path) const {
    const json& v = member(obj, key, path);
    if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
    return v.get<int>();
  }

  std::string string(const json& obj, const std::string& key, const std::string& path) const {
    const json& v = member(obj, key, path);
    if (!v.is_string()) fail(join(path, key), "expected a string");
    return v.get<std::string>();
  }

  const json& array(const json& obj, const std::string& key, const std::string& path) const {
    const json& v = member(obj, key, path);
    if (!v.is_array()) fail(join(path, key), "expected an array");
    return v;
  }

  void check_keys(const json& obj, std::initializer_list<const char*> known, const std::string& path) const {
    if (!warnings_ || !obj.is_object()) return;
    const std::set<std::string> k(known.begin(), known.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!k.count(it.key())) warnings_->push_back(source_ + ": ignoring unknown field '" + join(path, it.key()) + "'");
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
  static std::string index(const std::string& path, size_t i) { return path + "[" + std::to_string(i) + "]"; }

  TrackFrame frame(const json& j, const std::string& path) const {
    check_keys(j, {"x", "y", "sin_h", "cos_h", "speed", "valid"}, path);
    TrackFrame f;
    f.pose = Pose4{number(j, "x", path), number(j, "y", path), number(j, "sin_h", path), number(j, "cos_h", path)};
    f.speed = number(j, "speed", path);
    const json& v = member(j, "valid", path);
    if (!v.is_boolean()) fail(join(path, "valid"), "expected a boolean");
    f.valid = v.get<bool>();
    return f;
  }

 private:
  std::string source_;
  std::vector<std::string>* warnings_;
};

int line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

std::string scene_to_json(const Scene& scene) {
  json j;
  j["format"] = "ctt-scene";
  j["version"] = kSceneFormatVersion;
  j["dt"] = scene.dt;
  j["dt_history"] = scene.dt_history;
  j["ego"] = scene.ego_index;
  json lanes = json::array();
  for (const auto& l : scene.lane_graph.lanes) {
    json pts = json::array();
    for (const auto& p : l.points) pts.push_back(json::array({p.x, p.y, p.sin_h, p.cos_h}));
    lanes.push_back(json{{"id", l.id}, {"half_width", l.half_width}, {"points", std::move(pts)}});
  }
  j["lanes"] = std::move(lanes);
  json rel = json::array();
  for (const auto& l : scene.lane_graph.links)
    rel.push_back(json{{"from", l.from}, {"to", l.to}, {"relation", std::string(to_string(l.relation))}});
  j["lane_relations"] = std::move(rel);
  json agents = json::array();
  for (const auto& a : scene.agents) {
    json aj{{"type", std::string(to_string(a.statics.type))}, {"length", a.statics.length}, {"width", a.statics.width}};
    json h = json::array();
    for (const auto& f : a.history) h.push_back(frame_to_json(f));
    aj["history"] = std::move(h);
    if (a.future) {
      json fu = json::array();
      for (const auto& f : *a.future) fu.push_back(frame_to_json(f));
      aj["future"] = std::move(fu);
    }
    agents.push_back(std::move(aj));
  }
  j["agents"] = std::move(agents);
  return j.dump(1) + "\n";
}

Scene scene_from_json(const std::string& text, std::vector<std::string>* warnings, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  const Reader r(source, warnings);
  if (!j.is_object()) r.fail("<root>", "expected an object");
  r.check_keys(j, {"format", "version", "dt", "dt_history", "ego", "lanes", "lane_relations", "agents"}, "");
  if (r.string(j, "format", "") != "ctt-scene") r.fail("format", "expected 'ctt-scene'");
  const int version = r.integer(j, "version", "");
  if (version != kSceneFormatVersion)
    throw VersionMismatch(source + ": scene format version " + std::to_string(version) + ", expected " +
                          std::to_string(kSceneFormatVersion));
  Scene s;
  s.dt = r.number(j, "dt", "");
  s.dt_history = r.number(j, "dt_history", "");
  s.ego_index = r.integer(j, "ego", "");

  const json& lanes = r.array(j, "lanes", "");
  for (size_t i = 0; i < lanes.size(); ++i) {
    const std::string path = Reader::index("lanes", i);
    const json& lj = lanes[i];
    r.check_keys(lj, {"id", "half_width", "points"}, path);
    LanePolyline l;
    l.id = r.integer(lj, "id", path);
    l.half_width = r.number(lj, "half_width", path);
    const json& pts = r.array(lj, "points", path);
    for (size_t k = 0; k < pts.size(); ++k) {
      const json& p = pts[k];
      const std::string pp = Reader::index(path + ".points", k);
      if (!p.is_array() || p.size() != 4) r.fail(pp, "expected [x, y, sin_h, cos_h]");
      for (const auto& v : p)
        if (!v.is_number()) r.fail(pp, "expected numbers");
      l.points.push_back(Pose4{p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), p[3].get<double>()});
    }
    s.lane_graph.lanes.push_back(std::move(l));
  }
  const json& rel = r.array(j, "lane_relations", "");
  for (size_t i = 0; i < rel.size(); ++i) {
    const std::string path = Reader::index("lane_relations", i);
    r.check_keys(rel[i], {"from", "to", "relation"}, path);
    const auto kind = lane_relation_from_string(r.string(rel[i], "relation", path));
    if (!kind) r.fail(Reader::join(path, "relation"), "unknown relation");
    s.lane_graph.links.push_back(LaneLink{r.integer(rel[i], "from", path), r.integer(rel[i], "to", path), *kind});
  }
  const json& agents = r.array(j, "agents", "");
  for (size_t i = 0; i < agents.size(); ++i) {
    const std::string path = Reader::index("agents", i);
    const json& aj = agents[i];
    r.check_keys(aj, {"type", "length", "width", "history", "future"}, path);
    AgentTrack a;
    const auto type = agent_type_from_string(r.string(aj, "type", path));
    if (!type) r.fail(Reader::join(path, "type"), "unknown agent type");
    a.statics = AgentStatic{*type, r.number(aj, "length", path), r.number(aj, "width", path)};
    const json& h = r.array(aj, "history", path);
    for (size_t t = 0; t < h.size(); ++t) a.history.push_back(r.frame(h[t], Reader::index(path + ".history", t)));
    if (aj.contains("future")) {
      const json& f = r.array(aj, "future", path);
      std::vector<TrackFrame> fut;
      for (size_t t = 0; t < f.size(); ++t) fut.push_back(r.frame(f[t], Reader::index(path + ".future", t)));
      a.future = std::move(fut);
    }
    s.agents.push_back(std::move(a));
  }
  try {
    validate(s);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(source + ": invalid scene: " + e.what());
  }
  return s;
}

void write_scene(const Scene& scene, const std::filesystem::path& path) {
  validate(scene);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << scene_to_json(scene);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Scene read_scene(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return scene_from_json(ss.str(), warnings, path.string());
}

std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ctt
