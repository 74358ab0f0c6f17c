#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctt/checkpoint.hpp"
#include "ctt/errors.hpp"
#include "ctt/mode_label.hpp"
#include "ctt/mode_text.hpp"
#include "ctt/scene_io.hpp"
#include "ctt/synth.hpp"
#include "ctt/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ctt;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + p.string() + "' for writing");
  out << s;
}

void emit(const std::string& out, const json& j) {
  if (out.empty() || out == "-")
    std::cout << j.dump(2) << '\n';
  else
    write_text(out, j.dump(2) + "\n");
}

std::vector<Scene> load_dir(const fs::path& dir, std::vector<fs::path>* files = nullptr) {
  std::vector<Scene> scenes;
  for (const auto& f : list_scene_files(dir)) {
    std::vector<std::string> warnings;
    scenes.push_back(read_scene(f, &warnings));
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    if (files) files->push_back(f);
  }
  return scenes;
}

json mode_json(const SceneMode& m) {
  json h = json::array();
  for (auto c : m.a2a) h.push_back(std::string(to_string(c)));
  return json{{"a2l", m.a2l}, {"a2a", h}};
}

// gen-data
struct GenArgs {
  std::string tpl;
  int count = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const auto kind = template_from_string(a.tpl);
  if (!kind) throw UsageError("unknown template '" + a.tpl + "'");
  fs::create_directories(a.out);
  const ScenarioTemplate tpl = default_template(*kind);
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t s = a.seed + static_cast<std::uint64_t>(i);
    char name[64];
    std::snprintf(name, sizeof name, "%s_%08llu.json", a.tpl.c_str(), static_cast<unsigned long long>(s));
    write_scene(gen_scene(tpl, s), fs::path(a.out) / name);
  }
  std::cout << "wrote " << a.count << " scene(s) to " << a.out << '\n';
  return 0;
}

// label
struct LabelArgs {
  std::string in;
  double theta_hat = LabelConfig{}.theta_hat;
  std::string out;
};

int run_label(const LabelArgs& a) {
  std::vector<fs::path> files;
  const auto scenes = load_dir(a.in, &files);
  json rows = json::array();
  for (size_t k = 0; k < scenes.size(); ++k) {
    const GroundTruthModes gt = extract_gtsm(scenes[k], a.theta_hat);
    json m_h = json::array();
    for (const auto& v : gt.margins.m_h) m_h.push_back(v);
    json row = mode_json(gt.mode);
    row["file"] = files[k].filename().string();
    row["margins"] = {{"a2l", gt.margins.m_l}, {"a2a", m_h}};
    row["text"] = sm_to_text(gt.mode);
    rows.push_back(std::move(row));
  }
  emit(a.out, json{{"format", "ctt-label-report"}, {"version", 1}, {"theta_hat", a.theta_hat}, {"scenes", rows}});
  std::cerr << "labeled " << scenes.size() << " scene(s)\n";
  return 0;
}

// train
struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::string log;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  int print_every = 50;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_text(a.config));
  std::optional<Checkpoint> ck;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    cfg = ck->config;
  }
  if (a.steps) cfg.steps = *a.steps;
  if (a.seed) {
    if (ck) throw UsageError("--seed cannot be combined with --resume");
    cfg.seed = *a.seed;
  }
  cfg.validate();
  Trainer tr(cfg, load_dir(a.data));
  if (ck) tr.set_state(std::move(ck->state));

  std::ofstream log;
  if (!a.log.empty()) {
    const bool append = ck && fs::exists(a.log);
    log.open(a.log, append ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot open '" + a.log + "'");
    if (!append) log << "step,total,marginal_a2l,marginal_a2a,joint_sm,recon,consistency_a2l,consistency_a2a,reg\n";
    log.precision(17);
  }
  tr.run([&](std::int64_t step, const LossBreakdown& b) {
    if (log)
      log << step << ',' << b.total << ',' << b.marginal_a2l << ',' << b.marginal_a2a << ',' << b.joint_sm << ','
          << b.recon << ',' << b.consistency_a2l << ',' << b.consistency_a2a << ',' << b.reg << '\n';
    if (a.print_every > 0 && (step % a.print_every == 0 || step == cfg.steps))
      std::cout << "step " << step << " loss " << b.total << " recon " << b.recon << " sm " << b.joint_sm << '\n';
  });
  save_checkpoint(a.out, cfg, tr.state());
  std::cout << "saved checkpoint " << a.out << " at step " << tr.state().step << '\n';
  return 0;
}

// predict
struct PredictArgs {
  std::string checkpoint;
  std::string scene;
  int k = 0;
  std::string mode_file;
  std::string out;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const CttModel model(ck.config.model);
  std::vector<std::string> warnings;
  const Scene scene = read_scene(a.scene, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::optional<SceneMode> override_mode;
  if (!a.mode_file.empty()) override_mode = text_to_sm(read_text(a.mode_file), scene.num_agents(), scene.num_lanes());
  const int K = a.k > 0 ? a.k : ck.config.model.k_eval;
  const Prediction p = predict(model, ck.state.params, scene, K, override_mode);
  json samples = json::array();
  for (size_t k = 0; k < p.modes.size(); ++k) {
    json trajs = json::array();
    for (const auto& agent : p.trajectories[k]) {
      json t = json::array();
      for (const auto& f : agent) t.push_back(json::array({f.pose.x, f.pose.y, f.pose.heading(), f.speed}));
      trajs.push_back(std::move(t));
    }
    json s = mode_json(p.modes[k]);
    s["energy"] = p.energies[k];
    s["prob"] = p.probs[k];
    s["text"] = sm_to_text(p.modes[k], &p.marginals);
    s["trajectories"] = std::move(trajs);
    samples.push_back(std::move(s));
  }
  emit(a.out, json{{"format", "ctt-prediction"},
                   {"version", 1},
                   {"trajectory_columns", {"x", "y", "heading", "speed"}},
                   {"dt", scene.dt},
                   {"a2l_logp", p.marginals.a2l_logp},
                   {"a2a_logp", p.marginals.a2a_logp},
                   {"samples", samples}});
  return 0;
}

// eval
struct EvalArgs {
  std::string checkpoint;
  std::string data;
  int k = 0;
  std::string out;
};

json report_json(const EvalReport& r) {
  return json{{"scenes", r.scenes},
              {"ml_ade", r.ml_ade},
              {"min_ade", r.min_ade},
              {"ml_fde", r.ml_fde},
              {"min_fde", r.min_fde},
              {"a2l_accuracy", r.a2l_accuracy},
              {"a2a_accuracy", r.a2a_accuracy},
              {"sm_accuracy", r.sm_accuracy},
              {"a2l_ml_correct", r.a2l_ml_correct},
              {"a2a_ml_correct", r.a2a_ml_correct},
              {"sm_ml_correct", r.sm_ml_correct},
              {"a2l_consistency", r.a2l_consistency},
              {"a2a_consistency", r.a2a_consistency},
              {"a2l_correct", r.a2l_correct},
              {"a2l_cover", r.a2l_cover},
              {"a2a_correct", r.a2a_correct},
              {"a2a_cover", r.a2a_cover},
              {"sm_correct", r.sm_correct},
              {"sm_cover", r.sm_cover},
              {"collision_ml", r.collision_ml},
              {"collision_all", r.collision_all}};
}

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const CttModel model(ck.config.model);
  const auto scenes = load_dir(a.data);
  const int K = a.k > 0 ? a.k : ck.config.model.k_eval;
  const EvalReport r = evaluate(model, ck.state.params, scenes, K);
  const json metrics = report_json(r);
  for (auto it = metrics.begin(); it != metrics.end(); ++it) std::cout << it.key() << '\t' << it.value() << '\n';
  if (!a.out.empty()) write_text(a.out, json{{"format", "ctt-eval-report"}, {"version", 1}, {"k", K}, {"metrics", metrics}}.dump(2) + "\n");
  return 0;
}

// modes-text
struct ModesTextArgs {
  std::string scene;
  std::string parse;
  double theta_hat = LabelConfig{}.theta_hat;
};

int run_modes_text(const ModesTextArgs& a) {
  const Scene scene = read_scene(a.scene);
  if (!a.parse.empty()) {
    const SceneMode m = text_to_sm(read_text(a.parse), scene.num_agents(), scene.num_lanes());
    std::cout << sm_to_text(m);
    return 0;
  }
  std::cout << sm_to_text(extract_gtsm(scene, a.theta_hat).mode);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Categorical scene-mode trajectory prediction"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate synthetic scenes");
  g->add_option("--template", gen.tpl, "straight|merge|intersection|overtake|parked-merge-in")->required();
  g->add_option("--count", gen.count, "Number of scenes")->required()->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "First seed; scene i uses seed + i");
  g->add_option("--out", gen.out, "Output directory")->required();

  LabelArgs lab;
  auto* l = app.add_subcommand("label", "Extract ground-truth scene modes and margins");
  l->add_option("--in", lab.in, "Scene directory")->required();
  l->add_option("--theta-hat", lab.theta_hat, "Homotopy threshold (rad)")->check(CLI::PositiveNumber);
  l->add_option("--out", lab.out, "Report path (default stdout)");

  TrainArgs tra;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tra.config, "JSON config file");
  t->add_option("--data", tra.data, "Scene directory")->required();
  t->add_option("--out", tra.out, "Checkpoint path")->required();
  t->add_option("--resume", tra.resume, "Continue from a checkpoint");
  t->add_option("--log", tra.log, "Loss curve CSV");
  t->add_option("--steps", tra.steps, "Total optimizer steps")->check(CLI::NonNegativeNumber);
  t->add_option("--seed", tra.seed, "Seed for initialization and data order");
  t->add_option("--print-every", tra.print_every, "Progress interval (0 = quiet)");

  PredictArgs pre;
  auto* p = app.add_subcommand("predict", "Predict scene modes and trajectories");
  p->add_option("--checkpoint", pre.checkpoint)->required();
  p->add_option("--scene", pre.scene)->required();
  p->add_option("--k", pre.k, "Number of samples (default from config)")->check(CLI::NonNegativeNumber);
  p->add_option("--mode", pre.mode_file, "Scene-mode text file to condition on");
  p->add_option("--out", pre.out, "Output path (default stdout)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate on scenes with futures");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--k", ev.k)->check(CLI::NonNegativeNumber);
  e->add_option("--out", ev.out, "JSON report path");

  ModesTextArgs mt;
  auto* m = app.add_subcommand("modes-text", "Print a scene's ground-truth mode as text, or normalize a mode file");
  m->add_option("--scene", mt.scene)->required();
  m->add_option("--parse", mt.parse, "Mode text file to parse and re-serialize");
  m->add_option("--theta-hat", mt.theta_hat)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*l) return run_label(lab);
    if (*t) return run_train(tra);
    if (*p) return run_predict(pre);
    if (*e) return run_eval(ev);
    if (*m) return run_modes_text(mt);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
