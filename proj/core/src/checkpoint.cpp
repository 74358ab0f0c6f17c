#include "ctt/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctt/errors.hpp"

namespace ctt {

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'C', 'T', 'T', 'C', 'K', 'P', 'T', '\0'};

const char* decode_name(DecodeStrategy d) { return d == DecodeStrategy::OneShot ? "one-shot" : "autoregressive"; }

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok |= it.key() == k;
    if (!ok) throw ParseError("config: unknown key '" + where + it.key() + "'");
  }
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void raw(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void moments(const std::map<std::string, std::vector<double>>& m) {
    u64(m.size());
    for (const auto& [name, v] : m) {
      str(name);
      doubles(v);
    }
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
  void raw(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) throw ParseError(source_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t length(std::uint64_t elem) {
    const std::uint64_t n = u64();
    if (n > (std::uint64_t{1} << 34) / elem) throw ParseError(source_ + ": implausible length in checkpoint");
    return n;
  }
  std::string str() {
    std::string s(length(1), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(length(sizeof(double)));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  std::map<std::string, std::vector<double>> moments() {
    std::map<std::string, std::vector<double>> m;
    const std::uint64_t n = length(1);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str();
      m[name] = doubles();
    }
    return m;
  }
  const std::string& source() const { return source_; }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  json j;
  j["model"] = {{"d_model", m.d_model},
                {"heads", m.heads},
                {"encoder_rounds", m.encoder_rounds},
                {"energy_rounds", m.energy_rounds},
                {"decoder_rounds", m.decoder_rounds},
                {"history_len", m.history_len},
                {"future_len", m.future_len},
                {"lane_points", m.lane_points},
                {"theta_hat", m.theta_hat},
                {"align_thresh", m.align_thresh},
                {"k_train", m.k_train},
                {"k_decode_train", m.k_decode_train},
                {"k_eval", m.k_eval},
                {"num_selected_factors", m.num_selected_factors},
                {"use_dynamics", m.use_dynamics},
                {"decode", decode_name(m.decode)}};
  const LossWeights& w = c.weights;
  j["weights"] = {{"marginal_a2l", w.marginal_a2l},       {"marginal_a2a", w.marginal_a2a},
                  {"joint_sm", w.joint_sm},               {"recon", w.recon},
                  {"consistency_a2l", w.consistency_a2l}, {"consistency_a2a", w.consistency_a2a},
                  {"reg", w.reg}};
  j["reg"] = {{"params", c.reg.params}, {"controls", c.reg.controls}, {"collision", c.reg.collision}};
  j["adam"] = {{"lr", c.adam.lr},
               {"beta1", c.adam.beta1},
               {"beta2", c.adam.beta2},
               {"eps", c.adam.eps},
               {"clip_norm", c.adam.clip_norm}};
  j["scoring"] = {{"w_av", c.scoring.w_av},
                  {"w_lane", c.scoring.w_lane},
                  {"w_entropy", c.scoring.w_entropy},
                  {"sigma_av", c.scoring.sigma_av},
                  {"sigma_lane", c.scoring.sigma_lane}};
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["lr_final_ratio"] = c.lr_final_ratio;
  j["diverse_lanes"] = c.diverse_lanes;
  j["seed"] = c.seed;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: expected an object");
  TrainConfig c;
  try {
    reject_unknown(j, {"model", "weights", "reg", "adam", "scoring", "steps", "batch_size", "lr_final_ratio",
                       "diverse_lanes", "seed"},
                   "");
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, {"d_model", "heads", "encoder_rounds", "energy_rounds", "decoder_rounds", "history_len",
                         "future_len", "lane_points", "theta_hat", "align_thresh", "k_train", "k_decode_train",
                         "k_eval", "num_selected_factors", "use_dynamics", "decode"},
                     "model.");
      ModelConfig& d = c.model;
      take(m, "d_model", d.d_model);
      take(m, "heads", d.heads);
      take(m, "encoder_rounds", d.encoder_rounds);
      take(m, "energy_rounds", d.energy_rounds);
      take(m, "decoder_rounds", d.decoder_rounds);
      take(m, "history_len", d.history_len);
      take(m, "future_len", d.future_len);
      take(m, "lane_points", d.lane_points);
      take(m, "theta_hat", d.theta_hat);
      take(m, "align_thresh", d.align_thresh);
      take(m, "k_train", d.k_train);
      take(m, "k_decode_train", d.k_decode_train);
      take(m, "k_eval", d.k_eval);
      take(m, "num_selected_factors", d.num_selected_factors);
      take(m, "use_dynamics", d.use_dynamics);
      if (m.contains("decode")) {
        const std::string s = m.at("decode").get<std::string>();
        if (s == "one-shot")
          d.decode = DecodeStrategy::OneShot;
        else if (s == "autoregressive")
          d.decode = DecodeStrategy::Autoregressive;
        else
          throw ParseError("config: model.decode must be 'one-shot' or 'autoregressive'");
      }
    }
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      reject_unknown(w, {"marginal_a2l", "marginal_a2a", "joint_sm", "recon", "consistency_a2l", "consistency_a2a", "reg"},
                     "weights.");
      take(w, "marginal_a2l", c.weights.marginal_a2l);
      take(w, "marginal_a2a", c.weights.marginal_a2a);
      take(w, "joint_sm", c.weights.joint_sm);
      take(w, "recon", c.weights.recon);
      take(w, "consistency_a2l", c.weights.consistency_a2l);
      take(w, "consistency_a2a", c.weights.consistency_a2a);
      take(w, "reg", c.weights.reg);
    }
    if (j.contains("reg")) {
      const json& r = j.at("reg");
      reject_unknown(r, {"params", "controls", "collision"}, "reg.");
      take(r, "params", c.reg.params);
      take(r, "controls", c.reg.controls);
      take(r, "collision", c.reg.collision);
    }
    if (j.contains("adam")) {
      const json& a = j.at("adam");
      reject_unknown(a, {"lr", "beta1", "beta2", "eps", "clip_norm"}, "adam.");
      take(a, "lr", c.adam.lr);
      take(a, "beta1", c.adam.beta1);
      take(a, "beta2", c.adam.beta2);
      take(a, "eps", c.adam.eps);
      take(a, "clip_norm", c.adam.clip_norm);
    }
    if (j.contains("scoring")) {
      const json& s = j.at("scoring");
      reject_unknown(s, {"w_av", "w_lane", "w_entropy", "sigma_av", "sigma_lane"}, "scoring.");
      take(s, "w_av", c.scoring.w_av);
      take(s, "w_lane", c.scoring.w_lane);
      take(s, "w_entropy", c.scoring.w_entropy);
      take(s, "sigma_av", c.scoring.sigma_av);
      take(s, "sigma_lane", c.scoring.sigma_lane);
    }
    take(j, "steps", c.steps);
    take(j, "batch_size", c.batch_size);
    take(j, "lr_final_ratio", c.lr_final_ratio);
    take(j, "diverse_lanes", c.diverse_lanes);
    take(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const TrainState& st) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  Writer w(out);
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(train_config_to_json(cfg));
  w.u64(st.params.all().size());
  for (const auto& [name, t] : st.params.all()) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rows));
    w.u32(static_cast<std::uint32_t>(t.cols));
    w.doubles(t.data);
  }
  w.i64(st.adam.steps());
  w.moments(st.adam.first_moment());
  w.moments(st.adam.second_moment());
  std::ostringstream rng;
  rng << st.rng;
  w.str(rng.str());
  w.i64(st.step);
  w.u64(st.order.size());
  for (int v : st.order) w.i64(v);
  w.i64(st.cursor);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  Reader r(in, path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(path.string() + ": not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatch(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  Checkpoint ck;
  ck.config = train_config_from_json(r.str());
  const std::uint64_t n = r.length(1);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    nn::Tensor t;
    t.rows = static_cast<int>(r.u32());
    t.cols = static_cast<int>(r.u32());
    t.data = r.doubles();
    if (t.data.size() != static_cast<size_t>(t.rows) * static_cast<size_t>(t.cols))
      throw ParseError(path.string() + ": tensor '" + name + "' has inconsistent shape");
    ck.state.params.all()[name] = std::move(t);
  }
  const std::int64_t t = r.i64();
  auto m = r.moments();
  auto v = r.moments();
  ck.state.adam = nn::Adam(ck.config.adam);
  ck.state.adam.restore(t, std::move(m), std::move(v));
  std::istringstream rng(r.str());
  rng >> ck.state.rng;
  if (!rng) throw ParseError(path.string() + ": bad generator state");
  ck.state.step = r.i64();
  const std::uint64_t no = r.length(8);
  ck.state.order.resize(no);
  for (auto& o : ck.state.order) o = static_cast<int>(r.i64());
  ck.state.cursor = static_cast<int>(r.i64());
  return ck;
}

}  // namespace ctt
