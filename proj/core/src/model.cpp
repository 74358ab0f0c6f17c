#include "ctt/model.hpp"

#include <algorithm>
#include <cmath>

#include "ctt/dynamics.hpp"
#include "ctt/errors.hpp"
#include "ctt/geometry.hpp"

namespace ctt {

namespace {

constexpr double kPosScale = 0.1;
constexpr double kSizeScale = 0.2;
constexpr double kSpeedScale = 0.1;
constexpr double kStepScale = 0.2;
constexpr double kLatScale = 0.3;
constexpr double kArcScale = 0.02;
constexpr double kLaneLocalScale = 0.05;
constexpr double kTimeScale = 0.3;
constexpr double kDirectScale = 10.0;
constexpr double kMaskedLogit = -1e9;

constexpr int kDecLaneEdge = kA2LEdgeDim + 2;
constexpr int kDecAgentEdge = kA2ARaw + kNumHomotopy;
constexpr int kDecHistEdge = 5;

size_t sz(int v) { return static_cast<size_t>(v); }

void push_pose(std::vector<double>& out, const Pose4& p, double pos_scale) {
  out.push_back(p.x * pos_scale);
  out.push_back(p.y * pos_scale);
  out.push_back(p.sin_h);
  out.push_back(p.cos_h);
}

void push_a2a(std::vector<double>& out, const AgentAux& a, const AgentAux& b, bool self) {
  const auto f = a2a_edge_feature(a, b);
  out.push_back(f[0] * kPosScale);
  out.push_back(f[1] * kPosScale);
  out.push_back(f[2]);
  out.push_back(f[3]);
  for (int c = 0; c < kNumAgentTypes; ++c) out.push_back(f[sz(4 + c)]);
  out.push_back(f[4 + kNumAgentTypes] * kSizeScale);
  out.push_back(f[5 + kNumAgentTypes] * kSizeScale);
  out.push_back(f[6 + kNumAgentTypes] * kSpeedScale);
  out.push_back(self ? 1.0 : 0.0);
}

void push_a2l(std::vector<double>& out, const Pose4& p, const LanePolyline& lane) {
  const auto f = a2l_edge_feature(p, lane);
  for (int b = 0; b < 3; ++b) {
    out.push_back(f[sz(4 * b)] * kPosScale);
    out.push_back(f[sz(4 * b + 1)] * kPosScale);
    out.push_back(f[sz(4 * b + 2)]);
    out.push_back(f[sz(4 * b + 3)]);
  }
  out.push_back(f[12] * kLatScale);
  out.push_back(f[13] * kArcScale);
  out.push_back(f[14]);
}

LanePolyline dummy_lane(int id) {
  LanePolyline l;
  l.id = id;
  l.points = {Pose4{0.0, 0.0, 0.0, 1.0}, Pose4{1.0, 0.0, 0.0, 1.0}};
  return l;
}

AttentionKeys make_keys(int G, int S, int edge_dim) {
  AttentionKeys k;
  k.per_query = S;
  k.edge_dim = edge_dim;
  k.key_rows.assign(sz(G * S), -1);
  k.mask.assign(sz(G * S), 0);
  if (edge_dim > 0) k.edge_feats.assign(sz(G * S * edge_dim), 0.0);
  return k;
}

/// Node/edge index structure of the agent-lane graph, replicated K times.
struct SceneGraph {
  EdgeTopology a2a_topo, a2l_topo;
  Incidence agent_a2a, agent_a2l, lane_a2l;
};

SceneGraph build_graph(const ModelInput& in, int K) {
  const int N = in.num_agents, M = in.num_lanes, Th = in.history_len;
  auto hv = [&](int i, int t) { return in.agent_mask[sz(i)] && in.hist_valid[sz(i * Th + t)]; };
  SceneGraph g;
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int t = 0; t < Th; ++t) {
          g.a2a_topo.src.push_back((k * N + i) * Th + t);
          g.a2a_topo.dst.push_back((k * N + j) * Th + t);
        }
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i)
      for (int l = 0; l < M; ++l)
        for (int t = 0; t < Th; ++t) {
          g.a2l_topo.src.push_back((k * N + i) * Th + t);
          g.a2l_topo.dst.push_back(k * M + l);
        }
  g.agent_a2a.per_node = N;
  g.agent_a2l.per_node = M;
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < Th; ++t) {
        for (int j = 0; j < N; ++j) {
          g.agent_a2a.edge_rows.push_back(((k * N + i) * N + j) * Th + t);
          g.agent_a2a.mask.push_back(hv(j, t) ? 1 : 0);
        }
        for (int l = 0; l < M; ++l) {
          g.agent_a2l.edge_rows.push_back(((k * N + i) * M + l) * Th + t);
          g.agent_a2l.mask.push_back(in.lane_mask[sz(l)]);
        }
      }
  g.lane_a2l.per_node = N * Th;
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < M; ++l)
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < Th; ++t) {
          g.lane_a2l.edge_rows.push_back(((k * N + i) * M + l) * Th + t);
          g.lane_a2l.mask.push_back(hv(i, t) ? 1 : 0);
        }
  return g;
}

void declare_gnn_round(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d, bool lanes) {
  declare_gnn_edge_update(ps, rng, prefix + ".e_a2a", d);
  declare_gnn_node_update(ps, rng, prefix + ".n_agent", d, lanes ? 2 : 1);
  if (lanes) {
    declare_gnn_edge_update(ps, rng, prefix + ".e_a2l", d);
    declare_gnn_node_update(ps, rng, prefix + ".n_lane", d, 1);
  }
}

struct GraphState {
  ad::Var agents, lanes, a2a, a2l;
};

void gnn_round(nn::Scope& s, const std::string& prefix, GraphState& st, const SceneGraph& g, bool lanes, int heads) {
  st.a2a = gnn_edge_update(s, prefix + ".e_a2a", st.a2a, st.agents, st.agents, g.a2a_topo);
  if (lanes) {
    st.a2l = gnn_edge_update(s, prefix + ".e_a2l", st.a2l, st.agents, st.lanes, g.a2l_topo);
    const ad::Var agents =
        gnn_node_update(s, prefix + ".n_agent", st.agents, {{st.a2a, g.agent_a2a}, {st.a2l, g.agent_a2l}}, heads);
    st.lanes = gnn_node_update(s, prefix + ".n_lane", st.lanes, {{st.a2l, g.lane_a2l}}, heads);
    st.agents = agents;
  } else {
    // No lanes: the a2l pool sees only masked slots, as for a scene whose lanes are all padding.
    Incidence none;
    none.per_node = 1;
    none.edge_rows.assign(sz(st.agents.rows()), -1);
    none.mask.assign(sz(st.agents.rows()), 0);
    const ad::Var empty = ad::constant(1, st.agents.cols(), 0.0);
    st.agents =
        gnn_node_update(s, prefix + ".n_agent", st.agents, {{st.a2a, g.agent_a2a}, {empty, none}}, heads);
  }
}

void declare_ffn(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d) {
  nn::declare_layer_norm(ps, rng, prefix + ".ln", d);
  nn::declare_mlp(ps, rng, prefix + ".mlp", d, 2 * d, d);
}

ad::Var ffn(nn::Scope& s, const std::string& prefix, const ad::Var& x) {
  return ad::add(x, nn::apply_mlp(s, prefix + ".mlp", nn::apply_layer_norm(s, prefix + ".ln", x)));
}

SceneMode pad_mode(const SceneMode& m, int n_pad) {
  const int n = m.num_agents();
  if (n == n_pad) return m;
  SceneMode out;
  out.a2l.assign(sz(n_pad), 0);
  std::copy(m.a2l.begin(), m.a2l.end(), out.a2l.begin());
  out.a2a.assign(sz(num_pairs(n_pad)), Homotopy::S);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.a2a[sz(pair_index(i, j, n_pad))] = m.pair(i, j);
  return out;
}

std::vector<SceneMode> pad_modes(const std::vector<SceneMode>& modes, const ModelInput& in) {
  std::vector<SceneMode> out;
  out.reserve(modes.size());
  for (const auto& m : modes) {
    if (m.num_agents() != in.real_agents || static_cast<int>(m.a2a.size()) != num_pairs(in.real_agents))
      throw ShapeError("scene mode does not match the scene's agent count");
    for (int l : m.a2l)
      if (l < 0 || l > in.real_lanes) throw ShapeError("scene mode references an unknown lane");
    out.push_back(pad_mode(m, in.num_agents));
  }
  return out;
}

Homotopy mode_pair(const SceneMode& m, int i, int j) {
  return i < j ? m.a2a[sz(pair_index(i, j, m.num_agents()))] : m.a2a[sz(pair_index(j, i, m.num_agents()))];
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0) throw Error("model config: d_model must be divisible by heads");
  if (decoder_rounds < 1) throw Error("model config: decoder_rounds must be >= 1");
  if (encoder_rounds < 0 || energy_rounds < 0) throw Error("model config: negative round count");
  if (history_len < 1 || future_len < 1) throw Error("model config: horizons must be positive");
  if (lane_points < 2) throw Error("model config: lane_points must be >= 2");
  if (k_train < 1 || k_decode_train < 1 || k_eval < 1 || num_selected_factors < 1)
    throw Error("model config: sample counts must be positive");
}

int lane_raw_dim(const ModelConfig& cfg) { return cfg.lane_points * 4 + 2; }

ModelInput prepare_input(const Scene& scene, const ModelConfig& cfg, int pad_agents, int pad_lanes) {
  validate(scene);
  if (scene.history_len() != cfg.history_len)
    throw ShapeError("scene history length " + std::to_string(scene.history_len()) + " != model history length " +
                     std::to_string(cfg.history_len));
  ModelInput in;
  in.real_agents = scene.num_agents();
  in.real_lanes = scene.num_lanes();
  in.num_agents = std::max(in.real_agents, pad_agents);
  in.num_lanes = std::max(in.real_lanes, pad_lanes);
  in.history_len = cfg.history_len;
  in.future_len = cfg.future_len;
  in.dt = scene.dt;
  in.dt_history = scene.dt_history;
  const int N = in.num_agents, M = in.num_lanes, Th = in.history_len, Tf = in.future_len;

  in.agent_mask.assign(sz(N), 0);
  in.lane_mask.assign(sz(M), 0);
  in.hist_valid.assign(sz(N * Th), 0);
  in.statics.assign(sz(N), AgentStatic{});
  in.history.assign(sz(N * Th), TrackFrame{Pose4{}, 0.0, false});
  for (int i = 0; i < in.real_agents; ++i) {
    const auto& a = scene.agents[sz(i)];
    in.agent_mask[sz(i)] = 1;
    in.statics[sz(i)] = a.statics;
    for (int t = 0; t < Th; ++t) {
      in.history[sz(i * Th + t)] = a.history[sz(t)];
      in.hist_valid[sz(i * Th + t)] = a.history[sz(t)].valid ? 1 : 0;
    }
  }
  for (int l = 0; l < M; ++l) {
    if (l < in.real_lanes) {
      in.lanes.push_back(scene.lane_graph.lanes[sz(l)]);
      in.lane_mask[sz(l)] = 1;
    } else {
      in.lanes.push_back(dummy_lane(l + 1));
    }
  }

  auto aux_of = [&](int i, int t) {
    const auto& f = in.history[sz(i * Th + t)];
    return AgentAux{f.pose, in.statics[sz(i)], f.speed};
  };

  in.agent_feat.reserve(sz(N * Th * kAgentRaw));
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < Th; ++t) {
      const auto& f = in.history[sz(i * Th + t)];
      const auto st = static_features(in.statics[sz(i)], f.speed);
      for (int c = 0; c < kNumAgentTypes; ++c) in.agent_feat.push_back(st[sz(c)]);
      in.agent_feat.push_back(st[kNumAgentTypes] * kSizeScale);
      in.agent_feat.push_back(st[kNumAgentTypes + 1] * kSizeScale);
      in.agent_feat.push_back(st[kNumAgentTypes + 2] * kSpeedScale);
      const bool has_prev = t > 0 && in.hist_valid[sz(i * Th + t)] && in.hist_valid[sz(i * Th + t - 1)];
      if (has_prev) {
        push_pose(in.agent_feat, relative_pose(f.pose, in.history[sz(i * Th + t - 1)].pose), kStepScale);
      } else {
        push_pose(in.agent_feat, Pose4{}, kStepScale);
      }
      in.agent_feat.push_back(has_prev ? 1.0 : 0.0);
    }

  const int lane_dim = lane_raw_dim(cfg);
  in.lane_feat.reserve(sz(M * lane_dim));
  for (const auto& lane : in.lanes) {
    for (const auto& p : resample_local(lane, cfg.lane_points)) push_pose(in.lane_feat, p, kLaneLocalScale);
    in.lane_feat.push_back(lane.half_width * 0.5);
    in.lane_feat.push_back(lane.length() * 0.01);
  }

  in.a2a_feat.reserve(sz(N * N * Th * kA2ARaw));
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int t = 0; t < Th; ++t) push_a2a(in.a2a_feat, aux_of(i, t), aux_of(j, t), i == j);

  in.a2l_feat.reserve(sz(N * M * Th * kA2LRaw));
  for (int i = 0; i < N; ++i)
    for (int l = 0; l < M; ++l)
      for (int t = 0; t < Th; ++t) {
        const Pose4& p = in.history[sz(i * Th + t)].pose;
        push_a2l(in.a2l_feat, p, in.lanes[sz(l)]);
        std::array<double, kNumPairwiseA2L> onehot{};
        if (in.hist_valid[sz(i * Th + t)] && in.lane_mask[sz(l)])
          onehot[static_cast<size_t>(pairwise_a2l(p, in.lanes[sz(l)], cfg.align_thresh))] = 1.0;
        in.a2l_feat.insert(in.a2l_feat.end(), onehot.begin(), onehot.end());
      }

  in.l2l_feat.reserve(sz(M * M * kL2LRaw));
  for (int a = 0; a < M; ++a)
    for (int b = 0; b < M; ++b) {
      const auto f = l2l_edge_feature(in.lanes[sz(a)], in.lanes[sz(b)]);
      for (int q = 0; q < 4; ++q) {
        in.l2l_feat.push_back(f[sz(4 * q)] * kPosScale);
        in.l2l_feat.push_back(f[sz(4 * q + 1)] * kPosScale);
        in.l2l_feat.push_back(f[sz(4 * q + 2)]);
        in.l2l_feat.push_back(f[sz(4 * q + 3)]);
      }
      std::array<double, kNumLaneRelations> rel{};
      bool any = false;
      if (a < in.real_lanes && b < in.real_lanes) {
        if (auto r = scene.lane_graph.relation(a + 1, b + 1)) {
          rel[static_cast<size_t>(*r)] = 1.0;
          any = true;
        }
      }
      in.l2l_feat.insert(in.l2l_feat.end(), rel.begin(), rel.end());
      in.l2l_feat.push_back(a == b ? 1.0 : 0.0);
      in.l2l_feat.push_back(!any && a != b ? 1.0 : 0.0);
    }

  if (scene.has_futures()) {
    if (scene.future_len() != Tf)
      throw ShapeError("scene future length " + std::to_string(scene.future_len()) + " != model future length " +
                       std::to_string(Tf));
    in.has_future = true;
    in.future.assign(sz(N * Tf), TrackFrame{Pose4{}, 0.0, false});
    in.fut_valid.assign(sz(N * Tf), 0);
    for (int i = 0; i < in.real_agents; ++i)
      for (int t = 0; t < Tf; ++t) {
        const auto& f = (*scene.agents[sz(i)].future)[sz(t)];
        in.future[sz(i * Tf + t)] = f;
        in.fut_valid[sz(i * Tf + t)] = f.valid ? 1 : 0;
      }
    in.gtsm = extract_gtsm(scene, cfg.theta_hat).mode;
  }
  return in;
}

// ---------------------------------------------------------------------------
// Building blocks

void declare_cee_attention(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d, int edge_dim) {
  nn::declare_layer_norm(ps, rng, prefix + ".ln_q", d);
  nn::declare_linear(ps, rng, prefix + ".q", d, d);
  nn::declare_layer_norm(ps, rng, prefix + ".ln_kv", d);
  nn::declare_linear(ps, rng, prefix + ".y", d, d);
  if (edge_dim > 0) nn::declare_linear(ps, rng, prefix + ".e", edge_dim, d);
  nn::declare_linear(ps, rng, prefix + ".k", d, d);
  nn::declare_linear(ps, rng, prefix + ".v", d, d);
  nn::declare_linear(ps, rng, prefix + ".o", d, d);
}

ad::Var cee_attention(nn::Scope& s, const std::string& prefix, const ad::Var& x, const ad::Var& y,
                      const AttentionKeys& keys, int heads, std::vector<double>* weights) {
  const int G = x.rows();
  const int S = keys.per_query;
  if (keys.key_rows.size() != sz(G * S) || keys.mask.size() != sz(G * S))
    throw ShapeError("cee_attention: key layout does not match the query count");
  const ad::Var q = nn::apply_linear(s, prefix + ".q", nn::apply_layer_norm(s, prefix + ".ln_q", x));
  const ad::Var hy = nn::apply_linear(s, prefix + ".y", nn::apply_layer_norm(s, prefix + ".ln_kv", y));
  ad::Var pre = ad::gather_rows(hy, keys.key_rows);
  if (keys.edge_dim > 0) {
    if (keys.edge_feats.size() != sz(G * S * keys.edge_dim)) throw ShapeError("cee_attention: edge feature size");
    pre = ad::add(pre, nn::apply_linear(s, prefix + ".e", ad::constant(G * S, keys.edge_dim, keys.edge_feats)));
  }
  const ad::Var h = ad::relu(pre);
  const ad::Var k = nn::apply_linear(s, prefix + ".k", h);
  const ad::Var v = nn::apply_linear(s, prefix + ".v", h);
  const ad::Var att = ad::attention(q, k, v, keys.mask, heads, weights);
  return ad::add(x, nn::apply_linear(s, prefix + ".o", att));
}

void declare_gnn_edge_update(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d) {
  nn::declare_mlp(ps, rng, prefix + ".mlp", 3 * d, d, d);
}

ad::Var gnn_edge_update(nn::Scope& s, const std::string& prefix, const ad::Var& edges, const ad::Var& src_nodes,
                        const ad::Var& dst_nodes, const EdgeTopology& topo) {
  if (topo.src.size() != sz(edges.rows()) || topo.dst.size() != sz(edges.rows()))
    throw ShapeError("gnn_edge_update: topology size");
  const ad::Var in =
      ad::concat_cols({edges, ad::gather_rows(src_nodes, topo.src), ad::gather_rows(dst_nodes, topo.dst)});
  return ad::add(edges, nn::apply_mlp(s, prefix + ".mlp", in));
}

void declare_attn_pool(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d) {
  ps.declare(prefix + ".query", 1, d, nn::ParamStore::Init::Normal, rng);
  nn::declare_layer_norm(ps, rng, prefix + ".ln", d);
  nn::declare_linear(ps, rng, prefix + ".k", d, d);
  nn::declare_linear(ps, rng, prefix + ".v", d, d);
  nn::declare_linear(ps, rng, prefix + ".o", d, d);
}

ad::Var attn_pool(nn::Scope& s, const std::string& prefix, const ad::Var& items, const Incidence& groups, int heads) {
  const int S = groups.per_node;
  const int G = S == 0 ? 0 : static_cast<int>(groups.edge_rows.size()) / S;
  if (groups.mask.size() != groups.edge_rows.size()) throw ShapeError("attn_pool: mask size");
  const std::vector<int> zeros(sz(G), 0);
  const ad::Var q = ad::gather_rows(s.p(prefix + ".query"), zeros);
  const ad::Var n = nn::apply_layer_norm(s, prefix + ".ln", items);
  const ad::Var k = ad::gather_rows(nn::apply_linear(s, prefix + ".k", n), groups.edge_rows);
  const ad::Var v = ad::gather_rows(nn::apply_linear(s, prefix + ".v", n), groups.edge_rows);
  return nn::apply_linear(s, prefix + ".o", ad::attention(q, k, v, groups.mask, heads));
}

void declare_gnn_node_update(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d,
                             int edge_types) {
  for (int k = 0; k < edge_types; ++k) declare_attn_pool(ps, rng, prefix + ".pool" + std::to_string(k), d);
  nn::declare_mlp(ps, rng, prefix + ".mlp", edge_types * d, d, d);
}

ad::Var gnn_node_update(nn::Scope& s, const std::string& prefix, const ad::Var& nodes,
                        const std::vector<std::pair<ad::Var, Incidence>>& incident, int heads) {
  std::vector<ad::Var> pooled;
  for (size_t k = 0; k < incident.size(); ++k) {
    const auto& [edges, inc] = incident[k];
    if (inc.edge_rows.size() != sz(nodes.rows() * inc.per_node)) throw ShapeError("gnn_node_update: incidence size");
    pooled.push_back(attn_pool(s, prefix + ".pool" + std::to_string(k), edges, inc, heads));
  }
  const ad::Var cat = pooled.size() == 1 ? pooled.front() : ad::concat_cols(pooled);
  return ad::add(nodes, nn::apply_mlp(s, prefix + ".mlp", cat));
}

// ---------------------------------------------------------------------------
// Model

CttModel::CttModel(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void CttModel::init_params(nn::ParamStore& ps, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const int d = cfg_.d_model;
  const int Th = cfg_.history_len, Tf = cfg_.future_len;

  nn::declare_mlp(ps, rng, "emb.agent", kAgentRaw, d, d);
  nn::declare_mlp(ps, rng, "emb.lane", lane_raw_dim(cfg_), d, d);
  nn::declare_mlp(ps, rng, "emb.a2a", kA2ARaw, d, d);
  nn::declare_mlp(ps, rng, "emb.a2l", kA2LRaw, d, d);
  ps.declare("emb.hist_pos", Th, d, nn::ParamStore::Init::Normal, rng);
  ps.declare("emb.fut_pos", Tf, d, nn::ParamStore::Init::Normal, rng);

  for (int r = 0; r < cfg_.encoder_rounds; ++r) {
    const std::string p = "enc" + std::to_string(r);
    declare_cee_attention(ps, rng, p + ".temporal", d, 2 * Th - 1);
    declare_cee_attention(ps, rng, p + ".a2a", d, kA2ARaw);
    declare_cee_attention(ps, rng, p + ".a2l", d, kA2LRaw);
    declare_cee_attention(ps, rng, p + ".l2l", d, kL2LRaw);
    declare_gnn_round(ps, rng, p + ".gnn", d, true);
    declare_ffn(ps, rng, p + ".ffn_agent", d);
    declare_ffn(ps, rng, p + ".ffn_lane", d);
  }

  declare_attn_pool(ps, rng, "head_a2l.pool", d);
  nn::declare_mlp(ps, rng, "head_a2l.mlp", d, d, 1);
  declare_attn_pool(ps, rng, "head_a2l.null_pool", d);
  nn::declare_mlp(ps, rng, "head_a2l.null", d, d, 1);
  declare_attn_pool(ps, rng, "head_a2a.pool", d);
  nn::declare_mlp(ps, rng, "head_a2a.mlp", d, d, kNumHomotopy);

  ps.declare("energy.tok_a2a", kNumHomotopy + 1, d, nn::ParamStore::Init::Normal, rng);
  ps.declare("energy.tok_a2l", 2, d, nn::ParamStore::Init::Normal, rng);
  nn::declare_linear(ps, rng, "energy.in_a2a", 2 * d, d);
  nn::declare_linear(ps, rng, "energy.in_a2l", 2 * d, d);
  for (int r = 0; r < cfg_.energy_rounds; ++r) declare_gnn_round(ps, rng, "energy" + std::to_string(r), d, true);
  declare_attn_pool(ps, rng, "energy.pool", d);
  nn::declare_mlp(ps, rng, "energy.out", d, d, 1);

  declare_cee_attention(ps, rng, "dec.temporal", d, 2 * Tf - 1);
  declare_cee_attention(ps, rng, "dec.hist", d, kDecHistEdge);
  declare_cee_attention(ps, rng, "dec.lane", d, kDecLaneEdge);
  declare_cee_attention(ps, rng, "dec.agent", d, kDecAgentEdge);
  declare_ffn(ps, rng, "dec.ffn", d);
  nn::declare_layer_norm(ps, rng, "dec.out_ln", d);
  nn::declare_mlp(ps, rng, "dec.out", d, d, cfg_.use_dynamics ? 2 : 3);
}

namespace {

ad::Var future_seed(nn::Scope& s, const ad::Var& agent_hist, const ModelInput& in) {
  const int N = in.num_agents, Th = in.history_len, Tf = in.future_len;
  std::vector<int> last(sz(N * Tf)), tpos(sz(N * Tf));
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < Tf; ++t) {
      last[sz(i * Tf + t)] = i * Th + Th - 1;
      tpos[sz(i * Tf + t)] = t;
    }
  return ad::add(ad::gather_rows(agent_hist, last), ad::gather_rows(s.p("emb.fut_pos"), tpos));
}

}  // namespace

ContextTensors CttModel::embed_scene(nn::Scope& s, const ModelInput& in) const {
  if (in.history_len != cfg_.history_len || in.future_len != cfg_.future_len)
    throw ShapeError("embed_scene: input horizons do not match the model");
  const int N = in.num_agents, M = in.num_lanes, Th = in.history_len;
  ContextTensors c;
  c.input = &in;
  std::vector<int> tpos(sz(N * Th));
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < Th; ++t) tpos[sz(i * Th + t)] = t;
  c.agent_hist = ad::add(nn::apply_mlp(s, "emb.agent", ad::constant(N * Th, kAgentRaw, in.agent_feat)),
                         ad::gather_rows(s.p("emb.hist_pos"), tpos));
  c.a2a_edges = nn::apply_mlp(s, "emb.a2a", ad::constant(N * N * Th, kA2ARaw, in.a2a_feat));
  if (M > 0) {
    c.lanes = nn::apply_mlp(s, "emb.lane", ad::constant(M, lane_raw_dim(cfg_), in.lane_feat));
    c.a2l_edges = nn::apply_mlp(s, "emb.a2l", ad::constant(N * M * Th, kA2LRaw, in.a2l_feat));
  }
  c.agent_future = future_seed(s, c.agent_hist, in);
  return c;
}

ContextTensors CttModel::encode(nn::Scope& s, const ModelInput& in) const {
  ContextTensors c = embed_scene(s, in);
  if (cfg_.encoder_rounds == 0) return c;
  const int N = in.num_agents, M = in.num_lanes, Th = in.history_len, H = cfg_.heads;
  const bool lanes = M > 0;
  auto hv = [&](int i, int t) { return in.agent_mask[sz(i)] && in.hist_valid[sz(i * Th + t)]; };

  AttentionKeys temporal = make_keys(N * Th, Th, 2 * Th - 1);
  AttentionKeys a2a = make_keys(N * Th, N, kA2ARaw);
  AttentionKeys a2l = make_keys(N * Th, M, kA2LRaw);
  AttentionKeys l2l = make_keys(M, M, kL2LRaw);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < Th; ++t) {
      const int g = i * Th + t;
      for (int u = 0; u < Th; ++u) {
        const size_t slot = sz(g * Th + u);
        temporal.key_rows[slot] = i * Th + u;
        temporal.mask[slot] = hv(i, u) ? 1 : 0;
        temporal.edge_feats[slot * sz(2 * Th - 1) + sz(u - t + Th - 1)] = 1.0;
      }
      for (int j = 0; j < N; ++j) {
        const size_t slot = sz(g * N + j);
        a2a.key_rows[slot] = j * Th + t;
        a2a.mask[slot] = hv(j, t) ? 1 : 0;
        const size_t src = sz((i * N + j) * Th + t) * kA2ARaw;
        std::copy_n(in.a2a_feat.begin() + static_cast<std::ptrdiff_t>(src), kA2ARaw,
                    a2a.edge_feats.begin() + static_cast<std::ptrdiff_t>(slot * kA2ARaw));
      }
      for (int l = 0; l < M; ++l) {
        const size_t slot = sz(g * M + l);
        a2l.key_rows[slot] = l;
        a2l.mask[slot] = in.lane_mask[sz(l)];
        const size_t src = sz((i * M + l) * Th + t) * kA2LRaw;
        std::copy_n(in.a2l_feat.begin() + static_cast<std::ptrdiff_t>(src), kA2LRaw,
                    a2l.edge_feats.begin() + static_cast<std::ptrdiff_t>(slot * kA2LRaw));
      }
    }
  for (int a = 0; a < M; ++a)
    for (int b = 0; b < M; ++b) {
      const size_t slot = sz(a * M + b);
      l2l.key_rows[slot] = b;
      l2l.mask[slot] = in.lane_mask[sz(b)];
      std::copy_n(in.l2l_feat.begin() + static_cast<std::ptrdiff_t>(slot * kL2LRaw), kL2LRaw,
                  l2l.edge_feats.begin() + static_cast<std::ptrdiff_t>(slot * kL2LRaw));
    }
  const SceneGraph graph = build_graph(in, 1);

  for (int r = 0; r < cfg_.encoder_rounds; ++r) {
    const std::string p = "enc" + std::to_string(r);
    c.agent_hist = cee_attention(s, p + ".temporal", c.agent_hist, c.agent_hist, temporal, H);
    c.agent_hist = cee_attention(s, p + ".a2a", c.agent_hist, c.agent_hist, a2a, H);
    if (lanes) {
      c.agent_hist = cee_attention(s, p + ".a2l", c.agent_hist, c.lanes, a2l, H);
      c.lanes = cee_attention(s, p + ".l2l", c.lanes, c.lanes, l2l, H);
    }
    GraphState st{c.agent_hist, c.lanes, c.a2a_edges, c.a2l_edges};
    gnn_round(s, p + ".gnn", st, graph, lanes, H);
    c.agent_hist = ffn(s, p + ".ffn_agent", st.agents);
    if (lanes) c.lanes = ffn(s, p + ".ffn_lane", st.lanes);
    c.a2a_edges = st.a2a;
    c.a2l_edges = st.a2l;
  }
  c.agent_future = future_seed(s, c.agent_hist, in);
  return c;
}

ad::Var CttModel::head_a2l(nn::Scope& s, const ContextTensors& ctx) const {
  const ModelInput& in = *ctx.input;
  const int N = in.num_agents, M = in.num_lanes, Th = in.history_len, H = cfg_.heads;

  Incidence over_t;
  over_t.per_node = Th;
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < Th; ++t) {
      over_t.edge_rows.push_back(i * Th + t);
      over_t.mask.push_back(in.hist_valid[sz(i * Th + t)]);
    }
  const ad::Var null_logit =
      nn::apply_mlp(s, "head_a2l.null", attn_pool(s, "head_a2l.null_pool", ctx.agent_hist, over_t, H));
  if (M == 0) return ad::log_softmax_rows(null_logit);

  Incidence pool;
  pool.per_node = Th;
  for (int i = 0; i < N; ++i)
    for (int l = 0; l < M; ++l)
      for (int t = 0; t < Th; ++t) {
        pool.edge_rows.push_back((i * M + l) * Th + t);
        pool.mask.push_back(in.hist_valid[sz(i * Th + t)]);
      }
  const ad::Var lane_logit = ad::reshape(
      nn::apply_mlp(s, "head_a2l.mlp", attn_pool(s, "head_a2l.pool", ctx.a2l_edges, pool, H)), N, M);
  ad::Var logits = ad::concat_cols({null_logit, lane_logit});
  if (in.real_lanes < M) {
    std::vector<double> pen(sz(N * (M + 1)), 0.0);
    for (int i = 0; i < N; ++i)
      for (int l = in.real_lanes; l < M; ++l) pen[sz(i * (M + 1) + l + 1)] = kMaskedLogit;
    logits = ad::add(logits, ad::constant(N, M + 1, std::move(pen)));
  }
  return ad::log_softmax_rows(logits);
}

ad::Var CttModel::head_a2a_pairs(nn::Scope& s, const ContextTensors& ctx,
                                 const std::vector<std::pair<int, int>>& pairs) const {
  const ModelInput& in = *ctx.input;
  const int N = in.num_agents, Th = in.history_len;
  if (pairs.empty()) return ad::constant(0, kNumHomotopy, std::vector<double>{});
  std::vector<int> fwd, bwd;
  Incidence pool;
  pool.per_node = Th;
  int row = 0;
  for (const auto& [i, j] : pairs) {
    if (i == j || i < 0 || j < 0 || i >= N || j >= N) throw ShapeError("head_a2a: invalid agent pair");
    for (int t = 0; t < Th; ++t) {
      fwd.push_back((i * N + j) * Th + t);
      bwd.push_back((j * N + i) * Th + t);
      pool.edge_rows.push_back(row++);
      pool.mask.push_back(in.hist_valid[sz(i * Th + t)] && in.hist_valid[sz(j * Th + t)] ? 1 : 0);
    }
  }
  const ad::Var sym =
      ad::scale(ad::add(ad::gather_rows(ctx.a2a_edges, fwd), ad::gather_rows(ctx.a2a_edges, bwd)), 0.5);
  return ad::log_softmax_rows(
      nn::apply_mlp(s, "head_a2a.mlp", attn_pool(s, "head_a2a.pool", sym, pool, cfg_.heads)));
}

ad::Var CttModel::head_a2a(nn::Scope& s, const ContextTensors& ctx) const {
  const int N = ctx.input->num_agents;
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) pairs.emplace_back(i, j);
  return head_a2a_pairs(s, ctx, pairs);
}

MarginalDist CttModel::marginals(const ad::Var& a2l_logp, const ad::Var& a2a_logp, const ModelInput& in) const {
  const int N = in.num_agents;
  const int n = in.real_agents, m = in.real_lanes;
  MarginalDist md;
  md.num_agents = n;
  md.num_lanes = m;
  for (int i = 0; i < n; ++i)
    for (int l = 0; l <= m; ++l) md.a2l_logp.push_back(a2l_logp(i, l));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const int p = pair_index(i, j, N);
      for (int h = 0; h < kNumHomotopy; ++h) md.a2a_logp.push_back(a2a_logp(p, h));
    }
  return md;
}

ad::Var CttModel::energy(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes_in) const {
  const ModelInput& in = *ctx.input;
  const std::vector<SceneMode> modes = pad_modes(modes_in, in);
  const int K = static_cast<int>(modes.size());
  if (K < 1) throw Error("energy: at least one scene mode is required");
  const int N = in.num_agents, M = in.num_lanes, Th = in.history_len, H = cfg_.heads;
  const bool lanes = M > 0;
  auto hv = [&](int i, int t) { return in.agent_mask[sz(i)] && in.hist_valid[sz(i * Th + t)]; };

  std::vector<int> a2a_rows, a2a_tok, a2l_rows, a2l_tok, agent_rows, lane_rows;
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int t = 0; t < Th; ++t) {
          a2a_rows.push_back((i * N + j) * Th + t);
          a2a_tok.push_back(i == j ? kNumHomotopy : static_cast<int>(mode_pair(modes[sz(k)], i, j)));
        }
    for (int i = 0; i < N; ++i)
      for (int l = 0; l < M; ++l)
        for (int t = 0; t < Th; ++t) {
          a2l_rows.push_back((i * M + l) * Th + t);
          a2l_tok.push_back(modes[sz(k)].a2l[sz(i)] == l + 1 ? 1 : 0);
        }
    for (int r = 0; r < N * Th; ++r) agent_rows.push_back(r);
    for (int l = 0; l < M; ++l) lane_rows.push_back(l);
  }

  GraphState st;
  st.agents = ad::gather_rows(ctx.agent_hist, agent_rows);
  st.a2a = nn::apply_linear(s, "energy.in_a2a",
                            ad::concat_cols({ad::gather_rows(ctx.a2a_edges, a2a_rows),
                                             ad::gather_rows(s.p("energy.tok_a2a"), a2a_tok)}));
  if (lanes) {
    st.lanes = ad::gather_rows(ctx.lanes, lane_rows);
    st.a2l = nn::apply_linear(s, "energy.in_a2l",
                              ad::concat_cols({ad::gather_rows(ctx.a2l_edges, a2l_rows),
                                               ad::gather_rows(s.p("energy.tok_a2l"), a2l_tok)}));
  }
  const SceneGraph graph = build_graph(in, K);
  for (int r = 0; r < cfg_.energy_rounds; ++r) gnn_round(s, "energy" + std::to_string(r), st, graph, lanes, H);

  const int per_a2a = N * N * Th, per_a2l = N * M * Th;
  Incidence pool;
  pool.per_node = per_a2a + per_a2l;
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int t = 0; t < Th; ++t) {
          pool.edge_rows.push_back(k * per_a2a + (i * N + j) * Th + t);
          pool.mask.push_back(hv(i, t) && hv(j, t) ? 1 : 0);
        }
    for (int i = 0; i < N; ++i)
      for (int l = 0; l < M; ++l)
        for (int t = 0; t < Th; ++t) {
          pool.edge_rows.push_back(K * per_a2a + k * per_a2l + (i * M + l) * Th + t);
          pool.mask.push_back(hv(i, t) && in.lane_mask[sz(l)] ? 1 : 0);
        }
  }
  const ad::Var items = lanes ? ad::concat_rows({st.a2a, st.a2l}) : st.a2a;
  return nn::apply_mlp(s, "energy.out", attn_pool(s, "energy.pool", items, pool, H));
}

ad::Var CttModel::score_modes(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes,
                              const MarginalDist& marginals) const {
  std::vector<double> prior;
  prior.reserve(modes.size());
  for (const auto& m : modes) prior.push_back(product_logp(marginals, m));
  return ad::add(energy(s, ctx, modes), ad::constant(static_cast<int>(modes.size()), 1, std::move(prior)));
}

// ---------------------------------------------------------------------------
// Decoder

namespace {

struct DecodeAux {
  std::vector<Pose4> pose;     // [K*N*Tf]
  std::vector<double> speed;   // [K*N*Tf]
};

}  // namespace

ad::Var CttModel::decode_pass(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes,
                              const ad::Var& fut, const std::vector<Pose4>& aux_pose,
                              const std::vector<double>& aux_speed, int causal_step) const {
  const ModelInput& in = *ctx.input;
  const int K = static_cast<int>(modes.size());
  const int N = in.num_agents, M = in.num_lanes, Th = in.history_len, Tf = in.future_len, H = cfg_.heads;
  const bool causal = causal_step >= 0;
  auto row = [&](int k, int i, int t) { return (k * N + i) * Tf + t; };
  const int G = K * N * Tf;

  AttentionKeys temporal = make_keys(G, Tf, 2 * Tf - 1);
  AttentionKeys hist = make_keys(G, Th, kDecHistEdge);
  AttentionKeys lane = make_keys(G, M, kDecLaneEdge);
  AttentionKeys agent = make_keys(G, N, kDecAgentEdge);
  std::vector<double> buf;
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i) {
      const int cond_lane = modes[sz(k)].a2l[sz(i)];
      for (int t = 0; t < Tf; ++t) {
        const int g = row(k, i, t);
        const Pose4& p = aux_pose[sz(g)];
        for (int u = 0; u < Tf; ++u) {
          const size_t slot = sz(g * Tf + u);
          temporal.key_rows[slot] = row(k, i, u);
          temporal.mask[slot] = in.agent_mask[sz(i)] && (!causal || u <= t) ? 1 : 0;
          temporal.edge_feats[slot * sz(2 * Tf - 1) + sz(u - t + Tf - 1)] = 1.0;
        }
        for (int u = 0; u < Th; ++u) {
          const size_t slot = sz(g * Th + u);
          hist.key_rows[slot] = i * Th + u;
          hist.mask[slot] = in.hist_valid[sz(i * Th + u)];
          buf.clear();
          push_pose(buf, relative_pose(p, in.history[sz(i * Th + u)].pose), kPosScale);
          buf.push_back(((t + 1) * in.dt + (Th - 1 - u) * in.dt_history) * kTimeScale);
          std::copy(buf.begin(), buf.end(), hist.edge_feats.begin() + static_cast<std::ptrdiff_t>(slot * kDecHistEdge));
        }
        for (int l = 0; l < M; ++l) {
          const size_t slot = sz(g * M + l);
          lane.key_rows[slot] = l;
          lane.mask[slot] = in.lane_mask[sz(l)];
          buf.clear();
          push_a2l(buf, p, in.lanes[sz(l)]);
          buf.push_back(cond_lane == l + 1 ? 1.0 : 0.0);
          buf.push_back(cond_lane == 0 ? 1.0 : 0.0);
          std::copy(buf.begin(), buf.end(), lane.edge_feats.begin() + static_cast<std::ptrdiff_t>(slot * kDecLaneEdge));
        }
        const AgentAux self{p, in.statics[sz(i)], aux_speed[sz(g)]};
        for (int j = 0; j < N; ++j) {
          const size_t slot = sz(g * N + j);
          const int gj = row(k, j, t);
          agent.key_rows[slot] = gj;
          agent.mask[slot] = in.agent_mask[sz(j)];
          buf.clear();
          push_a2a(buf, self, AgentAux{aux_pose[sz(gj)], in.statics[sz(j)], aux_speed[sz(gj)]}, i == j);
          std::array<double, kNumHomotopy> tok{};
          if (i != j) tok[static_cast<size_t>(mode_pair(modes[sz(k)], i, j))] = 1.0;
          buf.insert(buf.end(), tok.begin(), tok.end());
          std::copy(buf.begin(), buf.end(), agent.edge_feats.begin() + static_cast<std::ptrdiff_t>(slot * kDecAgentEdge));
        }
      }
    }

  ad::Var f = cee_attention(s, "dec.temporal", fut, fut, temporal, H);
  f = cee_attention(s, "dec.hist", f, ctx.agent_hist, hist, H);
  if (M > 0) f = cee_attention(s, "dec.lane", f, ctx.lanes, lane, H);
  f = cee_attention(s, "dec.agent", f, f, agent, H);
  return ffn(s, "dec.ffn", f);
}

DecodeResult CttModel::emit(nn::Scope& s, const ModelInput& in, int K, const ad::Var& raw) const {
  (void)s;
  const int N = in.num_agents, Tf = in.future_len;
  const int B = K * N;
  std::vector<Pose4> init(sz(B));
  std::vector<double> speed(sz(B));
  std::vector<AgentType> types(sz(B));
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i) {
      init[sz(k * N + i)] = in.current(i).pose;
      speed[sz(k * N + i)] = in.current(i).speed;
      types[sz(k * N + i)] = in.statics[sz(i)].type;
    }
  DecodeResult r;
  r.num_samples = K;
  if (cfg_.use_dynamics) {
    std::vector<double> bound(sz(B * Tf * 2));
    for (int b = 0; b < B; ++b) {
      const auto lim = limits_for(types[sz(b)]);
      for (int t = 0; t < Tf; ++t) {
        bound[sz((b * Tf + t) * 2)] = lim.a_max;
        bound[sz((b * Tf + t) * 2 + 1)] = std::min(lim.w_max, 2.0);
      }
    }
    r.controls = ad::mul(ad::tanh(raw), ad::constant(B * Tf, 2, std::move(bound)));
    const RolloutResult ro = dynamics_rollout(init, speed, types, r.controls, Tf, in.dt);
    r.poses = ro.poses;
    r.speed = ro.speed;
    return r;
  }
  std::vector<double> x0(sz(B * Tf)), y0(sz(B * Tf)), s0(sz(B * Tf)), c0(sz(B * Tf)), th0(sz(B * Tf));
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < Tf; ++t) {
      const size_t q = sz(b * Tf + t);
      x0[q] = init[sz(b)].x;
      y0[q] = init[sz(b)].y;
      s0[q] = init[sz(b)].sin_h;
      c0[q] = init[sz(b)].cos_h;
      th0[q] = init[sz(b)].heading();
    }
  const int R = B * Tf;
  const ad::Var dx = ad::scale(ad::slice_cols(raw, 0, 1), kDirectScale);
  const ad::Var dy = ad::scale(ad::slice_cols(raw, 1, 1), kDirectScale);
  const ad::Var cs = ad::constant(R, 1, c0), sn = ad::constant(R, 1, s0);
  const ad::Var X = ad::add(ad::constant(R, 1, x0), ad::sub(ad::mul(cs, dx), ad::mul(sn, dy)));
  const ad::Var Y = ad::add(ad::constant(R, 1, y0), ad::add(ad::mul(sn, dx), ad::mul(cs, dy)));
  const ad::Var th = ad::add(ad::constant(R, 1, th0), ad::slice_cols(raw, 2, 1));
  r.poses = ad::concat_cols({X, Y, ad::sin(th), ad::cos(th)});
  // Speed from finite differences along each rollout (current pose first).
  std::vector<int> prev(sz(R));
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < Tf; ++t) prev[sz(b * Tf + t)] = t == 0 ? R + b : b * Tf + t - 1;
  std::vector<double> cur_xy;
  for (int b = 0; b < B; ++b) {
    cur_xy.push_back(init[sz(b)].x);
    cur_xy.push_back(init[sz(b)].y);
  }
  const ad::Var xy = ad::concat_rows({ad::concat_cols({X, Y}), ad::constant(B, 2, std::move(cur_xy))});
  const ad::Var dxy = ad::sub(ad::concat_cols({X, Y}), ad::gather_rows(xy, prev));
  r.speed = ad::scale(ad::sqrt(ad::sum_cols(ad::square(dxy))), 1.0 / in.dt);
  return r;
}

DecodeResult CttModel::decode(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes_in) const {
  const ModelInput& in = *ctx.input;
  const std::vector<SceneMode> modes = pad_modes(modes_in, in);
  const int K = static_cast<int>(modes.size());
  if (K < 1) throw Error("decode: at least one scene mode is required");
  const int N = in.num_agents, Tf = in.future_len;
  const int G = K * N * Tf;

  std::vector<int> seed_rows(sz(G));
  for (int k = 0; k < K; ++k)
    for (int r = 0; r < N * Tf; ++r) seed_rows[sz(k * N * Tf + r)] = r;
  const ad::Var fut0 = ad::gather_rows(ctx.agent_future, seed_rows);

  DecodeAux aux;
  aux.pose.resize(sz(G));
  aux.speed.resize(sz(G));
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < Tf; ++t) {
        aux.pose[sz((k * N + i) * Tf + t)] = in.current(i).pose;
        aux.speed[sz((k * N + i) * Tf + t)] = in.current(i).speed;
      }
  auto refresh = [&](const DecodeResult& r) {
    for (int g = 0; g < G; ++g) {
      aux.pose[sz(g)] = Pose4{r.poses(g, 0), r.poses(g, 1), r.poses(g, 2), r.poses(g, 3)};
      aux.speed[sz(g)] = r.speed(g, 0);
    }
  };
  auto head = [&](const ad::Var& f) {
    return nn::apply_mlp(s, "dec.out", nn::apply_layer_norm(s, "dec.out_ln", f));
  };

  DecodeResult result;
  if (cfg_.decode == DecodeStrategy::OneShot) {
    ad::Var f = fut0;
    for (int r = 0; r < cfg_.decoder_rounds; ++r) {
      f = decode_pass(s, ctx, modes, f, aux.pose, aux.speed, -1);
      result = emit(s, in, K, head(f));
      if (r + 1 < cfg_.decoder_rounds) refresh(result);
    }
    return result;
  }

  // Autoregressive: one causal pass per step; step t's output row is kept.
  std::vector<ad::Var> parts;
  for (int t = 0; t < Tf; ++t) {
    const ad::Var f = decode_pass(s, ctx, modes, fut0, aux.pose, aux.speed, t);
    std::vector<int> rows;
    for (int b = 0; b < K * N; ++b) rows.push_back(b * Tf + t);
    parts.push_back(ad::gather_rows(head(f), rows));
    // Assemble rows 0..t (later rows zero) in (b, t) order.
    const ad::Var stacked = ad::concat_rows(parts);
    std::vector<int> order(sz(G), -1);
    for (int b = 0; b < K * N; ++b)
      for (int u = 0; u <= t; ++u) order[sz(b * Tf + u)] = u * K * N + b;
    result = emit(s, in, K, ad::gather_rows(stacked, order));
    if (t + 1 < Tf) {
      refresh(result);
      // Rows beyond the current step carry the latest predicted pose.
      for (int b = 0; b < K * N; ++b)
        for (int u = t + 1; u < Tf; ++u) {
          aux.pose[sz(b * Tf + u)] = aux.pose[sz(b * Tf + t)];
          aux.speed[sz(b * Tf + u)] = aux.speed[sz(b * Tf + t)];
        }
    }
  }
  return result;
}

std::vector<std::vector<std::vector<TrackFrame>>> to_frames(const DecodeResult& r, const ModelInput& in) {
  const int K = r.num_samples, N = in.real_agents, Np = in.num_agents, Tf = in.future_len;
  std::vector<std::vector<std::vector<TrackFrame>>> out(sz(K), std::vector<std::vector<TrackFrame>>(sz(N)));
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < Tf; ++t) {
        const int g = (k * Np + i) * Tf + t;
        out[sz(k)][sz(i)].push_back(
            TrackFrame{Pose4{r.poses(g, 0), r.poses(g, 1), r.poses(g, 2), r.poses(g, 3)}, r.speed(g, 0), true});
      }
  return out;
}

}  // namespace ctt
