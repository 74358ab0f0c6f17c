#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctt/autodiff.hpp"
#include "ctt/mode_label.hpp"
#include "ctt/nn.hpp"
#include "ctt/scene.hpp"
#include "ctt/sm_sampling.hpp"

namespace ctt {

enum class DecodeStrategy { OneShot, Autoregressive };

struct ModelConfig {
  int d_model = 64;
  int heads = 4;
  int encoder_rounds = 2;
  int energy_rounds = 2;
  int decoder_rounds = 5;
  int history_len = 4;
  int future_len = 12;
  int lane_points = 8;
  double theta_hat = std::numbers::pi / 6.0;
  double align_thresh = std::numbers::pi / 4.0;
  int k_train = 6;         // energy samples per training scene
  int k_decode_train = 4;  // decoded samples per training scene (GTSM first)
  int k_eval = 6;
  int num_selected_factors = 4;
  bool use_dynamics = true;
  DecodeStrategy decode = DecodeStrategy::OneShot;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Scene converted to the fixed-size, mask-carrying layout the network
/// consumes. All raw features are relative quantities; global poses are kept
/// only as auxiliary payload.
struct ModelInput {
  int num_agents = 0;  // padded N
  int num_lanes = 0;   // padded M
  int real_agents = 0;
  int real_lanes = 0;
  int history_len = 0;
  int future_len = 0;
  double dt = 0.25;
  double dt_history = 0.5;

  std::vector<unsigned char> agent_mask;  // [N]
  std::vector<unsigned char> lane_mask;   // [M]
  std::vector<unsigned char> hist_valid;  // [N*Th]
  std::vector<AgentStatic> statics;       // [N]
  std::vector<TrackFrame> history;        // [N*Th]
  std::vector<LanePolyline> lanes;        // [M]

  // Raw (constant) features, row-major.
  std::vector<double> agent_feat;  // [N*Th, kAgentRaw]
  std::vector<double> lane_feat;   // [M, lane raw]
  std::vector<double> a2a_feat;    // [N*N*Th, kA2ARaw]
  std::vector<double> a2l_feat;    // [N*M*Th, kA2LRaw]
  std::vector<double> l2l_feat;    // [M*M, kL2LRaw]

  // Ground truth, present for training/evaluation scenes.
  bool has_future = false;
  std::vector<TrackFrame> future;         // [N*Tf]
  std::vector<unsigned char> fut_valid;   // [N*Tf]
  std::optional<SceneMode> gtsm;          // over the real agents

  const TrackFrame& current(int agent) const {
    return history[static_cast<size_t>(agent * history_len + history_len - 1)];
  }
};

inline constexpr int kAgentRaw = 11;
inline constexpr int kA2ARaw = 11;
inline constexpr int kA2LRaw = 22;
inline constexpr int kL2LRaw = 22;
int lane_raw_dim(const ModelConfig& cfg);

/// Builds the network input; pads to (pad_agents, pad_lanes) when larger than
/// the scene. Ground-truth modes are extracted when futures are present.
ModelInput prepare_input(const Scene& scene, const ModelConfig& cfg, int pad_agents = 0, int pad_lanes = 0);

/// Embedded or encoded scene blocks. Rows are flattened row-major over the
/// listed axes; the feature axis has size d_model.
struct ContextTensors {
  const ModelInput* input = nullptr;
  ad::Var agent_hist;    // [N, Th]
  ad::Var lanes;         // [M]
  ad::Var a2a_edges;     // [N, N, Th]
  ad::Var a2l_edges;     // [N, M, Th]
  ad::Var agent_future;  // [N, Tf]
};

/// Key set for custom-edge-embedding attention: query g attends keys
/// key_rows[g*S .. g*S+S-1] of `y` (-1 = none) with per-pair edge features.
struct AttentionKeys {
  int per_query = 0;                 // S
  std::vector<int> key_rows;         // [G*S]
  std::vector<unsigned char> mask;   // [G*S]
  std::vector<double> edge_feats;    // [G*S, edge_dim] (empty when edge_dim == 0)
  int edge_dim = 0;
};

void declare_cee_attention(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d, int edge_dim);
/// x + MHA(F_q(x), F_k(y, E), F_v(y, E)).
ad::Var cee_attention(nn::Scope& s, const std::string& prefix, const ad::Var& x, const ad::Var& y,
                      const AttentionKeys& keys, int heads, std::vector<double>* weights = nullptr);

/// Edge rows reference one row of each endpoint block.
struct EdgeTopology {
  std::vector<int> src;
  std::vector<int> dst;
};
/// Incident edges of every node (-1 padded, `per_node` slots each).
struct Incidence {
  int per_node = 0;
  std::vector<int> edge_rows;
  std::vector<unsigned char> mask;
};

void declare_gnn_edge_update(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d);
/// e + MLP(Concat[e, src, dst]).
ad::Var gnn_edge_update(nn::Scope& s, const std::string& prefix, const ad::Var& edges, const ad::Var& src_nodes,
                        const ad::Var& dst_nodes, const EdgeTopology& topo);

void declare_attn_pool(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d);
/// Multi-head attention pooling with a learnable query token.
ad::Var attn_pool(nn::Scope& s, const std::string& prefix, const ad::Var& items, const Incidence& groups, int heads);

void declare_gnn_node_update(nn::ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int d,
                             int edge_types);
/// n + MLP(Concat[AttnPool_k(edges_k)]) over the given edge types.
ad::Var gnn_node_update(nn::Scope& s, const std::string& prefix, const ad::Var& nodes,
                        const std::vector<std::pair<ad::Var, Incidence>>& incident, int heads);

struct DecodeResult {
  int num_samples = 0;
  ad::Var poses;     // [K*N*Tf, 4] global (x, y, sin, cos)
  ad::Var speed;     // [K*N*Tf, 1]
  ad::Var controls;  // [K*N*Tf, 2]; empty without dynamics
};

class CttModel {
 public:
  explicit CttModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  /// Registers every parameter (idempotent) with seeded initialization.
  void init_params(nn::ParamStore& ps, std::uint64_t seed) const;

  ContextTensors embed_scene(nn::Scope& s, const ModelInput& in) const;
  ContextTensors encode(nn::Scope& s, const ModelInput& in) const;

  /// [N, M+1] log-probabilities; column 0 is the no-lane mode.
  ad::Var head_a2l(nn::Scope& s, const ContextTensors& ctx) const;
  /// [P, 3] log-probabilities over unordered pairs i < j.
  ad::Var head_a2a(nn::Scope& s, const ContextTensors& ctx) const;
  /// Same head evaluated for explicit ordered pairs (used to check symmetry).
  ad::Var head_a2a_pairs(nn::Scope& s, const ContextTensors& ctx, const std::vector<std::pair<int, int>>& pairs) const;

  /// Unnormalized log-likelihood per scene mode, [K, 1]. Modes are over the
  /// real agents of the input.
  ad::Var energy(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes) const;
  /// Energy plus the (constant) log-probability of each mode under the
  /// factorized marginals; the network learns a correction to the proposal.
  ad::Var score_modes(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes,
                      const MarginalDist& marginals) const;

  DecodeResult decode(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes) const;

  /// Marginals restricted to the real (unpadded) agents and lanes.
  MarginalDist marginals(const ad::Var& a2l_logp, const ad::Var& a2a_logp, const ModelInput& in) const;

 private:
  ad::Var decode_pass(nn::Scope& s, const ContextTensors& ctx, const std::vector<SceneMode>& modes,
                      const ad::Var& fut0, const std::vector<Pose4>& aux_pose, const std::vector<double>& aux_speed,
                      int causal_step) const;
  DecodeResult emit(nn::Scope& s, const ModelInput& in, int K, const ad::Var& raw) const;

  ModelConfig cfg_;
};

/// Decoded trajectories as plain frames: [K][N][Tf].
std::vector<std::vector<std::vector<TrackFrame>>> to_frames(const DecodeResult& r, const ModelInput& in);

}  // namespace ctt
