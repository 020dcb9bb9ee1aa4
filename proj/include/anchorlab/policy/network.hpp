#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anchorlab/data/batch.hpp"
#include "anchorlab/nn/graph.hpp"
#include "anchorlab/nn/rng.hpp"
#include "anchorlab/policy/config.hpp"
#include "anchorlab/policy/diffusion.hpp"
#include "anchorlab/sim/render.hpp"

namespace anchorlab::policy {

// Batched network input. Frames are borrowed and must outlive the graph.
struct PolicyInput {
  int batch = 0;
  std::vector<std::vector<const sim::Frame*>> context;  // [batch][context frames]
  std::vector<const sim::Frame*> current;               // [batch]
  std::vector<const sim::Frame*> anchor;                // [batch], spatial encoder input
  std::vector<std::int32_t> tokens;                     // [batch * max_tokens]
  std::vector<float> proprio;                           // [batch * state_dim], normalized
};

PolicyInput make_input(const std::vector<data::Sample>& samples);
// [batch, H, A] normalized chunks.
nn::Tensor chunk_tensor(const std::vector<data::Sample>& samples);

// Parameter set for `cfg`. Each tensor draws from its own fork of the init
// stream keyed by name, so adding a module never perturbs the others.
nn::ParamStore init_params(const PolicyConfig& cfg, std::uint64_t seed);

bool is_se_param(const std::string& name);
bool is_adapter_param(const std::string& name);

struct EncodeOptions {
  // Evaluation forward: removed_at_eval drops the spatial feature.
  bool eval = false;
  // Computes the spatial encoder, then discards its output (zeros in its place).
  bool zero_se = false;
};

template <class T>
struct Encoded {
  nn::Var<T> hidden;                          // [B, N, d_model] final backbone states
  nn::Var<T> readout;                         // [B, d_model]
  nn::Var<T> se_feature;                      // [B, d_se] (concat injection)
  nn::Var<T> se_tokens;                       // [B, se_tokens, d_se] (other injections)
  nn::Var<T> cond;                            // [B, d_cond]
  std::vector<nn::Var<T>> frame_embeddings;   // per frame slot (context..., current): [B, P, d_model]
};

// [B, P, patch*patch*3] with pixels scaled to [-1, 1].
template <class T>
nn::Var<T> patchify(nn::Graph<T>& g, const std::vector<const sim::Frame*>& frames, const PolicyConfig& cfg);

// Joint (anchor, current) tokens after the encoder stack: [B, 2P, d_se].
template <class T>
nn::Var<T> se_forward_tokens(nn::Graph<T>& g, const PolicyConfig& cfg, const nn::Var<T>& anchor_patches,
                             const nn::Var<T>& current_patches);

// Backbone, spatial encoder and conditioning for one batch.
template <class T>
Encoded<T> encode(nn::Graph<T>& g, const PolicyConfig& cfg, const PolicyInput& in, const EncodeOptions& opt = {});

// Noise prediction for x_t [B, H, A] at per-sample levels.
template <class T>
nn::Var<T> predict_noise(nn::Graph<T>& g, const PolicyConfig& cfg, const nn::Var<T>& x_t,
                         const std::vector<std::int32_t>& levels, const nn::Var<T>& cond, const nn::Var<T>& se_tokens);

// Noise-prediction MSE with t ~ U{1..T} and eps ~ N(0, I) drawn from `rng`.
template <class T>
nn::Var<T> diffusion_loss(nn::Graph<T>& g, const PolicyConfig& cfg, const DiffusionSchedule& sched,
                          const Encoded<T>& enc, const nn::BasicTensor<T>& x0, nn::RngStream& rng);

// DDIM (eta = 0) from N(0, I) over `steps` strided levels; final output clipped
// to [-1, 1]. `se_tokens` may be empty unless injection is in_head.
nn::Tensor head_sample(const nn::ParamStore& params, const PolicyConfig& cfg, const DiffusionSchedule& sched,
                       const nn::Tensor& cond, const nn::Tensor& se_tokens, int steps, nn::RngStream& rng);

}  // namespace anchorlab::policy
