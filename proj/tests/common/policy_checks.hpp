#pragma once

// Policy fixtures and numeric checks shared by the unit tests and the
// acceptance binary. No test framework dependency.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "anchorlab/data/context.hpp"
#include "anchorlab/nn/gradcheck.hpp"
#include "anchorlab/nn/ops.hpp"
#include "anchorlab/policy/policy.hpp"
#include "anchorlab/train/trainer.hpp"

namespace anchorlab::checks {

inline policy::PolicyConfig tiny_config() {
  policy::PolicyConfig c;
  c.image_size = 16;
  c.patch = 8;
  c.d_model = 16;
  c.vl_layers = 1;
  c.vl_heads = 2;
  c.d_se = 8;
  c.se_layers = 1;
  c.se_heads = 2;
  c.se_tokens = 2;
  c.d_proprio = 4;
  c.d_cond = 16;
  c.head_width = 16;
  c.head_blocks = 1;
  c.head_heads = 2;
  c.mlp_ratio = 2;
  c.chunk = 3;
  c.max_tokens = 2;
  return c;
}

inline std::vector<sim::Frame> random_frames(int n, int size, std::uint64_t seed) {
  nn::RngStream rng(seed, nn::Stream::kTest);
  std::vector<sim::Frame> out(static_cast<std::size_t>(n));
  for (auto& f : out) {
    f.height = f.width = size;
    f.pixels.resize(static_cast<std::size_t>(size * size * 3));
    for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  }
  return out;
}

// Random inputs for a batch of two with every frame slot distinct.
struct Fixture {
  std::vector<sim::Frame> frames;
  policy::PolicyInput input;
  nn::Tensor x0;

  Fixture(const policy::PolicyConfig& cfg, std::uint64_t seed) {
    const int nctx = data::context_frame_count(cfg.context);
    frames = random_frames(2 * (nctx + 2), cfg.image_size, seed);
    input.batch = 2;
    std::size_t k = 0;
    for (int b = 0; b < 2; ++b) {
      std::vector<const sim::Frame*> ctx;
      for (int j = 0; j < nctx; ++j) ctx.push_back(&frames[k++]);
      input.context.push_back(ctx);
      input.current.push_back(&frames[k++]);
      input.anchor.push_back(&frames[k++]);
    }
    nn::RngStream rng(seed, nn::Stream::kTest);
    for (int i = 0; i < 2 * cfg.max_tokens; ++i) input.tokens.push_back(1 + static_cast<std::int32_t>(rng.uniform_int(10)));
    for (int i = 0; i < 2 * cfg.state_dim; ++i) input.proprio.push_back(static_cast<float>(rng.uniform(-1, 1)));
    x0 = nn::Tensor::zeros({2, cfg.chunk, cfg.action_dim});
    for (auto& v : x0.data) v = static_cast<float>(rng.uniform(-1, 1));
  }
};

// Initial parameters with every tensor jittered so zero-initialized layers
// carry gradient too.
inline nn::ParamStore jittered_params(const policy::PolicyConfig& cfg, std::uint64_t seed) {
  nn::ParamStore p = policy::init_params(cfg, seed);
  nn::RngStream rng(seed, nn::Stream::kTest);
  for (auto& [name, t] : p)
    for (auto& v : t.data) v += static_cast<float>(rng.normal() * 0.1);
  return p;
}

// Fixed random projection to a scalar; well conditioned where a squared norm
// after layer norm would be nearly constant.
template <class T>
nn::Var<T> project(const nn::Var<T>& x) {
  nn::RngStream rng(77, nn::Stream::kTest);
  nn::BasicTensor<T> w = nn::BasicTensor<T>::zeros(x.shape());
  for (auto& v : w.data) v = static_cast<T>(static_cast<float>(rng.normal()));
  return nn::sum(nn::mul(x, x.graph().constant(std::move(w))));
}

struct BlockGradcheck {
  std::string block;
  nn::GradcheckResult r32;
  nn::GradcheckResult r64;
};

template <class F>
BlockGradcheck run_block_gradcheck(const std::string& block, const F& f, const nn::ParamStore& params, int coordinates) {
  const nn::GradcheckOptions opt{.h = 1e-3, .coordinates = coordinates, .seed = 7};
  return {block, nn::gradcheck<float>(f, params, opt), nn::gradcheck<double>(f, params, opt)};
}

// Backbone readout, spatial encoder, conditioning, and the loss through the
// head under every injection mode.
inline std::vector<BlockGradcheck> policy_block_gradchecks(int coordinates) {
  using policy::PolicyConfig;
  std::vector<BlockGradcheck> out;
  {
    PolicyConfig cfg = tiny_config();
    cfg.context = data::ContextMode::kNone;
    Fixture fx(cfg, 3);
    auto f = [&](auto& g) { return project(policy::encode(g, cfg, fx.input).readout); };
    out.push_back(run_block_gradcheck("backbone", f, jittered_params(cfg, 3), coordinates));
  }
  {
    PolicyConfig cfg = tiny_config();
    cfg.se_mode = policy::SeMode::kUnfrozen;
    Fixture fx(cfg, 4);
    auto f = [&](auto& g) {
      auto toks = policy::se_forward_tokens(g, cfg, policy::patchify(g, fx.input.anchor, cfg),
                                            policy::patchify(g, fx.input.current, cfg));
      return project(nn::adaptive_mean_pool(toks, 1, 3));
    };
    out.push_back(run_block_gradcheck("spatial encoder", f, jittered_params(cfg, 4), coordinates));
  }
  {
    PolicyConfig cfg = tiny_config();
    cfg.se_mode = policy::SeMode::kUnfrozen;
    Fixture fx(cfg, 5);
    auto f = [&](auto& g) { return project(policy::encode(g, cfg, fx.input).cond); };
    out.push_back(run_block_gradcheck("conditioning", f, jittered_params(cfg, 5), coordinates));
  }
  for (auto inj : {policy::Injection::kConcat, policy::Injection::kPreDecoder, policy::Injection::kInHead}) {
    PolicyConfig cfg = tiny_config();
    cfg.se_mode = policy::SeMode::kUnfrozen;
    cfg.injection = inj;
    Fixture fx(cfg, 6);
    const auto sched = policy::make_schedule();
    auto f = [&](auto& g) {
      nn::RngStream rng(8, nn::Stream::kDiffusion);
      using T = typename std::decay_t<decltype(g.param("head.in.w").value().data)>::value_type;
      auto enc = policy::encode(g, cfg, fx.input);
      return policy::diffusion_loss(g, cfg, sched, enc, nn::tensor_cast<T>(fx.x0), rng);
    };
    out.push_back(run_block_gradcheck("head/" + policy::injection_name(inj), f, jittered_params(cfg, 6), coordinates));
  }
  return out;
}

struct OverfitResult {
  double linf = 0.0;        // worst |sample - target| over all draws
  double final_loss = 0.0;  // mean loss over the last 100 steps
  double seconds = 0.0;
};

// Trains only the head on one constant chunk under one fixed condition, then
// samples `draws` chunks with the default DDIM step count.
inline OverfitResult overfit_constant_chunk(int steps = 2000, double lr = 1e-3, int batch = 32, int draws = 16) {
  const auto t0 = std::chrono::steady_clock::now();
  policy::PolicyConfig cfg;
  cfg.context = data::ContextMode::kNone;
  nn::ParamStore params = policy::init_params(cfg, 1);
  std::set<std::string> frozen;
  for (const auto& [name, t] : params)
    if (!nn::has_prefix(name, "head.")) frozen.insert(name);

  nn::RngStream rng(21, nn::Stream::kTest);
  nn::Tensor cond_row = nn::Tensor::zeros({1, cfg.d_cond});
  for (auto& v : cond_row.data) v = static_cast<float>(rng.normal());
  std::vector<float> target(static_cast<std::size_t>(cfg.chunk * cfg.action_dim));
  for (auto& v : target) v = static_cast<float>(rng.uniform(-0.8, 0.8));

  nn::Tensor cond = nn::Tensor::zeros({batch, cfg.d_cond});
  nn::Tensor x0 = nn::Tensor::zeros({batch, cfg.chunk, cfg.action_dim});
  for (int b = 0; b < batch; ++b) {
    std::copy(cond_row.data.begin(), cond_row.data.end(), cond.data.begin() + b * cfg.d_cond);
    std::copy(target.begin(), target.end(), x0.data.begin() + b * static_cast<std::ptrdiff_t>(target.size()));
  }

  train::TrainConfig tc;
  tc.weight_decay = 0.0;
  train::AdamState opt;
  const auto sched = policy::make_schedule(cfg.train_levels, 1e-4, cfg.beta_end);
  OverfitResult r;
  double tail = 0.0;
  for (int s = 0; s < steps; ++s) {
    nn::Graph<float> g(params, frozen);
    policy::Encoded<float> enc;
    enc.cond = g.constant(cond);
    nn::RngStream noise = nn::RngStream(3, nn::Stream::kDiffusion).fork(static_cast<std::uint64_t>(s));
    auto loss = policy::diffusion_loss(g, cfg, sched, enc, x0, noise);
    if (s >= steps - 100) tail += loss.value().item();
    g.backward(loss);
    nn::ParamStore grads = g.param_grads();
    train::clip_grad_norm(grads, tc.clip_norm, frozen);
    train::adamw_step(params, grads, opt, lr, tc, frozen);
  }
  r.final_loss = tail / std::min(steps, 100);

  for (int d = 0; d < draws; ++d) {
    nn::RngStream srng = nn::RngStream(5, nn::Stream::kEval).fork(static_cast<std::uint64_t>(d));
    const nn::Tensor out = policy::head_sample(params, cfg, sched, cond_row, {}, cfg.inference_steps, srng);
    for (std::size_t i = 0; i < target.size(); ++i) r.linf = std::max(r.linf, std::abs(static_cast<double>(out.data[i]) - target[i]));
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace anchorlab::checks
