#include "anchorlab/policy/network.hpp"

#include <algorithm>
#include <cmath>

#include "anchorlab/common/errors.hpp"
#include "anchorlab/common/hash.hpp"
#include "anchorlab/data/vocab.hpp"
#include "anchorlab/nn/ops.hpp"

namespace anchorlab::policy {

using nn::Graph;
using nn::Shape;
using nn::Var;

namespace {

constexpr int kRoleAnchor = 0;
constexpr int kRoleCurrent = 4;
constexpr int kRoles = 5;

std::vector<int> context_roles(data::ContextMode m) {
  switch (m) {
    case data::ContextMode::kNone:
      return {};
    case data::ContextMode::kAnchorI0:
      return {kRoleAnchor};
    case data::ContextMode::kPast3Stride1:
    case data::ContextMode::kPast3Stride20:
      return {1, 2, 3};
  }
  return {};
}

class Initializer {
 public:
  Initializer(nn::ParamStore& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  void normal(const std::string& name, Shape shape, double stddev) {
    Fnv1a h;
    h.update(name);
    nn::RngStream rng = nn::RngStream(seed_, nn::Stream::kInit).fork(h.digest());
    nn::Tensor t = nn::Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.normal() * stddev);
    store_.insert(name, std::move(t));
  }
  void zeros(const std::string& name, Shape shape) { store_.insert(name, nn::Tensor::zeros(std::move(shape))); }
  void dense(const std::string& name, int in, int out, bool zero = false) {
    if (zero) {
      zeros(name + ".w", {in, out});
    } else {
      normal(name + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    }
    zeros(name + ".b", {out});
  }
  void block(const std::string& p, int d, int ratio, bool cross = false) {
    const std::string a = p + (cross ? ".xattn" : ".attn");
    for (const char* n : {".q", ".v", ".o"}) dense(a + n, d, d);
    // A key bias shifts every score in a row equally; softmax cancels it.
    normal(a + ".k.w", {d, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    if (cross) return;
    dense(p + ".mlp.fc1", d, d * ratio);
    dense(p + ".mlp.fc2", d * ratio, d);
  }

 private:
  nn::ParamStore& store_;
  std::uint64_t seed_;
};

template <class T>
Var<T> dense(Graph<T>& g, const std::string& name, const Var<T>& x) {
  return nn::linear(x, g.param(name + ".w"), g.param(name + ".b"));
}

template <class T>
Var<T> attend(Graph<T>& g, const std::string& p, const Var<T>& x, const Var<T>& kv, int heads) {
  Var<T> k = nn::matmul(kv, g.param(p + ".k.w"));
  return dense(g, p + ".o", nn::attention(dense(g, p + ".q", x), k, dense(g, p + ".v", kv), heads));
}

template <class T>
Var<T> mlp(Graph<T>& g, const std::string& p, const Var<T>& x) {
  return dense(g, p + ".fc2", nn::gelu(dense(g, p + ".fc1", x)));
}

// Pre-LN transformer block.
template <class T>
Var<T> encoder_block(Graph<T>& g, const std::string& p, Var<T> x, int heads) {
  Var<T> n = nn::layer_norm(x);
  x = nn::add(x, attend(g, p + ".attn", n, n, heads));
  return nn::add(x, mlp(g, p + ".mlp", nn::layer_norm(x)));
}

template <class T>
Var<T> row(Graph<T>& g, const std::string& table, std::int64_t r) {
  return nn::slice(g.param(table), 0, r, 1);
}

template <class T>
Var<T> zeros(Graph<T>& g, Shape s) {
  return g.constant(nn::BasicTensor<T>::zeros(std::move(s)));
}

// LN(x) * (1 + scale) + shift with per-sample [B, 1, w] modulation.
template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale) {
  return nn::add(nn::mul(nn::layer_norm(x), nn::scale(scale, 1.0, 1.0)), shift);
}

}  // namespace

bool is_se_param(const std::string& name) { return nn::has_prefix(name, "se."); }
bool is_adapter_param(const std::string& name) { return nn::has_prefix(name, "se.adapter."); }

PolicyInput make_input(const std::vector<data::Sample>& samples) {
  PolicyInput in;
  in.batch = static_cast<int>(samples.size());
  for (const auto& s : samples) {
    in.context.push_back(s.context);
    in.current.push_back(s.current);
    in.anchor.push_back(s.anchor);
    in.tokens.insert(in.tokens.end(), s.tokens.begin(), s.tokens.end());
    in.proprio.insert(in.proprio.end(), s.proprio.begin(), s.proprio.end());
  }
  return in;
}

nn::Tensor chunk_tensor(const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw UsageError("empty batch");
  const auto H = static_cast<std::int64_t>(samples.front().chunk.size());
  nn::Tensor t = nn::Tensor::zeros({static_cast<std::int64_t>(samples.size()), H, sim::kActionDim});
  std::size_t k = 0;
  for (const auto& s : samples) {
    if (static_cast<std::int64_t>(s.chunk.size()) != H) throw UsageError("ragged chunk lengths in batch");
    for (const auto& a : s.chunk)
      for (float v : a) t.data[k++] = v;
  }
  return t;
}

nn::ParamStore init_params(const PolicyConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  nn::ParamStore s;
  Initializer init(s, seed);
  const int d = cfg.d_model, P = cfg.patches_per_frame(), pd = cfg.patch_dim();
  const auto vocab = static_cast<int>(data::vocabulary().size());

  init.dense("vl.patch", pd, d);
  init.normal("vl.pos", {P, d}, 0.02);
  init.normal("vl.role", {kRoles, d}, 0.02);
  init.normal("vl.tok", {vocab, d}, 0.02);
  init.normal("vl.tokpos", {cfg.max_tokens, d}, 0.02);
  init.normal("vl.readout", {1, d}, 0.02);
  for (int i = 0; i < cfg.vl_layers; ++i) init.block("vl.b" + std::to_string(i), d, cfg.mlp_ratio);

  if (cfg.uses_se()) {
    init.dense("se.patch", pd, cfg.d_se);
    init.normal("se.pos", {P, cfg.d_se}, 0.02);
    init.normal("se.frame", {2, cfg.d_se}, 0.02);
    for (int i = 0; i < cfg.se_layers; ++i) init.block("se.b" + std::to_string(i), cfg.d_se, cfg.mlp_ratio);
    init.dense("se.adapter", cfg.d_se, cfg.d_se);
    if (cfg.injection == Injection::kPreDecoder) {
      init.dense("vl.se_in", cfg.d_se, d);
      init.normal("vl.se_pos", {cfg.se_tokens, d}, 0.02);
    }
  }

  if (cfg.use_proprio) init.dense("cond.proprio", cfg.state_dim, cfg.d_proprio);
  init.dense("cond.fuse", d + cfg.d_se + cfg.d_proprio, cfg.d_cond);

  const int w = cfg.head_width;
  init.dense("head.in", cfg.action_dim, w);
  init.normal("head.pos", {cfg.chunk, w}, 0.02);
  init.dense("head.t1", w, w);
  init.dense("head.t2", w, w);
  init.dense("head.cond", cfg.d_cond, w);
  for (int i = 0; i < cfg.head_blocks; ++i) {
    const std::string p = "head.b" + std::to_string(i);
    init.dense(p + ".ada", w, 6 * w, /*zero=*/true);
    init.block(p, w, cfg.mlp_ratio);
    if (cfg.uses_se() && cfg.injection == Injection::kInHead) init.block(p, w, cfg.mlp_ratio, /*cross=*/true);
  }
  if (cfg.uses_se() && cfg.injection == Injection::kInHead) init.dense("head.se_in", cfg.d_se, w);
  init.dense("head.final.ada", w, 2 * w, /*zero=*/true);
  init.dense("head.out", w, cfg.action_dim, /*zero=*/true);
  return s;
}

template <class T>
Var<T> patchify(Graph<T>& g, const std::vector<const sim::Frame*>& frames, const PolicyConfig& cfg) {
  const int S = cfg.image_size, p = cfg.patch, per_side = S / p;
  const std::int64_t B = static_cast<std::int64_t>(frames.size());
  nn::BasicTensor<T> t = nn::BasicTensor<T>::zeros({B, cfg.patches_per_frame(), cfg.patch_dim()});
  std::size_t k = 0;
  for (const sim::Frame* f : frames) {
    if (f == nullptr) throw UsageError("missing frame in policy input");
    if (f->height != S || f->width != S)
      throw ConfigError("frame is " + std::to_string(f->height) + "x" + std::to_string(f->width) + ", policy expects " +
                        std::to_string(S) + "x" + std::to_string(S));
    for (int pr = 0; pr < per_side; ++pr)
      for (int pc = 0; pc < per_side; ++pc)
        for (int y = 0; y < p; ++y) {
          const std::uint8_t* src = f->pixels.data() + (static_cast<std::size_t>(pr * p + y) * S + pc * p) * 3;
          for (int x = 0; x < p * 3; ++x) t.data[k++] = static_cast<T>(static_cast<float>(src[x]) / 127.5f - 1.0f);
        }
  }
  return g.constant(std::move(t));
}

template <class T>
Var<T> se_forward_tokens(Graph<T>& g, const PolicyConfig& cfg, const Var<T>& anchor_patches,
                         const Var<T>& current_patches) {
  if (!cfg.uses_se()) throw UsageError("spatial encoder called with se_mode=off");
  auto embed = [&](const Var<T>& patches, int frame_id) {
    return nn::add(nn::add(dense(g, "se.patch", patches), g.param("se.pos")), row(g, "se.frame", frame_id));
  };
  Var<T> x = nn::concat<T>({embed(anchor_patches, 0), embed(current_patches, 1)}, 1);
  for (int i = 0; i < cfg.se_layers; ++i) x = encoder_block(g, "se.b" + std::to_string(i), x, cfg.se_heads);
  return nn::layer_norm(x);
}

template <class T>
Encoded<T> encode(Graph<T>& g, const PolicyConfig& cfg, const PolicyInput& in, const EncodeOptions& opt) {
  const std::int64_t B = in.batch;
  if (B <= 0) throw UsageError("empty policy batch");
  const auto roles = context_roles(cfg.context);
  if (static_cast<std::int64_t>(in.current.size()) != B || static_cast<std::int64_t>(in.context.size()) != B ||
      static_cast<std::int64_t>(in.tokens.size()) != B * cfg.max_tokens ||
      static_cast<std::int64_t>(in.proprio.size()) != B * cfg.state_dim)
    throw UsageError("policy input arrays disagree with batch size " + std::to_string(B));
  for (const auto& c : in.context)
    if (c.size() != roles.size())
      throw UsageError("context has " + std::to_string(c.size()) + " frames, mode " +
                       data::context_mode_name(cfg.context) + " needs " + std::to_string(roles.size()));

  Encoded<T> enc;
  const bool concat_mode = cfg.injection == Injection::kConcat;
  if (cfg.uses_se()) {
    const bool removed = opt.eval && cfg.se_mode == SeMode::kRemovedAtEval;
    const Shape feat_shape{B, cfg.d_se};
    const Shape tok_shape{B, cfg.se_tokens, cfg.d_se};
    if (removed) {
      if (concat_mode) enc.se_feature = zeros(g, feat_shape);
      else enc.se_tokens = zeros(g, tok_shape);
    } else {
      if (static_cast<std::int64_t>(in.anchor.size()) != B) throw UsageError("spatial encoder needs one anchor per sample");
      Var<T> toks = se_forward_tokens(g, cfg, patchify(g, in.anchor, cfg), patchify(g, in.current, cfg));
      if (concat_mode) {
        enc.se_feature = dense(g, "se.adapter", nn::reshape(nn::adaptive_mean_pool(toks, 1, 1), feat_shape));
        if (opt.zero_se) enc.se_feature = zeros(g, feat_shape);
      } else {
        enc.se_tokens = dense(g, "se.adapter", nn::adaptive_mean_pool(toks, 1, cfg.se_tokens));
        if (opt.zero_se) enc.se_tokens = zeros(g, tok_shape);
      }
    }
  }

  std::vector<Var<T>> seq;
  if (cfg.uses_se() && cfg.injection == Injection::kPreDecoder)
    seq.push_back(nn::add(dense(g, "vl.se_in", enc.se_tokens), g.param("vl.se_pos")));
  auto embed_slot = [&](const std::vector<const sim::Frame*>& frames, int role) {
    Var<T> e = nn::add(nn::add(dense(g, "vl.patch", patchify(g, frames, cfg)), g.param("vl.pos")), row(g, "vl.role", role));
    enc.frame_embeddings.push_back(e);
    seq.push_back(e);
  };
  for (std::size_t j = 0; j < roles.size(); ++j) {
    std::vector<const sim::Frame*> frames;
    for (const auto& c : in.context) frames.push_back(c[j]);
    embed_slot(frames, roles[j]);
  }
  embed_slot(in.current, kRoleCurrent);
  seq.push_back(nn::add(nn::embedding(g.param("vl.tok"), in.tokens, Shape{B, cfg.max_tokens}), g.param("vl.tokpos")));
  seq.push_back(nn::broadcast_to(g.param("vl.readout"), Shape{B, 1, cfg.d_model}));

  Var<T> x = nn::concat(seq, 1);
  for (int i = 0; i < cfg.vl_layers; ++i) x = encoder_block(g, "vl.b" + std::to_string(i), x, cfg.vl_heads);
  enc.hidden = nn::layer_norm(x);
  const std::int64_t N = enc.hidden.shape()[1];
  enc.readout = nn::reshape(nn::slice(enc.hidden, 1, N - 1, 1), Shape{B, cfg.d_model});

  std::vector<Var<T>> parts{enc.readout};
  parts.push_back(cfg.uses_se() && concat_mode ? enc.se_feature : zeros(g, Shape{B, cfg.d_se}));
  if (cfg.use_proprio) {
    nn::BasicTensor<T> pr({B, cfg.state_dim}, std::vector<T>(in.proprio.begin(), in.proprio.end()));
    parts.push_back(nn::gelu(dense(g, "cond.proprio", g.constant(std::move(pr)))));
  } else {
    parts.push_back(zeros(g, Shape{B, cfg.d_proprio}));
  }
  enc.cond = dense(g, "cond.fuse", nn::concat(parts, 1));
  return enc;
}

template <class T>
Var<T> predict_noise(Graph<T>& g, const PolicyConfig& cfg, const Var<T>& x_t, const std::vector<std::int32_t>& levels,
                     const Var<T>& cond, const Var<T>& se_tokens) {
  const Shape& xs = x_t.shape();
  if (xs.size() != 3 || xs[1] != cfg.chunk || xs[2] != cfg.action_dim)
    throw ConfigError("noisy chunk has shape " + nn::shape_str(xs) + ", expected [B, " + std::to_string(cfg.chunk) +
                      ", " + std::to_string(cfg.action_dim) + "]");
  const std::int64_t B = xs[0];
  const int w = cfg.head_width;
  if (static_cast<std::int64_t>(levels.size()) != B) throw UsageError("one diffusion level per sample required");
  const bool cross = cfg.uses_se() && cfg.injection == Injection::kInHead;
  if (cross && !se_tokens.valid()) throw UsageError("in_head injection needs spatial tokens");

  Var<T> h = nn::add(dense(g, "head.in", x_t), g.param("head.pos"));
  Var<T> temb = dense(g, "head.t2", nn::gelu(dense(g, "head.t1", nn::sinusoidal_embedding(g, levels, w))));
  Var<T> c = nn::gelu(nn::add(dense(g, "head.cond", cond), temb));
  Var<T> kv;
  if (cross) kv = dense(g, "head.se_in", se_tokens);

  auto chunk_of = [&](const Var<T>& mod, int j) { return nn::reshape(nn::slice(mod, 1, j * w, w), Shape{B, 1, w}); };
  for (int i = 0; i < cfg.head_blocks; ++i) {
    const std::string p = "head.b" + std::to_string(i);
    Var<T> mod = dense(g, p + ".ada", c);
    Var<T> n = modulate(h, chunk_of(mod, 0), chunk_of(mod, 1));
    h = nn::add(h, nn::mul(chunk_of(mod, 2), attend(g, p + ".attn", n, n, cfg.head_heads)));
    if (cross) h = nn::add(h, attend(g, p + ".xattn", nn::layer_norm(h), kv, cfg.head_heads));
    n = modulate(h, chunk_of(mod, 3), chunk_of(mod, 4));
    h = nn::add(h, nn::mul(chunk_of(mod, 5), mlp(g, p + ".mlp", n)));
  }
  Var<T> fmod = dense(g, "head.final.ada", c);
  return dense(g, "head.out", modulate(h, chunk_of(fmod, 0), chunk_of(fmod, 1)));
}

template <class T>
Var<T> diffusion_loss(Graph<T>& g, const PolicyConfig& cfg, const DiffusionSchedule& sched, const Encoded<T>& enc,
                      const nn::BasicTensor<T>& x0, nn::RngStream& rng) {
  const std::int64_t B = x0.dim(0);
  const std::int64_t per = x0.size() / B;
  std::vector<std::int32_t> levels(static_cast<std::size_t>(B));
  for (auto& t : levels) t = 1 + static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(sched.levels)));
  nn::BasicTensor<T> eps = nn::BasicTensor<T>::zeros(x0.shape);
  for (auto& v : eps.data) v = static_cast<T>(static_cast<float>(rng.normal()));
  nn::BasicTensor<T> xt = nn::BasicTensor<T>::zeros(x0.shape);
  for (std::int64_t b = 0; b < B; ++b) {
    const double ab = sched.alpha_bar(levels[static_cast<std::size_t>(b)]);
    const T sa = static_cast<T>(std::sqrt(ab)), sn = static_cast<T>(std::sqrt(1.0 - ab));
    for (std::int64_t k = b * per; k < (b + 1) * per; ++k) {
      const auto i = static_cast<std::size_t>(k);
      xt.data[i] = sa * x0.data[i] + sn * eps.data[i];
    }
  }
  Var<T> eps_hat = predict_noise(g, cfg, g.constant(std::move(xt)), levels, enc.cond, enc.se_tokens);
  return nn::mse(eps_hat, g.constant(std::move(eps)));
}

nn::Tensor head_sample(const nn::ParamStore& params, const PolicyConfig& cfg, const DiffusionSchedule& sched,
                       const nn::Tensor& cond, const nn::Tensor& se_tokens, int steps, nn::RngStream& rng) {
  const std::int64_t B = cond.dim(0);
  const std::vector<int> levels = ddim_levels(sched, steps);
  std::vector<double> x(static_cast<std::size_t>(B * cfg.chunk * cfg.action_dim));
  for (auto& v : x) v = rng.normal();
  for (std::size_t s = 0; s < levels.size(); ++s) {
    const int t = levels[s];
    const int t_prev = s + 1 < levels.size() ? levels[s + 1] : 0;
    Graph<float> g(params);
    g.set_grad_enabled(false);
    nn::Tensor xt({B, cfg.chunk, cfg.action_dim}, std::vector<float>(x.begin(), x.end()));
    Var<float> st;
    if (se_tokens.size() > 0) st = g.constant(se_tokens);
    Var<float> eps = predict_noise(g, cfg, g.constant(std::move(xt)), std::vector<std::int32_t>(static_cast<std::size_t>(B), t),
                                   g.constant(cond), st);
    const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = ddim_update(x[i], eps.value().data[i], ab, ab_prev);
  }
  nn::Tensor out = nn::Tensor::zeros({B, cfg.chunk, cfg.action_dim});
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = static_cast<float>(std::clamp(x[i], -1.0, 1.0));
  return out;
}

#define ANCHORLAB_INSTANTIATE_NET(T)                                                                              \
  template Var<T> patchify<T>(Graph<T>&, const std::vector<const sim::Frame*>&, const PolicyConfig&);            \
  template Var<T> se_forward_tokens<T>(Graph<T>&, const PolicyConfig&, const Var<T>&, const Var<T>&);            \
  template Encoded<T> encode<T>(Graph<T>&, const PolicyConfig&, const PolicyInput&, const EncodeOptions&);       \
  template Var<T> predict_noise<T>(Graph<T>&, const PolicyConfig&, const Var<T>&, const std::vector<std::int32_t>&, \
                                   const Var<T>&, const Var<T>&);                                                 \
  template Var<T> diffusion_loss<T>(Graph<T>&, const PolicyConfig&, const DiffusionSchedule&, const Encoded<T>&,  \
                                    const nn::BasicTensor<T>&, nn::RngStream&);

ANCHORLAB_INSTANTIATE_NET(float)
ANCHORLAB_INSTANTIATE_NET(double)

#undef ANCHORLAB_INSTANTIATE_NET

}  // namespace anchorlab::policy
