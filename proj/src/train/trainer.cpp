#include "anchorlab/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include "anchorlab/common/errors.hpp"
#include "anchorlab/common/hash.hpp"
#include "anchorlab/common/log.hpp"
#include "anchorlab/nn/ops.hpp"

namespace anchorlab::train {

using policy::PolicyConfig;
using policy::SeMode;

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::kSePretrain:
      return "se-pretrain";
    case Phase::kPretrain:
      return "pretrain";
    case Phase::kFinetune:
      return "finetune";
  }
  return "?";
}

Phase phase_from_name(const std::string& name) {
  for (auto p : {Phase::kSePretrain, Phase::kPretrain, Phase::kFinetune})
    if (phase_name(p) == name) return p;
  throw ConfigError("unknown training phase '" + name + "' (expected se-pretrain, pretrain or finetune)");
}

TrainConfig resolved(TrainConfig c) {
  if (c.steps == 0) c.steps = c.phase == Phase::kSePretrain ? 3000 : c.phase == Phase::kPretrain ? 20000 : 4000;
  if (c.batch == 0) c.batch = c.phase == Phase::kFinetune ? 32 : 64;
  if (c.lr == 0.0) c.lr = c.phase == Phase::kSePretrain ? 1e-3 : 2e-5;
  return c;
}

void validate(const TrainConfig& c) {
  if (c.steps <= 0) throw ConfigError("train.steps must be > 0, got " + std::to_string(c.steps));
  if (c.batch <= 0) throw ConfigError("train.batch must be > 0, got " + std::to_string(c.batch));
  if (!(c.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (c.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (!(c.clip_norm > 0.0)) throw ConfigError("train.clip_norm must be > 0");
  if (c.beta1 < 0.0 || c.beta1 >= 1.0 || c.beta2 < 0.0 || c.beta2 >= 1.0) throw ConfigError("train betas must lie in [0, 1)");
  if (!(c.eps > 0.0)) throw ConfigError("train.eps must be > 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"phase", phase_name(c.phase)}, {"steps", c.steps}, {"batch", c.batch}, {"lr", c.lr},
          {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm}, {"beta1", c.beta1},
          {"beta2", c.beta2}, {"eps", c.eps}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "phase") c.phase = phase_from_name(v.get<std::string>());
      else if (k == "steps") c.steps = v.get<int>();
      else if (k == "batch") c.batch = v.get<int>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "clip_norm") c.clip_norm = v.get<double>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "eps") c.eps = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown key in train config: '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train." + k + ": " + e.what());
    }
  }
  return c;
}

double learning_rate(const TrainConfig& c, std::int64_t done, std::int64_t total) {
  if (c.phase != Phase::kFinetune) return c.lr;
  if (total <= 0) throw ConfigError("cosine schedule needs a positive step count");
  const double s = static_cast<double>(std::clamp<std::int64_t>(done, 0, total));
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * s / static_cast<double>(total)));
}

std::set<std::string> freeze_plan(Phase phase, SeMode mode, const nn::ParamStore& params) {
  std::set<std::string> out;
  if (phase != Phase::kFinetune) return out;
  if (mode != SeMode::kFrozen && mode != SeMode::kRemovedAtEval) return out;
  for (const auto& [name, _] : params)
    if (policy::is_se_param(name) && !policy::is_adapter_param(name)) out.insert(name);
  return out;
}

double clip_grad_norm(nn::ParamStore& grads, double max_norm, const std::set<std::string>& frozen) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    if (frozen.count(name)) continue;
    for (float v : g.data) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      if (frozen.count(name)) continue;
      for (float& v : g.data) v = static_cast<float>(v * s);
    }
  }
  return norm;
}

void adamw_step(nn::ParamStore& params, const nn::ParamStore& grads, AdamState& st, double lr, const TrainConfig& c,
                const std::set<std::string>& frozen) {
  ++st.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  const double decay = 1.0 - lr * c.weight_decay;
  for (auto& [name, p] : params) {
    if (frozen.count(name)) continue;
    const nn::Tensor& g = grads.at(name);
    if (!st.m.contains(name)) {
      st.m.insert(name, nn::Tensor::zeros(p.shape));
      st.v.insert(name, nn::Tensor::zeros(p.shape));
    }
    auto& m = st.m.at(name).data;
    auto& v = st.v.at(name).data;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = g.data[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p.data[i] = static_cast<float>(p.data[i] * decay - step);
    }
  }
}

void TrainLog::append(const LogEntry& e) { entries_.push_back(e); }

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : entries_) {
    nlohmann::json j = {{"step", e.step}, {"loss", e.loss}, {"lr", e.lr}, {"gnorm", e.gnorm}, {"t_ms", e.t_ms}};
    out += j.dump() + "\n";
  }
  return out;
}

void TrainLog::write(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write train log " + path.string());
  f << to_jsonl();
}

nn::ParamStore pack_state(const TrainState& st) {
  nn::ParamStore out = st.params;
  for (const auto& [name, t] : st.opt.m) out.insert(std::string(kOptPrefix) + "m." + name, t);
  for (const auto& [name, t] : st.opt.v) out.insert(std::string(kOptPrefix) + "v." + name, t);
  // Step counters stay well below 2^24, so a float holds them exactly.
  out.insert(std::string(kOptPrefix) + "t", nn::Tensor({1}, {static_cast<float>(st.opt.t)}));
  out.insert(std::string(kOptPrefix) + "step", nn::Tensor({1}, {static_cast<float>(st.step)}));
  return out;
}

TrainState unpack_state(const nn::ParamStore& packed) {
  TrainState st;
  const std::string pm = std::string(kOptPrefix) + "m.", pv = std::string(kOptPrefix) + "v.";
  for (const auto& [name, t] : packed) {
    if (nn::has_prefix(name, pm)) st.opt.m.insert(name.substr(pm.size()), t);
    else if (nn::has_prefix(name, pv)) st.opt.v.insert(name.substr(pv.size()), t);
    else if (name == std::string(kOptPrefix) + "t") st.opt.t = static_cast<std::int64_t>(t.item());
    else if (name == std::string(kOptPrefix) + "step") st.step = static_cast<std::int64_t>(t.item());
    else if (nn::has_prefix(name, "__")) throw LoadError("unknown reserved checkpoint entry: " + name);
    else st.params.insert(name, t);
  }
  return st;
}

void train_policy_steps(TrainState& st, const PolicyConfig& cfg, const TrainConfig& tc_in, const data::Dataset& ds,
                        std::int64_t until, TrainLog* log) {
  const TrainConfig tc = resolved(tc_in);
  validate(tc);
  if (tc.phase == Phase::kSePretrain) throw UsageError("train_policy_steps runs policy phases only");
  if (until > tc.steps) throw UsageError("cannot train past the configured step count");
  const auto frozen = freeze_plan(tc.phase, cfg.se_mode, st.params);
  const auto sched = policy::make_schedule(cfg.train_levels, 1e-4, cfg.beta_end);
  const nn::RngStream data_root(tc.seed, nn::Stream::kData);
  const nn::RngStream noise_root(tc.seed, nn::Stream::kDiffusion);
  while (st.step < until) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t step = st.step + 1;
    nn::RngStream drng = data_root.fork(static_cast<std::uint64_t>(step));
    nn::RngStream nrng = noise_root.fork(static_cast<std::uint64_t>(step));
    const auto samples = data::sample_batch(ds.store, data::Split::kTrain, tc.batch, drng, cfg.context, ds.stats, cfg.chunk);
    const policy::PolicyInput in = policy::make_input(samples);
    const nn::Tensor x0 = policy::chunk_tensor(samples);

    nn::Graph<float> g(st.params, frozen);
    const auto enc = policy::encode(g, cfg, in);
    const auto loss = policy::diffusion_loss(g, cfg, sched, enc, x0, nrng);
    const double lv = loss.value().item();
    const double lr = learning_rate(tc, st.step, tc.steps);
    if (!std::isfinite(lv))
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " (lr " + std::to_string(lr) + ")", step, lr);
    g.backward(loss);
    nn::ParamStore grads = g.param_grads();
    const double gnorm = clip_grad_norm(grads, tc.clip_norm, frozen);
    adamw_step(st.params, grads, st.opt, lr, tc, frozen);
    st.step = step;
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (log != nullptr) log->append({step, lv, lr, gnorm, ms});
    if (step % 100 == 0 || step == until)
      log::info("{} step {}/{} loss {:.4f} lr {:.3g} gnorm {:.3f}", phase_name(tc.phase), step, tc.steps, lv, lr, gnorm);
  }
}

nn::ParamStore finetune_params(const PolicyConfig& cfg, const nn::ParamStore& init, const nn::ParamStore* se_weights,
                               std::uint64_t seed) {
  nn::ParamStore p = policy::init_params(cfg, seed);
  for (auto& [name, t] : p) {
    if (init.contains(name) && init.at(name).shape == t.shape) t = init.at(name);
  }
  if (se_weights != nullptr) {
    for (auto& [name, t] : p) {
      if (!policy::is_se_param(name) || policy::is_adapter_param(name)) continue;
      if (!se_weights->contains(name)) throw LoadError("spatial-encoder checkpoint lacks " + name);
      if (se_weights->at(name).shape != t.shape)
        throw LoadError("spatial-encoder checkpoint shape mismatch for " + name + ": " +
                        nn::shape_str(se_weights->at(name).shape) + " vs " + nn::shape_str(t.shape));
      t = se_weights->at(name);
    }
  }
  return p;
}

PolicyRun train_policy(const PolicyConfig& cfg, TrainConfig tc, const data::Dataset& ds, const nn::ParamStore* init,
                       const nn::ParamStore* se_weights) {
  tc = resolved(tc);
  validate(tc);
  policy::validate(cfg);
  PolicyRun run;
  if (tc.phase == Phase::kFinetune) {
    if (init == nullptr) throw UsageError("finetune requires a pretrained checkpoint (--init)");
    run.state.params = finetune_params(cfg, *init, se_weights, tc.seed);
  } else if (tc.phase == Phase::kPretrain) {
    run.state.params = finetune_params(cfg, init != nullptr ? *init : policy::init_params(cfg, tc.seed), se_weights, tc.seed);
  } else {
    throw UsageError("train_policy runs pretrain or finetune; use se_pretrain for the pretext phase");
  }
  train_policy_steps(run.state, cfg, tc, ds, tc.steps, &run.log);
  run.bundle.config = cfg;
  run.bundle.params = run.state.params;
  run.bundle.stats = ds.stats;
  return run;
}

// ---- spatial-encoder pretext ----

namespace {

void init_dense(nn::ParamStore& p, const std::string& name, int in, int out, std::uint64_t seed) {
  Fnv1a h;
  h.update(name);
  nn::RngStream rng = nn::RngStream(seed, nn::Stream::kSePretrain).fork(h.digest());
  nn::Tensor w = nn::Tensor::zeros({in, out});
  for (auto& v : w.data) v = static_cast<float>(rng.normal() / std::sqrt(static_cast<double>(in)));
  p.insert(name + ".w", std::move(w));
  p.insert(name + ".b", nn::Tensor::zeros({out}));
}

PolicyConfig pretext_config(PolicyConfig cfg) {
  cfg.se_mode = SeMode::kUnfrozen;
  cfg.injection = policy::Injection::kConcat;
  return cfg;
}

using Targets = std::vector<std::array<float, kPretextTargets>>;

template <class T>
nn::Var<T> pretext_forward(nn::Graph<T>& g, const PolicyConfig& cfg, const std::vector<const sim::Frame*>& anchors,
                           const std::vector<const sim::Frame*>& currents) {
  const auto B = static_cast<std::int64_t>(anchors.size());
  auto toks = policy::se_forward_tokens(g, cfg, policy::patchify(g, anchors, cfg), policy::patchify(g, currents, cfg));
  auto pooled = nn::reshape(nn::adaptive_mean_pool(toks, 1, 1), nn::Shape{B, cfg.d_se});
  auto h = nn::gelu(nn::linear(pooled, g.param("sepre.fc.w"), g.param("sepre.fc.b")));
  return nn::linear(h, g.param("sepre.out.w"), g.param("sepre.out.b"));
}

std::vector<Targets> all_targets(const data::EpisodeStore& store) {
  std::vector<Targets> out;
  out.reserve(store.episodes.size());
  for (const auto& ep : store.episodes) out.push_back(pretext_targets(ep));
  return out;
}

PretextEval score(const PolicyConfig& cfg, const nn::ParamStore& params, const data::EpisodeStore& store,
                  data::Split split, const std::vector<Targets>& targets) {
  double sum[kPretextTargets] = {}, sumsq[kPretextTargets] = {}, sse = 0.0;
  std::int64_t n = 0;
  constexpr std::size_t kChunk = 64;
  std::vector<const sim::Frame*> anchors, currents;
  std::vector<std::array<float, kPretextTargets>> want;
  auto flush = [&]() {
    if (anchors.empty()) return;
    nn::Graph<float> g(params);
    g.set_grad_enabled(false);
    const auto pred = pretext_forward(g, cfg, anchors, currents).value();
    for (std::size_t b = 0; b < anchors.size(); ++b)
      for (int k = 0; k < kPretextTargets; ++k) {
        const double y = want[b][static_cast<std::size_t>(k)];
        const double e = pred.data[b * kPretextTargets + static_cast<std::size_t>(k)] - y;
        sse += e * e;
        sum[k] += y;
        sumsq[k] += y * y;
      }
    n += static_cast<std::int64_t>(anchors.size());
    anchors.clear();
    currents.clear();
    want.clear();
  };
  for (std::size_t e = 0; e < store.episodes.size(); ++e) {
    if (store.splits[e] != split) continue;
    const auto& ep = store.episodes[e];
    for (std::size_t i = 0; i < ep.size(); ++i) {
      anchors.push_back(&ep.frames[0]);
      currents.push_back(&ep.frames[i]);
      want.push_back(targets[e][i]);
      if (anchors.size() == kChunk) flush();
    }
  }
  flush();
  if (n == 0) throw UsageError("pretext evaluation split '" + data::split_name(split) + "' holds no steps");
  PretextEval r;
  r.pairs = n;
  double sst = 0.0;
  for (int k = 0; k < kPretextTargets; ++k) sst += sumsq[k] - sum[k] * sum[k] / static_cast<double>(n);
  r.mse = sse / static_cast<double>(n * kPretextTargets);
  r.target_variance = sst / static_cast<double>(n * kPretextTargets);
  r.r2 = sst > 0.0 ? 1.0 - sse / sst : 0.0;
  return r;
}

}  // namespace

Targets pretext_targets(const data::Episode& ep) {
  const auto states = data::replay_states(ep);
  const sim::TaskSpec task = sim::make_task(ep.family);
  const sim::Object* obj0 = sim::target_object(states.front(), task);
  if (obj0 == nullptr) throw UsageError("episode has no target object to track");
  const int id = obj0->id;
  Targets out;
  out.reserve(states.size());
  const auto& g0 = states.front().gripper.pose;
  for (const auto& s : states) {
    const sim::Object* o = s.object_by_id(id);
    out.push_back({static_cast<float>(s.gripper.pose.x - g0.x), static_cast<float>(s.gripper.pose.y - g0.y),
                   static_cast<float>(o->pose.x - obj0->pose.x), static_cast<float>(o->pose.y - obj0->pose.y)});
  }
  return out;
}

PretextEval evaluate_pretext(const PolicyConfig& cfg, const nn::ParamStore& params, const data::EpisodeStore& store,
                             data::Split split) {
  return score(pretext_config(cfg), params, store, split, all_targets(store));
}

SeRun se_pretrain(const PolicyConfig& cfg_in, TrainConfig tc, const data::Dataset& ds) {
  tc.phase = Phase::kSePretrain;
  tc = resolved(tc);
  validate(tc);
  const PolicyConfig cfg = pretext_config(cfg_in);
  policy::validate(cfg);
  const auto targets = all_targets(ds.store);

  nn::ParamStore params;
  for (auto& [name, t] : policy::init_params(cfg, tc.seed))
    if (policy::is_se_param(name) && !policy::is_adapter_param(name)) params.insert(name, t);
  init_dense(params, "sepre.fc", cfg.d_se, cfg.d_se, tc.seed);
  init_dense(params, "sepre.out", cfg.d_se, kPretextTargets, tc.seed);

  SeRun run;
  AdamState opt;
  const nn::RngStream root(tc.seed, nn::Stream::kSePretrain);
  for (std::int64_t step = 1; step <= tc.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    nn::RngStream rng = root.fork(static_cast<std::uint64_t>(step));
    const auto pos = data::sample_positions(ds.store, data::Split::kTrain, tc.batch, rng);
    std::vector<const sim::Frame*> anchors, currents;
    nn::Tensor y = nn::Tensor::zeros({tc.batch, kPretextTargets});
    std::size_t k = 0;
    for (auto [e, i] : pos) {
      const auto& ep = ds.store.episodes[static_cast<std::size_t>(e)];
      anchors.push_back(&ep.frames[0]);
      currents.push_back(&ep.frames[static_cast<std::size_t>(i)]);
      for (float v : targets[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)]) y.data[k++] = v;
    }
    nn::Graph<float> g(params);
    auto loss = nn::mse(pretext_forward(g, cfg, anchors, currents), g.constant(std::move(y)));
    const double lv = loss.value().item();
    const double lr = learning_rate(tc, step - 1, tc.steps);
    if (!std::isfinite(lv)) throw TrainingError("non-finite pretext loss at step " + std::to_string(step), step, lr);
    g.backward(loss);
    nn::ParamStore grads = g.param_grads();
    const double gnorm = clip_grad_norm(grads, tc.clip_norm);
    adamw_step(params, grads, opt, lr, tc);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    run.log.append({step, lv, lr, gnorm, ms});
    if (step % 100 == 0) log::info("se-pretrain step {}/{} loss {:.5f}", step, tc.steps, lv);
  }
  run.eval = score(cfg, params, ds.store, data::Split::kEval, targets);
  for (const auto& [name, t] : params)
    if (policy::is_se_param(name)) run.se_weights.insert(name, t);
  return run;
}

}  // namespace anchorlab::train
