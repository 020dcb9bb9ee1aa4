#include "anchorlab/policy/policy.hpp"

#include "anchorlab/common/binary_io.hpp"
#include "anchorlab/common/errors.hpp"
#include "anchorlab/data/vocab.hpp"
#include "anchorlab/nn/checkpoint.hpp"
#include "anchorlab/nn/ops.hpp"

namespace anchorlab::policy {
namespace {

struct Encodings {
  nn::Tensor cond;
  nn::Tensor se_tokens;
};

Encodings encode_one(const PolicyBundle& b, const Observation& obs, const ActOptions& opt) {
  if (!b.stats) throw UsageError("policy bundle has no normalization stats");
  PolicyInput in;
  in.batch = 1;
  in.context.push_back(obs.context);
  in.current.push_back(obs.current);
  in.anchor.push_back(obs.anchor);
  in.tokens = obs.tokens;
  const std::vector<double> raw(obs.proprio.begin(), obs.proprio.end());
  for (double v : data::normalize(raw, b.stats->state)) in.proprio.push_back(static_cast<float>(v));

  nn::Graph<float> g(b.params);
  g.set_grad_enabled(false);
  EncodeOptions eo;
  eo.eval = true;
  eo.zero_se = opt.zero_se;
  const Encoded<float> enc = encode(g, b.config, in, eo);
  Encodings out;
  out.cond = enc.cond.value();
  if (enc.se_tokens.valid()) out.se_tokens = enc.se_tokens.value();
  return out;
}

}  // namespace

Observation make_observation(const std::vector<sim::Frame>& history, int i, data::ContextMode mode,
                             const std::string& instruction, const data::StateVec& proprio) {
  Observation obs;
  for (int idx : data::select_context(static_cast<int>(history.size()), i, mode)) obs.context.push_back(&history[idx]);
  obs.current = &history[static_cast<std::size_t>(i)];
  obs.anchor = &history.front();
  obs.tokens = data::tokenize(instruction);
  obs.proprio = proprio;
  return obs;
}

std::vector<float> condition_vector(const PolicyBundle& bundle, const Observation& obs, const ActOptions& opt) {
  return encode_one(bundle, obs, opt).cond.data;
}

std::vector<data::ActionVec> policy_act(const PolicyBundle& bundle, const Observation& obs, nn::RngStream& rng,
                                        const ActOptions& opt) {
  const Encodings e = encode_one(bundle, obs, opt);
  const PolicyConfig& cfg = bundle.config;
  static thread_local std::optional<DiffusionSchedule> sched;
  if (!sched || sched->levels != cfg.train_levels || sched->betas.back() != cfg.beta_end)
    sched = make_schedule(cfg.train_levels, 1e-4, cfg.beta_end);
  const int steps = opt.steps > 0 ? opt.steps : cfg.inference_steps;
  const nn::Tensor chunk = head_sample(bundle.params, cfg, *sched, e.cond, e.se_tokens, steps, rng);
  std::vector<data::ActionVec> out;
  for (int k = 0; k < cfg.chunk; ++k) {
    std::vector<double> norm(static_cast<std::size_t>(cfg.action_dim));
    for (int d = 0; d < cfg.action_dim; ++d) norm[static_cast<std::size_t>(d)] = chunk.data[static_cast<std::size_t>(k * cfg.action_dim + d)];
    const auto raw = data::denormalize(norm, bundle.stats->action);
    data::ActionVec a{};
    for (int d = 0; d < cfg.action_dim; ++d) a[static_cast<std::size_t>(d)] = static_cast<float>(raw[static_cast<std::size_t>(d)]);
    a[3] = a[3] > 0.0f ? 1.0f : -1.0f;
    out.push_back(a);
  }
  return out;
}

NameDiff diff_names(const PolicyConfig& cfg, const nn::ParamStore& params) {
  const nn::ParamStore expected = init_params(cfg, 0);
  NameDiff d;
  for (const auto& [name, t] : expected) {
    if (!params.contains(name)) {
      d.missing.push_back(name);
    } else if (params.at(name).shape != t.shape) {
      d.missing.push_back(name + " (shape " + nn::shape_str(params.at(name).shape) + ", expected " +
                          nn::shape_str(t.shape) + ")");
    }
  }
  for (const auto& [name, _] : params)
    if (!expected.contains(name)) d.unexpected.push_back(name);
  return d;
}

void save_bundle(const PolicyBundle& bundle, const std::filesystem::path& path) {
  nn::save_checkpoint(bundle.params, path);
  nlohmann::json side = {{"policy", to_json(bundle.config)}, {"fingerprint", bundle.fingerprint}};
  side["norm_stats"] = bundle.stats ? data::to_json(*bundle.stats) : nlohmann::json(nullptr);
  io::write_text(path.string() + ".json", side.dump(2) + "\n");
}

PolicyBundle load_bundle(const std::filesystem::path& path) {
  const std::filesystem::path side_path = path.string() + ".json";
  if (!std::filesystem::exists(side_path)) throw LoadError("missing sidecar " + side_path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(io::read_text(side_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("cannot parse " + side_path.string() + ": " + e.what());
  }
  PolicyBundle b;
  b.config = policy_config_from_json(side.at("policy"));
  b.fingerprint = side.value("fingerprint", "");
  if (side.contains("norm_stats") && !side.at("norm_stats").is_null()) b.stats = data::norm_stats_from_json(side.at("norm_stats"));
  nn::ParamStore all = nn::load_checkpoint(path);
  for (const auto& [name, t] : all)
    if (!nn::has_prefix(name, "__")) b.params.insert(name, t);
  const NameDiff d = diff_names(b.config, b.params);
  if (!d.empty()) {
    std::string msg = "checkpoint " + path.string() + " does not match its policy config;";
    if (!d.missing.empty()) {
      msg += " missing:";
      for (const auto& n : d.missing) msg += " " + n;
    }
    if (!d.unexpected.empty()) {
      msg += " unexpected:";
      for (const auto& n : d.unexpected) msg += " " + n;
    }
    throw LoadError(msg);
  }
  return b;
}

}  // namespace anchorlab::policy
