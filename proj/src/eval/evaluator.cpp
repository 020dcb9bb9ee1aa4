#include "anchorlab/eval/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "anchorlab/common/errors.hpp"
#include "anchorlab/common/fingerprint.hpp"
#include "anchorlab/common/log.hpp"
#include "anchorlab/data/normalize.hpp"
#include "anchorlab/policy/network.hpp"
#include "anchorlab/sim/expert.hpp"
#include "anchorlab/sim/render.hpp"

namespace anchorlab::eval {
namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

nlohmann::json nullable(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> read_nullable(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("eval report: missing field '") + key + "'");
  return j.at(key);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <class F>
void parallel_for(int n, int jobs, F&& fn) {
  jobs = std::clamp(jobs, 1, std::max(1, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace

RetryCount count_retries(const std::vector<StepEvent>& trace) {
  RetryCount rc;
  bool after_drop = false;
  for (const StepEvent& e : trace) {
    if (e.grasp_attempted) {
      ++rc.attempts;
      if (!e.grasp_succeeded || after_drop) ++rc.retries;
      if (e.grasp_succeeded) after_drop = false;
    }
    if (e.released && !e.task_success) after_drop = true;
  }
  return rc;
}

Controller policy_controller(const policy::PolicyBundle& bundle, policy::ActOptions opt) {
  return [&bundle, opt](const policy::Observation& obs, const sim::WorldState&, nn::RngStream& rng) {
    return policy::policy_act(bundle, obs, rng, opt);
  };
}

Controller expert_controller(const sim::TaskSpec& task) {
  return [task](const policy::Observation&, const sim::WorldState& world, nn::RngStream&) {
    const sim::Action a = sim::expert_action(world, task);
    return std::vector<data::ActionVec>{data::ActionVec{static_cast<float>(a.dx), static_cast<float>(a.dy),
                                                        static_cast<float>(a.dtheta), static_cast<float>(a.g)}};
  };
}

Controller zero_controller() {
  return [](const policy::Observation&, const sim::WorldState&, nn::RngStream&) {
    return std::vector<data::ActionVec>{data::ActionVec{}};
  };
}

RolloutResult rollout(const Controller& controller, sim::TaskFamily family, std::uint64_t seed,
                      const RolloutOptions& opt) {
  if (opt.exec_k < 1) throw UsageError("rollout: exec_k must be >= 1");
  const sim::TaskSpec task = sim::make_task(family);
  const std::string instruction = sim::instruction_text(task);
  nn::RngStream rng = nn::RngStream(seed, nn::Stream::kEval).fork(static_cast<std::uint64_t>(family));

  RolloutResult r;
  r.family = family;
  r.seed = seed;
  sim::WorldState state = sim::reset(task, seed);
  std::vector<sim::Frame> history;
  history.reserve(sim::kEpisodeHorizon);
  std::vector<data::StateVec> states;
  std::vector<data::ActionVec> queue;
  std::size_t queue_pos = 0;

  for (int t = 0; t < sim::kEpisodeHorizon; ++t) {
    history.push_back(sim::render(state, opt.render));
    const data::StateVec prop = sim::proprio(state);
    states.push_back(prop);
    if (queue_pos >= queue.size()) {
      policy::Observation obs = policy::make_observation(history, t, opt.context, instruction, prop);
      if (opt.anchor_override != nullptr) {
        if (opt.context == data::ContextMode::kAnchorI0)
          for (auto& p : obs.context) p = opt.anchor_override;
        obs.anchor = opt.anchor_override;
      }
      const auto t0 = Clock::now();
      std::vector<data::ActionVec> chunk = controller(obs, state, rng);
      const auto t1 = Clock::now();
      r.latencies_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      ++r.inferences;
      if (chunk.empty()) throw UsageError("rollout: controller returned an empty chunk");
      chunk.resize(std::min<std::size_t>(chunk.size(), static_cast<std::size_t>(opt.exec_k)));
      queue = std::move(chunk);
      queue_pos = 0;
    }
    const data::ActionVec a = queue[queue_pos++];
    sim::StepInfo info;
    try {
      state = sim::step(state, sim::Action{a[0], a[1], a[2], a[3]}, &info);
    } catch (const SimError& e) {
      throw SimError(std::string(e.what()) + " (rollout step " + std::to_string(t) + ")");
    }
    r.executed.push_back(a);
    r.steps = t + 1;
    StepEvent ev;
    ev.grasp_attempted = info.grasp_attempted;
    ev.grasp_succeeded = info.grasp_succeeded;
    ev.released = info.placed;
    ev.task_success = sim::success(state, task);
    r.trace.push_back(ev);
    if (ev.task_success) {
      r.success = true;
      break;
    }
  }
  const RetryCount rc = count_retries(r.trace);
  r.attempts = rc.attempts;
  r.retries = rc.retries;
  if (opt.record) {
    data::Episode ep;
    ep.family = family;
    ep.seed = static_cast<std::uint32_t>(seed);
    ep.instruction = instruction;
    ep.success = r.success;
    ep.frames = std::move(history);
    ep.states = std::move(states);
    ep.actions = r.executed;
    r.episode = std::move(ep);
  }
  return r;
}

std::pair<double, double> wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) throw UsageError("wilson_interval: trials must be >= 1");
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  const double lo = successes == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = successes == trials ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

EvalReport aggregate(const std::vector<RolloutResult>& results, nlohmann::json config,
                     std::vector<std::uint64_t> seeds) {
  EvalReport rep;
  rep.config = std::move(config);
  rep.seeds = std::move(seeds);
  std::map<std::string, std::pair<int, int>> counts;  // successes, trials
  std::int64_t retries_all = 0, retries_succ = 0, retries_fail = 0;
  std::vector<double> lat;
  for (const RolloutResult& r : results) {
    auto& c = counts[sim::family_name(r.family)];
    c.second += 1;
    retries_all += r.retries;
    if (r.success) {
      c.first += 1;
      ++rep.success_episodes;
      retries_succ += r.retries;
    } else {
      ++rep.failure_episodes;
      retries_fail += r.retries;
    }
    lat.insert(lat.end(), r.latencies_ms.begin(), r.latencies_ms.end());
  }
  double sum = 0.0;
  for (const auto& [name, c] : counts) {
    TaskRate tr;
    tr.successes = c.first;
    tr.trials = c.second;
    tr.sr = static_cast<double>(c.first) / c.second;
    std::tie(tr.ci_lo, tr.ci_hi) = wilson_interval(c.first, c.second);
    rep.tasks[name] = tr;
    sum += tr.sr;
  }
  rep.average = counts.empty() ? 0.0 : sum / static_cast<double>(counts.size());
  const int total = rep.success_episodes + rep.failure_episodes;
  rep.retries_overall = total > 0 ? static_cast<double>(retries_all) / total : 0.0;
  if (rep.success_episodes > 0) rep.retries_success = static_cast<double>(retries_succ) / rep.success_episodes;
  if (rep.failure_episodes > 0) rep.retries_failure = static_cast<double>(retries_fail) / rep.failure_episodes;
  rep.latency_mean_ms = mean(lat);
  rep.latency_p50_ms = median(lat);
  return rep;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json tasks = nlohmann::json::object();
  for (const auto& [name, t] : r.tasks)
    tasks[name] = {{"sr", t.sr}, {"ci95", {t.ci_lo, t.ci_hi}}, {"trials", t.trials}, {"successes", t.successes}};
  return {
      {"config", r.config},
      {"tasks", tasks},
      {"average", r.average},
      {"retries",
       {{"overall", r.retries_overall},
        {"success", nullable(r.retries_success)},
        {"failure", nullable(r.retries_failure)},
        {"success_episodes", r.success_episodes},
        {"failure_episodes", r.failure_episodes}}},
      {"latency_ms",
       {{"mean", r.latency_mean_ms}, {"p50", r.latency_p50_ms}, {"overhead_vs_base", nullable(r.overhead_vs_base)}}},
      {"seeds", r.seeds},
  };
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.config = field(j, "config");
    const auto& ver = field(r.config, "schema_version");
    if (ver.get<int>() != kReportSchemaVersion)
      throw DataError("eval report: schema_version " + ver.dump() + " != " + std::to_string(kReportSchemaVersion));
    for (const auto& [name, t] : field(j, "tasks").items()) {
      TaskRate tr;
      tr.sr = field(t, "sr").get<double>();
      const auto& ci = field(t, "ci95");
      tr.ci_lo = ci.at(0).get<double>();
      tr.ci_hi = ci.at(1).get<double>();
      tr.trials = field(t, "trials").get<int>();
      tr.successes = t.value("successes", static_cast<int>(std::lround(tr.sr * tr.trials)));
      r.tasks[name] = tr;
    }
    r.average = field(j, "average").get<double>();
    const auto& re = field(j, "retries");
    r.retries_overall = field(re, "overall").get<double>();
    r.retries_success = read_nullable(field(re, "success"));
    r.retries_failure = read_nullable(field(re, "failure"));
    r.success_episodes = re.value("success_episodes", 0);
    r.failure_episodes = re.value("failure_episodes", 0);
    const auto& lat = field(j, "latency_ms");
    r.latency_mean_ms = field(lat, "mean").get<double>();
    r.latency_p50_ms = field(lat, "p50").get<double>();
    r.overhead_vs_base = read_nullable(field(lat, "overhead_vs_base"));
    r.seeds = field(j, "seeds").get<std::vector<std::uint64_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("eval report: ") + e.what());
  }
}

nlohmann::json without_timing(nlohmann::json j) {
  if (j.contains("latency_ms")) j.erase("latency_ms");
  return j;
}

nlohmann::json to_json(const EvalOptions& o) {
  std::vector<std::string> suite;
  for (auto f : o.suite) suite.push_back(sim::family_name(f));
  return {{"suite", suite},   {"trials", o.trials},   {"seed", o.seed},
          {"exec_k", o.exec_k}, {"steps", o.steps},     {"zero_se", o.zero_se},
          {"render", {{"size", o.render.size}, {"arm_width_px", o.render.arm_width_px}}}};
}

EvalReport evaluate_controller(const std::function<Controller(const sim::TaskSpec&)>& make, data::ContextMode context,
                               const EvalOptions& opt, nlohmann::json config,
                               std::vector<RolloutResult>* rollouts) {
  if (opt.trials < 1) throw UsageError("evaluate: trials must be >= 1");
  if (opt.suite.empty()) throw UsageError("evaluate: empty task suite");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < opt.trials; ++i) seeds.push_back(opt.seed + static_cast<std::uint64_t>(i));
  const int n = static_cast<int>(opt.suite.size()) * opt.trials;
  std::vector<RolloutResult> results(static_cast<std::size_t>(n));
  RolloutOptions ro;
  ro.exec_k = opt.exec_k;
  ro.context = context;
  ro.record = opt.record;
  ro.render = opt.render;
  parallel_for(n, opt.jobs, [&](int i) {
    const sim::TaskFamily fam = opt.suite[static_cast<std::size_t>(i / opt.trials)];
    const Controller c = make(sim::make_task(fam));
    results[static_cast<std::size_t>(i)] = rollout(c, fam, seeds[static_cast<std::size_t>(i % opt.trials)], ro);
  });
  config["schema_version"] = kReportSchemaVersion;
  config["eval"] = to_json(opt);
  EvalReport rep = aggregate(results, std::move(config), std::move(seeds));
  if (rollouts != nullptr) *rollouts = std::move(results);
  return rep;
}

EvalReport evaluate(const policy::PolicyBundle& bundle, const EvalOptions& opt, std::vector<RolloutResult>* rollouts) {
  if (!bundle.stats) throw UsageError("evaluate: policy bundle has no normalization stats");
  policy::ActOptions act;
  act.steps = opt.steps;
  act.zero_se = opt.zero_se;
  nlohmann::json config = {
      {"fingerprint", bundle.fingerprint},
      {"policy", policy::to_json(bundle.config)},
      {"K", opt.steps > 0 ? opt.steps : bundle.config.inference_steps},
      {"exec_k", opt.exec_k},
  };
  EvalReport rep = evaluate_controller([&](const sim::TaskSpec&) { return policy_controller(bundle, act); },
                                       bundle.config.context, opt, std::move(config), rollouts);
  log::info("eval {}: average {:.3f}", bundle.fingerprint, rep.average);
  return rep;
}

std::vector<std::pair<std::string, policy::PolicyConfig>> latency_variants(const policy::PolicyConfig& base) {
  policy::PolicyConfig plain = base;
  plain.context = data::ContextMode::kNone;
  plain.se_mode = policy::SeMode::kOff;
  policy::PolicyConfig anchor = plain;
  anchor.context = data::ContextMode::kAnchorI0;
  policy::PolicyConfig full = anchor;
  full.se_mode = policy::SeMode::kFrozen;
  full.injection = policy::Injection::kConcat;
  return {{"base", plain}, {"+anchor", anchor}, {"+anchor+se", full}};
}

LatencyProfile latency_profile(const std::vector<std::pair<std::string, policy::PolicyBundle>>& variants, int n,
                               int warmup, int ddim_steps) {
  if (n < 1) throw UsageError("latency_profile: n must be >= 1");
  if (variants.empty()) throw UsageError("latency_profile: no variants");
  // One fixed scene shared by every variant.
  const sim::TaskSpec task = sim::make_task(sim::TaskFamily::kCarrotOnPlate);
  sim::WorldState state = sim::reset(task, 0);
  std::vector<sim::Frame> history{sim::render(state)};
  state = sim::step(state, sim::Action{0.02, 0.02, 0.0, -1.0});
  history.push_back(sim::render(state));
  const std::string instruction = sim::instruction_text(task);

  LatencyProfile prof;
  prof.inferences = n;
  policy::ActOptions act;
  act.steps = ddim_steps;
  for (const auto& [name, bundle] : variants) {
    const policy::Observation obs =
        policy::make_observation(history, 1, bundle.config.context, instruction, sim::proprio(state));
    nn::RngStream rng(0, nn::Stream::kEval);
    for (int i = 0; i < warmup; ++i) policy::policy_act(bundle, obs, rng, act);
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto t0 = Clock::now();
      policy::policy_act(bundle, obs, rng, act);
      times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    LatencyRow row;
    row.variant = name;
    row.visual_tokens = (1 + data::context_frame_count(bundle.config.context)) * bundle.config.patches_per_frame();
    row.mean_ms = mean(times);
    row.p50_ms = median(times);
    prof.rows.push_back(row);
  }
  for (auto& row : prof.rows) row.overhead = row.mean_ms / prof.rows.front().mean_ms - 1.0;
  return prof;
}

nlohmann::json latency_reference() {
  return {{"base_s", 0.185}, {"full_s", 0.215}, {"overhead", 0.16}, {"note", "reference annotation, not an expected value"}};
}

nlohmann::json to_json(const LatencyProfile& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : p.rows)
    rows.push_back({{"variant", r.variant},
                    {"visual_tokens", r.visual_tokens},
                    {"mean_ms", r.mean_ms},
                    {"p50_ms", r.p50_ms},
                    {"overhead", r.overhead}});
  return {{"inferences", p.inferences}, {"rows", rows}, {"reference", latency_reference()}};
}

}  // namespace anchorlab::eval
