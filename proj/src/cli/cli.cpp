#include "anchorlab/cli/cli.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>

#include "anchorlab/cli/experiment.hpp"
#include "anchorlab/common/binary_io.hpp"
#include "anchorlab/common/errors.hpp"
#include "anchorlab/common/fingerprint.hpp"
#include "anchorlab/common/hash.hpp"
#include "anchorlab/common/log.hpp"
#include "anchorlab/data/manifest.hpp"
#include "anchorlab/eval/ablation.hpp"
#include "anchorlab/nn/checkpoint.hpp"
#include "anchorlab/policy/network.hpp"

namespace anchorlab::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

struct GenArgs {
  std::optional<int> episodes;
};

struct TrainArgs {
  std::string phase = "pretrain";
  std::string data;
  std::string init;
  std::string se;
  std::string resume;
};

struct EvalArgs {
  std::string policy;
  std::optional<int> steps;
  std::optional<int> exec_k;
  std::optional<int> trials;
  bool trace = false;
};

struct AblateArgs {
  std::string grid;
  std::string data;
  std::string base;
  std::string se;
};

struct ReportArgs {
  std::string in;
  std::string format = "md";
};

struct LatencyArgs {
  int n = 100;
  int warmup = 5;
};

ExperimentConfig load_config(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
}

fs::path require_out(const Common& c) {
  if (c.out.empty()) throw UsageError("--out is required");
  fs::create_directories(c.out);
  return fs::path(c.out);
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

std::string slug(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out += ch;
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

// Parameter checkpoint fingerprint: the sidecar's when present, else a checksum.
std::string checkpoint_fingerprint(const fs::path& path, const nn::ParamStore& params) {
  const fs::path side = path.string() + ".json";
  if (fs::exists(side)) {
    const json j = json::parse(io::read_text(side));
    if (j.contains("fingerprint")) return j.at("fingerprint").get<std::string>();
  }
  return hex64(nn::checksum(params));
}

nn::ParamStore load_se(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("spatial-encoder checkpoint not found: " + path);
  return nn::load_checkpoint(path);
}

// ---- gen-data ----

int cmd_gen_data(const Common& common, const GenArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  const int n = a.episodes.value_or(cfg.data.episodes_per_family);
  if (n < 1) throw UsageError("--episodes must be >= 1");
  const fs::path dir = require_out(common);
  const std::uint64_t seed_flag = common.seed.value_or(0);
  const std::uint64_t base = cfg.data.first_seed + seed_flag * 1000000ULL;
  const std::uint64_t span = static_cast<std::uint64_t>(n) * 2;
  if (base + span * sim::kAllFamilies.size() > 0xffffffffULL) throw UsageError("--seed too large for 32-bit episode seeds");

  data::Manifest m;
  m.fingerprint = fingerprint({{"cmd", "gen-data"},
                               {"sim", to_json(cfg)["sim"]},
                               {"data", to_json(cfg)["data"]},
                               {"episodes", n},
                               {"seed", seed_flag}});
  fs::create_directories(dir / "episodes");
  std::vector<data::Episode> train_eps;
  const sim::RenderConfig render = cfg.render();
  const int n_eval = static_cast<int>(std::floor(n * cfg.data.eval_fraction));
  for (std::size_t fi = 0; fi < sim::kAllFamilies.size(); ++fi) {
    const sim::TaskFamily fam = sim::kAllFamilies[fi];
    const std::uint64_t fam_base = base + fi * span;
    int kept = 0, failed = 0;
    for (std::uint64_t k = 0; kept < n; ++k) {
      if (k >= span) break;
      data::Episode ep = data::record_expert_episode(fam, static_cast<std::uint32_t>(fam_base + k), render);
      if (!ep.success) {
        ++failed;
        continue;
      }
      data::ManifestEntry e;
      e.family = fam;
      e.seed = ep.seed;
      e.split = kept >= n - n_eval ? data::Split::kEval : data::Split::kTrain;
      e.path = fmt::format("episodes/{}_{}.ave", sim::family_name(fam), ep.seed);
      data::write_episode(ep, dir / e.path);
      if (e.split == data::Split::kTrain) train_eps.push_back(std::move(ep));
      m.episodes.push_back(e);
      ++kept;
    }
    const double rate = static_cast<double>(failed) / static_cast<double>(kept + failed);
    if (kept < n || rate > cfg.data.max_expert_failure)
      throw DataError(fmt::format("expert failure rate {:.1f}% on family {} exceeds {:.1f}%", 100.0 * rate,
                                  sim::family_name(fam), 100.0 * cfg.data.max_expert_failure));
    log::info("gen-data {}: {} episodes, {} expert failures skipped", sim::family_name(fam), kept, failed);
  }
  m.stats = data::compute_norm_stats(train_eps);
  data::write_manifest(m, dir / "manifest.json");
  out << fmt::format("wrote {} episodes and {}\n", m.episodes.size(), (dir / "manifest.json").string());
  return kExitOk;
}

// ---- pretrain-se ----

int cmd_pretrain_se(const Common& common, const TrainArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  if (a.data.empty()) throw UsageError("--data is required");
  const fs::path dir = require_out(common);
  const data::Dataset ds = data::load_dataset(a.data);
  train::TrainConfig tc = cfg.se_pretrain;
  if (common.seed) tc.seed = *common.seed;
  const train::SeRun run = train::se_pretrain(cfg.policy, tc, ds);
  const std::string fp = fingerprint({{"cmd", "pretrain-se"},
                                      {"policy", policy::to_json(cfg.policy)},
                                      {"train", train::to_json(train::resolved(tc))},
                                      {"data", ds.fingerprint}});
  nn::save_checkpoint(run.se_weights, dir / "se.avck");
  write_json(dir / "se.avck.json", {{"fingerprint", fp},
                                     {"policy", policy::to_json(cfg.policy)},
                                     {"train", train::to_json(train::resolved(tc))},
                                     {"pretext", {{"mse", run.eval.mse},
                                                  {"target_variance", run.eval.target_variance},
                                                  {"r2", run.eval.r2},
                                                  {"pairs", run.eval.pairs}}}});
  run.log.write(dir / "trainlog.jsonl");
  out << fmt::format("se checkpoint {} (pretext R2 {:.3f} over {} pairs)\n", (dir / "se.avck").string(), run.eval.r2,
                     run.eval.pairs);
  return kExitOk;
}

// ---- train ----

int cmd_train(const Common& common, const TrainArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  const train::Phase phase = train::phase_from_name(a.phase);
  if (phase == train::Phase::kSePretrain) throw UsageError("use the pretrain-se subcommand for the pretext phase");
  if (phase == train::Phase::kFinetune && a.init.empty())
    throw UsageError("train --phase finetune requires --init <pretrained policy checkpoint>");
  if (a.data.empty()) throw UsageError("--data is required");
  const fs::path dir = require_out(common);
  const data::Dataset ds = data::load_dataset(a.data);

  train::TrainConfig tc = cfg.phase(phase);
  tc.phase = phase;
  if (common.seed) tc.seed = *common.seed;
  tc = train::resolved(tc);

  std::optional<policy::PolicyBundle> init;
  std::string init_fp;
  if (!a.init.empty()) {
    if (!fs::exists(a.init)) throw UsageError("--init checkpoint not found: " + a.init);
    init = policy::load_bundle(a.init);
    init_fp = init->fingerprint;
  }
  std::optional<nn::ParamStore> se;
  std::string se_fp;
  if (!a.se.empty()) {
    se = load_se(a.se);
    se_fp = checkpoint_fingerprint(a.se, *se);
  }
  if (cfg.policy.uses_se() && !se && phase == train::Phase::kFinetune)
    log::info("no --se given: the spatial encoder keeps the --init or fresh weights");

  const std::string fp = fingerprint({{"cmd", "train"},
                                      {"policy", policy::to_json(cfg.policy)},
                                      {"train", train::to_json(tc)},
                                      {"data", ds.fingerprint},
                                      {"init", init_fp},
                                      {"se", se_fp}});
  train::PolicyRun run;
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw UsageError("--resume state not found: " + a.resume);
    run.state = train::unpack_state(nn::load_checkpoint(a.resume));
    train::train_policy_steps(run.state, cfg.policy, tc, ds, tc.steps, &run.log);
    run.bundle.config = cfg.policy;
    run.bundle.params = run.state.params;
    run.bundle.stats = ds.stats;
  } else {
    run = train::train_policy(cfg.policy, tc, ds, init ? &init->params : nullptr, se ? &*se : nullptr);
  }
  run.bundle.fingerprint = fp;
  policy::save_bundle(run.bundle, dir / "policy.avck");
  nn::save_checkpoint(train::pack_state(run.state), dir / "state.avck");
  run.log.write(dir / "trainlog.jsonl");
  out << fmt::format("policy {} ({} steps, fingerprint {})\n", (dir / "policy.avck").string(), run.state.step, fp);
  return kExitOk;
}

// ---- eval ----

int cmd_eval(const Common& common, const EvalArgs& a, std::ostream& out) {
  ExperimentConfig cfg = load_config(common);
  if (a.policy.empty()) throw UsageError("--policy is required");
  if (!fs::exists(a.policy)) throw UsageError("policy checkpoint not found: " + a.policy);
  const fs::path dir = require_out(common);
  const policy::PolicyBundle bundle = policy::load_bundle(a.policy);
  eval::EvalOptions opt = eval_options(cfg.eval);
  if (a.steps) opt.steps = *a.steps;
  if (a.exec_k) opt.exec_k = *a.exec_k;
  if (a.trials) opt.trials = *a.trials;
  if (common.seed) opt.seed = *common.seed;
  if (opt.exec_k > bundle.config.chunk) throw UsageError("--exec-k exceeds the policy's chunk length");
  opt.jobs = common.jobs;
  opt.record = a.trace;
  opt.render = cfg.render();
  std::vector<eval::RolloutResult> rollouts;
  const eval::EvalReport rep = eval::evaluate(bundle, opt, &rollouts);
  write_json(dir / "report.json", eval::to_json(rep));
  if (a.trace) {
    fs::create_directories(dir / "traces");
    for (const auto& r : rollouts)
      data::write_episode(*r.episode, dir / "traces" / fmt::format("{}_{}.ave", sim::family_name(r.family), r.seed));
  }
  out << fmt::format("report {} (average {:.3f})\n", (dir / "report.json").string(), rep.average);
  return kExitOk;
}

// ---- ablate ----

int cmd_ablate(const Common& common, const AblateArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  const eval::GridKind kind = eval::grid_from_name(a.grid);
  if (a.data.empty()) throw UsageError("--data is required");
  const fs::path dir = require_out(common) / eval::grid_name(kind);
  fs::create_directories(dir);
  const data::Dataset ds = data::load_dataset(a.data);

  std::optional<nn::ParamStore> base, se;
  eval::GridInputs in;
  in.architecture = cfg.policy;
  in.dataset = &ds;
  if (!a.base.empty() && fs::exists(a.base)) {
    policy::PolicyBundle b = policy::load_bundle(a.base);
    in.base_fingerprint = b.fingerprint;
    base = std::move(b.params);
    in.base_params = &*base;
  } else if (!a.base.empty()) {
    log::error("base checkpoint not found: {}", a.base);
  }
  if (!a.se.empty() && fs::exists(a.se)) {
    se = nn::load_checkpoint(a.se);
    in.se_weights = &*se;
  } else if (!a.se.empty()) {
    log::error("spatial-encoder checkpoint not found: {}", a.se);
  }
  in.finetune = cfg.finetune;
  in.scratch = cfg.pretrain;
  if (common.seed) in.finetune.seed = in.scratch.seed = *common.seed;
  in.eval = eval_options(cfg.eval);
  in.eval.jobs = common.jobs;
  in.eval.render = cfg.render();
  int index = 0;
  in.on_cell = [&](const eval::CellResult& c) {
    const fs::path cell_dir = dir / fmt::format("{}_{}", index++, slug(c.cell.name));
    fs::create_directories(cell_dir);
    write_json(cell_dir / "report.json", eval::to_json(c.report));
    if (c.cell.source != eval::CellSource::kReuse) policy::save_bundle(c.bundle, cell_dir / "policy.avck");
  };
  const eval::GridResult g = eval::run_ablation_grid(kind, in);
  const json gj = eval::to_json(g);
  write_json(dir / "grid.json", gj);
  const std::string md = eval::grid_markdown(gj);
  io::write_text(dir / "deltas.md", md);
  out << md;
  return kExitOk;
}

// ---- report ----

std::string fmt_opt(const json& v) { return v.is_null() ? "n/a" : fmt::format("{:.2f}", v.get<double>()); }

int cmd_report(const ReportArgs& a, const Common& common, std::ostream& out) {
  if (a.in.empty()) throw UsageError("--in is required");
  if (!fs::is_directory(a.in)) throw UsageError("--in is not a directory: " + a.in);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a.in))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<json> reports, grids;
  for (const auto& f : files) {
    json j;
    try {
      j = json::parse(io::read_text(f));
    } catch (const json::exception&) {
      continue;
    }
    if (!j.is_object()) continue;
    if (j.contains("tasks") && j.contains("config") && j.contains("average")) {
      try {
        eval::report_from_json(j);
      } catch (const DataError& e) {
        throw DataError(f.string() + ": " + e.what());
      }
      reports.push_back(std::move(j));
    } else if (j.contains("grid") && j.contains("cells") && j.contains("deltas")) {
      grids.push_back(std::move(j));
    }
  }
  if (reports.empty() && grids.empty()) throw UsageError("no reports found under " + a.in);
  auto key = [](const json& r) { return r["config"].value("fingerprint", "") + "\x1f" + r.dump(); };
  std::sort(reports.begin(), reports.end(), [&](const json& x, const json& y) { return key(x) < key(y); });
  std::sort(grids.begin(), grids.end(), [](const json& x, const json& y) { return x.dump() < y.dump(); });

  std::string doc;
  if (a.format == "json") {
    doc = json{{"schema_version", eval::kReportSchemaVersion}, {"reports", reports}, {"grids", grids}}.dump(2) + "\n";
  } else {
    std::vector<std::string> fams;
    for (const auto& r : reports)
      for (const auto& [name, t] : r["tasks"].items())
        if (std::find(fams.begin(), fams.end(), name) == fams.end()) fams.push_back(name);
    std::sort(fams.begin(), fams.end());
    if (!reports.empty()) {
      doc += "## Success rates\n\n| fingerprint | cell | K | exec_k |";
      for (const auto& f : fams) doc += " " + f + " |";
      doc += " average |\n|---|---|---|---|";
      for (std::size_t i = 0; i < fams.size(); ++i) doc += "---|";
      doc += "---|\n";
      for (const auto& r : reports) {
        const json& c = r["config"];
        doc += fmt::format("| {} | {} | {} | {} |", c.value("fingerprint", ""), c.value("cell", "-"),
                           c.contains("K") ? c["K"].dump() : "-", c.contains("exec_k") ? c["exec_k"].dump() : "-");
        for (const auto& f : fams)
          doc += r["tasks"].contains(f) ? fmt::format(" {:.1f}% |", 100.0 * r["tasks"][f]["sr"].get<double>()) : " - |";
        doc += fmt::format(" {:.1f}% |\n", 100.0 * r["average"].get<double>());
      }
      doc += "\n## Retries\n\n| fingerprint | cell | Overall Retries | in Case of Success | in Case of Failure |\n|---|---|---|---|---|\n";
      for (const auto& r : reports)
        doc += fmt::format("| {} | {} | {:.2f} | {} | {} |\n", r["config"].value("fingerprint", ""),
                           r["config"].value("cell", "-"), r["retries"]["overall"].get<double>(),
                           fmt_opt(r["retries"]["success"]), fmt_opt(r["retries"]["failure"]));
      doc += "\n## Latency (ms per inference)\n\n| fingerprint | cell | mean | p50 |\n|---|---|---|---|\n";
      for (const auto& r : reports)
        doc += fmt::format("| {} | {} | {:.2f} | {:.2f} |\n", r["config"].value("fingerprint", ""),
                           r["config"].value("cell", "-"), r["latency_ms"]["mean"].get<double>(),
                           r["latency_ms"]["p50"].get<double>());
    }
    for (const auto& g : grids) doc += "\n" + eval::grid_markdown(g);
  }
  if (common.out.empty()) {
    out << doc;
  } else {
    const fs::path p(common.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    io::write_text(p, doc);
  }
  return kExitOk;
}

// ---- latency ----

data::NormStats unit_stats() {
  data::QuantileStats q;
  for (int i = 0; i < sim::kActionDim; ++i) {
    q.labels.push_back("d" + std::to_string(i));
    q.q01.push_back(-1.0);
    q.q99.push_back(1.0);
    q.degenerate.push_back(false);
  }
  return {q, q};
}

int cmd_latency(const Common& common, const LatencyArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  if (a.n < 100) throw UsageError("--n must be >= 100 warm inferences");
  std::vector<std::pair<std::string, policy::PolicyBundle>> bundles;
  for (const auto& [name, pc] : eval::latency_variants(cfg.policy)) {
    policy::PolicyBundle b;
    b.config = pc;
    b.params = policy::init_params(pc, common.seed.value_or(0));
    b.stats = unit_stats();
    bundles.emplace_back(name, std::move(b));
  }
  const eval::LatencyProfile p = eval::latency_profile(bundles, a.n, a.warmup, cfg.eval.steps);
  json j = eval::to_json(p);
  j["policy"] = policy::to_json(cfg.policy);
  std::string table = "| variant | visual tokens | mean ms | p50 ms | overhead |\n|---|---|---|---|---|\n";
  for (const auto& r : p.rows)
    table += fmt::format("| {} | {} | {:.2f} | {:.2f} | {} |\n", r.variant, r.visual_tokens, r.mean_ms, r.p50_ms,
                         eval::format_delta(100.0 * r.overhead));
  table += "\nreference (annotation only): 0.185 s base, 0.215 s with anchor and encoder, +16%\n";
  if (!common.out.empty()) {
    const fs::path dir = require_out(common);
    write_json(dir / "latency.json", j);
  }
  out << table;
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c, bool with_out = true) {
  sub->add_option("--config", c.config, "Experiment config JSON")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed (U64)");
  if (with_out) sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--jobs", c.jobs, "Worker threads for rollouts")->check(CLI::PositiveNumber);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"anchorlab: anchor-frame diffusion policy lab"};
  app.require_subcommand(1);
  Common common;
  GenArgs gen;
  TrainArgs tr, se;
  EvalArgs ev;
  AblateArgs ab;
  ReportArgs rp;
  LatencyArgs lt;

  auto* g = app.add_subcommand("gen-data", "Record expert episodes, a manifest and normalization stats");
  add_common(g, common);
  g->add_option("--episodes", gen.episodes, "Episodes per task family");

  auto* s = app.add_subcommand("pretrain-se", "Pretrain the spatial encoder on the displacement pretext");
  add_common(s, common);
  s->add_option("--data", se.data, "Dataset directory (gen-data output)");

  auto* t = app.add_subcommand("train", "Train a policy (pretrain or finetune)");
  add_common(t, common);
  t->add_option("--phase", tr.phase, "pretrain | finetune")->check(CLI::IsMember({"pretrain", "finetune", "se-pretrain"}));
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--init", tr.init, "Pretrained policy checkpoint");
  t->add_option("--se", tr.se, "Pretrained spatial-encoder checkpoint");
  t->add_option("--resume", tr.resume, "Resume from a state.avck");

  auto* e = app.add_subcommand("eval", "Closed-loop evaluation");
  add_common(e, common);
  e->add_option("--policy", ev.policy, "Policy checkpoint");
  e->add_option("--steps", ev.steps, "DDIM sampling steps")->check(CLI::IsMember({10, 50}));
  e->add_option("--exec-k", ev.exec_k, "Actions executed per inference")->check(CLI::Range(1, 5));
  e->add_option("--trials", ev.trials, "Trials per task")->check(CLI::PositiveNumber);
  e->add_flag("--trace", ev.trace, "Dump every rollout as an AVE1 episode");

  auto* a = app.add_subcommand("ablate", "Run an ablation grid");
  add_common(a, common);
  a->add_option("--grid", ab.grid, "table3 | table4-anchor | table4-injection | table6")
      ->check(CLI::IsMember({"table3", "table4-anchor", "table4-injection", "table6"}))
      ->required();
  a->add_option("--data", ab.data, "Dataset directory");
  a->add_option("--base", ab.base, "Context-free pretrained policy checkpoint");
  a->add_option("--se", ab.se, "Pretrained spatial-encoder checkpoint");

  auto* r = app.add_subcommand("report", "Merge reports into one document");
  add_common(r, common);
  r->add_option("--in", rp.in, "Directory searched recursively for reports");
  r->add_option("--format", rp.format, "md | json")->check(CLI::IsMember({"md", "json"}));

  auto* l = app.add_subcommand("latency", "Per-inference latency of the base, +anchor and +anchor+encoder variants");
  add_common(l, common);
  l->add_option("--n", lt.n, "Timed inferences per variant");
  l->add_option("--warmup", lt.warmup, "Untimed inferences per variant");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "usage error: " << pe.what() << "\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(common, gen, out);
    if (s->parsed()) return cmd_pretrain_se(common, se, out);
    if (t->parsed()) return cmd_train(common, tr, out);
    if (e->parsed()) return cmd_eval(common, ev, out);
    if (a->parsed()) return cmd_ablate(common, ab, out);
    if (r->parsed()) return cmd_report(rp, common, out);
    if (l->parsed()) return cmd_latency(common, lt, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const TrainingError& ex) {
    err << fmt::format("training aborted at step {} (lr {:g}): {}\n", ex.step(), ex.lr(), ex.what());
    return kExitGate;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace anchorlab::cli
