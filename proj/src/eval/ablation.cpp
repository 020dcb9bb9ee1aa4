#include "anchorlab/eval/ablation.hpp"

#include <fmt/core.h>

#include <cmath>
#include <map>

#include "anchorlab/common/errors.hpp"
#include "anchorlab/common/fingerprint.hpp"
#include "anchorlab/common/hash.hpp"
#include "anchorlab/common/log.hpp"

namespace anchorlab::eval {
namespace {

using data::ContextMode;
using policy::Injection;
using policy::PolicyConfig;
using policy::SeMode;

GridCell cell(std::string name, PolicyConfig cfg, std::string ref = {}, std::optional<double> published = {}) {
  GridCell c;
  c.name = std::move(name);
  c.config = cfg;
  c.delta_ref = std::move(ref);
  c.reference_delta = published;
  return c;
}

std::string source_name(CellSource s) {
  switch (s) {
    case CellSource::kFinetune: return "finetune";
    case CellSource::kReuse: return "reuse";
    case CellSource::kScratch: return "scratch";
  }
  return "?";
}

}  // namespace

std::string grid_name(GridKind g) {
  switch (g) {
    case GridKind::kTable3: return "table3";
    case GridKind::kTable4Anchor: return "table4-anchor";
    case GridKind::kTable4Injection: return "table4-injection";
    case GridKind::kTable6: return "table6";
  }
  return "?";
}

GridKind grid_from_name(const std::string& name) {
  for (GridKind g : {GridKind::kTable3, GridKind::kTable4Anchor, GridKind::kTable4Injection, GridKind::kTable6})
    if (grid_name(g) == name) return g;
  throw UsageError("unknown grid '" + name + "' (expected table3, table4-anchor, table4-injection or table6)");
}

std::vector<GridCell> grid_cells(GridKind g, const PolicyConfig& base) {
  PolicyConfig none = base;
  none.context = ContextMode::kNone;
  none.se_mode = SeMode::kOff;
  none.injection = Injection::kConcat;
  PolicyConfig anchor = none;
  anchor.context = ContextMode::kAnchorI0;
  PolicyConfig with_se = anchor;
  with_se.se_mode = SeMode::kFrozen;

  std::vector<GridCell> cells;
  switch (g) {
    case GridKind::kTable3: {
      cells.push_back(cell("w/o anchor", none));
      cells.push_back(cell("w/ anchor", anchor, "w/o anchor", 9.4));
      cells.push_back(cell("w/ anchor + se", with_se, "w/o anchor", 13.6));
      PolicyConfig unfrozen = with_se;
      unfrozen.se_mode = SeMode::kUnfrozen;
      cells.push_back(cell("unfreeze", unfrozen, "w/ anchor + se", -6.2));
      PolicyConfig removed = with_se;
      removed.se_mode = SeMode::kRemovedAtEval;
      GridCell rm = cell("remove", removed, "w/ anchor + se", -6.3);
      rm.source = CellSource::kReuse;
      rm.reuse_of = "w/ anchor + se";
      cells.push_back(rm);
      break;
    }
    case GridKind::kTable4Anchor: {
      cells.push_back(cell("anchor_I0", anchor));
      PolicyConfig p1 = anchor;
      p1.context = ContextMode::kPast3Stride1;
      cells.push_back(cell("past3_stride1", p1, "anchor_I0", 46.9 - 55.2));
      PolicyConfig p20 = anchor;
      p20.context = ContextMode::kPast3Stride20;
      cells.push_back(cell("past3_stride20", p20, "anchor_I0", 21.9 - 55.2));
      break;
    }
    case GridKind::kTable4Injection: {
      cells.push_back(cell("concat", with_se));
      PolicyConfig pre = with_se;
      pre.injection = Injection::kPreDecoder;
      cells.push_back(cell("pre_decoder", pre, "concat", 0.0 - 64.6));
      PolicyConfig head = with_se;
      head.injection = Injection::kInHead;
      cells.push_back(cell("in_head", head, "concat", 46.9 - 64.6));
      break;
    }
    case GridKind::kTable6: {
      PolicyConfig without = none;
      without.use_proprio = false;
      GridCell a = cell("w/o proprio", without);
      a.source = CellSource::kScratch;
      GridCell b = cell("w/ proprio", none, "w/o proprio", 51.0 - 40.6);
      b.source = CellSource::kScratch;
      cells.push_back(a);
      cells.push_back(b);
      break;
    }
  }
  return cells;
}

void check_prerequisites(GridKind g, const std::vector<GridCell>& cells, const GridInputs& in) {
  const std::string grid = grid_name(g);
  for (const GridCell& c : cells) {
    const std::string where = "grid " + grid + ", cell '" + c.name + "': ";
    if (in.dataset == nullptr) throw OrchestrationError(where + "no dataset");
    if (c.source == CellSource::kFinetune && in.base_params == nullptr)
      throw OrchestrationError(where + "missing base checkpoint (context=none pretrain)");
    if (c.config.uses_se() && c.source != CellSource::kReuse && in.se_weights == nullptr)
      throw OrchestrationError(where + "missing spatial-encoder checkpoint (pretrain-se)");
    if (c.source == CellSource::kReuse) {
      bool found = false;
      for (const GridCell& o : cells) found = found || (o.name == c.reuse_of && o.source != CellSource::kReuse);
      if (!found) throw OrchestrationError(where + "reuses unknown cell '" + c.reuse_of + "'");
    }
  }
}

std::string format_delta(double points) {
  const double r = std::round(points * 10.0) / 10.0;
  return fmt::format("{}{:.1f}%", r < 0.0 ? "-" : "+", std::abs(r));
}

std::string se_checksum(const nn::ParamStore& params) {
  return hex64(nn::checksum(params, {"se."}, {"se.adapter."}));
}

std::vector<DeltaRow> delta_rows(const std::vector<CellResult>& cells) {
  std::map<std::string, double> sr;
  for (const auto& c : cells) sr[c.cell.name] = c.report.average;
  std::vector<DeltaRow> rows;
  for (const auto& c : cells) {
    if (c.cell.delta_ref.empty()) continue;
    auto it = sr.find(c.cell.delta_ref);
    if (it == sr.end()) throw OrchestrationError("cell '" + c.cell.name + "': delta reference '" + c.cell.delta_ref + "' missing");
    DeltaRow d;
    d.cell = c.cell.name;
    d.ref = c.cell.delta_ref;
    d.delta = 100.0 * (c.report.average - it->second);
    d.formatted = format_delta(d.delta);
    d.reference_delta = c.cell.reference_delta;
    rows.push_back(d);
  }
  return rows;
}

GridResult run_ablation_grid(GridKind g, const GridInputs& in) {
  const std::vector<GridCell> cells = grid_cells(g, in.architecture);
  check_prerequisites(g, cells, in);
  const data::Dataset& ds = *in.dataset;
  const std::string se_fp = in.se_weights != nullptr ? se_checksum(*in.se_weights) : std::string();

  GridResult out;
  out.kind = g;
  std::map<std::string, std::size_t> done;
  for (const GridCell& c : cells) {
    CellResult r;
    r.cell = c;
    train::TrainConfig tc = c.source == CellSource::kScratch ? in.scratch : in.finetune;
    tc.phase = c.source == CellSource::kScratch ? train::Phase::kPretrain : train::Phase::kFinetune;
    tc = train::resolved(tc);
    r.fingerprint = fingerprint({{"grid", grid_name(g)},
                                 {"cell", c.name},
                                 {"source", source_name(c.source)},
                                 {"policy", policy::to_json(c.config)},
                                 {"train", c.source == CellSource::kReuse ? nlohmann::json(nullptr) : train::to_json(tc)},
                                 {"eval", to_json(in.eval)},
                                 {"base", in.base_fingerprint},
                                 {"se", se_fp}});
    log::info("grid {} cell '{}' ({})", grid_name(g), c.name, source_name(c.source));
    if (c.source == CellSource::kReuse) {
      r.bundle = out.cells.at(done.at(c.reuse_of)).bundle;
      r.bundle.config = c.config;
    } else {
      const nn::ParamStore* init = c.source == CellSource::kFinetune ? in.base_params : nullptr;
      const nn::ParamStore* se = c.config.uses_se() ? in.se_weights : nullptr;
      r.bundle = train::train_policy(c.config, tc, ds, init, se).bundle;
    }
    r.bundle.fingerprint = r.fingerprint;
    if (c.config.uses_se()) {
      r.se_checksum_supplied = se_fp;
      r.se_checksum_final = se_checksum(r.bundle.params);
    }
    r.report = evaluate(r.bundle, in.eval);
    r.report.config["cell"] = c.name;
    r.report.config["grid"] = grid_name(g);
    done[c.name] = out.cells.size();
    out.cells.push_back(std::move(r));
    if (in.on_cell) in.on_cell(out.cells.back());
  }
  out.deltas = delta_rows(out.cells);
  return out;
}

nlohmann::json to_json(const GridResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"name", c.cell.name},
                     {"source", source_name(c.cell.source)},
                     {"fingerprint", c.fingerprint},
                     {"average", c.report.average},
                     {"se_checksum_supplied", c.se_checksum_supplied},
                     {"se_checksum_final", c.se_checksum_final}});
  nlohmann::json deltas = nlohmann::json::array();
  for (const auto& d : r.deltas)
    deltas.push_back({{"cell", d.cell},
                      {"ref", d.ref},
                      {"delta", d.delta},
                      {"formatted", d.formatted},
                      {"reference", d.reference_delta ? nlohmann::json(format_delta(*d.reference_delta))
                                                      : nlohmann::json(nullptr)}});
  return {{"grid", grid_name(r.kind)}, {"cells", cells}, {"deltas", deltas}};
}

std::string grid_markdown(const nlohmann::json& grid) {
  std::map<std::string, nlohmann::json> delta_of;
  for (const auto& d : grid.at("deltas")) delta_of[d.at("cell").get<std::string>()] = d;
  std::string md = fmt::format("### {}\n\n| cell | SR | delta | reference delta |\n|---|---|---|---|\n",
                               grid.at("grid").get<std::string>());
  for (const auto& c : grid.at("cells")) {
    const std::string name = c.at("name").get<std::string>();
    std::string delta = "-", ref = "-";
    if (auto it = delta_of.find(name); it != delta_of.end()) {
      delta = it->second.at("formatted").get<std::string>() + " vs " + it->second.at("ref").get<std::string>();
      if (!it->second.at("reference").is_null()) ref = it->second.at("reference").get<std::string>();
    }
    md += fmt::format("| {} | {:.1f}% | {} | {} |\n", name, 100.0 * c.at("average").get<double>(), delta, ref);
  }
  return md;
}

}  // namespace anchorlab::eval
