#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "anchorlab/data/batch.hpp"
#include "anchorlab/eval/evaluator.hpp"
#include "anchorlab/train/trainer.hpp"

namespace anchorlab::eval {

enum class GridKind { kTable3, kTable4Anchor, kTable4Injection, kTable6 };

std::string grid_name(GridKind g);
// Throws UsageError for unknown names.
GridKind grid_from_name(const std::string& name);

enum class CellSource {
  kFinetune,  // continue from the context-free base parameters
  kReuse,     // evaluate another cell's parameters under a new config
  kScratch,   // train from a fresh initialization
};

struct GridCell {
  std::string name;
  policy::PolicyConfig config;
  CellSource source = CellSource::kFinetune;
  std::string reuse_of;       // kReuse only
  std::string delta_ref;      // empty for reference rows
  std::optional<double> reference_delta;  // published delta in points, annotation only
};

// Cells in row order. `base` supplies the architecture dimensions.
std::vector<GridCell> grid_cells(GridKind g, const policy::PolicyConfig& base);

struct CellResult {
  GridCell cell;
  std::string fingerprint;
  policy::PolicyBundle bundle;
  EvalReport report;
  // se.* checksums (adapter excluded) of the supplied encoder and of the
  // cell's final parameters; empty for cells without an encoder.
  std::string se_checksum_supplied;
  std::string se_checksum_final;
};

struct GridInputs {
  policy::PolicyConfig architecture;           // dimensions shared by every cell
  const data::Dataset* dataset = nullptr;
  const nn::ParamStore* base_params = nullptr;  // context=none pretrain
  const nn::ParamStore* se_weights = nullptr;   // pretext-trained encoder
  train::TrainConfig finetune;                   // phase forced to finetune
  train::TrainConfig scratch;                    // phase forced to pretrain
  EvalOptions eval;
  std::string base_fingerprint;
  std::function<void(const CellResult&)> on_cell;
};

struct DeltaRow {
  std::string cell;
  std::string ref;
  double delta = 0.0;  // percentage points
  std::string formatted;
  std::optional<double> reference_delta;
};

struct GridResult {
  GridKind kind = GridKind::kTable3;
  std::vector<CellResult> cells;
  std::vector<DeltaRow> deltas;
};

// Missing prerequisites raise OrchestrationError naming the cell.
GridResult run_ablation_grid(GridKind g, const GridInputs& in);

// Checks prerequisites without training anything.
void check_prerequisites(GridKind g, const std::vector<GridCell>& cells, const GridInputs& in);

// Points with an explicit sign and one decimal: "+9.4%", "-6.2%".
std::string format_delta(double points);

// FNV-1a over se.* tensors excluding the adapter, in name order.
std::string se_checksum(const nn::ParamStore& params);

std::vector<DeltaRow> delta_rows(const std::vector<CellResult>& cells);
nlohmann::json to_json(const GridResult& r);
// Markdown table (cell, SR, delta, reference delta) from to_json(GridResult).
std::string grid_markdown(const nlohmann::json& grid);

}  // namespace anchorlab::eval
