#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unadapt/config.hpp"
#include "unadapt/metrics.hpp"

namespace unadapt {

enum class Stage { kPrepare = 0, kStage1 = 1, kStage2 = 2, kEval = 3 };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct PipelineOptions {
  Stage until = Stage::kEval;
  bool force = false;  // recompute every stage
};

struct PipelineResult {
  std::filesystem::path run_dir;
  std::string config_hash;
  std::vector<std::string> executed;
  std::vector<std::string> skipped;
};

// Runs prepare -> stage1 -> stage2 -> eval inside cfg.output_dir.
//
// Run directory:
//   config.ini               canonical config snapshot
//   .lock                    held (flock) for the duration of the run
//   FAILED                   present after a failed stage, removed on success
//   stages/<stage>.done      input hash of the completed stage
//   splits.csv, prepare.json
//   adapter_stage1.bin, stage1.json
//   adapter.bin, prompt.bin, stage2.json
//   eval.json, eval.txt, eval.tsv, alignment.tsv, plot_gain.tsv, plot_projection.tsv
//
// A stage is skipped when its marker matches its input hash; the hash of a
// stage chains the hash of the one before it. Skipped artifacts whose
// config hash differs from the current one are re-stamped in place.
PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opts = {});

struct AblationCell {
  LossKind kind = LossKind::kCE;
  bool entropy = false;
  bool is_default = false;
  std::string name;  // e.g. "CE+Ent"
  std::string status = "ok";  // "ok" or "failed: <message>"
  double accuracy = 0.0;
  double final_entropy = 0.0;
  std::vector<double> strong_loss_trace;
};

// The six loss cells in the published row order: LSCE, NCS, CE, then the
// same three with the entropy term. (CE, entropy) is the default.
std::vector<AblationCell> ablation_grid();

struct AblationResult {
  std::vector<AblationCell> cells;
  double stage1_accuracy = 0.0;  // Stage-1 adapter on test visual embeddings
  std::filesystem::path table_path;
};

// Shares one prepare + Stage-1 run, then trains and evaluates each cell in
// out_dir/cells/<name>. A failing cell is recorded and the rest continue.
AblationResult run_ablation(const RunConfig& base, const std::filesystem::path& out_dir,
                            std::vector<AblationCell> grid = ablation_grid());

struct LlmComparisonRow {
  std::string generator;
  std::filesystem::path corpus;
  double text_accuracy = 0.0;  // Stage-1 holdout accuracy
  double stage1_visual_accuracy = 0.0;
  double end_accuracy = 0.0;   // after Stage-2
};

struct LlmComparison {
  std::vector<LlmComparisonRow> rows;
  std::filesystem::path table_path;
  std::filesystem::path radar_path;
};

// One pipeline run per corpus. All corpora must share one catalog
// (ValidationError otherwise).
LlmComparison compare_llms(const RunConfig& base, const std::vector<std::filesystem::path>& corpora,
                           const std::filesystem::path& out_dir);

}  // namespace unadapt
