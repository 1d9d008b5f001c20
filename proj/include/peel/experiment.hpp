#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "peel/clustering.hpp"
#include "peel/config.hpp"
#include "peel/finetune.hpp"
#include "peel/ingest.hpp"
#include "peel/pretrain.hpp"

namespace peel {

enum class Stage { kIngest = 0, kPretrain, kCluster, kFinetune, kEvaluate };
std::string StageName(Stage stage);

struct AblationFlags {
  bool diversity_regularizer = true;
  bool user_clustering = true;
  bool popularity_segmentation = true;
  bool importance_weights = true;
  bool final_layer_only = true;
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ExperimentSpec {
  PipelineConfig config;
  std::string data_path;
  std::string output_dir;
  Stage last_stage = Stage::kEvaluate;  // every earlier stage runs or is reused
  AblationFlags ablation;
  // Empty grids mean "the config value".
  std::vector<std::size_t> user_group_grid;
  std::vector<std::size_t> item_group_grid;
  std::vector<std::size_t> block_grid;
  // Budgets in MB and as fractions of the full (all blocks) package size.
  std::vector<double> budgets_mb;
  std::vector<double> budget_fractions;
};

// Pipeline config text plus an `[experiment]` section with keys data,
// output, stages, the five ablation switches, *_grid lists, budgets_mb and
// budget_fractions.
ExperimentSpec ParseExperimentSpec(const std::string& text);
ExperimentSpec LoadExperimentSpec(const std::string& path);

struct SweepPoint {
  std::size_t user_groups = 0;
  std::size_t item_groups = 0;
  std::size_t blocks_per_item = 0;
};

// Config actually used at a sweep point: grid values, then ablation
// overrides (no clustering -> one user group, no regularizer -> lambda 0,
// all-layer pooling when final_layer_only is off).
PipelineConfig EffectiveConfig(const ExperimentSpec& spec, const SweepPoint& point);

// Stage building blocks shared with the CLI.
InteractionLog IngestStage(const std::string& data_path, const PipelineConfig& config);
GroupingPlan ItemGroupingStage(const InteractionLog& log, const PipelineConfig& config,
                               bool popularity_segmentation);
ClusterState ClusterStage(const UserEmbeddingTable& users, const PipelineConfig& config);

struct BudgetMetrics {
  std::uint64_t budget_bytes = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  double mean_params = 0.0;
  std::size_t users = 0;  // users with test items
  double shrink_micros = 0.0;
  double rank_micros = 0.0;
};

// Builds each evaluated user's package at the largest budget, then shrinks
// it through the remaining budgets (descending) and averages the metrics.
// With importance weights disabled every group selects by seeded random
// weights instead of its learned alpha.
std::vector<BudgetMetrics> EvaluateGroupModels(const std::vector<GroupModel>& models,
                                               const InteractionLog& log,
                                               std::vector<std::uint64_t> budgets, std::size_t k,
                                               std::size_t bytes_per_parameter,
                                               bool importance_weights, std::uint64_t seed);

// Budget bytes for a fraction of the full package: floor(f * full params)
// parameters, at least the minimal feasible size.
std::uint64_t FractionBudgetBytes(double fraction, std::size_t num_items,
                                  const PipelineConfig& config);

struct ExperimentOutcome {
  std::string metrics_csv;   // deterministic metric table
  std::string timing_csv;    // wall-clock columns, not reproducible
  std::string manifest_path;
  std::size_t stages_computed = 0;
  std::size_t stages_reused = 0;
  std::uint64_t optimizer_steps = 0;  // steps taken during this run
  std::vector<std::pair<SweepPoint, std::vector<BudgetMetrics>>> results;
};

// Runs every sweep point through the stages, caching stage outputs under
// <output>/cache keyed by a hash of the inputs and the config that affects
// them, and writes metrics.csv, timing.csv and manifest.json to <output>.
ExperimentOutcome RunExperiment(const ExperimentSpec& spec);

// Checks that every artifact listed in a manifest exists with the recorded
// content hash. Returns the problems found (empty when complete).
std::vector<std::string> VerifyManifest(const std::string& manifest_path);

}  // namespace peel
