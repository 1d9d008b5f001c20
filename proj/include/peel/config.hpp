#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace peel {

enum class SplitMode { kPerUser, kGlobal };

struct PipelineConfig {
  // [model]
  std::size_t block_dim = 8;          // d
  std::size_t blocks_per_item = 16;   // N
  std::size_t user_groups = 15;       // G_u#
  std::size_t item_groups = 20;       // G_v#
  double lambda = 1e-4;               // diversity regularizer coefficient
  double weight_decay = 1e-5;         // L2 on embedding tables
  double epsilon = 1e-5;              // normalization constant
  std::size_t bytes_per_parameter = 4;
  std::uint64_t seed = 42;

  // [data]
  std::size_t min_interactions = 10;
  std::array<double, 3> split_ratios = {0.7, 0.1, 0.2};
  SplitMode split_mode = SplitMode::kPerUser;

  // [pretrain]
  std::size_t propagation_layers = 2;  // L1
  bool final_layer_only = true;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_epochs = 50;
  std::size_t pretrain_batch = 1024;
  std::size_t pretrain_patience = 5;
  std::size_t eval_k = 50;
  double init_std = 0.1;

  // [cluster]
  std::size_t kmeans_restarts = 10;
  std::size_t kmeans_max_iters = 100;
  double kmeans_tol = 1e-6;

  // [finetune]
  std::vector<std::size_t> scorer_hidden = {64};     // L2 widths
  std::vector<std::size_t> controller_hidden = {32}; // L3 widths
  double finetune_lr = 1e-3;
  double controller_lr = 1e-3;
  double lookahead_lr = -1.0;  // xi; negative means "same as finetune_lr"
  std::size_t finetune_epochs = 20;
  std::size_t finetune_batch = 256;
  std::size_t finetune_patience = 5;
  double norm_momentum = 0.9;
  bool use_controller = true;

  // [run]
  std::size_t threads = 1;

  std::size_t full_dim() const { return block_dim * blocks_per_item; }
  double xi() const { return lookahead_lr < 0.0 ? finetune_lr : lookahead_lr; }

  // Throws Error(kConfig) on any violated constraint.
  void Validate() const;
};

// Line-based `key = value` text with `[section]` headers. Unknown sections or
// keys are errors. Keys not present keep their defaults.
PipelineConfig ParseConfig(const std::string& text, PipelineConfig base = {});
PipelineConfig LoadConfig(const std::string& path);
// Canonical text form: every key, fixed order. ParseConfig(FormatConfig(c)) == c.
std::string FormatConfig(const PipelineConfig& config);
void SetConfigValue(PipelineConfig& config, const std::string& section, const std::string& key,
                    const std::string& value);

// Value parsers shared by other text formats; failures throw Error(kConfig)
// naming `key`. Lists are comma-separated; "none" or empty is an empty list.
std::string TrimText(const std::string& text);
std::size_t ParseCountValue(const std::string& key, const std::string& value);
double ParseRealValue(const std::string& key, const std::string& value);
bool ParseBoolValue(const std::string& key, const std::string& value);
std::vector<std::size_t> ParseCountList(const std::string& key, const std::string& value);
std::vector<double> ParseRealList(const std::string& key, const std::string& value);

}  // namespace peel
