#include "peel/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "peel/binary_io.hpp"
#include "peel/deploy.hpp"
#include "peel/device.hpp"
#include "peel/hash.hpp"
#include "peel/log.hpp"
#include "peel/optim.hpp"
#include "peel/rng.hpp"

namespace peel {
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr Stage kStages[] = {Stage::kIngest, Stage::kPretrain, Stage::kCluster, Stage::kFinetune,
                             Stage::kEvaluate};

Stage ParseStage(const std::string& name) {
  for (Stage s : kStages) {
    if (StageName(s) == name) return s;
  }
  Fail(ErrorKind::kConfig, "unknown stage '" + name + "'");
}

std::string Num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

// Lines of one `[section]` of the canonical config text.
std::string SectionText(const std::string& canonical, const std::string& section) {
  std::istringstream in(canonical);
  std::string line, out;
  bool inside = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '[') {
      inside = line == "[" + section + "]";
      continue;
    }
    if (inside && !line.empty()) out += line + "\n";
  }
  return out;
}

std::string WithoutKey(const std::string& lines, const std::string& key) {
  std::istringstream in(lines);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind(key + " =", 0) != 0) out += line + "\n";
  }
  return out;
}

struct StageCache {
  fs::path dir;
  std::string key;
};

StageCache CacheFor(const fs::path& root, Stage stage, const std::string& key) {
  return {root / "cache" / (StageName(stage) + "-" + key.substr(0, 16)), key};
}

bool CacheValid(const StageCache& cache) {
  const fs::path meta = cache.dir / "stage.json";
  if (!fs::exists(meta)) return false;
  try {
    const Json j = Json::parse(ReadFileText(meta.string()));
    if (j.at("key").get<std::string>() != cache.key) return false;
    for (const auto& a : j.at("artifacts")) {
      const fs::path file = cache.dir / a.at("file").get<std::string>();
      if (!fs::exists(file) || FileGitBlobSha1(file.string()) != a.at("sha1").get<std::string>()) {
        return false;
      }
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void PrepareCacheDir(const StageCache& cache) {
  fs::remove_all(cache.dir);
  fs::create_directories(cache.dir);
}

void SealCache(const StageCache& cache, const std::vector<std::string>& files) {
  Json j;
  j["key"] = cache.key;
  j["artifacts"] = Json::array();
  for (const auto& f : files) {
    j["artifacts"].push_back({{"file", f}, {"sha1", FileGitBlobSha1((cache.dir / f).string())}});
  }
  WriteFileText((cache.dir / "stage.json").string(), j.dump(2) + "\n");
}

std::vector<std::string> ListArtifacts(const StageCache& cache) {
  const Json j = Json::parse(ReadFileText((cache.dir / "stage.json").string()));
  std::vector<std::string> out;
  for (const auto& a : j.at("artifacts")) out.push_back(a.at("file").get<std::string>());
  return out;
}

std::string GroupFile(std::size_t g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "group_%03zu.pegm", g);
  return buf;
}

std::vector<SweepPoint> SweepPoints(const ExperimentSpec& spec) {
  auto or_default = [](const std::vector<std::size_t>& grid, std::size_t value) {
    return grid.empty() ? std::vector<std::size_t>{value} : grid;
  };
  std::vector<SweepPoint> out;
  for (auto gu : or_default(spec.user_group_grid, spec.config.user_groups)) {
    for (auto gv : or_default(spec.item_group_grid, spec.config.item_groups)) {
      for (auto n : or_default(spec.block_grid, spec.config.blocks_per_item)) {
        out.push_back({gu, gv, n});
      }
    }
  }
  return out;
}

}  // namespace

std::string StageName(Stage stage) {
  switch (stage) {
    case Stage::kIngest: return "ingest";
    case Stage::kPretrain: return "pretrain";
    case Stage::kCluster: return "cluster";
    case Stage::kFinetune: return "finetune";
    case Stage::kEvaluate: return "evaluate";
  }
  return "unknown";
}

ExperimentSpec ParseExperimentSpec(const std::string& text) {
  std::istringstream in(text);
  std::string line, section, pipeline_text;
  ExperimentSpec spec;
  while (std::getline(in, line)) {
    const std::string trimmed = TrimText(line);
    if (!trimmed.empty() && trimmed.front() == '[' && trimmed.back() == ']') {
      section = TrimText(trimmed.substr(1, trimmed.size() - 2));
      if (section != "experiment") pipeline_text += line + "\n";
      continue;
    }
    if (section != "experiment") {
      pipeline_text += line + "\n";
      continue;
    }
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto eq = trimmed.find('=');
    Require(eq != std::string::npos, ErrorKind::kConfig, "expected key = value, got '" + trimmed + "'");
    const std::string key = TrimText(trimmed.substr(0, eq));
    const std::string value = TrimText(trimmed.substr(eq + 1));
    const std::string name = "experiment." + key;
    if (key == "data") {
      spec.data_path = value;
    } else if (key == "output") {
      spec.output_dir = value;
    } else if (key == "stages") {
      std::istringstream parts(value);
      std::string part;
      Stage last = Stage::kIngest;
      while (std::getline(parts, part, ',')) last = std::max(last, ParseStage(TrimText(part)));
      spec.last_stage = last;
    } else if (key == "diversity_regularizer") {
      spec.ablation.diversity_regularizer = ParseBoolValue(name, value);
    } else if (key == "user_clustering") {
      spec.ablation.user_clustering = ParseBoolValue(name, value);
    } else if (key == "popularity_segmentation") {
      spec.ablation.popularity_segmentation = ParseBoolValue(name, value);
    } else if (key == "importance_weights") {
      spec.ablation.importance_weights = ParseBoolValue(name, value);
    } else if (key == "final_layer_only") {
      spec.ablation.final_layer_only = ParseBoolValue(name, value);
    } else if (key == "user_groups_grid") {
      spec.user_group_grid = ParseCountList(name, value);
    } else if (key == "item_groups_grid") {
      spec.item_group_grid = ParseCountList(name, value);
    } else if (key == "blocks_grid") {
      spec.block_grid = ParseCountList(name, value);
    } else if (key == "budgets_mb") {
      spec.budgets_mb = ParseRealList(name, value);
    } else if (key == "budget_fractions") {
      spec.budget_fractions = ParseRealList(name, value);
    } else {
      Fail(ErrorKind::kConfig, "unknown key '" + name + "'");
    }
  }
  spec.config = ParseConfig(pipeline_text);
  return spec;
}

ExperimentSpec LoadExperimentSpec(const std::string& path) {
  return ParseExperimentSpec(ReadFileText(path));
}

PipelineConfig EffectiveConfig(const ExperimentSpec& spec, const SweepPoint& point) {
  PipelineConfig c = spec.config;
  c.user_groups = point.user_groups;
  c.item_groups = point.item_groups;
  c.blocks_per_item = point.blocks_per_item;
  if (!spec.ablation.user_clustering) c.user_groups = 1;
  if (!spec.ablation.diversity_regularizer) c.lambda = 0.0;
  c.final_layer_only = spec.ablation.final_layer_only;
  c.Validate();
  return c;
}

InteractionLog IngestStage(const std::string& data_path, const PipelineConfig& config) {
  Require(fs::exists(data_path), ErrorKind::kNotFound, "input file not found: " + data_path);
  InteractionLog log = LoadAndFilter(data_path, config.min_interactions);
  return SplitRoles(std::move(log), config.split_ratios, config.seed, config.split_mode);
}

GroupingPlan ItemGroupingStage(const InteractionLog& log, const PipelineConfig& config,
                               bool popularity_segmentation) {
  return popularity_segmentation
             ? SegmentItemsByPopularity(log, config.item_groups)
             : SegmentItemsRandomly(log, config.item_groups, Rng(config.seed).Split(300).seed());
}

ClusterState ClusterStage(const UserEmbeddingTable& users, const PipelineConfig& config) {
  KMeansOptions options;
  options.max_iters = config.kmeans_max_iters;
  options.tol = config.kmeans_tol;
  options.restarts = config.kmeans_restarts;
  options.threads = config.threads;
  return KMeansUsers(users.rows, config.user_groups, Rng(config.seed).Split(400).seed(), options);
}

std::uint64_t FractionBudgetBytes(double fraction, std::size_t num_items,
                                  const PipelineConfig& config) {
  Require(fraction > 0.0 && fraction <= 1.0, ErrorKind::kConfig,
          "budget fractions must be in (0, 1]");
  BudgetLayout layout;
  layout.blocks_per_item = config.blocks_per_item;
  layout.block_dim = config.block_dim;
  layout.bytes_per_parameter = config.bytes_per_parameter;
  layout.user_params = config.full_dim();
  layout.group_sizes = EqualSegmentSizes(num_items, config.item_groups);
  const auto params = static_cast<std::uint64_t>(fraction * static_cast<double>(layout.FullParams()));
  const std::uint64_t bytes = params * config.bytes_per_parameter;
  if (params < layout.MinimalParams()) {
    Fail(ErrorKind::kBudgetInfeasible,
         "budget fraction " + Num(fraction) + " is below the minimal feasible " +
             std::to_string(layout.MinimalBytes()) + " bytes");
  }
  return bytes;
}

std::vector<BudgetMetrics> EvaluateGroupModels(const std::vector<GroupModel>& models,
                                               const InteractionLog& log,
                                               std::vector<std::uint64_t> budgets, std::size_t k,
                                               std::size_t bytes_per_parameter,
                                               bool importance_weights, std::uint64_t seed) {
  Require(!budgets.empty(), ErrorKind::kConfig, "no budgets to evaluate");
  std::sort(budgets.begin(), budgets.end(), std::greater<>());
  budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
  const auto train = log.ItemsByUser(Role::kTrain);
  const auto validation = log.ItemsByUser(Role::kValidation);
  const auto test = log.ItemsByUser(Role::kTest);

  std::vector<BudgetMetrics> out(budgets.size());
  for (std::size_t b = 0; b < budgets.size(); ++b) out[b].budget_bytes = budgets[b];
  const std::uint64_t steps_before = OptimizerStepCount();
  for (const auto& model : models) {
    std::vector<float> random_alpha;
    if (!importance_weights) {
      random_alpha = RandomSelectionAlpha(model.alpha_size(),
                                          Rng(seed).Split(7000 + model.group_index).seed());
    }
    for (UserId u : model.context.users) {
      if (test[u].empty()) continue;
      std::vector<ItemId> seen = train[u];
      seen.insert(seen.end(), validation[u].begin(), validation[u].end());
      PeePackage pkg = BuildPackage(model, u, budgets.front(), bytes_per_parameter, random_alpha);
      for (std::size_t b = 0; b < budgets.size(); ++b) {
        const auto start = std::chrono::steady_clock::now();
        ShrinkPackage(pkg, budgets[b]);
        out[b].shrink_micros +=
            std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
        const RankingResult ranking = RankItems(pkg);
        out[b].rank_micros += ranking.latency_micros;
        const auto metrics = EvaluateRanking(ranking, seen, test[u], log.num_items, k);
        out[b].recall += metrics->recall;
        out[b].ndcg += metrics->ndcg;
        out[b].mean_params += static_cast<double>(pkg.ParamCount());
        ++out[b].users;
      }
    }
  }
  Require(OptimizerStepCount() == steps_before, ErrorKind::kNumerical,
          "optimizer ran during evaluation");
  for (auto& m : out) {
    Require(m.users > 0, ErrorKind::kEmptyDataset, "no users with test interactions");
    const double n = static_cast<double>(m.users);
    m.recall /= n;
    m.ndcg /= n;
    m.mean_params /= n;
    m.shrink_micros /= n;
    m.rank_micros /= n;
  }
  return out;
}

ExperimentOutcome RunExperiment(const ExperimentSpec& spec) {
  Require(!spec.data_path.empty(), ErrorKind::kConfig, "experiment.data is required");
  Require(!spec.output_dir.empty(), ErrorKind::kConfig, "experiment.output is required");
  Require(fs::exists(spec.data_path), ErrorKind::kNotFound, "input file not found: " + spec.data_path);
  const fs::path root(spec.output_dir);
  fs::create_directories(root);
  const std::string data_hash = FileGitBlobSha1(spec.data_path);
  const std::uint64_t steps_before = OptimizerStepCount();

  ExperimentOutcome outcome;
  Json manifest;
  manifest["config"] = FormatConfig(spec.config);
  manifest["seed"] = spec.config.seed;
  manifest["ablation"] = {{"diversity_regularizer", spec.ablation.diversity_regularizer},
                          {"user_clustering", spec.ablation.user_clustering},
                          {"popularity_segmentation", spec.ablation.popularity_segmentation},
                          {"importance_weights", spec.ablation.importance_weights},
                          {"final_layer_only", spec.ablation.final_layer_only}};
  manifest["inputs"] = Json::array({{{"path", fs::absolute(spec.data_path).string()}, {"sha1", data_hash}}});
  manifest["points"] = Json::array();
  Json artifacts = Json::array();
  auto record = [&](const StageCache& cache) {
    for (const auto& f : ListArtifacts(cache)) {
      const fs::path file = cache.dir / f;
      artifacts.push_back({{"path", fs::relative(file, root).generic_string()},
                           {"sha1", FileGitBlobSha1(file.string())}});
    }
  };

  std::ostringstream metrics_csv, timing_csv;
  metrics_csv << "userGroups,itemGroups,blocksPerItem,budgetMB,recallAtK,ndcgAtK,paramCount,users\n";
  timing_csv << "userGroups,itemGroups,blocksPerItem,budgetMB,shrinkMicros,rankMicros\n";

  for (const SweepPoint& point : SweepPoints(spec)) {
    const PipelineConfig config = EffectiveConfig(spec, point);
    const std::string canonical = FormatConfig(config);
    Json point_json = {{"user_groups", config.user_groups},
                       {"item_groups", config.item_groups},
                       {"blocks_per_item", config.blocks_per_item}};
    auto run_stage = [&](Stage stage, const std::string& key, auto&& compute) {
      StageCache cache = CacheFor(root, stage, key);
      point_json["stages"][StageName(stage)] = key;
      if (CacheValid(cache)) {
        ++outcome.stages_reused;
        LogInfo("reusing cached " + StageName(stage) + " stage");
      } else {
        PrepareCacheDir(cache);
        LogInfo("running " + StageName(stage) + " stage");
        try {
          SealCache(cache, compute(cache.dir));
        } catch (const Error& e) {
          throw Error(e.kind(), "stage " + StageName(stage) + " failed: " + e.what());
        }
        ++outcome.stages_computed;
      }
      record(cache);
      return cache;
    };

    // ingest
    const std::string ingest_key = GitBlobSha1("ingest\n" + data_hash + "\n" +
                                               SectionText(canonical, "data") +
                                               "seed = " + std::to_string(config.seed) + "\n");
    const StageCache ingest = run_stage(Stage::kIngest, ingest_key, [&](const fs::path& dir) {
      SaveLogSnapshot(IngestStage(spec.data_path, config), (dir / "log.plog").string());
      return std::vector<std::string>{"log.plog"};
    });
    const InteractionLog log = LoadLogSnapshot((ingest.dir / "log.plog").string());
    if (spec.last_stage == Stage::kIngest) {
      manifest["points"].push_back(point_json);
      continue;
    }

    // pretrain
    const std::string pretrain_key = GitBlobSha1(
        "pretrain\n" + ingest_key + "\n" + WithoutKey(SectionText(canonical, "model"), "user_groups") +
        SectionText(canonical, "pretrain") + "segmentation = " +
        (spec.ablation.popularity_segmentation ? "popularity" : "random") + "\n");
    const StageCache pretrain = run_stage(Stage::kPretrain, pretrain_key, [&](const fs::path& dir) {
      const GroupingPlan grouping = ItemGroupingStage(log, config, spec.ablation.popularity_segmentation);
      const PretrainResult result = RunPretrain(log, grouping, config);
      SaveCheckpoint((dir / "checkpoint.peel").string(), result.items, result.users);
      return std::vector<std::string>{"checkpoint.peel"};
    });
    const auto [items, users] = LoadCheckpoint((pretrain.dir / "checkpoint.peel").string());
    if (spec.last_stage == Stage::kPretrain) {
      manifest["points"].push_back(point_json);
      continue;
    }

    // cluster
    const std::string cluster_key =
        GitBlobSha1("cluster\n" + pretrain_key + "\nuser_groups = " +
                    std::to_string(config.user_groups) + "\n" + SectionText(canonical, "cluster"));
    const StageCache cluster = run_stage(Stage::kCluster, cluster_key, [&](const fs::path& dir) {
      const ClusterState state = ClusterStage(users, config);
      SaveAssignment((dir / "assignment.tsv").string(), state);
      SaveCentroids((dir / "centroids.pcen").string(), state);
      return std::vector<std::string>{"assignment.tsv", "centroids.pcen"};
    });
    const auto assignment = LoadAssignment((cluster.dir / "assignment.tsv").string(), log.num_users);
    std::vector<std::vector<UserId>> user_groups(config.user_groups);
    for (UserId u = 0; u < assignment.size(); ++u) user_groups.at(assignment[u]).push_back(u);
    if (spec.last_stage == Stage::kCluster) {
      manifest["points"].push_back(point_json);
      continue;
    }

    // finetune
    const std::string finetune_key =
        GitBlobSha1("finetune\n" + cluster_key + "\n" + SectionText(canonical, "finetune"));
    const StageCache finetune = run_stage(Stage::kFinetune, finetune_key, [&](const fs::path& dir) {
      const auto models = OptimizeAllGroups(log, items, users, user_groups, config);
      std::vector<std::string> files;
      for (const auto& m : models) {
        files.push_back(GroupFile(m.group_index));
        SaveGroupModel((dir / files.back()).string(), m);
      }
      return files;
    });
    if (spec.last_stage == Stage::kFinetune) {
      manifest["points"].push_back(point_json);
      continue;
    }

    // evaluate
    std::vector<GroupModel> models;
    for (const auto& f : ListArtifacts(finetune)) models.push_back(LoadGroupModel((finetune.dir / f).string()));
    std::vector<std::uint64_t> budgets;
    for (double mb : spec.budgets_mb) budgets.push_back(BudgetBytesFromMb(mb));
    for (double f : spec.budget_fractions) budgets.push_back(FractionBudgetBytes(f, log.num_items, config));
    if (budgets.empty()) budgets.push_back(FractionBudgetBytes(1.0, log.num_items, config));
    std::vector<BudgetMetrics> rows;
    try {
      rows = EvaluateGroupModels(models, log, budgets, config.eval_k, config.bytes_per_parameter,
                                 spec.ablation.importance_weights, config.seed);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string("stage evaluate failed: ") + e.what());
    }
    const std::string prefix = std::to_string(config.user_groups) + "," +
                               std::to_string(config.item_groups) + "," +
                               std::to_string(config.blocks_per_item) + ",";
    for (const auto& r : rows) {
      metrics_csv << prefix << Num(BudgetMbFromBytes(r.budget_bytes)) << ',' << Num(r.recall) << ','
                  << Num(r.ndcg) << ',' << Num(r.mean_params) << ',' << r.users << '\n';
      timing_csv << prefix << Num(BudgetMbFromBytes(r.budget_bytes)) << ',' << Num(r.shrink_micros)
                 << ',' << Num(r.rank_micros) << '\n';
    }
    outcome.results.emplace_back(point, rows);
    manifest["points"].push_back(point_json);
  }

  if (spec.last_stage == Stage::kEvaluate) {
    outcome.metrics_csv = (root / "metrics.csv").string();
    outcome.timing_csv = (root / "timing.csv").string();
    WriteFileText(outcome.metrics_csv, metrics_csv.str());
    WriteFileText(outcome.timing_csv, timing_csv.str());
    artifacts.push_back({{"path", "metrics.csv"}, {"sha1", FileGitBlobSha1(outcome.metrics_csv)}});
    // Wall-clock values differ run to run; hashing them would make the manifest unreproducible.
    manifest["volatile"] = Json::array({"timing.csv"});
  }
  manifest["artifacts"] = artifacts;
  outcome.manifest_path = (root / "manifest.json").string();
  WriteFileText(outcome.manifest_path, manifest.dump(2) + "\n");
  outcome.optimizer_steps = OptimizerStepCount() - steps_before;
  return outcome;
}

std::vector<std::string> VerifyManifest(const std::string& manifest_path) {
  std::vector<std::string> problems;
  const Json j = Json::parse(ReadFileText(manifest_path));
  const fs::path root = fs::path(manifest_path).parent_path();
  auto check = [&](const fs::path& file, const std::string& sha1) {
    if (!fs::exists(file)) {
      problems.push_back("missing " + file.string());
    } else if (FileGitBlobSha1(file.string()) != sha1) {
      problems.push_back("hash mismatch for " + file.string());
    }
  };
  for (const auto& a : j.at("artifacts")) check(root / a.at("path").get<std::string>(), a.at("sha1"));
  for (const auto& a : j.at("inputs")) check(a.at("path").get<std::string>(), a.at("sha1"));
  if (j.contains("volatile")) {
    for (const auto& p : j.at("volatile")) {
      if (!fs::exists(root / p.get<std::string>())) problems.push_back("missing " + p.get<std::string>());
    }
  }
  return problems;
}

}  // namespace peel
