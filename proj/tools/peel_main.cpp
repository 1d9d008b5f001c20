// peel: command-line front end for the pipeline stages and experiments.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "peel/binary_io.hpp"
#include "peel/clustering.hpp"
#include "peel/config.hpp"
#include "peel/deploy.hpp"
#include "peel/device.hpp"
#include "peel/error.hpp"
#include "peel/experiment.hpp"
#include "peel/finetune.hpp"
#include "peel/ingest.hpp"
#include "peel/log.hpp"
#include "peel/pretrain.hpp"
#include "peel/report.hpp"
#include "peel/synthetic.hpp"

namespace fs = std::filesystem;
using namespace peel;

namespace {

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string config_path;
  bool verbose = false;
};

PipelineConfig ResolveConfig(const GlobalOptions& g, PipelineConfig base = {}) {
  PipelineConfig c = g.config_path.empty() ? base : ParseConfig(ReadFileText(g.config_path), base);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  c.Validate();
  return c;
}

std::string Fixed(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string GroupFileName(std::size_t g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "group_%03zu.pegm", g);
  return buf;
}

std::vector<std::uint64_t> ParseBudgetList(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (double mb : ParseRealList("--budgets", text)) out.push_back(BudgetBytesFromMb(mb));
  Require(!out.empty(), ErrorKind::kConfig, "--budgets is empty");
  return out;
}

GroupModel FindGroupForUser(const std::string& dir, UserId user) {
  Require(fs::is_directory(dir), ErrorKind::kNotFound, "group model directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".pegm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Require(!files.empty(), ErrorKind::kNotFound, "no group models in " + dir);
  for (const auto& f : files) {
    GroupModel m = LoadGroupModel(f.string());
    if (user < m.context.local_user.size() && m.context.local_user[user] >= 0) return m;
  }
  Fail(ErrorKind::kNotFound, "user " + std::to_string(user) + " is not in any group model in " + dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peel: personalized elastic embedding pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the verb
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Override the config seed")->expected(1);
  app.add_option("--threads", g.threads, "Worker threads")->expected(1);
  app.add_option("--config", g.config_path, "Pipeline config file")->check(CLI::ExistingFile);
  app.add_flag("-v,--verbose", g.verbose, "Progress logging to stderr");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Filter and split an interaction file");
  std::string ingest_data, ingest_out;
  std::optional<std::uint64_t> planted_seed;
  ingest->add_option("--data", ingest_data, "user<TAB>item[<TAB>timestamp] file");
  ingest->add_option("--planted", planted_seed, "Generate the planted 4-community synthetic with this seed");
  ingest->add_option("--out", ingest_out, "Output directory")->required();

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain block embeddings");
  std::string pre_data, pre_out;
  bool random_segmentation = false;
  pretrain->add_option("--data", pre_data, "Directory written by ingest")->required();
  pretrain->add_option("--out", pre_out, "Output directory")->required();
  pretrain->add_flag("--random-segmentation", random_segmentation, "Random item groups");

  // cluster
  auto* cluster = app.add_subcommand("cluster", "K-means over pretrained user embeddings");
  std::string cl_ckpt, cl_out;
  cluster->add_option("--checkpoint", cl_ckpt, "Pretrain checkpoint")->required();
  cluster->add_option("--out", cl_out, "Output directory")->required();

  // finetune
  auto* finetune = app.add_subcommand("finetune", "Fine-tune one model per user group");
  std::string ft_data, ft_ckpt, ft_assign, ft_out;
  std::vector<std::uint32_t> ft_groups;
  finetune->add_option("--data", ft_data, "Directory written by ingest")->required();
  finetune->add_option("--checkpoint", ft_ckpt, "Pretrain checkpoint")->required();
  finetune->add_option("--assignment", ft_assign, "assignment.tsv from cluster")->required();
  finetune->add_option("--out", ft_out, "Output directory")->required();
  finetune->add_option("--group", ft_groups, "Only these group indices");

  // deploy
  auto* deploy = app.add_subcommand("deploy", "Build a user's package under a memory budget");
  std::string dp_dir, dp_out;
  UserId dp_user = 0;
  double dp_budget = 0.0;
  bool dp_random = false;
  deploy->add_option("--group-model", dp_dir, "Directory of group models")->required();
  deploy->add_option("--user", dp_user, "Dense user id")->required();
  deploy->add_option("--budget-mb", dp_budget, "Budget in MB (1e6 bytes)")->required();
  deploy->add_option("--out", dp_out, "Package file")->required();
  deploy->add_flag("--random-weights", dp_random, "Select blocks by random weights");

  // shrink
  auto* shrink = app.add_subcommand("shrink", "Shrink a package to a smaller budget in place");
  std::string sh_pkg, sh_out;
  double sh_budget = 0.0;
  shrink->add_option("--package", sh_pkg, "Package file")->required();
  shrink->add_option("--budget-mb", sh_budget, "New budget in MB")->required();
  shrink->add_option("--out", sh_out, "Write here instead of in place");

  // rank
  auto* rank = app.add_subcommand("rank", "Rank all items for a package's user");
  std::string rk_pkg, rk_data;
  std::size_t rk_k = 50;
  rank->add_option("--package", rk_pkg, "Package file")->required();
  rank->add_option("--data", rk_data, "Directory written by ingest")->required();
  rank->add_option("--k", rk_k, "Cutoff");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Shrink through a budget timeline and evaluate");
  std::string sm_pkg, sm_data, sm_budgets, sm_report;
  std::size_t sm_k = 50;
  simulate->add_option("--package", sm_pkg, "Package file")->required();
  simulate->add_option("--data", sm_data, "Directory written by ingest")->required();
  simulate->add_option("--budgets", sm_budgets, "Descending budgets in MB, comma-separated")->required();
  simulate->add_option("--k", sm_k, "Cutoff");
  simulate->add_option("--report", sm_report, "CSV report path");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Run a staged, cached experiment");
  std::string ex_spec, ex_data, ex_out;
  experiment->add_option("--spec", ex_spec, "Experiment file ([experiment] plus pipeline sections)")
      ->required();
  experiment->add_option("--data", ex_data, "Override experiment.data");
  experiment->add_option("--out", ex_out, "Override experiment.output");

  // compare
  auto* compare = app.add_subcommand("compare", "Per-metric deltas between two reports");
  std::string cmp_a, cmp_b;
  compare->add_option("a", cmp_a, "Baseline CSV")->required();
  compare->add_option("b", cmp_b, "Candidate CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
  SetLogLevel(g.verbose ? LogLevel::kInfo : LogLevel::kWarning);

  try {
    if (*ingest) {
      PipelineConfig c = ResolveConfig(g);
      fs::create_directories(ingest_out);
      std::string source = ingest_data;
      if (planted_seed) {
        PlantedSpec ps;
        ps.seed = *planted_seed;
        source = (fs::path(ingest_out) / "interactions.tsv").string();
        WriteFileText(source, MakePlantedInteractions(ps).text);
      }
      Require(!source.empty(), ErrorKind::kConfig, "ingest needs --data or --planted");
      const InteractionLog log = IngestStage(source, c);
      SaveLogSnapshot(log, (fs::path(ingest_out) / "log.plog").string());
      const std::string stats = LogStatsSummary(log);
      WriteFileText((fs::path(ingest_out) / "stats.txt").string(), stats);
      std::cout << stats;
    } else if (*pretrain) {
      PipelineConfig c = ResolveConfig(g);
      const InteractionLog log = LoadLogSnapshot((fs::path(pre_data) / "log.plog").string());
      const GroupingPlan grouping = ItemGroupingStage(log, c, !random_segmentation);
      const PretrainResult r = RunPretrain(log, grouping, c);
      fs::create_directories(pre_out);
      SaveCheckpoint((fs::path(pre_out) / "checkpoint.peel").string(), r.items, r.users);
      std::cout << "epochs=" << r.epochs_run << "\n";
      if (!r.validation_recall.empty()) {
        std::cout << "validation_recall=" << Fixed(r.validation_recall.back()) << "\n";
      }
    } else if (*cluster) {
      PipelineConfig c = ResolveConfig(g);
      const auto [items, users] = LoadCheckpoint(cl_ckpt);
      const ClusterState state = ClusterStage(users, c);
      fs::create_directories(cl_out);
      SaveAssignment((fs::path(cl_out) / "assignment.tsv").string(), state);
      SaveCentroids((fs::path(cl_out) / "centroids.pcen").string(), state);
      std::cout << "groups=" << c.user_groups << "\nwithin_cluster_variance="
                << Fixed(state.within_cluster_variance) << "\n";
    } else if (*finetune) {
      PipelineConfig c = ResolveConfig(g);
      const InteractionLog log = LoadLogSnapshot((fs::path(ft_data) / "log.plog").string());
      const auto [items, users] = LoadCheckpoint(ft_ckpt);
      const auto assignment = LoadAssignment(ft_assign, log.num_users);
      std::size_t groups = 0;
      for (auto a : assignment) groups = std::max<std::size_t>(groups, a + 1);
      std::vector<std::vector<UserId>> user_groups(groups);
      for (UserId u = 0; u < assignment.size(); ++u) user_groups[assignment[u]].push_back(u);
      const auto models = OptimizeAllGroups(log, items, users, user_groups, c, ft_groups);
      fs::create_directories(ft_out);
      for (const auto& m : models) {
        SaveGroupModel((fs::path(ft_out) / GroupFileName(m.group_index)).string(), m);
        std::cout << "group=" << m.group_index << " users=" << m.context.users.size() << "\n";
      }
    } else if (*deploy) {
      PipelineConfig c = ResolveConfig(g);
      const GroupModel model = FindGroupForUser(dp_dir, dp_user);
      std::vector<float> alpha;
      if (dp_random) {
        alpha = RandomSelectionAlpha(model.alpha_size(), Rng(c.seed).Split(7000 + model.group_index).seed());
      }
      const PeePackage pkg =
          BuildPackage(model, dp_user, BudgetBytesFromMb(dp_budget), c.bytes_per_parameter, alpha);
      SavePackage(dp_out, pkg);
      std::cout << "group=" << model.group_index << "\nparams=" << pkg.ParamCount()
                << "\nbytes=" << pkg.ByteSize() << "\n";
    } else if (*shrink) {
      PeePackage pkg = LoadPackage(sh_pkg);
      const std::size_t removed = ShrinkPackage(pkg, BudgetBytesFromMb(sh_budget));
      SavePackage(sh_out.empty() ? sh_pkg : sh_out, pkg);
      std::cout << "removed_blocks=" << removed << "\nparams=" << pkg.ParamCount()
                << "\nbytes=" << pkg.ByteSize() << "\n";
    } else if (*rank) {
      const PeePackage pkg = LoadPackage(rk_pkg);
      const InteractionLog log = LoadLogSnapshot((fs::path(rk_data) / "log.plog").string());
      const RankingResult ranking = RankItems(pkg);
      const auto metrics = EvaluatePackage(pkg, log, rk_k);
      std::cout << "user=" << pkg.user_id << "\nlatency_micros=" << Fixed(ranking.latency_micros) << "\n";
      if (metrics) {
        std::cout << "recall=" << Fixed(metrics->recall) << "\nndcg=" << Fixed(metrics->ndcg) << "\n";
      } else {
        std::cout << "skipped=no_test_items\n";
      }
      std::cout << "top=";
      for (std::size_t i = 0; i < std::min(rk_k, ranking.ordered_items.size()); ++i) {
        std::cout << (i ? "," : "") << ranking.ordered_items[i];
      }
      std::cout << "\n";
    } else if (*simulate) {
      PeePackage pkg = LoadPackage(sm_pkg);
      const InteractionLog log = LoadLogSnapshot((fs::path(sm_data) / "log.plog").string());
      const auto rows = SimulateBudgetTimeline(pkg, log, ParseBudgetList(sm_budgets), sm_k);
      const std::string csv = TimelineCsv(rows);
      if (!sm_report.empty()) WriteFileText(sm_report, csv);
      std::cout << csv;
    } else if (*experiment) {
      ExperimentSpec spec = LoadExperimentSpec(ex_spec);
      if (!g.config_path.empty()) spec.config = ParseConfig(ReadFileText(g.config_path), spec.config);
      if (g.seed) spec.config.seed = *g.seed;
      if (g.threads) spec.config.threads = *g.threads;
      if (!ex_data.empty()) spec.data_path = ex_data;
      if (!ex_out.empty()) spec.output_dir = ex_out;
      const ExperimentOutcome out = RunExperiment(spec);
      std::cout << "stages_computed=" << out.stages_computed << "\nstages_reused=" << out.stages_reused
                << "\noptimizer_steps=" << out.optimizer_steps << "\nmanifest=" << out.manifest_path
                << "\n";
      if (!out.metrics_csv.empty()) std::cout << ReadFileText(out.metrics_csv);
    } else if (*compare) {
      std::cout << FormatCompare(CompareRunFiles(cmp_a, cmp_b));
    }
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", ErrorKindName(e.kind())}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
