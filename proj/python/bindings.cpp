#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "peel/clustering.hpp"
#include "peel/config.hpp"
#include "peel/deploy.hpp"
#include "peel/device.hpp"
#include "peel/error.hpp"
#include "peel/experiment.hpp"
#include "peel/finetune.hpp"
#include "peel/ingest.hpp"
#include "peel/metrics.hpp"
#include "peel/pretrain.hpp"
#include "peel/report.hpp"
#include "peel/synthetic.hpp"

namespace py = pybind11;
using namespace peel;

namespace {

py::dict MetricsDict(const TopKMetrics& m) {
  py::dict d;
  d["recall"] = m.recall;
  d["ndcg"] = m.ndcg;
  return d;
}

py::dict BudgetDict(const BudgetMetrics& m) {
  py::dict d;
  d["budget_bytes"] = m.budget_bytes;
  d["recall"] = m.recall;
  d["ndcg"] = m.ndcg;
  d["mean_params"] = m.mean_params;
  d["users"] = m.users;
  d["shrink_micros"] = m.shrink_micros;
  d["rank_micros"] = m.rank_micros;
  return d;
}

}  // namespace

PYBIND11_MODULE(_peel, m) {
  m.doc() = "Personalized elastic embedding pipeline";

  // PeelError(message) with a `kind` attribute naming the error kind.
  py::exception<Error>(m, "PeelError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object type = py::module_::import("peel._peel").attr("PeelError");
      py::object err = type(e.what());
      err.attr("kind") = std::string(ErrorKindName(e.kind()));
      PyErr_SetObject(type.ptr(), err.ptr());
    }
  });

  py::class_<PipelineConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return ParseConfig(text); }, py::arg("text"))
      .def_static("load", &LoadConfig, py::arg("path"))
      .def("text", [](const PipelineConfig& c) { return FormatConfig(c); })
      .def("set", [](PipelineConfig& c, const std::string& section, const std::string& key,
                     const std::string& value) { SetConfigValue(c, section, key, value); })
      .def("validate", &PipelineConfig::Validate)
      .def_readwrite("block_dim", &PipelineConfig::block_dim)
      .def_readwrite("blocks_per_item", &PipelineConfig::blocks_per_item)
      .def_readwrite("user_groups", &PipelineConfig::user_groups)
      .def_readwrite("item_groups", &PipelineConfig::item_groups)
      .def_readwrite("lambda_", &PipelineConfig::lambda)
      .def_readwrite("weight_decay", &PipelineConfig::weight_decay)
      .def_readwrite("bytes_per_parameter", &PipelineConfig::bytes_per_parameter)
      .def_readwrite("seed", &PipelineConfig::seed)
      .def_readwrite("min_interactions", &PipelineConfig::min_interactions)
      .def_readwrite("split_ratios", &PipelineConfig::split_ratios)
      .def_readwrite("propagation_layers", &PipelineConfig::propagation_layers)
      .def_readwrite("pretrain_lr", &PipelineConfig::pretrain_lr)
      .def_readwrite("pretrain_epochs", &PipelineConfig::pretrain_epochs)
      .def_readwrite("pretrain_batch", &PipelineConfig::pretrain_batch)
      .def_readwrite("eval_k", &PipelineConfig::eval_k)
      .def_readwrite("kmeans_restarts", &PipelineConfig::kmeans_restarts)
      .def_readwrite("scorer_hidden", &PipelineConfig::scorer_hidden)
      .def_readwrite("controller_hidden", &PipelineConfig::controller_hidden)
      .def_readwrite("finetune_lr", &PipelineConfig::finetune_lr)
      .def_readwrite("controller_lr", &PipelineConfig::controller_lr)
      .def_readwrite("finetune_epochs", &PipelineConfig::finetune_epochs)
      .def_readwrite("finetune_batch", &PipelineConfig::finetune_batch)
      .def_readwrite("use_controller", &PipelineConfig::use_controller)
      .def_readwrite("threads", &PipelineConfig::threads);

  m.def("planted_interactions",
        [](std::size_t users, std::size_t items, std::size_t clusters, double p_within, double p_across,
           std::uint64_t seed) {
          return MakePlantedInteractions({users, items, clusters, p_within, p_across, seed}).text;
        },
        py::arg("users") = 400, py::arg("items") = 400, py::arg("clusters") = 4,
        py::arg("p_within") = 0.5, py::arg("p_across") = 0.02, py::arg("seed") = 7,
        "user<TAB>item lines of the planted community synthetic");

  py::class_<InteractionLog>(m, "InteractionLog")
      .def_readonly("num_users", &InteractionLog::num_users)
      .def_readonly("num_items", &InteractionLog::num_items)
      .def_property_readonly("num_interactions", [](const InteractionLog& l) { return l.interactions.size(); })
      .def("role_counts",
           [](const InteractionLog& l) {
             return py::make_tuple(l.CountRole(Role::kTrain), l.CountRole(Role::kValidation),
                                   l.CountRole(Role::kTest));
           })
      .def("stats", &LogStatsSummary)
      .def("save", [](const InteractionLog& l, const std::string& path) { SaveLogSnapshot(l, path); })
      .def_static("load", &LoadLogSnapshot, py::arg("path"));

  m.def("ingest_text",
        [](const std::string& text, const PipelineConfig& c) {
          return SplitRoles(FilterInteractionsText(text, c.min_interactions), c.split_ratios, c.seed,
                            c.split_mode);
        },
        py::arg("text"), py::arg("config"), "Filter, index and split interaction text");
  m.def("ingest", &IngestStage, py::arg("path"), py::arg("config"));

  py::class_<PretrainResult>(m, "PretrainResult")
      .def_readonly("epochs_run", &PretrainResult::epochs_run)
      .def_readonly("validation_recall", &PretrainResult::validation_recall)
      .def_readonly("epoch_loss", &PretrainResult::epoch_loss)
      .def("save", [](const PretrainResult& r, const std::string& path) { SaveCheckpoint(path, r.items, r.users); });
  m.def("pretrain",
        [](const InteractionLog& log, const PipelineConfig& c, bool popularity_segmentation) {
          py::gil_scoped_release release;
          return RunPretrain(log, ItemGroupingStage(log, c, popularity_segmentation), c);
        },
        py::arg("log"), py::arg("config"), py::arg("popularity_segmentation") = true);

  py::class_<ClusterState>(m, "ClusterState")
      .def_readonly("assignment", &ClusterState::assignment)
      .def_readonly("within_cluster_variance", &ClusterState::within_cluster_variance)
      .def_readonly("objective_history", &ClusterState::objective_history)
      .def("groups", &ClusterState::Groups);
  m.def("cluster", [](const PretrainResult& r, const PipelineConfig& c) { return ClusterStage(r.users, c); },
        py::arg("pretrained"), py::arg("config"));

  py::class_<GroupModel>(m, "GroupModel")
      .def_readonly("group_index", &GroupModel::group_index)
      .def_readonly("alpha", &GroupModel::alpha)
      .def_property_readonly("users", [](const GroupModel& g) { return g.context.users; })
      .def_property_readonly("popularity", [](const GroupModel& g) { return g.context.popularity; })
      .def("save", [](const GroupModel& g, const std::string& path) { SaveGroupModel(path, g); })
      .def_static("load", &LoadGroupModel, py::arg("path"));
  m.def("finetune",
        [](const InteractionLog& log, const PretrainResult& r, const ClusterState& clusters,
           const PipelineConfig& c) {
          py::gil_scoped_release release;
          return OptimizeAllGroups(log, r.items, r.users, clusters.Groups(), c);
        },
        py::arg("log"), py::arg("pretrained"), py::arg("clusters"), py::arg("config"));

  py::class_<PeePackage>(m, "Package")
      .def_readonly("user_id", &PeePackage::user_id)
      .def_readonly("budget_bytes", &PeePackage::budget_bytes)
      .def_readonly("blocks_per_item", &PeePackage::blocks_per_item)
      .def_readonly("block_dim", &PeePackage::block_dim)
      .def_readonly("num_items", &PeePackage::num_items)
      .def_property_readonly("param_count", &PeePackage::ParamCount)
      .def_property_readonly("byte_size", &PeePackage::ByteSize)
      .def_property_readonly("selection", &PeePackage::GetSelection)
      .def_property_readonly("minimal_bytes", [](const PeePackage& p) { return p.Layout().MinimalBytes(); })
      .def("shrink", [](PeePackage& p, std::uint64_t budget) { return ShrinkPackage(p, budget); },
           py::arg("budget_bytes"), "Remove blocks until the package fits; returns the count removed")
      .def("to_bytes",
           [](const PeePackage& p) {
             const auto bytes = SerializePackage(p);
             return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
           })
      .def_static("from_bytes",
                  [](const py::bytes& b) {
                    const std::string s = b;
                    return DeserializePackage(
                        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
                  })
      .def("save", [](const PeePackage& p, const std::string& path) { SavePackage(path, p); })
      .def_static("load", &LoadPackage, py::arg("path"))
      .def(py::self == py::self);

  m.def("budget_bytes", &BudgetBytesFromMb, py::arg("megabytes"), "Decimal megabytes to bytes");
  m.def("max_blocks_for_budget",
        [](std::uint64_t budget, std::size_t blocks_per_item, std::size_t block_dim,
           std::vector<std::size_t> group_sizes, std::size_t user_params, std::size_t bytes_per_parameter) {
          BudgetLayout layout;
          layout.blocks_per_item = blocks_per_item;
          layout.block_dim = block_dim;
          layout.group_sizes = std::move(group_sizes);
          layout.user_params = user_params;
          layout.bytes_per_parameter = bytes_per_parameter;
          return MaxBlocksForBudget(budget, layout);
        },
        py::arg("budget_bytes"), py::arg("blocks_per_item"), py::arg("block_dim"), py::arg("group_sizes"),
        py::arg("user_params") = 0, py::arg("bytes_per_parameter") = 4);
  m.def("select_blocks",
        [](const std::vector<float>& alpha, std::size_t n, std::size_t g, std::size_t count) {
          return SelectBlocks(alpha, n, g, count);
        },
        py::arg("alpha"), py::arg("blocks_per_item"), py::arg("item_groups"), py::arg("count"));
  m.def("build_package",
        [](const GroupModel& model, UserId user, std::uint64_t budget, std::size_t bpp,
           std::optional<std::vector<float>> alpha) {
          return BuildPackage(model, user, budget, bpp, alpha ? std::span<const float>(*alpha) : std::span<const float>());
        },
        py::arg("model"), py::arg("user"), py::arg("budget_bytes"), py::arg("bytes_per_parameter") = 4,
        py::arg("selection_alpha") = py::none());
  m.def("random_selection_alpha", &RandomSelectionAlpha, py::arg("size"), py::arg("seed"));

  m.def("score_items", &ScoreItems, py::arg("package"));
  m.def("rank_items", [](const PeePackage& p) { return RankItems(p).ordered_items; }, py::arg("package"));
  m.def("evaluate_package",
        [](const PeePackage& p, const InteractionLog& log, std::size_t k) -> py::object {
          const auto metrics = EvaluatePackage(p, log, k);
          if (!metrics) return py::none();
          return MetricsDict(*metrics);
        },
        py::arg("package"), py::arg("log"), py::arg("k") = 50);
  m.def("score_ranking",
        [](const std::vector<ItemId>& ranked, const std::vector<ItemId>& truth, std::size_t k) {
          return MetricsDict(ScoreRanking(ranked, truth, k));
        },
        py::arg("ranked"), py::arg("truth"), py::arg("k"));
  m.def("simulate_timeline",
        [](PeePackage& p, const InteractionLog& log, const std::vector<std::uint64_t>& budgets, std::size_t k) {
          return TimelineCsv(SimulateBudgetTimeline(p, log, budgets, k));
        },
        py::arg("package"), py::arg("log"), py::arg("budgets_bytes"), py::arg("k") = 50,
        "Shrink through descending budgets; returns the timeline CSV");

  m.def("run_experiment",
        [](const std::string& spec_text, std::optional<std::string> data, std::optional<std::string> output) {
          ExperimentSpec spec = ParseExperimentSpec(spec_text);
          if (data) spec.data_path = *data;
          if (output) spec.output_dir = *output;
          ExperimentOutcome out;
          {
            py::gil_scoped_release release;
            out = RunExperiment(spec);
          }
          py::dict d;
          d["metrics_csv"] = out.metrics_csv;
          d["timing_csv"] = out.timing_csv;
          d["manifest"] = out.manifest_path;
          d["stages_computed"] = out.stages_computed;
          d["stages_reused"] = out.stages_reused;
          d["optimizer_steps"] = out.optimizer_steps;
          py::list points;
          for (const auto& [point, rows] : out.results) {
            py::dict pd;
            pd["user_groups"] = point.user_groups;
            pd["item_groups"] = point.item_groups;
            pd["blocks_per_item"] = point.blocks_per_item;
            py::list r;
            for (const auto& row : rows) r.append(BudgetDict(row));
            pd["budgets"] = r;
            points.append(pd);
          }
          d["results"] = points;
          return d;
        },
        py::arg("spec_text"), py::arg("data") = py::none(), py::arg("output") = py::none());
  m.def("verify_manifest", &VerifyManifest, py::arg("path"));
  m.def("compare",
        [](const std::string& a, const std::string& b) {
          const CompareSummary s = CompareRunFiles(a, b);
          py::dict d;
          d["improved"] = s.improved;
          d["regressed"] = s.regressed;
          d["tied"] = s.tied;
          d["text"] = FormatCompare(s);
          return d;
        },
        py::arg("path_a"), py::arg("path_b"));
}
