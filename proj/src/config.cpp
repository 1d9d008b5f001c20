#include "peel/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "peel/error.hpp"

namespace peel {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string FormatDouble(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::size_t ParseCount(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long parsed = 0;
  try {
    parsed = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  Require(pos == v.size() && !v.empty() && v[0] != '-', ErrorKind::kConfig,
          "expected non-negative integer for " + key + ", got '" + v + "'");
  return static_cast<std::size_t>(parsed);
}

double ParseReal(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double parsed = 0.0;
  try {
    parsed = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  Require(pos == v.size() && !v.empty(), ErrorKind::kConfig,
          "expected number for " + key + ", got '" + v + "'");
  return parsed;
}

bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  Fail(ErrorKind::kConfig, "expected boolean for " + key + ", got '" + v + "'");
}

std::vector<std::string> SplitComma(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(Trim(part));
  return out;
}

std::vector<std::size_t> ParseWidths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (Trim(v).empty() || v == "none") return out;
  for (const auto& part : SplitComma(v)) out.push_back(ParseCount(key, part));
  return out;
}

std::string FormatWidths(const std::vector<std::size_t>& w) {
  if (w.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(w[i]);
  }
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> parse;
  std::function<std::string(const PipelineConfig&)> format;
};

template <class M>
Field CountField(const char* section, const char* key, M PipelineConfig::*member) {
  return {section, key,
          [member](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<M>(ParseCount(k, v));
          },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

Field RealField(const char* section, const char* key, double PipelineConfig::*member) {
  return {section, key,
          [member](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = ParseReal(k, v);
          },
          [member](const PipelineConfig& c) { return FormatDouble(c.*member); }};
}

Field BoolField(const char* section, const char* key, bool PipelineConfig::*member) {
  return {section, key,
          [member](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = ParseBool(k, v);
          },
          [member](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field WidthsField(const char* section, const char* key,
                  std::vector<std::size_t> PipelineConfig::*member) {
  return {section, key,
          [member](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = ParseWidths(k, v);
          },
          [member](const PipelineConfig& c) { return FormatWidths(c.*member); }};
}

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(CountField("model", "block_dim", &PipelineConfig::block_dim));
    f.push_back(CountField("model", "blocks_per_item", &PipelineConfig::blocks_per_item));
    f.push_back(CountField("model", "user_groups", &PipelineConfig::user_groups));
    f.push_back(CountField("model", "item_groups", &PipelineConfig::item_groups));
    f.push_back(RealField("model", "lambda", &PipelineConfig::lambda));
    f.push_back(RealField("model", "weight_decay", &PipelineConfig::weight_decay));
    f.push_back(RealField("model", "epsilon", &PipelineConfig::epsilon));
    f.push_back(CountField("model", "bytes_per_parameter", &PipelineConfig::bytes_per_parameter));
    f.push_back(CountField("model", "seed", &PipelineConfig::seed));

    f.push_back(CountField("data", "min_interactions", &PipelineConfig::min_interactions));
    f.push_back({"data", "split_ratios",
                 [](PipelineConfig& c, const std::string& k, const std::string& v) {
                   const auto parts = SplitComma(v);
                   Require(parts.size() == 3, ErrorKind::kConfig, k + " needs three values");
                   for (int i = 0; i < 3; ++i) c.split_ratios[i] = ParseReal(k, parts[i]);
                 },
                 [](const PipelineConfig& c) {
                   return FormatDouble(c.split_ratios[0]) + "," + FormatDouble(c.split_ratios[1]) +
                          "," + FormatDouble(c.split_ratios[2]);
                 }});
    f.push_back({"data", "split_mode",
                 [](PipelineConfig& c, const std::string& k, const std::string& v) {
                   if (v == "per_user") c.split_mode = SplitMode::kPerUser;
                   else if (v == "global") c.split_mode = SplitMode::kGlobal;
                   else Fail(ErrorKind::kConfig, k + " must be per_user or global");
                 },
                 [](const PipelineConfig& c) {
                   return std::string(c.split_mode == SplitMode::kPerUser ? "per_user" : "global");
                 }});

    f.push_back(CountField("pretrain", "propagation_layers", &PipelineConfig::propagation_layers));
    f.push_back(BoolField("pretrain", "final_layer_only", &PipelineConfig::final_layer_only));
    f.push_back(RealField("pretrain", "learning_rate", &PipelineConfig::pretrain_lr));
    f.push_back(CountField("pretrain", "epochs", &PipelineConfig::pretrain_epochs));
    f.push_back(CountField("pretrain", "batch_size", &PipelineConfig::pretrain_batch));
    f.push_back(CountField("pretrain", "patience", &PipelineConfig::pretrain_patience));
    f.push_back(CountField("pretrain", "eval_k", &PipelineConfig::eval_k));
    f.push_back(RealField("pretrain", "init_std", &PipelineConfig::init_std));

    f.push_back(CountField("cluster", "restarts", &PipelineConfig::kmeans_restarts));
    f.push_back(CountField("cluster", "max_iters", &PipelineConfig::kmeans_max_iters));
    f.push_back(RealField("cluster", "tol", &PipelineConfig::kmeans_tol));

    f.push_back(WidthsField("finetune", "scorer_hidden", &PipelineConfig::scorer_hidden));
    f.push_back(WidthsField("finetune", "controller_hidden", &PipelineConfig::controller_hidden));
    f.push_back(RealField("finetune", "learning_rate", &PipelineConfig::finetune_lr));
    f.push_back(RealField("finetune", "controller_learning_rate", &PipelineConfig::controller_lr));
    f.push_back(RealField("finetune", "lookahead_learning_rate", &PipelineConfig::lookahead_lr));
    f.push_back(CountField("finetune", "epochs", &PipelineConfig::finetune_epochs));
    f.push_back(CountField("finetune", "batch_size", &PipelineConfig::finetune_batch));
    f.push_back(CountField("finetune", "patience", &PipelineConfig::finetune_patience));
    f.push_back(RealField("finetune", "norm_momentum", &PipelineConfig::norm_momentum));
    f.push_back(BoolField("finetune", "use_controller", &PipelineConfig::use_controller));

    f.push_back(CountField("run", "threads", &PipelineConfig::threads));
    return f;
  }();
  return fields;
}

}  // namespace

void PipelineConfig::Validate() const {
  auto positive = [](std::size_t v, const char* name) {
    Require(v > 0, ErrorKind::kConfig, std::string(name) + " must be positive");
  };
  positive(block_dim, "block_dim");
  positive(blocks_per_item, "blocks_per_item");
  positive(user_groups, "user_groups");
  positive(item_groups, "item_groups");
  positive(bytes_per_parameter, "bytes_per_parameter");
  positive(min_interactions, "min_interactions");
  positive(pretrain_batch, "pretrain batch_size");
  positive(finetune_batch, "finetune batch_size");
  positive(eval_k, "eval_k");
  positive(kmeans_restarts, "restarts");
  positive(threads, "threads");
  Require(blocks_per_item <= 16, ErrorKind::kConfig,
          "blocks_per_item must be <= 16 (package bitmask is 16 bits)");
  Require(lambda >= 0.0, ErrorKind::kConfig, "lambda must be >= 0");
  Require(weight_decay >= 0.0, ErrorKind::kConfig, "weight_decay must be >= 0");
  Require(epsilon > 0.0, ErrorKind::kConfig, "epsilon must be > 0");
  Require(norm_momentum >= 0.0 && norm_momentum < 1.0, ErrorKind::kConfig,
          "norm_momentum must be in [0,1)");
  double sum = 0.0;
  for (double r : split_ratios) {
    Require(r >= 0.0, ErrorKind::kConfig, "split ratios must be non-negative");
    sum += r;
  }
  Require(std::abs(sum - 1.0) < 1e-9, ErrorKind::kConfig, "split ratios must sum to 1");
  Require(pretrain_lr > 0 && finetune_lr > 0 && controller_lr > 0, ErrorKind::kConfig,
          "learning rates must be positive");
  for (std::size_t w : scorer_hidden) positive(w, "scorer_hidden width");
  for (std::size_t w : controller_hidden) positive(w, "controller_hidden width");
}

void SetConfigValue(PipelineConfig& config, const std::string& section, const std::string& key,
                    const std::string& value) {
  for (const Field& f : Fields()) {
    if (section == f.section && key == f.key) {
      f.parse(config, section + "." + key, value);
      return;
    }
  }
  Fail(ErrorKind::kConfig, "unknown config key '" + section + "." + key + "'");
}

PipelineConfig ParseConfig(const std::string& text, PipelineConfig base) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      Require(line.back() == ']', ErrorKind::kConfig,
              "line " + std::to_string(line_no) + ": malformed section header");
      section = Trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const Field& f : Fields()) known = known || section == f.section;
      Require(known, ErrorKind::kConfig,
              "line " + std::to_string(line_no) + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    Require(eq != std::string::npos, ErrorKind::kConfig,
            "line " + std::to_string(line_no) + ": expected key = value");
    Require(!section.empty(), ErrorKind::kConfig,
            "line " + std::to_string(line_no) + ": key outside of a section");
    SetConfigValue(base, section, Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)));
  }
  return base;
}

PipelineConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorKind::kIo, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str());
}

std::string FormatConfig(const PipelineConfig& config) {
  std::string out;
  std::string section;
  for (const Field& f : Fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.format(config) + "\n";
  }
  return out;
}

}  // namespace peel

namespace peel {

std::string TrimText(const std::string& text) { return Trim(text); }
std::size_t ParseCountValue(const std::string& key, const std::string& value) {
  return ParseCount(key, value);
}
double ParseRealValue(const std::string& key, const std::string& value) {
  return ParseReal(key, value);
}
bool ParseBoolValue(const std::string& key, const std::string& value) {
  return ParseBool(key, value);
}
std::vector<std::size_t> ParseCountList(const std::string& key, const std::string& value) {
  return ParseWidths(key, value);
}
std::vector<double> ParseRealList(const std::string& key, const std::string& value) {
  std::vector<double> out;
  if (Trim(value).empty() || value == "none") return out;
  for (const auto& part : SplitComma(value)) out.push_back(ParseReal(key, part));
  return out;
}

}  // namespace peel
