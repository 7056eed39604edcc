#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eegcvae/eegcvae.hpp"

using namespace eegcvae;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;  // key.path=value
};

// Applies "a.b=value" overrides to the raw document; value parses as JSON when
// it can, otherwise it is taken as a string.
void apply_set(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

config::RunConfig load_config(const Common& c) {
  json doc = json::object();
  if (!c.config_path.empty()) {
    try {
      doc = json::parse(pipeline::read_text(c.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(c.config_path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& s : c.sets) apply_set(doc, s);
  config::RunConfig cfg = config::from_json(doc);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::vector<std::string> kinds(const std::string& choice) {
  if (choice == "all") return {pipeline::kBaseline, pipeline::kVae};
  pipeline::check_kind(choice);
  return {choice};
}

void print_rows(const std::vector<pipeline::EvalRow>& rows) {
  for (const auto& r : rows) {
    std::printf("%-12s %-9s %-12s %.6f\n", r.feature_kind.c_str(), r.task.c_str(), r.metric.c_str(), r.value);
  }
}

int gradcheck_table(const std::string& corrupt) {
  gradcheck::Options opt;
  opt.corrupt = corrupt;
  const auto rows = gradcheck::run_suite(opt);
  std::printf("%-22s %14s %10s %8s  %s\n", "check", "max_rel_error", "threshold", "entries", "result");
  for (const auto& r : rows) {
    std::printf("%-22s %14.3e %10.0e %8lld  %s\n", r.name.c_str(), r.result.max_rel_error, r.threshold,
                static_cast<long long>(r.result.checked), r.pass ? "PASS" : "FAIL");
  }
  return gradcheck::all_pass(rows) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained VAE pipeline for synthetic EEG speech recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "root seed (overrides the config)");
  app.add_option("--out", common.out, "output directory (overrides config and $EEGCVAE_OUT)");
  app.add_option("--set", common.sets, "override a config key, e.g. --set cvae.w_ce=0")->allow_extra_args(false);

  std::string feature_choice = "all";
  std::string corrupt;
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset and split");
  auto* pre_cmd = app.add_subcommand("preprocess", "filter recordings and extract 155-dim features");
  auto* kpca_cmd = app.add_subcommand("kpca", "fit kernel PCA and project features to 30 dims");
  auto* cvae_cmd = app.add_subcommand("train-cvae", "train the constrained VAE jointly with its classifier");
  auto* extract_cmd = app.add_subcommand("extract", "extract 1-dim features from latent row 4");
  auto* ti_cmd = app.add_subcommand("train-isolated", "train the TCN+GRU isolated recognizer");
  auto* ei_cmd = app.add_subcommand("eval-isolated", "score the isolated recognizer on the test split");
  auto* tc_cmd = app.add_subcommand("train-ctc", "train the CTC recognizer and bigram LM");
  auto* ec_cmd = app.add_subcommand("eval-ctc", "decode the test split and score WER");
  auto* pipe_cmd = app.add_subcommand("pipeline", "run every stage and write the comparison report");
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  for (auto* cmd : {ti_cmd, ei_cmd, tc_cmd, ec_cmd}) {
    cmd->add_option("--features", feature_choice, "baseline-30, vae-1 or all")->capture_default_str();
  }
  gc_cmd->add_option("--corrupt", corrupt, "perturb the analytic gradient of one row (negative control)");

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    if (gc_cmd->parsed()) return gradcheck_table(corrupt);

    const config::RunConfig cfg = load_config(common);
    const pipeline::RunDir dir{config::resolve_output_dir(cfg, common.out)};
    stage = "output";
    pipeline::ensure_writable(dir.root);

    if (pipe_cmd->parsed()) {
      print_rows(pipeline::run_pipeline(cfg, dir.root));
      std::printf("report: %s\n", dir.report_csv().string().c_str());
      return 0;
    }
    if (synth_cmd->parsed()) pipeline::stage_synth(cfg, dir);
    if (pre_cmd->parsed()) pipeline::stage_preprocess(cfg, dir);
    if (kpca_cmd->parsed()) pipeline::stage_kpca(cfg, dir);
    if (cvae_cmd->parsed()) pipeline::stage_train_cvae(cfg, dir);
    if (extract_cmd->parsed()) pipeline::stage_extract(cfg, dir);
    if (ti_cmd->parsed()) {
      for (const auto& k : kinds(feature_choice)) pipeline::stage_train_isolated(cfg, dir, k);
    }
    if (ei_cmd->parsed()) {
      for (const auto& k : kinds(feature_choice)) print_rows(pipeline::stage_eval_isolated(cfg, dir, k));
    }
    if (tc_cmd->parsed()) {
      for (const auto& k : kinds(feature_choice)) pipeline::stage_train_ctc(cfg, dir, k);
    }
    if (ec_cmd->parsed()) {
      for (const auto& k : kinds(feature_choice)) print_rows(pipeline::stage_eval_ctc(cfg, dir, k));
    }
    return 0;
  } catch (const StageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: [config] %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: [%s] %s\n", stage.c_str(), e.what());
    return 1;
  }
}
