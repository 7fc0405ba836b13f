#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fwdecg/config.hpp"
#include "fwdecg/error.hpp"
#include "fwdecg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fwdecg;

namespace {

enum ExitCode { kOk = 0, kUserError = 1, kInternalError = 2 };

fs::path output_root() {
  const char* env = std::getenv("FWDECG_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("fwdecg_runs");
}

fs::path resolve_out(const std::string& flag, const std::string& stage) {
  return flag.empty() ? output_root() / stage : fs::path(flag);
}

std::vector<double> parse_reals(const std::string& text, std::size_t expected, const std::string& what) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      values.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": cannot parse '" + item + "' as a number");
    }
  }
  if (values.size() != expected) {
    throw ConfigError(what + " expects " + std::to_string(expected) + " comma-separated values, got '" + text + "'");
  }
  return values;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Options {
  std::string config_file;
  std::string preset;
  bool dump_config = false;
  int jobs = 1;
  std::string out;

  std::optional<int> n_cases;
  std::optional<std::uint64_t> seed;
  std::string corpus;
  std::string electrode;
  std::string ratios;
  std::optional<int> epochs;
  std::string checkpoint;
  std::string split = "test";
  std::string variants = "no_cnn,no_attention,no_time_embedding,no_se_loss";
  std::string run;
};

WorkbenchConfig resolve_config(const Options& o, const std::string& stage) {
  WorkbenchConfig cfg = o.preset.empty() ? desk_preset() : preset_by_name(o.preset);
  if (!o.config_file.empty()) {
    auto j = nlohmann::json::parse(read_text(o.config_file), nullptr, false);
    if (j.is_discarded()) throw ConfigError(o.config_file + ": not valid JSON");
    if (!o.preset.empty()) j.erase("preset");
    cfg = workbench_config_from_json(j, cfg);
  }
  if (stage == "generate") {
    if (o.n_cases) cfg.corpus.n_cases = *o.n_cases;
    if (o.seed) cfg.corpus.seed = *o.seed;
  }
  if (stage == "simulate" && !o.electrode.empty()) {
    const auto e = parse_reals(o.electrode, 3, "--electrode");
    cfg.electrode = {e[0], e[1], e[2]};
  }
  if (stage == "dataset") {
    if (!o.ratios.empty()) {
      const auto r = parse_reals(o.ratios, 3, "--ratios");
      cfg.dataset.ratios = {r[0], r[1], r[2]};
    }
    if (o.seed) cfg.dataset.seed = *o.seed;
  }
  if (stage == "train" || stage == "ablate") {
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.seed) cfg.train.seed = *o.seed;
  }
  return cfg;
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required");
}

int run_stage(const std::string& stage, const Options& o) {
  const auto cfg = resolve_config(o, stage);
  if (o.dump_config) {
    std::cout << to_json(cfg).dump(2) << "\n";
    return kOk;
  }
  if (stage.empty()) throw ConfigError("a subcommand is required (see --help)");
  const auto out = resolve_out(o.out, stage);
  RunManifest manifest(stage, cfg);
  if (!o.config_file.empty()) manifest.add_input("config", o.config_file);
  int code = kOk;

  if (stage == "generate") {
    run_generate(cfg, out);
    manifest.add_output("corpus", out / "corpus.json");
  } else if (stage == "simulate") {
    require(o.corpus, "--corpus");
    manifest.add_input("corpus", fs::path(o.corpus) / "corpus.json");
    manifest.set("jobs", o.jobs);
    manifest.set("electrode_override", !o.electrode.empty());
    const auto summary = run_simulate(cfg, o.corpus, out, o.jobs);
    manifest.add_output("simulations", out / "simulations.json");
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& [id, msg] : summary.failures) failures.push_back({{"case_id", id}, {"error", msg}});
    manifest.set("failures", failures);
    manifest.set("succeeded", summary.succeeded);
    if (!summary.failures.empty()) {
      std::fprintf(stderr, "simulate: %zu case(s) failed\n", summary.failures.size());
      code = kInternalError;
    }
  } else if (stage == "dataset") {
    require(o.corpus, "--corpus");
    manifest.add_input("simulations", fs::path(o.corpus) / "simulations.json");
    run_dataset_build(cfg, o.corpus, out);
    manifest.add_output("dataset", out / "manifest.json");
  } else if (stage == "train") {
    require(o.corpus, "--corpus");
    manifest.add_input("dataset", fs::path(o.corpus) / "manifest.json");
    const auto report = run_train(cfg, o.corpus, out);
    manifest.add_output("epochs", out / "epochs.csv");
    manifest.add_output("report", out / "report.json");
    manifest.add_output("checkpoint", out / "checkpoints" / "best");
    manifest.set("status", report.status);
  } else if (stage == "eval") {
    require(o.corpus, "--corpus");
    require(o.checkpoint, "--checkpoint");
    manifest.add_input("dataset", fs::path(o.corpus) / "manifest.json");
    manifest.add_input("checkpoint", fs::path(o.checkpoint) / "manifest.json");
    const auto report = run_eval(cfg, o.checkpoint, o.corpus, o.split, out);
    manifest.add_output("evaluation", out / "evaluation.json");
    std::printf("%s overall R2 %.4f MAE %.6g (%zu samples)\n", o.split.c_str(), report.overall.r2, report.overall.mae,
                report.overall.count);
  } else if (stage == "ablate") {
    require(o.corpus, "--corpus");
    manifest.add_input("dataset", fs::path(o.corpus) / "manifest.json");
    const auto rows = run_ablate(cfg, o.corpus, parse_list(o.variants), out);
    manifest.add_output("ablation", out / "ablation.csv");
    std::cout << ablation_csv(rows);
  } else if (stage == "plot") {
    require(o.run, "--run");
    manifest.add_input("evaluation", fs::path(o.run) / "evaluation.json");
    run_plot(o.run, out);
    manifest.add_output("summary", out / "summary.csv");
  }
  manifest.mark(stage);
  manifest.write(out);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forward ECG workbench: tissue generation, simulation, pseudo-ECG and surrogate training"};
  app.set_version_flag("--version", kToolVersion);
  Options o;
  app.add_option("--config", o.config_file, "JSON config file overlaid on the preset")->check(CLI::ExistingFile);
  app.add_option("--preset", o.preset, "Base preset: desk or full");
  app.add_flag("--dump-config", o.dump_config, "Print the resolved config and exit");
  app.add_option("--jobs", o.jobs, "Concurrent simulations (1 = deterministic single-threaded)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", o.out, "Output directory (default $FWDECG_OUTPUT_ROOT/<subcommand>)");
  app.fallthrough();
  app.require_subcommand(0, 1);

  auto* gen = app.add_subcommand("generate", "Generate the tissue corpus");
  gen->add_option("--n", o.n_cases, "Number of grids (multiple of 5)");
  gen->add_option("--seed", o.seed, "Corpus seed");

  auto* sim = app.add_subcommand("simulate", "Simulate every grid and compute its pseudo-ECG");
  sim->add_option("--corpus", o.corpus, "Directory written by generate");
  sim->add_option("--electrode", o.electrode, "Electrode position x,y,z in mm");

  auto* data = app.add_subcommand("dataset", "Dataset operations");
  data->require_subcommand(1);
  auto* build = data->add_subcommand("build", "Build a training dataset from simulations");
  build->add_option("--corpus", o.corpus, "Directory written by simulate");
  build->add_option("--ratios", o.ratios, "Train,val,test ratios");
  build->add_option("--seed", o.seed, "Split seed");
  build->fallthrough();

  auto* tr = app.add_subcommand("train", "Train the surrogate");
  tr->add_option("--corpus", o.corpus, "Directory written by dataset build");
  tr->add_option("--epochs", o.epochs, "Override train.epochs");
  tr->add_option("--seed", o.seed, "Override train.seed");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint directory");
  ev->add_option("--corpus", o.corpus, "Dataset directory");
  ev->add_option("--split", o.split, "train, val or test");

  auto* ab = app.add_subcommand("ablate", "Train the full model and the ablation arms");
  ab->add_option("--corpus", o.corpus, "Dataset directory");
  ab->add_option("--variants", o.variants, "Comma-separated arms");
  ab->add_option("--epochs", o.epochs, "Override train.epochs");
  ab->add_option("--seed", o.seed, "Override train.seed");

  auto* pl = app.add_subcommand("plot", "Write trace and summary CSVs for a run");
  pl->add_option("--run", o.run, "Run directory containing evaluation.json");

  for (auto* sub : {gen, sim, data, tr, ev, ab, pl}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUserError;
  }

  std::string stage;
  if (!app.get_subcommands().empty()) stage = app.get_subcommands().front()->get_name();

  try {
    return run_stage(stage, o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUserError;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUserError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternalError;
  }
}
