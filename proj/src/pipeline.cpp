#include "fwdecg/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"
#include "fwdecg/tensor_file.hpp"
#include "fwdecg/tissuegen.hpp"

namespace fwdecg {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("missing artifact " + path.string());
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

std::string case_id_for(int index, TissueClass cls) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index << '_' << to_string(cls);
  return os.str();
}

double frame_interval_of(const WorkbenchConfig& cfg) { return cfg.simulation.dt_ms * cfg.simulation.snapshot_stride; }

double dataset_frame_interval(const fs::path& dataset) {
  const auto manifest = read_json(dataset / "manifest.json");
  return manifest.at("provenance").value("frame_interval_ms", 0.0);
}

Dataset load_dataset_for(const WorkbenchConfig& cfg, const fs::path& dir) {
  auto ds = load_dataset(dir);
  if (ds.samples.empty()) throw ConfigError(dir.string() + ": dataset has no samples");
  const auto& s = ds.samples.front();
  if (s.height() != cfg.model.encoder.in_h || s.width() != cfg.model.encoder.in_w) {
    throw ConfigError("dataset frames are " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                      " but the model expects " + std::to_string(cfg.model.encoder.in_h) + "x" +
                      std::to_string(cfg.model.encoder.in_w));
  }
  return ds;
}

void log_epoch(const std::string& tag, const EpochRow& row, int epochs) {
  std::fprintf(stderr, "[%s] epoch %d/%d  loss %.6g (huber %.6g, se %.6g, w %.3f)  val_loss %.6g  val_r2 %.4f  lr %.3g\n",
               tag.c_str(), row.epoch + 1, epochs, row.total, row.huber, row.spectral_entropy, row.omega, row.val_loss,
               row.val_r2, row.lr);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

RunManifest::RunManifest(std::string subcommand, const WorkbenchConfig& config)
    : subcommand_(std::move(subcommand)),
      config_(fwdecg::to_json(config)),
      start_(std::chrono::steady_clock::now()),
      last_(start_) {}

void RunManifest::add_input(const std::string& name, const fs::path& path) {
  nlohmann::json entry = {{"name", name}, {"path", path.generic_string()}};
  if (fs::is_regular_file(path)) entry["fnv1a64"] = file_hash(path);
  inputs_.push_back(entry);
}

void RunManifest::add_output(const std::string& name, const fs::path& path) {
  outputs_.push_back({{"name", name}, {"path", path.generic_string()}});
}

void RunManifest::mark(const std::string& stage) {
  const auto now = std::chrono::steady_clock::now();
  timings_[stage] = std::chrono::duration<double>(now - last_).count();
  last_ = now;
}

nlohmann::json RunManifest::to_json() const {
  auto timings = timings_;
  timings["total_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  nlohmann::json j = {{"format", "fwdecg-run"},
                      {"tool_version", kToolVersion},
                      {"subcommand", subcommand_},
                      {"config", config_},
                      {"inputs", inputs_},
                      {"outputs", outputs_},
                      {"timings", timings}};
  for (const auto& [k, v] : extra_.items()) j[k] = v;
  return j;
}

void RunManifest::write(const fs::path& out_dir) const {
  fs::create_directories(out_dir);
  write_json(out_dir / "run_manifest.json", to_json());
}

std::string file_hash(const fs::path& path) {
  const auto bytes = read_bytes(path);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
  return os.str();
}

void run_generate(const WorkbenchConfig& cfg, const fs::path& out) {
  cfg.validate();
  fs::create_directories(out / "grids");
  nlohmann::json cases = nlohmann::json::array();
  nlohmann::json counts = nlohmann::json::object();
  int index = 0;
  for (const auto& [cls, count] : corpus_plan(cfg.corpus.n_cases)) {
    counts[std::string(to_string(cls))] = count;
    for (int k = 0; k < count; ++k, ++index) {
      const auto seed = derive_seed(cfg.corpus.seed, static_cast<std::uint64_t>(index));
      const auto tissue = generate_tissue(default_generation_config(cls, seed, cfg.corpus.width_mm, cfg.corpus.dx_mm));
      const auto id = case_id_for(index, cls);
      save_tissue(tissue, out / "grids" / id);
      cases.push_back({{"case_id", id},
                       {"label", std::string(to_string(cls))},
                       {"seed", seed},
                       {"d_value", tissue.d_value},
                       {"nonconductive_fraction", tissue.grid.nonconductive_fraction()},
                       {"grid", "grids/" + id}});
    }
  }
  write_json(out / "corpus.json", {{"format", "fwdecg-corpus"},
                                   {"version", 1},
                                   {"n_cases", cfg.corpus.n_cases},
                                   {"class_counts", counts},
                                   {"width_mm", cfg.corpus.width_mm},
                                   {"dx_mm", cfg.corpus.dx_mm},
                                   {"seed", cfg.corpus.seed},
                                   {"cases", cases}});
}

SimulateSummary run_simulate(const WorkbenchConfig& cfg, const fs::path& corpus, const fs::path& out, int jobs) {
  cfg.cell.validate();
  cfg.stimulus.validate();
  if (jobs < 1) throw ConfigError("--jobs must be at least 1");
  const auto manifest = read_json(corpus / "corpus.json");
  const auto& cases = manifest.at("cases");
  fs::create_directories(out);

  struct Outcome {
    bool ok = false;
    std::string message;
    double activated = 0.0;
  };
  std::vector<Outcome> outcomes(cases.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  const double interval = frame_interval_of(cfg);

  auto worker = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      const auto& entry = cases[i];
      const auto id = entry.at("case_id").get<std::string>();
      try {
        const auto tissue = load_tissue(corpus / entry.at("grid").get<std::string>());
        const auto seq = run_simulation(tissue.grid, cfg.cell, cfg.stimulus, cfg.simulation);
        const auto ecg = ecg_trace(seq, effective_grid(tissue.grid, cfg.simulation), cfg.electrode);
        SimulationCase c;
        c.case_id = id;
        c.label = tissue.config.tissue_class;
        c.grid_seed = tissue.config.seed;
        c.d_range = tissue.config.d_range;
        c.d_value = tissue.d_value;
        c.frames.t = static_cast<int>(seq.frame_count());
        c.frames.h = seq.ny;
        c.frames.w = seq.nx;
        c.frames.values = seq.frames;
        c.ecg = ecg.samples;
        c.timestamps = ecg.timestamps;
        const double activated = activated_fraction(seq, tissue.grid, cfg.cell.u_c);
        save_simulation_case(out / "cases" / id, c,
                             {{"activated_fraction", activated},
                              {"electrode", to_json(cfg.electrode)},
                              {"frame_interval_ms", interval},
                              {"d_unit", "mm^2/ms"}});
        outcomes[i] = {true, "", activated};
      } catch (const Error& e) {
        outcomes[i] = {false, e.what(), 0.0};
        std::lock_guard lock(log_mutex);
        std::fprintf(stderr, "simulate: case %s failed: %s\n", id.c_str(), e.what());
      }
    }
  };
  const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), std::max<std::size_t>(cases.size(), 1)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SimulateSummary summary;
  nlohmann::json done = nlohmann::json::array();
  nlohmann::json failed = nlohmann::json::array();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto id = cases[i].at("case_id").get<std::string>();
    if (outcomes[i].ok) {
      ++summary.succeeded;
      done.push_back({{"case_id", id},
                      {"label", cases[i].at("label")},
                      {"path", "cases/" + id},
                      {"activated_fraction", outcomes[i].activated}});
    } else {
      summary.failures.emplace_back(id, outcomes[i].message);
      failed.push_back({{"case_id", id}, {"error", outcomes[i].message}});
    }
  }
  if (cases.empty()) std::fprintf(stderr, "simulate: warning: corpus %s contains no grids\n", corpus.string().c_str());
  write_json(out / "simulations.json", {{"format", "fwdecg-simulations"},
                                        {"version", 1},
                                        {"electrode", to_json(cfg.electrode)},
                                        {"simulation", to_json(cfg.simulation)},
                                        {"cell_model", cfg.cell_model},
                                        {"frame_interval_ms", interval},
                                        {"d_unit", "mm^2/ms"},
                                        {"cases", done},
                                        {"failures", failed}});
  return summary;
}

void run_dataset_build(const WorkbenchConfig& cfg, const fs::path& simulations, const fs::path& out) {
  cfg.dataset.validate();
  const auto manifest = read_json(simulations / "simulations.json");
  std::vector<SimulationCase> cases;
  for (const auto& entry : manifest.at("cases")) {
    cases.push_back(load_simulation_case(simulations / entry.at("path").get<std::string>()));
  }
  const auto ds = build_dataset(cases, cfg.dataset);
  save_dataset(out, ds,
               {{"simulations", simulations.generic_string()},
                {"simulations_fnv1a64", file_hash(simulations / "simulations.json")},
                {"frame_interval_ms", manifest.value("frame_interval_ms", 0.0)}});
}

nlohmann::json evaluation_json(const EvalReport& report, double frame_interval_ms) {
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < report.targets.size(); ++i) {
    samples.push_back({{"case_id", i < report.case_ids.size() ? report.case_ids[i] : std::to_string(i)},
                       {"label", i < report.labels.size() ? std::string(to_string(report.labels[i])) : ""},
                       {"r2", r2_score(report.targets[i], report.predictions[i])},
                       {"mae", mae(report.targets[i], report.predictions[i])},
                       {"y_true", report.targets[i]},
                       {"y_pred", report.predictions[i]}});
  }
  auto j = to_json(report);
  j["frame_interval_ms"] = frame_interval_ms;
  j["samples"] = samples;
  return j;
}

TrainReport run_train(const WorkbenchConfig& cfg, const fs::path& dataset, const fs::path& out) {
  cfg.validate();
  const auto ds = load_dataset_for(cfg, dataset);
  fs::create_directories(out);
  const int epochs = cfg.train.epochs;
  std::vector<EpochRow> seen;
  TrainResult result;
  try {
    result = train(ds, cfg.model, cfg.train, out / "checkpoints", [&](const EpochRow& row) {
      seen.push_back(row);
      log_epoch("train", row, epochs);
    });
  } catch (const NumericalError& e) {
    TrainReport diverged;
    diverged.status = "diverged";
    diverged.rows = seen;
    auto j = to_json(diverged);
    j["reason"] = e.what();
    write_text_atomic(out / "epochs.csv", epoch_csv(seen));
    write_json(out / "report.json", j);
    throw;
  }
  write_text_atomic(out / "epochs.csv", epoch_csv(result.report.rows));
  write_json(out / "report.json", to_json(result.report));
  if (result.report.test) {
    write_json(out / "evaluation.json", evaluation_json(*result.report.test, dataset_frame_interval(dataset)));
  }
  return result.report;
}

EvalReport run_eval(const WorkbenchConfig& cfg, const fs::path& checkpoint, const fs::path& dataset,
                    const std::string& split, const fs::path& out) {
  nlohmann::json info;
  auto model = load_checkpoint(checkpoint, &info);
  auto ds = load_dataset(dataset);
  (void)cfg;
  const std::vector<std::size_t>* indices = nullptr;
  if (split == "train") indices = &ds.split.train;
  else if (split == "val") indices = &ds.split.val;
  else if (split == "test") indices = &ds.split.test;
  else throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
  const auto report = evaluate(model, ds, *indices);
  fs::create_directories(out);
  auto j = evaluation_json(report, dataset_frame_interval(dataset));
  j["split"] = split;
  j["checkpoint"] = info;
  write_json(out / "evaluation.json", j);
  return report;
}

std::vector<AblationRow> run_ablate(const WorkbenchConfig& cfg, const fs::path& dataset,
                                    const std::vector<std::string>& variants, const fs::path& out) {
  cfg.validate();
  const auto ds = load_dataset_for(cfg, dataset);
  const int epochs = cfg.train.epochs;
  const auto rows = ablate(ds, cfg.model, cfg.train, variants,
                           [&](const std::string& arm, const EpochRow& row) { log_epoch(arm, row, epochs); });
  fs::create_directories(out);
  write_text_atomic(out / "ablation.csv", ablation_csv(rows));
  for (const auto& row : rows) {
    const auto dir = out / "arms" / row.variant;
    fs::create_directories(dir);
    write_text_atomic(dir / "epochs.csv", epoch_csv(row.report.rows));
    write_json(dir / "report.json", to_json(row.report));
  }
  if (!rows.empty() && rows.front().report.test) {
    write_json(out / "evaluation.json", evaluation_json(*rows.front().report.test, dataset_frame_interval(dataset)));
  }
  return rows;
}

void run_plot(const fs::path& run, const fs::path& out) {
  const auto eval = read_json(run / "evaluation.json");
  const double interval = eval.value("frame_interval_ms", 1.0);
  fs::create_directories(out / "traces");
  std::ostringstream summary;
  summary << "case_id,label,r2,mae\n";
  for (const auto& s : eval.at("samples")) {
    const auto id = s.at("case_id").get<std::string>();
    const auto y = s.at("y_true").get<std::vector<double>>();
    const auto yhat = s.at("y_pred").get<std::vector<double>>();
    if (y.size() != yhat.size()) throw FormatError(run.string() + ": trace lengths differ for " + id);
    std::ostringstream trace;
    trace << "t_ms,y_true,y_pred\n";
    for (std::size_t t = 0; t < y.size(); ++t) {
      trace << fmt(interval * static_cast<double>(t)) << ',' << fmt(y[t]) << ',' << fmt(yhat[t]) << '\n';
    }
    write_text_atomic(out / "traces" / (id + ".csv"), trace.str());
    summary << id << ',' << s.at("label").get<std::string>() << ',' << fmt(s.at("r2").get<double>()) << ','
            << fmt(s.at("mae").get<double>()) << '\n';
  }
  write_text_atomic(out / "summary.csv", summary.str());
  if (fs::exists(run / "ablation.csv")) write_text_atomic(out / "ablation.csv", read_text(run / "ablation.csv"));
}

}  // namespace fwdecg
