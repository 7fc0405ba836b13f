#include "fwdecg/config.hpp"

#include <set>

#include "fwdecg/error.hpp"
#include "fwdecg/tensor_file.hpp"

namespace fwdecg {

void WorkbenchConfig::validate() const {
  if (corpus.n_cases <= 0 || corpus.n_cases % 5 != 0) {
    throw ConfigError("corpus.n_cases must be a positive multiple of 5, got " + std::to_string(corpus.n_cases));
  }
  if (!(corpus.width_mm > 0.0) || !(corpus.dx_mm > 0.0)) throw ConfigError("corpus extent and dx must be positive");
  cell.validate();
  stimulus.validate();
  dataset.validate();
  model.validate();
  train.validate();
  if (model.encoder.in_h != dataset.input_h || model.encoder.in_w != dataset.input_w) {
    throw ConfigError("model input " + std::to_string(model.encoder.in_h) + "x" + std::to_string(model.encoder.in_w) +
                      " does not match dataset resolution " + std::to_string(dataset.input_h) + "x" +
                      std::to_string(dataset.input_w));
  }
}

WorkbenchConfig desk_preset() {
  WorkbenchConfig c;
  c.preset = "desk";
  c.corpus = {60, 0, 100.0, 2.0};
  c.simulation.diffusion_scale = 32.0;
  c.electrode = {50.0, 50.0, 40.0};
  c.dataset.input_h = 32;
  c.dataset.input_w = 32;
  c.model.encoder.in_h = 32;
  c.model.encoder.in_w = 32;
  c.train.epochs = 100;
  return c;
}

WorkbenchConfig full_preset() {
  WorkbenchConfig c;
  c.preset = "full";
  c.corpus = {300, 0, 200.0, 1.0};
  c.simulation.diffusion_scale = 8.0;
  c.electrode = {50.0, 50.0, 40.0};
  c.dataset.input_h = 64;
  c.dataset.input_w = 64;
  c.model.encoder.in_h = 64;
  c.model.encoder.in_w = 64;
  c.train.epochs = 200;
  return c;
}

WorkbenchConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "full") return full_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
}

nlohmann::json to_json(const WorkbenchConfig& c) {
  return {{"preset", c.preset},
          {"corpus",
           {{"n_cases", c.corpus.n_cases},
            {"seed", c.corpus.seed},
            {"width_mm", c.corpus.width_mm},
            {"dx_mm", c.corpus.dx_mm}}},
          {"cell_model", {{"name", c.cell_model}, {"parameters", to_json(c.cell)}}},
          {"stimulus", to_json(c.stimulus)},
          {"simulation", to_json(c.simulation)},
          {"electrode", to_json(c.electrode)},
          {"dataset", to_json(c.dataset)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)}};
}

WorkbenchConfig workbench_config_from_json(const nlohmann::json& j, const WorkbenchConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"preset",   "corpus",    "cell_model", "stimulus", "simulation",
                                           "electrode", "dataset", "model",      "train"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config section '" + key + "'");
  }
  try {
    WorkbenchConfig c = j.contains("preset") ? preset_by_name(j.at("preset").get<std::string>()) : base;
    if (j.contains("corpus")) {
      const auto& s = j.at("corpus");
      c.corpus.n_cases = s.value("n_cases", c.corpus.n_cases);
      c.corpus.seed = s.value("seed", c.corpus.seed);
      c.corpus.width_mm = s.value("width_mm", c.corpus.width_mm);
      c.corpus.dx_mm = s.value("dx_mm", c.corpus.dx_mm);
    }
    if (j.contains("cell_model")) {
      const auto& s = j.at("cell_model");
      c.cell_model = s.value("name", c.cell_model);
      if (s.contains("parameters")) c.cell = fenton_karma_from_json(s.at("parameters"), c.cell);
    }
    if (j.contains("stimulus")) c.stimulus = stimulus_from_json(j.at("stimulus"), c.stimulus);
    if (j.contains("simulation")) c.simulation = simulation_config_from_json(j.at("simulation"), c.simulation);
    if (j.contains("electrode")) c.electrode = electrode_from_json(j.at("electrode"), c.electrode);
    if (j.contains("dataset")) c.dataset = dataset_options_from_json(j.at("dataset"), c.dataset);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

WorkbenchConfig load_workbench_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return workbench_config_from_json(j);
}

}  // namespace fwdecg
