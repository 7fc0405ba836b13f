#include "fwdecg/tissuegen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"
#include "fwdecg/tensor_file.hpp"

namespace fwdecg {

namespace {

constexpr double kFractionTolerance = 0.2;  // relative overshoot allowed above the target
constexpr int kPlacementAttempts = 64;

int cells_along(double extent_mm, double dx_mm, const char* axis) {
  const double n = extent_mm / dx_mm;
  const long rounded = std::lround(n);
  if (rounded < 1 || std::abs(static_cast<double>(rounded) * dx_mm - extent_mm) > 1e-9 * extent_mm) {
    std::ostringstream msg;
    msg << axis << " extent " << extent_mm << " mm is not a whole number of " << dx_mm << " mm cells";
    throw ConfigError(msg.str());
  }
  return static_cast<int>(rounded);
}

}  // namespace

std::string_view to_string(TissueClass cls) {
  switch (cls) {
    case TissueClass::Healthy: return "Healthy";
    case TissueClass::GapJunction: return "GapJunction";
    case TissueClass::Fibrotic: return "Fibrotic";
    case TissueClass::Combined: return "Combined";
  }
  return "Unknown";
}

TissueClass tissue_class_from_string(std::string_view name) {
  for (auto cls : kAllTissueClasses) {
    if (to_string(cls) == name) return cls;
  }
  throw ConfigError("unknown tissue class '" + std::string(name) + "'");
}

double TissueGrid::d_max() const {
  double m = 0.0;
  for (double d : diffusion) m = std::max(m, d);
  return m;
}

double TissueGrid::nonconductive_fraction() const {
  if (conductive.empty()) return 0.0;
  const auto blocked = std::count(conductive.begin(), conductive.end(), std::uint8_t{0});
  return static_cast<double>(blocked) / static_cast<double>(conductive.size());
}

TissueGrid TissueGrid::uniform(int nx, int ny, double dx, double d) {
  TissueGrid g;
  g.nx = nx;
  g.ny = ny;
  g.dx = dx;
  g.width_mm = nx * dx;
  g.height_mm = ny * dx;
  g.diffusion.assign(g.cell_count(), d);
  g.conductive.assign(g.cell_count(), d > 0.0 ? 1 : 0);
  return g;
}

void TissueGrid::validate() const {
  if (nx < 1 || ny < 1 || !(dx > 0.0)) throw ConfigError("grid dimensions must be positive");
  if (std::abs(nx * dx - width_mm) > 1e-9 * std::max(1.0, width_mm) ||
      std::abs(ny * dx - height_mm) > 1e-9 * std::max(1.0, height_mm)) {
    throw ConfigError("grid extent does not match cell count times dx");
  }
  if (diffusion.size() != cell_count() || conductive.size() != cell_count()) {
    throw ShapeError("grid field sizes do not match nx*ny");
  }
  for (std::size_t c = 0; c < cell_count(); ++c) {
    if (!(diffusion[c] >= 0.0) || !std::isfinite(diffusion[c])) throw ConfigError("negative or non-finite diffusion");
    if ((diffusion[c] == 0.0) != (conductive[c] == 0)) throw ConfigError("diffusion/mask mismatch");
  }
}

void GenerationConfig::validate() const {
  if (d_range.lo < 0.0 || d_range.hi < 0.0) throw ConfigError("d_range must be non-negative");
  if (d_range.lo > d_range.hi) throw ConfigError("d_range lower bound exceeds upper bound");
  if (d_range.lo == 0.0) throw ConfigError("d_range must be strictly positive on conductive cells");
  if (patch_count_range.lo < 0 || patch_count_range.lo > patch_count_range.hi) {
    throw ConfigError("invalid patch_count_range");
  }
  if (!(patch_radius_range_mm.lo > 0.0) || patch_radius_range_mm.lo > patch_radius_range_mm.hi) {
    throw ConfigError("patch radii must be positive and ordered");
  }
  if (!(target_nonconductive_fraction >= 0.0) || !(target_nonconductive_fraction < 0.5)) {
    throw ConfigError("target_nonconductive_fraction must lie in [0, 0.5)");
  }
  if (!(dx_mm > 0.0) || !(width_mm > 0.0) || !(height_mm > 0.0)) throw ConfigError("grid extent must be positive");
}

GenerationConfig default_generation_config(TissueClass cls, std::uint64_t seed, double width_mm, double dx_mm) {
  const double scale = width_mm / 200.0;
  GenerationConfig c;
  c.tissue_class = cls;
  c.seed = seed;
  c.width_mm = width_mm;
  c.height_mm = width_mm;
  c.dx_mm = dx_mm;
  const bool remodelled_coupling = cls == TissueClass::GapJunction || cls == TissueClass::Combined;
  const bool large_patches = cls == TissueClass::Fibrotic || cls == TissueClass::Combined;
  c.d_range = remodelled_coupling ? Interval{0.01, 0.09} : Interval{0.09, 0.10};
  if (large_patches) {
    c.patch_count_range = {5, 15};
    c.patch_radius_range_mm = {10.0 * scale, 30.0 * scale};
    c.target_nonconductive_fraction = 0.15;
  } else {
    c.patch_count_range = {1, 5};
    c.patch_radius_range_mm = {2.0 * scale, 6.0 * scale};
    c.target_nonconductive_fraction = 0.005;
  }
  return c;
}

GeneratedTissue generate_tissue(const GenerationConfig& config) {
  config.validate();
  const int nx = cells_along(config.width_mm, config.dx_mm, "width");
  const int ny = cells_along(config.height_mm, config.dx_mm, "height");
  if (config.patch_count_range.hi > 0 &&
      2.0 * config.patch_radius_range_mm.lo > std::min(config.width_mm, config.height_mm)) {
    throw ConfigError("requested patches cannot fit: minimum patch diameter exceeds the tissue extent");
  }

  Rng rng(config.seed);
  GeneratedTissue out;
  out.config = config;
  out.d_value = rng.uniform(config.d_range.lo, config.d_range.hi);

  TissueGrid& grid = out.grid;
  grid.nx = nx;
  grid.ny = ny;
  grid.dx = config.dx_mm;
  grid.width_mm = config.width_mm;
  grid.height_mm = config.height_mm;
  grid.conductive.assign(grid.cell_count(), 1);

  const auto patch_count = static_cast<int>(rng.uniform_int(config.patch_count_range.lo, config.patch_count_range.hi));
  const auto total = static_cast<double>(grid.cell_count());
  const double target = config.target_nonconductive_fraction;
  const double upper = (1.0 + kFractionTolerance) * target;
  std::size_t blocked = 0;

  // Cells newly covered by `e`, appended to `cells`.
  auto rasterize = [&](const Ellipse& e, std::vector<std::size_t>& cells) {
    const int x0 = std::max(0, static_cast<int>(std::floor((e.cx - e.rx) / grid.dx)));
    const int x1 = std::min(nx - 1, static_cast<int>(std::floor((e.cx + e.rx) / grid.dx)));
    const int y0 = std::max(0, static_cast<int>(std::floor((e.cy - e.ry) / grid.dx)));
    const int y1 = std::min(ny - 1, static_cast<int>(std::floor((e.cy + e.ry) / grid.dx)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const std::size_t c = grid.index(x, y);
        if (grid.conductive[c] && e.contains((x + 0.5) * grid.dx, (y + 0.5) * grid.dx)) cells.push_back(c);
      }
    }
  };

  std::vector<std::size_t> fresh;
  for (int k = 0; k < patch_count; ++k) {
    if (k >= config.patch_count_range.lo && static_cast<double>(blocked) >= target * total) break;
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Ellipse e;
      e.cx = rng.uniform(0.0, config.width_mm);
      e.cy = rng.uniform(0.0, config.height_mm);
      e.rx = rng.uniform(config.patch_radius_range_mm.lo, config.patch_radius_range_mm.hi);
      e.ry = rng.uniform(config.patch_radius_range_mm.lo, config.patch_radius_range_mm.hi);
      fresh.clear();
      rasterize(e, fresh);
      if (fresh.empty()) continue;  // falls between cell centers
      if (static_cast<double>(blocked + fresh.size()) > upper * total) continue;
      for (auto c : fresh) grid.conductive[c] = 0;
      blocked += fresh.size();
      out.patches.push_back(e);
      placed = true;
    }
    if (!placed) break;
  }

  grid.diffusion.resize(grid.cell_count());
  for (std::size_t c = 0; c < grid.cell_count(); ++c) grid.diffusion[c] = grid.conductive[c] ? out.d_value : 0.0;
  return out;
}

std::vector<std::pair<TissueClass, int>> corpus_plan(int n_total) {
  if (n_total <= 0 || n_total % 5 != 0) {
    throw ConfigError("corpus size " + std::to_string(n_total) +
                      " must be a positive multiple of 5 (Healthy:GapJunction:Fibrotic:Combined = 1:1:2:1)");
  }
  const int unit = n_total / 5;
  return {{TissueClass::Healthy, unit},
          {TissueClass::GapJunction, unit},
          {TissueClass::Fibrotic, 2 * unit},
          {TissueClass::Combined, unit}};
}

nlohmann::json to_json(const GenerationConfig& c) {
  return {{"class", std::string(to_string(c.tissue_class))},
          {"seed", c.seed},
          {"d_range", {c.d_range.lo, c.d_range.hi}},
          {"patch_count_range", {c.patch_count_range.lo, c.patch_count_range.hi}},
          {"patch_radius_range_mm", {c.patch_radius_range_mm.lo, c.patch_radius_range_mm.hi}},
          {"target_nonconductive_fraction", c.target_nonconductive_fraction},
          {"width_mm", c.width_mm},
          {"height_mm", c.height_mm},
          {"dx_mm", c.dx_mm}};
}

GenerationConfig generation_config_from_json(const nlohmann::json& j) {
  GenerationConfig c;
  c.tissue_class = tissue_class_from_string(j.at("class").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.d_range = {j.at("d_range").at(0).get<double>(), j.at("d_range").at(1).get<double>()};
  c.patch_count_range = {j.at("patch_count_range").at(0).get<int>(), j.at("patch_count_range").at(1).get<int>()};
  c.patch_radius_range_mm = {j.at("patch_radius_range_mm").at(0).get<double>(),
                             j.at("patch_radius_range_mm").at(1).get<double>()};
  c.target_nonconductive_fraction = j.at("target_nonconductive_fraction").get<double>();
  c.width_mm = j.at("width_mm").get<double>();
  c.height_mm = j.at("height_mm").get<double>();
  c.dx_mm = j.at("dx_mm").get<double>();
  return c;
}

void save_tissue(const GeneratedTissue& tissue, const std::filesystem::path& stem) {
  const auto& g = tissue.grid;
  std::vector<float> values(g.diffusion.begin(), g.diffusion.end());
  auto tensor_path = stem;
  tensor_path += ".ecgf";
  write_tensor(tensor_path, Tensor::from_float({static_cast<std::uint64_t>(g.ny), static_cast<std::uint64_t>(g.nx)},
                                               std::move(values)));
  nlohmann::json patches = nlohmann::json::array();
  for (const auto& e : tissue.patches) patches.push_back({{"cx", e.cx}, {"cy", e.cy}, {"rx", e.rx}, {"ry", e.ry}});
  nlohmann::json side = {{"class", std::string(to_string(tissue.config.tissue_class))},
                         {"seed", tissue.config.seed},
                         {"d_range", {tissue.config.d_range.lo, tissue.config.d_range.hi}},
                         {"d_value", tissue.d_value},
                         {"nx", g.nx},
                         {"ny", g.ny},
                         {"dx_mm", g.dx},
                         {"nonconductive_fraction", g.nonconductive_fraction()},
                         {"patches", patches},
                         {"config", to_json(tissue.config)}};
  auto json_path = stem;
  json_path += ".json";
  write_text_atomic(json_path, side.dump(2) + "\n");
}

GeneratedTissue load_tissue(const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  auto tensor_path = stem;
  tensor_path += ".ecgf";
  const auto side = nlohmann::json::parse(read_text(json_path));
  const auto tensor = read_tensor(tensor_path);
  GeneratedTissue t;
  t.config = generation_config_from_json(side.at("config"));
  t.d_value = side.at("d_value").get<double>();
  for (const auto& p : side.at("patches")) {
    t.patches.push_back({p.at("cx").get<double>(), p.at("cy").get<double>(), p.at("rx").get<double>(),
                         p.at("ry").get<double>()});
  }
  auto& g = t.grid;
  g.nx = side.at("nx").get<int>();
  g.ny = side.at("ny").get<int>();
  g.dx = side.at("dx_mm").get<double>();
  g.width_mm = t.config.width_mm;
  g.height_mm = t.config.height_mm;
  if (tensor.dims.size() != 2 || tensor.dims[0] != static_cast<std::uint64_t>(g.ny) ||
      tensor.dims[1] != static_cast<std::uint64_t>(g.nx)) {
    throw FormatError(tensor_path.string() + ": grid tensor shape does not match sidecar");
  }
  g.conductive.resize(g.cell_count());
  g.diffusion.resize(g.cell_count());
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    g.conductive[c] = tensor.at(c) > 0.0 ? 1 : 0;
    g.diffusion[c] = g.conductive[c] ? t.d_value : 0.0;
  }
  g.validate();
  return t;
}

}  // namespace fwdecg
