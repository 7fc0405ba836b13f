#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace fwdecg {

enum class TissueClass { Healthy = 0, GapJunction = 1, Fibrotic = 2, Combined = 3 };

inline constexpr TissueClass kAllTissueClasses[] = {TissueClass::Healthy, TissueClass::GapJunction,
                                                    TissueClass::Fibrotic, TissueClass::Combined};

std::string_view to_string(TissueClass cls);
TissueClass tissue_class_from_string(std::string_view name);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct IntInterval {
  int lo = 0;
  int hi = 0;
};

/// Regular 2D grid of square cells, stored row-major with y as the slow index.
/// Cell (x, y) has its center at ((x + 0.5) dx, (y + 0.5) dx) mm from the top-left corner.
struct TissueGrid {
  int nx = 0;
  int ny = 0;
  double dx = 1.0;
  double width_mm = 0.0;
  double height_mm = 0.0;
  std::vector<double> diffusion;       // mm^2/ms, 0 on non-conductive cells
  std::vector<std::uint8_t> conductive;

  std::size_t cell_count() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(x);
  }
  double d_max() const;
  double nonconductive_fraction() const;

  /// Homogeneous fully conductive grid.
  static TissueGrid uniform(int nx, int ny, double dx, double d);
  /// Throws ConfigError when the extent/mask/diffusion invariants do not hold.
  void validate() const;
};

struct GenerationConfig {
  TissueClass tissue_class = TissueClass::Healthy;
  std::uint64_t seed = 0;
  Interval d_range{0.09, 0.10};
  IntInterval patch_count_range{1, 5};
  Interval patch_radius_range_mm{2.0, 6.0};
  double target_nonconductive_fraction = 0.005;
  double width_mm = 200.0;
  double height_mm = 200.0;
  double dx_mm = 1.0;

  void validate() const;
};

/// Class defaults at full scale (200 x 200 mm). Patch radii scale linearly
/// with `width_mm / 200` so desk-scale grids keep the same patch coverage.
GenerationConfig default_generation_config(TissueClass cls, std::uint64_t seed, double width_mm = 200.0,
                                           double dx_mm = 1.0);

/// Axis-aligned ellipse in mm.
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double rx = 0.0;
  double ry = 0.0;

  bool contains(double x, double y) const {
    const double ex = (x - cx) / rx;
    const double ey = (y - cy) / ry;
    return ex * ex + ey * ey <= 1.0;
  }
};

struct GeneratedTissue {
  TissueGrid grid;
  GenerationConfig config;
  double d_value = 0.0;  // the single background draw applied to every conductive cell
  std::vector<Ellipse> patches;
};

/// Pure function of `config`: same config gives a bit-identical grid.
GeneratedTissue generate_tissue(const GenerationConfig& config);

/// Class counts in the 1:1:2:1 ratio. Throws ConfigError unless n_total is a positive multiple of 5.
std::vector<std::pair<TissueClass, int>> corpus_plan(int n_total);

nlohmann::json to_json(const GenerationConfig& config);
GenerationConfig generation_config_from_json(const nlohmann::json& j);

/// Writes `<stem>.ecgf` (float32 ny x nx diffusion map) and `<stem>.json` (class, seed, d_range, patches).
void save_tissue(const GeneratedTissue& tissue, const std::filesystem::path& stem);
GeneratedTissue load_tissue(const std::filesystem::path& stem);

}  // namespace fwdecg
