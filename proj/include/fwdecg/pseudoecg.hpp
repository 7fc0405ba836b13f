#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "fwdecg/empropagation.hpp"
#include "fwdecg/tissuegen.hpp"

namespace fwdecg {

/// Observation point in mm, relative to the top-left corner of the tissue; z is the height above the sheet.
struct Electrode {
  double x = 50.0;
  double y = 50.0;
  double z = 40.0;
};

/// Sheet thickness converting the volume integral over the tissue into a sum over cells.
inline constexpr double kSheetThicknessMm = 1.0;

struct ECGSignal {
  std::vector<double> samples;
  std::vector<double> timestamps;  // ms
};

/// Integrand numerator div(D grad V_m); the same operator the solver uses.
std::vector<double> source_field(const TissueGrid& grid, std::span<const double> u_frame);

/// Precomputed quadrature weights dx^2 h / |r_c - r_e| for one grid/electrode pair.
class EcgKernel {
 public:
  /// Throws ConfigError if the electrode coincides with a cell center.
  EcgKernel(const TissueGrid& grid, const Electrode& electrode);

  /// Potential from an already computed source field.
  double potential(std::span<const double> source) const;
  std::span<const double> weights() const { return weights_; }

 private:
  std::vector<double> weights_;
};

double ecg_sample(const TissueGrid& grid, std::span<const double> u_frame, const Electrode& electrode);

ECGSignal ecg_trace(const VoltageFrameSequence& sequence, const TissueGrid& grid, const Electrode& electrode);

nlohmann::json to_json(const Electrode& e);
Electrode electrode_from_json(const nlohmann::json& j, Electrode base = {});

}  // namespace fwdecg
