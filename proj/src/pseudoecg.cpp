#include "fwdecg/pseudoecg.hpp"

#include <cmath>
#include <sstream>

#include "fwdecg/error.hpp"

namespace fwdecg {

std::vector<double> source_field(const TissueGrid& grid, std::span<const double> u_frame) {
  return diffusion_term(grid, u_frame);
}

EcgKernel::EcgKernel(const TissueGrid& grid, const Electrode& electrode) : weights_(grid.cell_count()) {
  const double area = grid.dx * grid.dx * kSheetThicknessMm;
  for (int y = 0; y < grid.ny; ++y) {
    for (int x = 0; x < grid.nx; ++x) {
      const double rx = (x + 0.5) * grid.dx - electrode.x;
      const double ry = (y + 0.5) * grid.dx - electrode.y;
      const double dist = std::sqrt(rx * rx + ry * ry + electrode.z * electrode.z);
      if (!(dist > 0.0)) {
        std::ostringstream msg;
        msg << "electrode coincides with the center of cell (" << x << ", " << y << ")";
        throw ConfigError(msg.str());
      }
      weights_[grid.index(x, y)] = area / dist;
    }
  }
}

double EcgKernel::potential(std::span<const double> source) const {
  if (source.size() != weights_.size()) throw ShapeError("source field does not match kernel");
  double sum = 0.0;
  for (std::size_t c = 0; c < source.size(); ++c) sum += source[c] * weights_[c];
  return sum;
}

double ecg_sample(const TissueGrid& grid, std::span<const double> u_frame, const Electrode& electrode) {
  const EcgKernel kernel(grid, electrode);
  return kernel.potential(source_field(grid, u_frame));
}

ECGSignal ecg_trace(const VoltageFrameSequence& sequence, const TissueGrid& grid, const Electrode& electrode) {
  if (sequence.nx != grid.nx || sequence.ny != grid.ny) throw ShapeError("frame sequence does not match grid");
  const EcgKernel kernel(grid, electrode);
  const DiffusionStencil stencil(grid);
  std::vector<double> source(grid.cell_count());
  ECGSignal signal;
  signal.timestamps = sequence.timestamps;
  signal.samples.reserve(sequence.frame_count());
  for (std::size_t t = 0; t < sequence.frame_count(); ++t) {
    stencil.apply(sequence.frame(t), source);
    const double value = kernel.potential(source);
    if (!std::isfinite(value)) throw NumericalError("non-finite ECG sample at frame " + std::to_string(t));
    signal.samples.push_back(value);
  }
  return signal;
}

nlohmann::json to_json(const Electrode& e) { return {{"x_mm", e.x}, {"y_mm", e.y}, {"z_mm", e.z}}; }

Electrode electrode_from_json(const nlohmann::json& j, Electrode e) {
  e.x = j.value("x_mm", e.x);
  e.y = j.value("y_mm", e.y);
  e.z = j.value("z_mm", e.z);
  return e;
}

}  // namespace fwdecg
