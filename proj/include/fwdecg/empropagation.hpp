#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "fwdecg/tissuegen.hpp"

namespace fwdecg {

/// Three-variable Fenton-Karma membrane model. Time constants in ms, thresholds dimensionless.
struct FentonKarmaParams {
  double tau_d = 0.25;
  double tau_o = 12.5;
  double tau_r = 33.33;
  double tau_si = 29.0;
  double tau_v_plus = 3.33;
  double tau_v1_minus = 19.6;
  double tau_v2_minus = 1250.0;
  double tau_w_plus = 870.0;
  double tau_w_minus = 41.0;
  double u_c = 0.13;
  double u_v = 0.04;
  double u_c_si = 0.85;
  double k = 10.0;

  /// Shipped default parameter set (named "fenton_karma_atrial_default" in configs).
  static FentonKarmaParams atrial_default() { return {}; }
  double min_time_constant() const;
  void validate() const;
};

struct CellState {
  double u = 0.0;
  double v = 1.0;
  double w = 1.0;
  bool operator==(const CellState&) const = default;
};

struct Currents {
  double fast_inward = 0.0;  // J_fi
  double slow_outward = 0.0; // J_so
  double slow_inward = 0.0;  // J_si
  double total() const { return fast_inward + slow_outward + slow_inward; }
};

/// du/dt contribution of the membrane is -currents.total().
Currents fk_currents(const CellState& s, const FentonKarmaParams& p);

/// Advances v and w by dt with exact exponential relaxation at frozen u; u is returned unchanged.
CellState gate_step(const CellState& s, const FentonKarmaParams& p, double dt);

enum class StimulusShape { LeftEdgeStrip, Disk };

struct StimulusProtocol {
  StimulusShape shape = StimulusShape::LeftEdgeStrip;
  double strip_width_mm = 5.0;  // LeftEdgeStrip: cells with center x < strip width
  double center_x_mm = 0.0;     // Disk
  double center_y_mm = 0.0;
  double radius_mm = 5.0;
  double amplitude = 0.5;       // u per ms
  double start_ms = 0.0;
  double duration_ms = 2.0;

  void validate() const;
  bool active(double t_ms) const { return t_ms >= start_ms && t_ms < start_ms + duration_ms; }
  bool covers(double x_mm, double y_mm) const;
};

struct SimulationConfig {
  double dt_ms = 0.1;
  double total_time_ms = 500.0;
  int snapshot_stride = 79;  // 5000 steps / 79 -> 64 frames
  /// Multiplies every grid D before solving (and before the pseudo-ECG source). Coarse
  /// grids need D / dx^2 above roughly 0.06 per ms for a front to propagate at all.
  double diffusion_scale = 1.0;

  long n_steps() const;
  int frame_count() const { return static_cast<int>(n_steps() / snapshot_stride) + 1; }
  /// Throws ConfigError if dt is not positive, the stride is < 1, or dt violates
  /// dt <= dx^2 / (8 D_max) (explicit bound dx^2/(4 D_max) with a 2x margin).
  void validate(const TissueGrid& grid, const FentonKarmaParams& p) const;
};

/// The grid the solver actually integrates: `grid` with D multiplied by cfg.diffusion_scale.
TissueGrid effective_grid(const TissueGrid& grid, const SimulationConfig& cfg);

/// Largest stride with floor(n_steps / stride) + 1 == frames.
int stride_for_frames(long n_steps, int frames);

struct VoltageFrameSequence {
  int nx = 0;
  int ny = 0;
  std::vector<double> frames;      // T x ny x nx
  std::vector<double> timestamps;  // ms
  std::string grid_id;

  std::size_t frame_count() const { return timestamps.size(); }
  std::span<const double> frame(std::size_t t) const {
    const std::size_t n = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
    return std::span<const double>(frames).subspan(t * n, n);
  }
};

/// Per-face conductances of the 5-point flux stencil: harmonic mean of the two cell D
/// values on each interior face, 0 on domain boundaries and on faces touching a D=0 cell.
class DiffusionStencil {
 public:
  explicit DiffusionStencil(const TissueGrid& grid);

  /// out[c] = sum over faces of D_face (u_nb - u_c) / dx^2, accumulated face by face.
  void apply(std::span<const double> u, std::span<double> out) const;

  int nx() const { return nx_; }
  int ny() const { return ny_; }

 private:
  int nx_;
  int ny_;
  double inv_dx2_;
  std::vector<double> east_;   // face between (x, y) and (x + 1, y)
  std::vector<double> south_;  // face between (x, y) and (x, y + 1)
};

/// Discrete div(D grad u) with zero-flux boundaries. Throws ShapeError on size mismatch.
std::vector<double> diffusion_term(const TissueGrid& grid, std::span<const double> u);

struct StepOptions {
  bool reaction = true;  // false: pure diffusion (conservation checks)
};

/// One explicit monodomain step on the whole grid, allocating a stencil each call.
/// Non-conductive cells are held at rest. Throws NumericalError naming the first
/// non-finite cell.
void step_monodomain(const TissueGrid& grid, std::vector<CellState>& states, const FentonKarmaParams& p,
                     const StimulusProtocol& stim, double t_ms, double dt_ms, const StepOptions& options = {});

/// Reusable solver state for repeated steps on one grid.
class MonodomainSolver {
 public:
  MonodomainSolver(const TissueGrid& grid, FentonKarmaParams params, StimulusProtocol stim,
                   StepOptions options = {});

  void step(std::vector<CellState>& states, double t_ms, double dt_ms, long step_index = 0);

  std::vector<CellState> resting_state() const;

 private:
  const TissueGrid& grid_;
  FentonKarmaParams params_;
  StimulusProtocol stim_;
  StepOptions options_;
  DiffusionStencil stencil_;
  std::vector<std::uint8_t> stimulated_;
  std::vector<double> u_;
  std::vector<double> lap_;
};

/// Frames at every snapshot_stride steps including t = 0; deterministic. Integrates effective_grid(grid, cfg).
VoltageFrameSequence run_simulation(const TissueGrid& grid, const FentonKarmaParams& p, const StimulusProtocol& stim,
                                    const SimulationConfig& cfg, std::string grid_id = {});

/// Fraction of conductive cells whose u exceeds `threshold` in at least one frame.
double activated_fraction(const VoltageFrameSequence& seq, const TissueGrid& grid, double threshold);

/// Single-cell time course of u under the stimulus amplitude/timing of `stim` (no diffusion).
std::vector<double> integrate_cell(const FentonKarmaParams& p, const StimulusProtocol& stim, double dt_ms,
                                   double total_time_ms);

/// Action potential duration at 90% repolarization, measured on a uniformly sampled trace
/// with linear interpolation of the crossings of the 10%-amplitude level.
double apd90(std::span<const double> u, double dt_ms);

nlohmann::json to_json(const FentonKarmaParams& p);
FentonKarmaParams fenton_karma_from_json(const nlohmann::json& j, FentonKarmaParams base = {});
nlohmann::json to_json(const StimulusProtocol& s);
StimulusProtocol stimulus_from_json(const nlohmann::json& j, StimulusProtocol base = {});
nlohmann::json to_json(const SimulationConfig& c);
SimulationConfig simulation_config_from_json(const nlohmann::json& j, SimulationConfig base = {});

}  // namespace fwdecg
