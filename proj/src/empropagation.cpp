#include "fwdecg/empropagation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fwdecg/error.hpp"

namespace fwdecg {

double FentonKarmaParams::min_time_constant() const {
  return std::min({tau_d, tau_o, tau_r, tau_si, tau_v_plus, tau_v1_minus, tau_v2_minus, tau_w_plus, tau_w_minus});
}

void FentonKarmaParams::validate() const {
  if (!(min_time_constant() > 0.0)) throw ConfigError("Fenton-Karma time constants must be positive");
  if (!(u_c > 0.0 && u_c < 1.0)) throw ConfigError("u_c must lie in (0, 1)");
  if (!(k > 0.0)) throw ConfigError("k must be positive");
}

Currents fk_currents(const CellState& s, const FentonKarmaParams& p) {
  Currents j;
  const bool above = s.u >= p.u_c;
  j.fast_inward = above ? -(s.v / p.tau_d) * (1.0 - s.u) * (s.u - p.u_c) : 0.0;
  j.slow_outward = above ? 1.0 / p.tau_r : s.u / p.tau_o;
  j.slow_inward = -(s.w / (2.0 * p.tau_si)) * (1.0 + std::tanh(p.k * (s.u - p.u_c_si)));
  return j;
}

CellState gate_step(const CellState& s, const FentonKarmaParams& p, double dt) {
  CellState next = s;
  if (s.u >= p.u_c) {
    // Both gates close toward 0.
    next.v = s.v * std::exp(-dt / p.tau_v_plus);
    next.w = s.w * std::exp(-dt / p.tau_w_plus);
  } else {
    const double tau_v_minus = s.u >= p.u_v ? p.tau_v1_minus : p.tau_v2_minus;
    next.v = 1.0 - (1.0 - s.v) * std::exp(-dt / tau_v_minus);
    next.w = 1.0 - (1.0 - s.w) * std::exp(-dt / p.tau_w_minus);
  }
  return next;
}

void StimulusProtocol::validate() const {
  if (shape == StimulusShape::Disk && !(radius_mm > 0.0)) throw ConfigError("stimulus radius must be positive");
  if (shape == StimulusShape::LeftEdgeStrip && !(strip_width_mm > 0.0)) {
    throw ConfigError("stimulus strip width must be positive");
  }
  if (!(duration_ms > 0.0)) throw ConfigError("stimulus duration must be positive");
}

bool StimulusProtocol::covers(double x_mm, double y_mm) const {
  if (shape == StimulusShape::LeftEdgeStrip) return x_mm < strip_width_mm;
  const double dx = x_mm - center_x_mm;
  const double dy = y_mm - center_y_mm;
  return dx * dx + dy * dy <= radius_mm * radius_mm;
}

long SimulationConfig::n_steps() const { return std::lround(total_time_ms / dt_ms); }

void SimulationConfig::validate(const TissueGrid& grid, const FentonKarmaParams& p) const {
  if (!(dt_ms > 0.0)) throw ConfigError("dt must be positive");
  if (!(total_time_ms >= 0.0)) throw ConfigError("total_time must be non-negative");
  if (snapshot_stride < 1) throw ConfigError("snapshot_stride must be >= 1");
  if (!(diffusion_scale > 0.0)) throw ConfigError("diffusion_scale must be positive");
  const double d_max = grid.d_max() * diffusion_scale;
  if (d_max > 0.0) {
    const double bound = grid.dx * grid.dx / (8.0 * d_max);
    if (dt_ms > bound) {
      std::ostringstream msg;
      msg << "dt " << dt_ms << " ms violates the stability bound dx^2/(8 D_max) = " << bound << " ms";
      throw ConfigError(msg.str());
    }
  }
  if (dt_ms > p.min_time_constant() / 2.0) throw ConfigError("dt exceeds half the smallest membrane time constant");
}

TissueGrid effective_grid(const TissueGrid& grid, const SimulationConfig& cfg) {
  TissueGrid g = grid;
  if (cfg.diffusion_scale != 1.0) {
    for (auto& d : g.diffusion) d *= cfg.diffusion_scale;
  }
  return g;
}

double activated_fraction(const VoltageFrameSequence& seq, const TissueGrid& grid, double threshold) {
  const std::size_t n = grid.cell_count();
  if (static_cast<std::size_t>(seq.nx) * static_cast<std::size_t>(seq.ny) != n) {
    throw ShapeError("frame sequence does not match grid");
  }
  std::vector<std::uint8_t> hit(n, 0);
  for (std::size_t t = 0; t < seq.frame_count(); ++t) {
    const auto f = seq.frame(t);
    for (std::size_t c = 0; c < n; ++c) hit[c] = hit[c] || f[c] > threshold;
  }
  std::size_t conductive = 0;
  std::size_t active = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (!grid.conductive[c]) continue;
    ++conductive;
    active += hit[c];
  }
  return conductive == 0 ? 0.0 : static_cast<double>(active) / static_cast<double>(conductive);
}

int stride_for_frames(long n_steps, int frames) {
  if (frames < 2 || n_steps < frames - 1) throw ConfigError("cannot produce the requested frame count");
  return static_cast<int>(n_steps / (frames - 1));
}

DiffusionStencil::DiffusionStencil(const TissueGrid& grid)
    : nx_(grid.nx), ny_(grid.ny), inv_dx2_(1.0 / (grid.dx * grid.dx)), east_(grid.cell_count(), 0.0),
      south_(grid.cell_count(), 0.0) {
  auto harmonic = [](double a, double b) { return (a > 0.0 && b > 0.0) ? 2.0 * a * b / (a + b) : 0.0; };
  for (int y = 0; y < ny_; ++y) {
    for (int x = 0; x < nx_; ++x) {
      const std::size_t c = grid.index(x, y);
      if (x + 1 < nx_) east_[c] = harmonic(grid.diffusion[c], grid.diffusion[c + 1]);
      if (y + 1 < ny_) south_[c] = harmonic(grid.diffusion[c], grid.diffusion[c + static_cast<std::size_t>(nx_)]);
    }
  }
}

void DiffusionStencil::apply(std::span<const double> u, std::span<double> out) const {
  const std::size_t n = east_.size();
  if (u.size() != n || out.size() != n) throw ShapeError("field size does not match grid");
  std::fill(out.begin(), out.end(), 0.0);
  const auto stride = static_cast<std::size_t>(nx_);
  for (int y = 0; y < ny_; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * stride;
    for (int x = 0; x + 1 < nx_; ++x) {
      const std::size_t c = row + static_cast<std::size_t>(x);
      const double flux = east_[c] * (u[c + 1] - u[c]);
      out[c] += flux;
      out[c + 1] -= flux;
    }
    if (y + 1 < ny_) {
      for (int x = 0; x < nx_; ++x) {
        const std::size_t c = row + static_cast<std::size_t>(x);
        const double flux = south_[c] * (u[c + stride] - u[c]);
        out[c] += flux;
        out[c + stride] -= flux;
      }
    }
  }
  for (auto& v : out) v *= inv_dx2_;
}

std::vector<double> diffusion_term(const TissueGrid& grid, std::span<const double> u) {
  if (u.size() != grid.cell_count()) throw ShapeError("field size does not match grid");
  std::vector<double> out(u.size());
  DiffusionStencil(grid).apply(u, out);
  return out;
}

MonodomainSolver::MonodomainSolver(const TissueGrid& grid, FentonKarmaParams params, StimulusProtocol stim,
                                   StepOptions options)
    : grid_(grid), params_(params), stim_(stim), options_(options), stencil_(grid),
      stimulated_(grid.cell_count(), 0), u_(grid.cell_count()), lap_(grid.cell_count()) {
  params_.validate();
  stim_.validate();
  for (int y = 0; y < grid.ny; ++y) {
    for (int x = 0; x < grid.nx; ++x) {
      const std::size_t c = grid.index(x, y);
      stimulated_[c] = grid.conductive[c] && stim_.covers((x + 0.5) * grid.dx, (y + 0.5) * grid.dx);
    }
  }
}

std::vector<CellState> MonodomainSolver::resting_state() const { return std::vector<CellState>(grid_.cell_count()); }

void MonodomainSolver::step(std::vector<CellState>& states, double t_ms, double dt_ms, long step_index) {
  const std::size_t n = grid_.cell_count();
  if (states.size() != n) throw ShapeError("state vector does not match grid");
  for (std::size_t c = 0; c < n; ++c) u_[c] = states[c].u;
  stencil_.apply(u_, lap_);
  const bool stim_on = stim_.active(t_ms);
  for (std::size_t c = 0; c < n; ++c) {
    if (!grid_.conductive[c]) continue;
    CellState& s = states[c];
    double du = lap_[c];
    if (options_.reaction) {
      du -= fk_currents(s, params_).total();
      s = gate_step(s, params_, dt_ms);
    }
    if (stim_on && stimulated_[c]) du += stim_.amplitude;
    s.u = u_[c] + dt_ms * du;
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (!std::isfinite(states[c].u)) {
      std::ostringstream msg;
      msg << "non-finite membrane potential at cell (" << c % static_cast<std::size_t>(grid_.nx) << ", "
          << c / static_cast<std::size_t>(grid_.nx) << ") on step " << step_index;
      throw NumericalError(msg.str());
    }
  }
}

void step_monodomain(const TissueGrid& grid, std::vector<CellState>& states, const FentonKarmaParams& p,
                     const StimulusProtocol& stim, double t_ms, double dt_ms, const StepOptions& options) {
  MonodomainSolver solver(grid, p, stim, options);
  solver.step(states, t_ms, dt_ms);
}

VoltageFrameSequence run_simulation(const TissueGrid& grid, const FentonKarmaParams& p, const StimulusProtocol& stim,
                                    const SimulationConfig& cfg, std::string grid_id) {
  grid.validate();
  cfg.validate(grid, p);
  const TissueGrid solved = effective_grid(grid, cfg);
  MonodomainSolver solver(solved, p, stim);
  auto states = solver.resting_state();
  VoltageFrameSequence seq;
  seq.nx = grid.nx;
  seq.ny = grid.ny;
  seq.grid_id = std::move(grid_id);
  const long n_steps = cfg.n_steps();
  const int frames = cfg.frame_count();
  seq.frames.reserve(static_cast<std::size_t>(frames) * grid.cell_count());
  seq.timestamps.reserve(static_cast<std::size_t>(frames));
  auto snapshot = [&](long step) {
    for (const auto& s : states) seq.frames.push_back(s.u);
    seq.timestamps.push_back(static_cast<double>(step) * cfg.dt_ms);
  };
  snapshot(0);
  for (long step = 0; step < n_steps; ++step) {
    solver.step(states, static_cast<double>(step) * cfg.dt_ms, cfg.dt_ms, step);
    if ((step + 1) % cfg.snapshot_stride == 0) snapshot(step + 1);
  }
  return seq;
}

std::vector<double> integrate_cell(const FentonKarmaParams& p, const StimulusProtocol& stim, double dt_ms,
                                   double total_time_ms) {
  const long n = std::lround(total_time_ms / dt_ms);
  CellState s;
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(n) + 1);
  trace.push_back(s.u);
  for (long i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt_ms;
    double du = -fk_currents(s, p).total();
    if (stim.active(t)) du += stim.amplitude;
    const double u_old = s.u;
    s = gate_step(s, p, dt_ms);
    s.u = u_old + dt_ms * du;
    trace.push_back(s.u);
  }
  return trace;
}

double apd90(std::span<const double> u, double dt_ms) {
  if (u.size() < 3) throw ConfigError("trace too short for APD measurement");
  const auto peak_it = std::max_element(u.begin(), u.end());
  const double rest = u.front();
  const double level = rest + 0.1 * (*peak_it - rest);
  const auto peak = static_cast<std::size_t>(peak_it - u.begin());
  auto crossing = [&](std::size_t i) {
    // Linear interpolation between samples i and i + 1.
    return (static_cast<double>(i) + (level - u[i]) / (u[i + 1] - u[i])) * dt_ms;
  };
  double t_up = -1.0;
  for (std::size_t i = 0; i < peak; ++i) {
    if (u[i] < level && u[i + 1] >= level) {
      t_up = crossing(i);
      break;
    }
  }
  double t_down = -1.0;
  for (std::size_t i = peak; i + 1 < u.size(); ++i) {
    if (u[i] >= level && u[i + 1] < level) {
      t_down = crossing(i);
      break;
    }
  }
  if (t_up < 0.0 || t_down < 0.0) throw NumericalError("trace does not contain a complete action potential");
  return t_down - t_up;
}

nlohmann::json to_json(const FentonKarmaParams& p) {
  return {{"name", "fenton_karma_atrial_default"},
          {"tau_d", p.tau_d}, {"tau_o", p.tau_o}, {"tau_r", p.tau_r}, {"tau_si", p.tau_si},
          {"tau_v_plus", p.tau_v_plus}, {"tau_v1_minus", p.tau_v1_minus}, {"tau_v2_minus", p.tau_v2_minus},
          {"tau_w_plus", p.tau_w_plus}, {"tau_w_minus", p.tau_w_minus}, {"u_c", p.u_c}, {"u_v", p.u_v},
          {"u_c_si", p.u_c_si}, {"k", p.k}};
}

FentonKarmaParams fenton_karma_from_json(const nlohmann::json& j, FentonKarmaParams p) {
  p.tau_d = j.value("tau_d", p.tau_d);
  p.tau_o = j.value("tau_o", p.tau_o);
  p.tau_r = j.value("tau_r", p.tau_r);
  p.tau_si = j.value("tau_si", p.tau_si);
  p.tau_v_plus = j.value("tau_v_plus", p.tau_v_plus);
  p.tau_v1_minus = j.value("tau_v1_minus", p.tau_v1_minus);
  p.tau_v2_minus = j.value("tau_v2_minus", p.tau_v2_minus);
  p.tau_w_plus = j.value("tau_w_plus", p.tau_w_plus);
  p.tau_w_minus = j.value("tau_w_minus", p.tau_w_minus);
  p.u_c = j.value("u_c", p.u_c);
  p.u_v = j.value("u_v", p.u_v);
  p.u_c_si = j.value("u_c_si", p.u_c_si);
  p.k = j.value("k", p.k);
  p.validate();
  return p;
}

nlohmann::json to_json(const StimulusProtocol& s) {
  return {{"shape", s.shape == StimulusShape::Disk ? "disk" : "left_edge_strip"},
          {"strip_width_mm", s.strip_width_mm}, {"center_x_mm", s.center_x_mm}, {"center_y_mm", s.center_y_mm},
          {"radius_mm", s.radius_mm}, {"amplitude", s.amplitude}, {"start_ms", s.start_ms},
          {"duration_ms", s.duration_ms}};
}

StimulusProtocol stimulus_from_json(const nlohmann::json& j, StimulusProtocol s) {
  if (j.contains("shape")) {
    const auto shape = j.at("shape").get<std::string>();
    if (shape == "disk") s.shape = StimulusShape::Disk;
    else if (shape == "left_edge_strip") s.shape = StimulusShape::LeftEdgeStrip;
    else throw ConfigError("unknown stimulus shape '" + shape + "'");
  }
  s.strip_width_mm = j.value("strip_width_mm", s.strip_width_mm);
  s.center_x_mm = j.value("center_x_mm", s.center_x_mm);
  s.center_y_mm = j.value("center_y_mm", s.center_y_mm);
  s.radius_mm = j.value("radius_mm", s.radius_mm);
  s.amplitude = j.value("amplitude", s.amplitude);
  s.start_ms = j.value("start_ms", s.start_ms);
  s.duration_ms = j.value("duration_ms", s.duration_ms);
  s.validate();
  return s;
}

nlohmann::json to_json(const SimulationConfig& c) {
  return {{"dt_ms", c.dt_ms},
          {"total_time_ms", c.total_time_ms},
          {"snapshot_stride", c.snapshot_stride},
          {"diffusion_scale", c.diffusion_scale}};
}

SimulationConfig simulation_config_from_json(const nlohmann::json& j, SimulationConfig c) {
  c.dt_ms = j.value("dt_ms", c.dt_ms);
  c.total_time_ms = j.value("total_time_ms", c.total_time_ms);
  c.snapshot_stride = j.value("snapshot_stride", c.snapshot_stride);
  c.diffusion_scale = j.value("diffusion_scale", c.diffusion_scale);
  return c;
}

}  // namespace fwdecg
