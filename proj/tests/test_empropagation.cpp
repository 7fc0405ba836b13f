#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "fwdecg/empropagation.hpp"
#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"

using namespace fwdecg;

namespace {

StimulusProtocol no_stimulus() {
  StimulusProtocol s;
  s.start_ms = 1e12;
  return s;
}

double max_interior_error(int n, double length) {
  const double dx = length / n;
  const double d = 0.1;
  const auto grid = TissueGrid::uniform(n, 1, dx, d);
  const double k = 2.0 * std::numbers::pi / length;
  std::vector<double> u(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) u[static_cast<std::size_t>(i)] = std::sin(k * (i + 0.5) * dx);
  const auto lap = diffusion_term(grid, u);
  double err = 0.0;
  for (int i = 1; i + 1 < n; ++i) {
    const auto c = static_cast<std::size_t>(i);
    err = std::max(err, std::abs(lap[c] + d * k * k * u[c]));
  }
  return err;
}

// Time at which u at `cell` first exceeds 0.5, linearly interpolated between frames.
double activation_time(const VoltageFrameSequence& seq, std::size_t cell) {
  const std::size_t n = static_cast<std::size_t>(seq.nx) * static_cast<std::size_t>(seq.ny);
  for (std::size_t t = 1; t < seq.frame_count(); ++t) {
    const double a = seq.frames[(t - 1) * n + cell];
    const double b = seq.frames[t * n + cell];
    if (a < 0.5 && b >= 0.5) {
      return seq.timestamps[t - 1] + (0.5 - a) / (b - a) * (seq.timestamps[t] - seq.timestamps[t - 1]);
    }
  }
  return -1.0;
}

double strip_velocity(double d) {
  const double dx = 0.25;
  const int nx = 200;
  const auto grid = TissueGrid::uniform(nx, 1, dx, d);
  SimulationConfig cfg;
  cfg.dt_ms = 0.015;
  cfg.total_time_ms = 150.0;
  cfg.snapshot_stride = 1;
  const auto seq = run_simulation(grid, FentonKarmaParams{}, StimulusProtocol{}, cfg);
  const std::size_t p1 = 60;   // 15 mm
  const std::size_t p2 = 140;  // 35 mm
  const double t1 = activation_time(seq, p1);
  const double t2 = activation_time(seq, p2);
  EXPECT_GT(t1, 0.0);
  EXPECT_GT(t2, t1);
  return (static_cast<double>(p2 - p1) * dx) / (t2 - t1);
}

}  // namespace

TEST(FkCurrents, RestHasNoFastOrSlowOutwardCurrent) {
  const auto j = fk_currents({0.0, 1.0, 1.0}, FentonKarmaParams{});
  EXPECT_EQ(j.fast_inward, 0.0);
  EXPECT_EQ(j.slow_outward, 0.0);
}

TEST(FkCurrents, ClosedVGateBlocksFastInward) {
  const auto j = fk_currents({0.5, 0.0, 1.0}, FentonKarmaParams{});
  EXPECT_EQ(j.fast_inward, 0.0);
}

TEST(FkCurrents, MatchesFormulaAboveThreshold) {
  const FentonKarmaParams p;
  const CellState s{0.7, 0.4, 0.6};
  const auto j = fk_currents(s, p);
  EXPECT_DOUBLE_EQ(j.fast_inward, -(0.4 / p.tau_d) * (1.0 - 0.7) * (0.7 - p.u_c));
  EXPECT_DOUBLE_EQ(j.slow_outward, 1.0 / p.tau_r);
  EXPECT_DOUBLE_EQ(j.slow_inward, -(0.6 / (2.0 * p.tau_si)) * (1.0 + std::tanh(p.k * (0.7 - p.u_c_si))));
}

TEST(GateStep, RestIsFixedPoint) {
  const auto s = gate_step({0.0, 1.0, 1.0}, FentonKarmaParams{}, 0.1);
  EXPECT_EQ(s, (CellState{0.0, 1.0, 1.0}));
}

TEST(GateStep, VDecaysMonotonicallyAboveThreshold) {
  const FentonKarmaParams p;
  CellState s{0.5, 1.0, 1.0};
  double prev = s.v;
  for (int i = 0; i < 2000; ++i) {
    s = gate_step(s, p, 0.1);
    ASSERT_LT(s.v, prev);
    ASSERT_GE(s.v, 0.0);
    prev = s.v;
  }
  EXPECT_LT(s.v, 1e-6);
}

TEST(GateStep, MatchesClosedFormDecay) {
  const FentonKarmaParams p;
  CellState s{0.5, 0.3, 1.0};
  const double dt = 0.1;
  for (int i = 1; i <= 10; ++i) {
    s = gate_step(s, p, dt);
    EXPECT_NEAR(s.v, 0.3 * std::exp(-i * dt / p.tau_v_plus), 1e-6);
  }
}

TEST(GateStep, RecoveryUsesVoltageDependentTau) {
  const FentonKarmaParams p;
  const auto fast = gate_step({0.05, 0.2, 0.2}, p, 1.0);  // u_v <= u < u_c
  const auto slow = gate_step({0.0, 0.2, 0.2}, p, 1.0);
  EXPECT_NEAR(fast.v, 1.0 - 0.8 * std::exp(-1.0 / p.tau_v1_minus), 1e-15);
  EXPECT_NEAR(slow.v, 1.0 - 0.8 * std::exp(-1.0 / p.tau_v2_minus), 1e-15);
  EXPECT_NEAR(fast.w, 1.0 - 0.8 * std::exp(-1.0 / p.tau_w_minus), 1e-15);
}

TEST(Apd90, DefaultSetAgreesWithFineStepIntegration) {
  const FentonKarmaParams p;
  const StimulusProtocol stim;
  const double dt = 0.1;
  const double coarse = apd90(integrate_cell(p, stim, dt, 500.0), dt);
  const double fine = apd90(integrate_cell(p, stim, dt / 10.0, 500.0), dt / 10.0);
  EXPECT_GT(coarse, 50.0);
  EXPECT_NEAR(coarse, fine, 0.02 * fine);
}

TEST(Apd90, LinearRampTrace) {
  // Up over 10 samples, plateau, down over 10 samples: crossings of the 10% level are exact.
  std::vector<double> u(60, 0.0);
  for (int i = 0; i <= 10; ++i) u[static_cast<std::size_t>(i)] = i / 10.0;
  for (int i = 11; i < 40; ++i) u[static_cast<std::size_t>(i)] = 1.0;
  for (int i = 40; i <= 50; ++i) u[static_cast<std::size_t>(i)] = (50 - i) / 10.0;
  EXPECT_NEAR(apd90(u, 1.0), 49.0 - 1.0, 1e-12);
}

TEST(DiffusionTerm, ConstantFieldIsZero) {
  const auto g = generate_tissue(default_generation_config(TissueClass::Fibrotic, 2, 100.0, 1.0)).grid;
  const std::vector<double> u(g.cell_count(), 0.37);
  for (double v : diffusion_term(g, u)) EXPECT_EQ(v, 0.0);
}

TEST(DiffusionTerm, NonConductiveGridIsZero) {
  auto g = TissueGrid::uniform(8, 8, 1.0, 0.0);
  Rng rng(1);
  std::vector<double> u(g.cell_count());
  for (auto& v : u) v = rng.uniform();
  for (double v : diffusion_term(g, u)) EXPECT_EQ(v, 0.0);
}

TEST(DiffusionTerm, SinusoidSecondOrderConvergence) {
  const double e1 = max_interior_error(32, 20.0);
  const double e2 = max_interior_error(64, 20.0);
  const double order = std::log2(e1 / e2);
  EXPECT_GE(order, 1.8);
  EXPECT_LT(e2, 1e-3);
}

TEST(DiffusionTerm, HarmonicFaceAverage) {
  TissueGrid g = TissueGrid::uniform(2, 1, 1.0, 0.1);
  g.diffusion[1] = 0.4;
  const auto out = diffusion_term(g, std::vector<double>{0.0, 1.0});
  const double face = 2.0 * 0.1 * 0.4 / 0.5;
  EXPECT_DOUBLE_EQ(out[0], face);
  EXPECT_DOUBLE_EQ(out[1], -face);
}

TEST(DiffusionTerm, SizeMismatchThrows) {
  const auto g = TissueGrid::uniform(4, 4, 1.0, 0.1);
  EXPECT_THROW(diffusion_term(g, std::vector<double>(15)), ShapeError);
}

TEST(StepMonodomain, NonConductiveRestGridUnchanged) {
  const auto g = TissueGrid::uniform(6, 6, 1.0, 0.0);
  std::vector<CellState> states(g.cell_count());
  step_monodomain(g, states, FentonKarmaParams{}, StimulusProtocol{}, 0.0, 0.1);
  for (const auto& s : states) EXPECT_EQ(s, CellState{});
}

TEST(StepMonodomain, RestResidualBounded) {
  const FentonKarmaParams p;
  const auto g = TissueGrid::uniform(6, 6, 1.0, 0.1);
  std::vector<CellState> states(g.cell_count());
  const double dt = 0.1;
  step_monodomain(g, states, p, no_stimulus(), 0.0, dt);
  const double bound = dt * 1.0 / (2.0 * p.tau_si) * (1.0 + std::tanh(-p.k * p.u_c_si));
  for (const auto& s : states) EXPECT_LE(std::abs(s.u), bound * (1.0 + 1e-12));
}

TEST(StepMonodomain, StimulatedDiskCrossesThreshold) {
  const FentonKarmaParams p;
  const auto g = TissueGrid::uniform(50, 50, 1.0, 0.1);
  StimulusProtocol stim;
  stim.shape = StimulusShape::Disk;
  stim.center_x_mm = 25.0;
  stim.center_y_mm = 25.0;
  stim.radius_mm = 5.0;
  MonodomainSolver solver(g, p, stim);
  auto states = solver.resting_state();
  for (int i = 0; i < 20; ++i) solver.step(states, i * 0.1, 0.1, i);
  EXPECT_GT(states[g.index(25, 25)].u, p.u_c);
  EXPECT_GT(states[g.index(22, 25)].u, p.u_c);
  EXPECT_LT(states[g.index(5, 5)].u, p.u_c);
}

TEST(StepMonodomain, PureDiffusionConservesTotal) {
  const auto g = generate_tissue(default_generation_config(TissueClass::Combined, 8, 60.0, 1.0)).grid;
  Rng rng(4);
  std::vector<CellState> states(g.cell_count());
  for (std::size_t c = 0; c < states.size(); ++c) states[c].u = g.conductive[c] ? rng.uniform() : 0.0;
  const auto total = [&] {
    double s = 0.0;
    for (const auto& st : states) s += st.u;
    return s;
  };
  const double before = total();
  MonodomainSolver solver(g, FentonKarmaParams{}, no_stimulus(), StepOptions{false});
  for (int i = 0; i < 1000; ++i) solver.step(states, i * 0.1, 0.1, i);
  EXPECT_LE(std::abs(total() - before) / before, 1e-10);
}

TEST(StepMonodomain, NonFiniteStateNamesCellAndStep) {
  const auto g = TissueGrid::uniform(4, 3, 1.0, 0.1);
  MonodomainSolver solver(g, FentonKarmaParams{}, no_stimulus());
  auto states = solver.resting_state();
  states[g.index(2, 1)].u = std::nan("");
  try {
    solver.step(states, 0.0, 0.1, 17);
    FAIL();
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 17"), std::string::npos) << msg;
    EXPECT_NE(msg.find("cell ("), std::string::npos) << msg;
  }
}

TEST(RunSimulation, ZeroDurationGivesInitialFrame) {
  const auto g = TissueGrid::uniform(5, 5, 1.0, 0.1);
  SimulationConfig cfg;
  cfg.total_time_ms = 0.0;
  const auto seq = run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg);
  ASSERT_EQ(seq.frame_count(), 1u);
  for (double u : seq.frames) EXPECT_EQ(u, 0.0);
  EXPECT_EQ(seq.timestamps[0], 0.0);
}

TEST(RunSimulation, FrameCountAndTimestamps) {
  const auto g = TissueGrid::uniform(10, 10, 1.0, 0.1);
  SimulationConfig cfg;
  cfg.total_time_ms = 50.0;
  cfg.snapshot_stride = 7;
  const auto seq = run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg);
  EXPECT_EQ(seq.frame_count(), static_cast<std::size_t>(500 / 7 + 1));
  for (std::size_t t = 1; t < seq.frame_count(); ++t) EXPECT_GT(seq.timestamps[t], seq.timestamps[t - 1]);
  EXPECT_EQ(SimulationConfig{}.frame_count(), 64);
  EXPECT_EQ(stride_for_frames(5000, 64), 79);
}

TEST(RunSimulation, RejectsUnstableTimeStep) {
  const auto g = TissueGrid::uniform(10, 10, 0.5, 0.4);
  SimulationConfig cfg;
  cfg.dt_ms = 0.1;  // bound is 0.25 / 3.2 = 0.078 ms
  EXPECT_THROW(run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg), ConfigError);
  cfg.dt_ms = 0.05;
  cfg.total_time_ms = 1.0;
  EXPECT_NO_THROW(run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg));
  cfg.diffusion_scale = 2.0;
  EXPECT_THROW(run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg), ConfigError);
}

TEST(RunSimulation, DeterministicFrames) {
  const auto g = generate_tissue(default_generation_config(TissueClass::Fibrotic, 3, 40.0, 1.0)).grid;
  SimulationConfig cfg;
  cfg.total_time_ms = 60.0;
  cfg.snapshot_stride = 10;
  const auto a = run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg);
  const auto b = run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg);
  EXPECT_EQ(a.frames, b.frames);
}

TEST(RunSimulation, ConductionVelocityScalesWithSqrtD) {
  const double ratio = strip_velocity(0.4) / strip_velocity(0.1);
  EXPECT_GE(ratio, 1.8);
  EXPECT_LE(ratio, 2.2);
}

TEST(RunSimulation, GatesStayBoundedAndPatchStaysAtRest) {
  const FentonKarmaParams p;
  auto g = TissueGrid::uniform(40, 40, 1.0, 0.1);
  const Ellipse patch{20.0, 20.0, 6.0, 6.0};
  for (int y = 0; y < g.ny; ++y) {
    for (int x = 0; x < g.nx; ++x) {
      if (patch.contains(x + 0.5, y + 0.5)) {
        g.diffusion[g.index(x, y)] = 0.0;
        g.conductive[g.index(x, y)] = 0;
      }
    }
  }
  MonodomainSolver solver(g, p, StimulusProtocol{});
  auto states = solver.resting_state();
  double max_patch_u = 0.0;
  bool activated = false;
  for (long i = 0; i < 3000; ++i) {
    solver.step(states, i * 0.1, 0.1, i);
    for (std::size_t c = 0; c < states.size(); ++c) {
      ASSERT_GE(states[c].v, 0.0);
      ASSERT_LE(states[c].v, 1.0);
      ASSERT_GE(states[c].w, 0.0);
      ASSERT_LE(states[c].w, 1.0);
      if (!g.conductive[c]) max_patch_u = std::max(max_patch_u, states[c].u);
    }
    activated = activated || states[g.index(39, 20)].u > p.u_c;
  }
  EXPECT_LT(max_patch_u, p.u_c);
  EXPECT_TRUE(activated);
}

TEST(RunSimulation, DiffusionScaleRestoresPropagationOnCoarseGrid) {
  const auto g = TissueGrid::uniform(50, 4, 2.0, 0.05);
  SimulationConfig cfg;
  cfg.total_time_ms = 300.0;
  const auto plain = run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg);
  cfg.diffusion_scale = 32.0;
  const auto scaled = run_simulation(g, FentonKarmaParams{}, StimulusProtocol{}, cfg);
  EXPECT_LT(activated_fraction(plain, g, 0.13), 0.2);
  EXPECT_EQ(activated_fraction(scaled, g, 0.13), 1.0);
  EXPECT_DOUBLE_EQ(effective_grid(g, cfg).diffusion[0], 1.6);
}

TEST(FentonKarmaParams, JsonRoundTripAndValidation) {
  FentonKarmaParams p;
  p.tau_d = 0.3;
  const auto back = fenton_karma_from_json(to_json(p));
  EXPECT_EQ(to_json(back), to_json(p));
  auto j = to_json(p);
  j["tau_o"] = -1.0;
  EXPECT_THROW(fenton_karma_from_json(j), ConfigError);
}
