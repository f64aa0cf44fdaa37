#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <vector>

#include "ensemble.hpp"
#include "model.hpp"
#include "sequence.hpp"

namespace echomem::eng {

using Complex = std::complex<double>;
using Matrix3 = Eigen::Matrix3cd;

// Basis order {|i>, |t>, |e>}.
inline constexpr int kLevelI = 0;
inline constexpr int kLevelT = 1;
inline constexpr int kLevelE = 2;

// Rotating-frame carrier references.  The optical references sit on the
// prepared line centers and the RF reference on the spin transition; the
// (t)-(e) reference is defined as their sum so the lambda loop closes
// exactly and one global frame serves all three drives.
struct FrameConvention {
  double f_ie_mhz = 0.0;
  double f_it_mhz = 0.0;
  double f_te_mhz = 0.0;

  static FrameConvention from_scheme(const model::LevelScheme& scheme);
  bool closed(double tol_mhz = 1e-9) const;
};

struct PropagationConfig {
  double pulse_step_frac = 1.0 / 40.0;  // step = frac * envelope width
  enum class GapMode { Analytic, Stepped };
  GapMode gap_mode = GapMode::Analytic;
  double gap_step_us = 0.05;       // stepped-gap resolution
  bool check_invariants = false;   // verify state health every step
  double trace_tol = 1e-10;
  double herm_tol = 1e-12;
  double positivity_tol = 1e-9;
};

void validate(const PropagationConfig& cfg);

struct WindowGrid {
  double t0_us = 0.0;
  double dt_us = 0.01;
  int samples = 0;

  double time_at(int k) const { return t0_us + k * dt_us; }
};

// State health metrics used by the invariant checks.
double hermiticity_error(const Matrix3& rho);
double trace_error(const Matrix3& rho);
double min_eigenvalue(const Matrix3& rho);

// exp(-i H dt) for Hermitian H, via closed-form eigenstructure with an
// iterative fallback near degeneracies.
Matrix3 expm_hermitian(const Matrix3& h, double dt_us);

// rho <- U rho U+ with U = exp(-i H dt).
void step_unitary(Matrix3& rho, const Matrix3& h, double dt_us);

// Optical coherences decay with T2; the spin coherence is untouched here.
void apply_dephasing(Matrix3& rho, double dt_us, const model::MaterialParams& mat);

// Full rotating-frame Hamiltonian at time t (rad/us).
Matrix3 hamiltonian_at(double t_us, const ens::IonRealization& ion,
                       const seq::Sequence& sequence, double bath_rad_ms);

// Per-ion bath stream: owns the RNG and the current value.
struct BathStream {
  ens::OuParams params;
  Rng rng;
  double value_rad_ms = 0.0;

  static BathStream start(const ens::OuParams& params, uint64_t seed);
  void advance(double dt_us);                  // value update only
  double advance_with_phase(double dt_us);     // returns integrated phase, rad
};

struct RunSpec {
  const seq::Sequence* sequence = nullptr;
  const model::MaterialParams* material = nullptr;
  model::LevelScheme scheme;
  ens::OuParams bath;
  PropagationConfig config;
  std::vector<WindowGrid> windows;
};

// Steps a state across one pulse's support.  Exposed for pulse-level tests.
void evolve_pulse(Matrix3& rho, const seq::Pulse& pulse,
                  const ens::IonRealization& ion, BathStream& bath,
                  const PropagationConfig& cfg, const model::MaterialParams& mat);

// Free evolution across a gap, analytic or stepped per cfg.
void evolve_gap(Matrix3& rho, double dt_us, const ens::IonRealization& ion,
                BathStream& bath, const PropagationConfig& cfg,
                const model::MaterialParams& mat);

// Propagates one ion through the whole sequence; returns rho_ie samples for
// each record window.
std::vector<std::vector<Complex>> run_ion(const ens::IonRealization& ion,
                                          const RunSpec& spec,
                                          uint64_t shot_salt = 0);

struct EnsembleTrace {
  WindowGrid grid;
  std::vector<Complex> polarization;              // mean over ions
  std::vector<double> intensity;                  // |P|^2
  std::vector<std::vector<Complex>> block_sums;   // fixed 16-block partials
  std::vector<int> block_counts;
};

// Ensemble mean of rho_ie(t) over the record windows.  Deterministic for a
// fixed seed at any worker count: ions are processed in fixed 64-ion chunks
// and reduced in index order.
std::vector<EnsembleTrace> run_ensemble(const std::vector<ens::IonRealization>& ions,
                                        const RunSpec& spec, int workers,
                                        uint64_t shot_salt = 0);

}  // namespace echomem::eng
