#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rng.hpp"

namespace echomem::ens {

// Static per-ion parameters, sampled once per experiment.
struct IonRealization {
  double delta_opt_mhz = 0.0;   // offset from the (i)-(e) line center
  double delta_spin_khz = 0.0;  // offset from the (i)-(t) line center
  double rf_scale = 1.0;        // multiplies RF Rabi frequencies
  double optical_scale = 1.0;   // multiplies optical Rabi frequencies
  uint64_t noise_seed = 0;      // root of this ion's bath stream
};

struct DistributionSpec {
  enum class Profile { Gaussian, Lorentzian };
  Profile optical_profile = Profile::Gaussian;
  double optical_fwhm_mhz = 1.5;
  double spin_fwhm_khz = 45.0;
  double rf_sigma = 0.02;        // relative gaussian spread of RF amplitude
  double optical_sigma = 0.0;    // same for optical amplitude
  int count = 1000;
};

void validate(const DistributionSpec& spec);

// Ion k depends only on (spec values, master_seed, k): sampling a subset or
// reordering never changes any value.
IonRealization sample_ion(const DistributionSpec& spec, uint64_t master_seed,
                          int index);
std::vector<IonRealization> sample_ensemble(const DistributionSpec& spec,
                                            uint64_t master_seed);

// Ornstein-Uhlenbeck dephasing bath acting on the spin transition.
struct OuParams {
  bool enabled = false;
  double tau_c_us = 10.0;          // correlation time
  double sigma_rad_per_ms = 0.0;   // stationary rms angular frequency
};

void validate(const OuParams& params);

// Exact one-step update; preserves the stationary law for any dt.
// Values are in rad/ms to match OuParams.
double ou_step(const OuParams& params, double current_rad_ms, double dt_us,
               Rng& rng);

struct OuPhaseStep {
  double next_rad_ms = 0.0;
  double phase_rad = 0.0;  // integral of the process over the step
};

// Joint exact draw of the end value and the time integral across a gap of
// arbitrary length, from their closed-form bivariate normal law.
OuPhaseStep ou_phase_step(const OuParams& params, double current_rad_ms,
                          double dt_us, Rng& rng);

// Motional-narrowing estimate of the bath rms that produces a two-pulse
// intensity lifetime `target_t2_us`; used to seed the calibration search.
double theory_sigma_rad_per_ms(double target_t2_us, double tau_c_us);

// Bracketed search for the bath strength whose simulated two-pulse decay
// fits the requested lifetime.  The protocol runner is injected, so the
// search itself stays independent of the propagation engine.
struct CalibrationOutcome {
  OuParams params;
  double fitted_t2_us = 0.0;
  int evaluations = 0;
};

CalibrationOutcome calibrate_bath(
    double target_t2_us, double tau_c_us,
    const std::function<double(const OuParams&)>& fitted_t2_us_of,
    double rel_tol = 0.015, int max_evaluations = 48);

}  // namespace echomem::ens
