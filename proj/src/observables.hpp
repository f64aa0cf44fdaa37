#pragma once

#include <complex>
#include <vector>

namespace echomem::obs {

struct EchoTrace {
  double t0_us = 0.0;
  double dt_us = 0.01;
  std::vector<std::complex<double>> polarization;
  std::vector<double> intensity;

  int samples() const { return static_cast<int>(intensity.size()); }
  double time_at(int k) const { return t0_us + k * dt_us; }
  double end_us() const { return time_at(samples() - 1); }
};

// Trapezoidal integral of the intensity over [begin, end].
double echo_energy(const EchoTrace& trace, double begin_us, double end_us);

double retrieval_efficiency(const EchoTrace& trace, double begin_us,
                            double end_us, double reference_energy);

struct DecayCurve {
  std::vector<double> storage_ms;
  std::vector<double> efficiency;
  std::vector<double> stderr_;  // optional, empty or same length

  void push(double t_ms, double eta, double se = 0.0);
  int size() const { return static_cast<int>(storage_ms.size()); }
};

// I(T) = I0 * exp(-2 T / T2eff)
struct DecayFit {
  double t2eff_ms = 0.0;
  double amplitude = 0.0;
  double residual_rms = 0.0;
  bool converged = false;
};

DecayFit fit_t2eff(const DecayCurve& curve);

// I(phi) = (Imax/2) * (1 + V sin(phi + phi0))
struct VisibilityFit {
  double visibility = 0.0;
  double i_max = 0.0;
  double phase_offset_rad = 0.0;
  double residual_rms = 0.0;
  bool clamped = false;  // raw fit left [0, 1] and was clamped
};

struct PhasePoint {
  double phi_rad = 0.0;
  double intensity = 0.0;
};

VisibilityFit fit_visibility(const std::vector<PhasePoint>& points);

// Two coherent gaussian amplitude components fitted to an intensity trace.
struct DoubleGaussianFit {
  double amp1 = 0.0, center1_us = 0.0, fwhm1_us = 0.0;
  double amp2 = 0.0, center2_us = 0.0, fwhm2_us = 0.0;
  double rel_phase_rad = 0.0;
  double residual_rms = 0.0;
  bool converged = false;
};

DoubleGaussianFit fit_double_gaussian(const EchoTrace& trace);

}  // namespace echomem::obs
