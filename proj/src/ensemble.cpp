#include "ensemble.hpp"

#include <cmath>

#include "error.hpp"
#include "units.hpp"

namespace echomem::ens {

void validate(const DistributionSpec& spec) {
  if (!(spec.optical_fwhm_mhz > 0.0))
    throw ValidationError("optical FWHM must be positive");
  if (!(spec.spin_fwhm_khz > 0.0))
    throw ValidationError("spin FWHM must be positive");
  if (spec.rf_sigma < 0.0 || spec.optical_sigma < 0.0)
    throw ValidationError("amplitude spreads must be >= 0");
  if (spec.count < 1) throw ValidationError("ion count must be >= 1");
}

void validate(const OuParams& params) {
  if (!(params.tau_c_us > 0.0))
    throw ValidationError("bath correlation time must be positive");
  if (params.sigma_rad_per_ms < 0.0)
    throw ValidationError("bath rms must be >= 0");
}

IonRealization sample_ion(const DistributionSpec& spec, uint64_t master_seed,
                          int index) {
  Rng rng(mix_seed(master_seed, 0x696f6eULL, static_cast<uint64_t>(index)));
  IonRealization ion;
  if (spec.optical_profile == DistributionSpec::Profile::Gaussian) {
    ion.delta_opt_mhz = spec.optical_fwhm_mhz / kFwhmPerSigma * rng.normal();
  } else {
    // Lorentzian with FWHM = 2*gamma via the inverse CDF.
    const double gamma = 0.5 * spec.optical_fwhm_mhz;
    ion.delta_opt_mhz = gamma * std::tan(kPi * (rng.uniform() - 0.5));
  }
  ion.delta_spin_khz = spec.spin_fwhm_khz / kFwhmPerSigma * rng.normal();
  ion.rf_scale = spec.rf_sigma == 0.0 ? 1.0 : 1.0 + spec.rf_sigma * rng.normal();
  ion.optical_scale =
      spec.optical_sigma == 0.0 ? 1.0 : 1.0 + spec.optical_sigma * rng.normal();
  ion.noise_seed = mix_seed(master_seed, 0x626174ULL, static_cast<uint64_t>(index));
  return ion;
}

std::vector<IonRealization> sample_ensemble(const DistributionSpec& spec,
                                            uint64_t master_seed) {
  validate(spec);
  std::vector<IonRealization> ions;
  ions.reserve(spec.count);
  for (int k = 0; k < spec.count; ++k)
    ions.push_back(sample_ion(spec, master_seed, k));
  return ions;
}

double ou_step(const OuParams& params, double current_rad_ms, double dt_us,
               Rng& rng) {
  if (!(dt_us > 0.0)) throw ValidationError("ou_step needs dt > 0");
  const double decay = std::exp(-dt_us / params.tau_c_us);
  const double sigma = params.sigma_rad_per_ms;
  return current_rad_ms * decay +
         sigma * std::sqrt(std::max(0.0, 1.0 - decay * decay)) * rng.normal();
}

OuPhaseStep ou_phase_step(const OuParams& params, double current_rad_ms,
                          double dt_us, Rng& rng) {
  if (!(dt_us > 0.0)) throw ValidationError("ou_phase_step needs dt > 0");
  const double tau = params.tau_c_us;
  const double theta = dt_us / tau;
  const double decay = std::exp(-theta);
  const double sigma2 = params.sigma_rad_per_ms * params.sigma_rad_per_ms;

  // Conditional means given the current value.
  const double mean_b = current_rad_ms * decay;
  const double mean_integral_us = current_rad_ms * tau * (1.0 - decay);

  // Closed-form covariances of (end value, integral).
  const double var_b = sigma2 * (1.0 - decay * decay);
  const double cov = sigma2 * tau * (1.0 - decay) * (1.0 - decay);
  const double var_integral =
      sigma2 * tau * tau * (2.0 * theta - 3.0 + 4.0 * decay - decay * decay);

  OuPhaseStep out;
  if (var_b <= 0.0) {
    out.next_rad_ms = mean_b;
    out.phase_rad = radms_to_radus(mean_integral_us);  // (rad/ms)*us -> rad
    // Keep the draw count independent of parameter values.
    (void)rng.normal();
    (void)rng.normal();
    return out;
  }

  const double z1 = rng.normal();
  const double z2 = rng.normal();
  const double sd_b = std::sqrt(var_b);
  const double resid = std::max(0.0, var_integral - cov * cov / var_b);
  const double integral_us =
      mean_integral_us + (cov / sd_b) * z1 + std::sqrt(resid) * z2;
  out.next_rad_ms = mean_b + sd_b * z1;
  out.phase_rad = radms_to_radus(integral_us);
  return out;
}

double theory_sigma_rad_per_ms(double target_t2_us, double tau_c_us) {
  // Intensity lifetime 1/(sigma^2 tau_c) in the fast-bath limit.
  return radus_to_radms(1.0 / std::sqrt(target_t2_us * tau_c_us));
}

CalibrationOutcome calibrate_bath(
    double target_t2_us, double tau_c_us,
    const std::function<double(const OuParams&)>& fitted_t2_us_of,
    double rel_tol, int max_evaluations) {
  if (!(target_t2_us > 0.0))
    throw ValidationError("calibration target must be positive");
  if (!(tau_c_us > 0.0))
    throw ValidationError("calibration tau_c must be positive");

  auto make = [&](double sigma) {
    OuParams p;
    p.enabled = true;
    p.tau_c_us = tau_c_us;
    p.sigma_rad_per_ms = sigma;
    return p;
  };

  int evaluations = 0;
  auto fitted = [&](double sigma) {
    ++evaluations;
    return fitted_t2_us_of(make(sigma));
  };

  // Fitted T2 decreases with sigma; bracket the target, then bisect in log
  // space.
  const double guess = theory_sigma_rad_per_ms(target_t2_us, tau_c_us);
  double lo = guess / 16.0, hi = guess * 16.0;
  double f_lo = fitted(lo);
  while (!(f_lo > target_t2_us) && evaluations < max_evaluations) {
    lo /= 8.0;
    f_lo = fitted(lo);
  }
  double f_hi = fitted(hi);
  while (!(f_hi < target_t2_us) && evaluations < max_evaluations) {
    hi *= 8.0;
    f_hi = fitted(hi);
  }
  if (!(f_lo > target_t2_us) || !(f_hi < target_t2_us))
    throw EngineError("bath calibration failed to bracket the target");

  double best_sigma = hi, best_fit = f_hi;
  while (evaluations < max_evaluations) {
    const double mid = std::sqrt(lo * hi);
    const double f_mid = fitted(mid);
    if (std::abs(f_mid - target_t2_us) <
        std::abs(best_fit - target_t2_us)) {
      best_sigma = mid;
      best_fit = f_mid;
    }
    if (std::abs(f_mid - target_t2_us) <= rel_tol * target_t2_us) break;
    if (f_mid > target_t2_us)
      lo = mid;
    else
      hi = mid;
  }
  if (std::abs(best_fit - target_t2_us) > 5.0 * rel_tol * target_t2_us)
    throw EngineError("bath calibration did not converge");

  CalibrationOutcome out;
  out.params = make(best_sigma);
  out.fitted_t2_us = best_fit;
  out.evaluations = evaluations;
  return out;
}

}  // namespace echomem::ens
