#include "observables.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "error.hpp"
#include "units.hpp"

namespace echomem::obs {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Small Levenberg-Marquardt driver with a forward-difference Jacobian.
// Good enough for the handful of low-dimensional fits here.
struct LmResult {
  VectorXd params;
  double residual_rms = 0.0;
  bool converged = false;
};

LmResult levenberg_marquardt(
    const std::function<VectorXd(const VectorXd&)>& residuals, VectorXd p,
    int max_iter = 200, double tol = 1e-12) {
  const int n = static_cast<int>(p.size());
  double lambda = 1e-3;
  VectorXd r = residuals(p);
  double cost = r.squaredNorm();
  bool converged = false;

  for (int iter = 0; iter < max_iter; ++iter) {
    MatrixXd jac(r.size(), n);
    for (int j = 0; j < n; ++j) {
      const double h = std::max(1e-8, 1e-7 * std::abs(p(j)));
      VectorXd pj = p;
      pj(j) += h;
      jac.col(j) = (residuals(pj) - r) / h;
    }
    const MatrixXd jtj = jac.transpose() * jac;
    const VectorXd jtr = jac.transpose() * r;

    bool stepped = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      MatrixXd damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const VectorXd delta = damped.ldlt().solve(-jtr);
      const VectorXd trial = p + delta;
      const VectorXd rt = residuals(trial);
      const double trial_cost = rt.squaredNorm();
      if (trial_cost < cost) {
        if (cost - trial_cost < tol * (1.0 + cost) && lambda <= 1e-3) {
          p = trial;
          r = rt;
          cost = trial_cost;
          converged = true;
        } else {
          p = trial;
          r = rt;
          cost = trial_cost;
        }
        lambda = std::max(lambda * 0.3, 1e-12);
        stepped = true;
        break;
      }
      lambda *= 10.0;
    }
    if (converged) break;
    if (!stepped) {
      converged = cost < 1e-20 || iter > 0;
      break;
    }
  }

  LmResult out;
  out.params = p;
  out.residual_rms = std::sqrt(cost / static_cast<double>(r.size()));
  out.converged = converged;
  return out;
}

}  // namespace

double echo_energy(const EchoTrace& trace, double begin_us, double end_us) {
  if (trace.samples() < 2) throw ValidationError("trace too short");
  if (!(end_us > begin_us)) throw ValidationError("empty integration window");
  if (begin_us < trace.t0_us - 1e-9 || end_us > trace.end_us() + 1e-9)
    throw ValidationError("integration window outside the trace grid");

  // Trapezoid over samples inside the window, with partial end bins
  // evaluated by linear interpolation.
  auto value_at = [&](double t) {
    const double x = (t - trace.t0_us) / trace.dt_us;
    const int k = std::clamp(static_cast<int>(std::floor(x)), 0,
                             trace.samples() - 2);
    const double frac = x - k;
    return (1.0 - frac) * trace.intensity[k] + frac * trace.intensity[k + 1];
  };

  const int first = static_cast<int>(
      std::ceil((begin_us - trace.t0_us) / trace.dt_us - 1e-9));
  const int last = static_cast<int>(
      std::floor((end_us - trace.t0_us) / trace.dt_us + 1e-9));

  double energy = 0.0;
  double prev_t = begin_us;
  double prev_v = value_at(begin_us);
  for (int k = std::max(first, 0); k <= std::min(last, trace.samples() - 1);
       ++k) {
    const double t = trace.time_at(k);
    if (t <= prev_t + 1e-15) continue;
    energy += 0.5 * (prev_v + trace.intensity[k]) * (t - prev_t);
    prev_t = t;
    prev_v = trace.intensity[k];
  }
  if (end_us > prev_t + 1e-15)
    energy += 0.5 * (prev_v + value_at(end_us)) * (end_us - prev_t);
  return energy;
}

double retrieval_efficiency(const EchoTrace& trace, double begin_us,
                            double end_us, double reference_energy) {
  if (!(reference_energy > 0.0))
    throw ValidationError("reference energy must be positive");
  return echo_energy(trace, begin_us, end_us) / reference_energy;
}

void DecayCurve::push(double t_ms, double eta, double se) {
  storage_ms.push_back(t_ms);
  efficiency.push_back(eta);
  stderr_.push_back(se);
}

DecayFit fit_t2eff(const DecayCurve& curve) {
  const int n = curve.size();
  if (n < 3) throw ValidationError("decay fit needs at least 3 points");
  for (int k = 0; k < n; ++k) {
    if (!(curve.efficiency[k] > 0.0))
      throw ValidationError("decay fit needs positive efficiencies");
    if (k > 0 && !(curve.storage_ms[k] > curve.storage_ms[k - 1]))
      throw ValidationError("storage times must be strictly increasing");
  }

  const bool have_se = static_cast<int>(curve.stderr_.size()) == n &&
                       std::all_of(curve.stderr_.begin(), curve.stderr_.end(),
                                   [](double s) { return s > 0.0; });

  // Weighted linear regression on log(eta); variance of log(eta) is
  // (se/eta)^2 when errors are available.
  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (int k = 0; k < n; ++k) {
    const double x = curve.storage_ms[k];
    const double y = std::log(curve.efficiency[k]);
    const double w = have_se
                         ? std::pow(curve.efficiency[k] / curve.stderr_[k], 2)
                         : 1.0;
    sw += w;
    swx += w * x;
    swy += w * y;
    swxx += w * x * x;
    swxy += w * x * y;
  }
  const double denom = sw * swxx - swx * swx;
  if (std::abs(denom) < 1e-30)
    throw ValidationError("degenerate decay curve");
  const double slope = (sw * swxy - swx * swy) / denom;
  const double intercept = (swy * swxx - swx * swxy) / denom;

  DecayFit fit;
  if (slope >= 0.0) {
    // Non-decaying data: flag rather than report a negative lifetime.
    fit.t2eff_ms = std::numeric_limits<double>::infinity();
    fit.amplitude = std::exp(intercept);
    fit.converged = false;
    return fit;
  }

  // Refine (I0, k) on the linear scale.
  VectorXd p(2);
  p << std::exp(intercept), -slope;
  auto residuals = [&](const VectorXd& q) {
    VectorXd r(n);
    for (int k = 0; k < n; ++k) {
      const double model = q(0) * std::exp(-q(1) * curve.storage_ms[k]);
      const double w = have_se ? 1.0 / curve.stderr_[k] : 1.0;
      r(k) = w * (curve.efficiency[k] - model);
    }
    return r;
  };
  const LmResult lm = levenberg_marquardt(residuals, p);

  if (!(lm.params(1) > 0.0)) {
    fit.t2eff_ms = std::numeric_limits<double>::infinity();
    fit.amplitude = lm.params(0);
    fit.converged = false;
    return fit;
  }
  fit.amplitude = lm.params(0);
  fit.t2eff_ms = 2.0 / lm.params(1);
  fit.residual_rms = lm.residual_rms;
  fit.converged = lm.converged;
  return fit;
}

VisibilityFit fit_visibility(const std::vector<PhasePoint>& points) {
  const int n = static_cast<int>(points.size());
  if (n < 4) throw ValidationError("visibility fit needs at least 4 phases");
  double lo = points[0].phi_rad, hi = points[0].phi_rad;
  for (const auto& p : points) {
    lo = std::min(lo, p.phi_rad);
    hi = std::max(hi, p.phi_rad);
  }
  if (hi - lo < kPi - 1e-9)
    throw ValidationError("phase points must span at least pi");

  // I = a + b sin(phi) + c cos(phi) is linear in (a, b, c).
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d row{1.0, std::sin(p.phi_rad), std::cos(p.phi_rad)};
    ata += row * row.transpose();
    atb += row * p.intensity;
  }
  if (std::abs(ata.determinant()) < 1e-12)
    throw ValidationError("degenerate phase spread");
  const Eigen::Vector3d sol = ata.ldlt().solve(atb);

  const double a = sol(0), b = sol(1), c = sol(2);
  VisibilityFit fit;
  fit.i_max = 2.0 * a;
  const double modulation = std::hypot(b, c);
  double v = a > 0.0 ? modulation / a : 0.0;
  if (v > 1.0 || v < 0.0) {
    fit.clamped = true;
    v = std::clamp(v, 0.0, 1.0);
  }
  fit.visibility = v;
  fit.phase_offset_rad = modulation > 0.0 ? std::atan2(c, b) : 0.0;

  double ss = 0.0;
  for (const auto& p : points) {
    const double model = a + b * std::sin(p.phi_rad) + c * std::cos(p.phi_rad);
    ss += (p.intensity - model) * (p.intensity - model);
  }
  fit.residual_rms = std::sqrt(ss / n);
  return fit;
}

DoubleGaussianFit fit_double_gaussian(const EchoTrace& trace) {
  const int n = trace.samples();
  if (n < 16) throw ValidationError("trace too short for a two-component fit");

  // Seed the two components from the largest intensity sample and the
  // largest sample at least one estimated width away.
  int k1 = 0;
  for (int k = 0; k < n; ++k)
    if (trace.intensity[k] > trace.intensity[k1]) k1 = k;
  const double width_guess = 0.4;
  int k2 = -1;
  for (int k = 0; k < n; ++k) {
    if (std::abs(trace.time_at(k) - trace.time_at(k1)) < width_guess) continue;
    if (k2 < 0 || trace.intensity[k] > trace.intensity[k2]) k2 = k;
  }
  if (k2 < 0) k2 = (k1 + n / 2) % n;

  VectorXd p(7);
  p << std::sqrt(std::max(trace.intensity[k1], 1e-300)), trace.time_at(k1),
      width_guess, std::sqrt(std::max(trace.intensity[k2], 1e-300)),
      trace.time_at(k2), width_guess, 0.0;

  auto residuals = [&](const VectorXd& q) {
    VectorXd r(n);
    const std::complex<double> phase{std::cos(q(6)), std::sin(q(6))};
    for (int k = 0; k < n; ++k) {
      const double t = trace.time_at(k);
      const double g1 =
          std::exp(-4.0 * M_LN2 * std::pow((t - q(1)) / q(2), 2));
      const double g2 =
          std::exp(-4.0 * M_LN2 * std::pow((t - q(4)) / q(5), 2));
      const std::complex<double> model = q(0) * g1 + q(3) * phase * g2;
      r(k) = trace.intensity[k] - std::norm(model);
    }
    return r;
  };

  const LmResult lm = levenberg_marquardt(residuals, p, 400);
  DoubleGaussianFit fit;
  fit.amp1 = std::abs(lm.params(0));
  fit.center1_us = lm.params(1);
  fit.fwhm1_us = std::abs(lm.params(2));
  fit.amp2 = std::abs(lm.params(3));
  fit.center2_us = lm.params(4);
  fit.fwhm2_us = std::abs(lm.params(5));
  fit.rel_phase_rad = std::remainder(lm.params(6), kTwoPi);
  fit.residual_rms = lm.residual_rms;
  fit.converged = lm.converged;
  if (fit.center1_us > fit.center2_us) {
    std::swap(fit.amp1, fit.amp2);
    std::swap(fit.center1_us, fit.center2_us);
    std::swap(fit.fwhm1_us, fit.fwhm2_us);
    fit.rel_phase_rad = -fit.rel_phase_rad;
  }
  return fit;
}

}  // namespace echomem::obs
