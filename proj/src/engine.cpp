#include "engine.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "error.hpp"
#include "units.hpp"

namespace echomem::eng {

namespace {

constexpr Complex kI{0.0, 1.0};

struct ChannelIndices {
  int lower;
  int upper;
};

ChannelIndices channel_indices(seq::Channel c) {
  switch (c) {
    case seq::Channel::OpticalIE: return {kLevelI, kLevelE};
    case seq::Channel::OpticalTE: return {kLevelT, kLevelE};
    case seq::Channel::SpinIT: return {kLevelI, kLevelT};
  }
  throw EngineError("pulse on unknown channel");
}

double amplitude_scale(const ens::IonRealization& ion, seq::Channel c) {
  return c == seq::Channel::SpinIT ? ion.rf_scale : ion.optical_scale;
}

// Drive term of one pulse at absolute time t, added onto h.
void add_pulse_term(Matrix3& h, const seq::Pulse& p,
                    const ens::IonRealization& ion, double t_us) {
  const double t_rel = t_us - p.center_us;
  const double omega =
      p.env.value(p.peak_rabi_radus * amplitude_scale(ion, p.channel), t_rel);
  if (omega == 0.0) return;
  const double phase = p.phase_rad + mhz_to_radus(p.detuning_mhz) * t_rel +
                       p.env.chirp_phase_rad(t_rel);
  const auto idx = channel_indices(p.channel);
  const Complex term = 0.5 * omega * std::exp(kI * phase);
  h(idx.lower, idx.upper) += term;
  h(idx.upper, idx.lower) += std::conj(term);
}

void add_static_terms(Matrix3& h, const ens::IonRealization& ion,
                      double bath_rad_ms) {
  h(kLevelT, kLevelT) +=
      khz_to_radus(ion.delta_spin_khz) + radms_to_radus(bath_rad_ms);
  h(kLevelE, kLevelE) += mhz_to_radus(ion.delta_opt_mhz);
}

// U = exp(-i H dt) for a Hermitian 2x2 block embedded at (a, b), spectator c.
Matrix3 expm_block(const Matrix3& h, double dt, int a, int b, int c) {
  const double haa = h(a, a).real();
  const double hbb = h(b, b).real();
  const Complex hab = h(a, b);
  const double avg = 0.5 * (haa + hbb);
  const double dh = 0.5 * (haa - hbb);
  const double r = std::sqrt(dh * dh + std::norm(hab));

  const double angle = r * dt;
  const double cosr = std::cos(angle);
  const double sincr = r > 0.0 ? std::sin(angle) / r : dt;
  const Complex global = std::exp(-kI * (avg * dt));

  Matrix3 u = Matrix3::Zero();
  u(a, a) = global * (cosr - kI * dh * sincr);
  u(b, b) = global * (cosr + kI * dh * sincr);
  u(a, b) = global * (-kI * hab * sincr);
  u(b, a) = global * (-kI * std::conj(hab) * sincr);
  u(c, c) = std::exp(-kI * (h(c, c).real() * dt));
  return u;
}

Matrix3 expm_diagonal(const Matrix3& h, double dt) {
  Matrix3 u = Matrix3::Zero();
  for (int k = 0; k < 3; ++k) u(k, k) = std::exp(-kI * (h(k, k).real() * dt));
  return u;
}

Matrix3 expm_general(const Matrix3& h, double dt) {
  // Shift to a traceless matrix and solve the characteristic cubic
  // trigonometrically; eigenvalues are real by hermiticity.
  const double shift = (h(0, 0).real() + h(1, 1).real() + h(2, 2).real()) / 3.0;
  Matrix3 a = h;
  for (int k = 0; k < 3; ++k) a(k, k) -= shift;

  const Matrix3 a2 = a * a;
  const double q = (a2(0, 0).real() + a2(1, 1).real() + a2(2, 2).real()) / 6.0;
  const double scale = std::sqrt(std::max(q, 0.0));

  double lam[3];
  if (scale < 1e-14) {
    lam[0] = lam[1] = lam[2] = 0.0;
  } else {
    const double det = std::real(
        a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
        a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
        a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)));
    const double arg =
        std::clamp(det / (2.0 * scale * scale * scale), -1.0, 1.0);
    const double phi = std::acos(arg) / 3.0;
    for (int k = 0; k < 3; ++k)
      lam[k] = 2.0 * scale * std::cos(phi - kTwoPi * k / 3.0);
  }

  const double gap01 = std::abs(lam[0] - lam[1]);
  const double gap02 = std::abs(lam[0] - lam[2]);
  const double gap12 = std::abs(lam[1] - lam[2]);
  const double min_gap = std::min({gap01, gap02, gap12});
  const double norm = std::max({std::abs(lam[0]), std::abs(lam[1]),
                                std::abs(lam[2]), 1e-300});

  const Complex global = std::exp(-kI * (shift * dt));
  if (scale < 1e-14) return global * Matrix3::Identity();

  if (min_gap < 1e-7 * norm) {
    // Near-degenerate: spectral projectors become ill-conditioned.
    Eigen::SelfAdjointEigenSolver<Matrix3> solver(h);
    const auto& vecs = solver.eigenvectors();
    const auto& vals = solver.eigenvalues();
    Matrix3 u = Matrix3::Zero();
    for (int k = 0; k < 3; ++k)
      u += std::exp(-kI * (vals(k) * dt)) * vecs.col(k) * vecs.col(k).adjoint();
    return u;
  }

  // U = sum_k e^{-i lam_k dt} (A^2 + lam_k A + c_k I) / d_k on the shifted
  // matrix; c_k is the product of the other two eigenvalues.
  Matrix3 u = Matrix3::Zero();
  for (int k = 0; k < 3; ++k) {
    const int i = (k + 1) % 3;
    const int j = (k + 2) % 3;
    const double ck = lam[i] * lam[j];
    const double dk = (lam[k] - lam[i]) * (lam[k] - lam[j]);
    const Complex w = std::exp(-kI * (lam[k] * dt)) / dk;
    u += w * (a2 + lam[k] * a + ck * Matrix3::Identity());
  }
  return global * u;
}

enum class Structure { Diagonal, Block01, Block02, Block12, Full };

Structure classify(const Matrix3& h) {
  const bool z01 = h(0, 1) == Complex{0.0, 0.0};
  const bool z02 = h(0, 2) == Complex{0.0, 0.0};
  const bool z12 = h(1, 2) == Complex{0.0, 0.0};
  if (z01 && z02 && z12) return Structure::Diagonal;
  if (!z01 && z02 && z12) return Structure::Block01;
  if (z01 && !z02 && z12) return Structure::Block02;
  if (z01 && z02 && !z12) return Structure::Block12;
  return Structure::Full;
}

void check_state(const Matrix3& rho, const PropagationConfig& cfg,
                 double t_us) {
  if (!cfg.check_invariants) return;
  const double he = hermiticity_error(rho);
  const double te = trace_error(rho);
  if (he > cfg.herm_tol || te > cfg.trace_tol ||
      min_eigenvalue(rho) < -cfg.positivity_tol) {
    std::ostringstream os;
    os << "state invariant violated at t = " << t_us
       << " us (herm " << he << ", trace " << te << ", min eig "
       << min_eigenvalue(rho) << ")";
    throw EngineError(os.str());
  }
}

}  // namespace

FrameConvention FrameConvention::from_scheme(const model::LevelScheme& scheme) {
  FrameConvention f;
  f.f_ie_mhz = scheme.line_ie_mhz;
  f.f_it_mhz = scheme.hf_splitting_mhz;
  f.f_te_mhz = f.f_ie_mhz + f.f_it_mhz;
  return f;
}

bool FrameConvention::closed(double tol_mhz) const {
  return std::abs(f_te_mhz - f_ie_mhz - f_it_mhz) <= tol_mhz;
}

void validate(const PropagationConfig& cfg) {
  if (!(cfg.pulse_step_frac > 0.0) || cfg.pulse_step_frac > 0.05)
    throw ValidationError("pulse step must be at most 1/20 of the envelope width");
  if (!(cfg.gap_step_us > 0.0))
    throw ValidationError("gap step must be positive");
}

double hermiticity_error(const Matrix3& rho) {
  return (rho - rho.adjoint()).cwiseAbs().maxCoeff();
}

double trace_error(const Matrix3& rho) {
  return std::abs(rho.trace() - Complex{1.0, 0.0});
}

double min_eigenvalue(const Matrix3& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix3> solver(rho);
  return solver.eigenvalues().minCoeff();
}

Matrix3 expm_hermitian(const Matrix3& h, double dt_us) {
  switch (classify(h)) {
    case Structure::Diagonal: return expm_diagonal(h, dt_us);
    case Structure::Block01: return expm_block(h, dt_us, 0, 1, 2);
    case Structure::Block02: return expm_block(h, dt_us, 0, 2, 1);
    case Structure::Block12: return expm_block(h, dt_us, 1, 2, 0);
    case Structure::Full: return expm_general(h, dt_us);
  }
  return Matrix3::Identity();
}

void step_unitary(Matrix3& rho, const Matrix3& h, double dt_us) {
  const Matrix3 u = expm_hermitian(h, dt_us);
  rho = u * rho * u.adjoint();
}

void apply_dephasing(Matrix3& rho, double dt_us,
                     const model::MaterialParams& mat) {
  if (dt_us <= 0.0) return;
  const double f = std::exp(-dt_us / mat.optical_t2_us);
  rho(kLevelI, kLevelE) *= f;
  rho(kLevelE, kLevelI) *= f;
  rho(kLevelT, kLevelE) *= f;
  rho(kLevelE, kLevelT) *= f;
  if (mat.excited_t1_us) {
    const double g = std::exp(-dt_us / *mat.excited_t1_us);
    const Complex lost = rho(kLevelE, kLevelE) * (1.0 - g);
    rho(kLevelE, kLevelE) *= g;
    rho(kLevelI, kLevelI) += 0.5 * lost;
    rho(kLevelT, kLevelT) += 0.5 * lost;
    const double fc = std::exp(-0.5 * dt_us / *mat.excited_t1_us);
    rho(kLevelI, kLevelE) *= fc;
    rho(kLevelE, kLevelI) *= fc;
    rho(kLevelT, kLevelE) *= fc;
    rho(kLevelE, kLevelT) *= fc;
  }
}

Matrix3 hamiltonian_at(double t_us, const ens::IonRealization& ion,
                       const seq::Sequence& sequence, double bath_rad_ms) {
  Matrix3 h = Matrix3::Zero();
  add_static_terms(h, ion, bath_rad_ms);
  for (const auto& p : sequence.pulses) {
    if (t_us >= p.support_begin_us() && t_us <= p.support_end_us())
      add_pulse_term(h, p, ion, t_us);
  }
  return h;
}

BathStream BathStream::start(const ens::OuParams& params, uint64_t seed) {
  BathStream s;
  s.params = params;
  s.rng.reseed(seed);
  s.value_rad_ms =
      params.enabled ? params.sigma_rad_per_ms * s.rng.normal() : 0.0;
  return s;
}

void BathStream::advance(double dt_us) {
  if (!params.enabled || dt_us <= 0.0) return;
  value_rad_ms = ens::ou_step(params, value_rad_ms, dt_us, rng);
}

double BathStream::advance_with_phase(double dt_us) {
  if (!params.enabled || dt_us <= 0.0) return 0.0;
  const auto step = ens::ou_phase_step(params, value_rad_ms, dt_us, rng);
  value_rad_ms = step.next_rad_ms;
  return step.phase_rad;
}

namespace {

// Internal stepping over [t0, t1] with a piecewise-constant Hamiltonian
// sampled at step midpoints; bath and dephasing advance per step.
void step_span(Matrix3& rho, const std::vector<const seq::Pulse*>& active,
               double t0, double t1, double step_target,
               const ens::IonRealization& ion, BathStream& bath,
               const PropagationConfig& cfg, const model::MaterialParams& mat) {
  const double span = t1 - t0;
  if (span <= 0.0) return;
  const int n = std::max(1, static_cast<int>(std::ceil(span / step_target)));
  const double h = span / n;
  for (int k = 0; k < n; ++k) {
    const double t_mid = t0 + (k + 0.5) * h;
    Matrix3 ham = Matrix3::Zero();
    add_static_terms(ham, ion, bath.value_rad_ms);
    for (const auto* p : active) add_pulse_term(ham, *p, ion, t_mid);
    step_unitary(rho, ham, h);
    apply_dephasing(rho, h, mat);
    bath.advance(h);
    check_state(rho, cfg, t_mid);
  }
}

void gap_analytic(Matrix3& rho, double dt, const ens::IonRealization& ion,
                  BathStream& bath, const model::MaterialParams& mat) {
  if (dt <= 0.0) return;
  const double phase = bath.advance_with_phase(dt);
  const double theta_spin = khz_to_radus(ion.delta_spin_khz) * dt + phase;
  const double theta_opt = mhz_to_radus(ion.delta_opt_mhz) * dt;
  const Complex f_it = std::exp(kI * theta_spin);
  const Complex f_ie = std::exp(kI * theta_opt);
  const Complex f_te = std::exp(kI * (theta_opt - theta_spin));
  rho(kLevelI, kLevelT) *= f_it;
  rho(kLevelT, kLevelI) *= std::conj(f_it);
  rho(kLevelI, kLevelE) *= f_ie;
  rho(kLevelE, kLevelI) *= std::conj(f_ie);
  rho(kLevelT, kLevelE) *= f_te;
  rho(kLevelE, kLevelT) *= std::conj(f_te);
  apply_dephasing(rho, dt, mat);
}

void gap_stepped(Matrix3& rho, double dt, const ens::IonRealization& ion,
                 BathStream& bath, const PropagationConfig& cfg,
                 const model::MaterialParams& mat) {
  const int n = std::max(1, static_cast<int>(std::ceil(dt / cfg.gap_step_us)));
  const double h = dt / n;
  for (int k = 0; k < n; ++k) {
    Matrix3 ham = Matrix3::Zero();
    add_static_terms(ham, ion, bath.value_rad_ms);
    step_unitary(rho, ham, h);
    apply_dephasing(rho, h, mat);
    bath.advance(h);
    check_state(rho, cfg, k * h);
  }
}

// Precomputed per-sequence schedule: elementary spans with a constant set
// of active pulses, split at record sample times.
struct Span {
  double t0;
  double t1;
  std::vector<const seq::Pulse*> active;
  double step;
  int record_slot;  // sample index to record after this span, -1 if none
};

struct Schedule {
  std::vector<Span> spans;
  int total_samples = 0;
  std::vector<int> window_offsets;  // slot index of each window's first sample
};

Schedule build_schedule(const RunSpec& spec) {
  const auto& sequence = *spec.sequence;
  validate(spec.config);

  const auto frame = FrameConvention::from_scheme(spec.scheme);
  if (!frame.closed()) throw ValidationError("rotating frame does not close");

  std::vector<double> boundaries{0.0, sequence.duration_us};
  for (const auto& p : sequence.pulses) {
    boundaries.push_back(std::clamp(p.support_begin_us(), 0.0, sequence.duration_us));
    boundaries.push_back(std::clamp(p.support_end_us(), 0.0, sequence.duration_us));
  }

  Schedule schedule;
  std::vector<std::pair<double, int>> samples;  // (time, slot)
  int slot = 0;
  for (const auto& w : spec.windows) {
    schedule.window_offsets.push_back(slot);
    for (int k = 0; k < w.samples; ++k) {
      const double t = w.time_at(k);
      if (t < 0.0 || t > sequence.duration_us)
        throw ValidationError("record window extends beyond the sequence");
      samples.emplace_back(t, slot++);
      boundaries.push_back(t);
    }
  }
  schedule.total_samples = slot;
  std::sort(samples.begin(), samples.end());
  for (size_t k = 1; k < samples.size(); ++k) {
    if (samples[k].first - samples[k - 1].first < 1e-12)
      throw ValidationError("record windows overlap");
  }

  std::sort(boundaries.begin(), boundaries.end());
  boundaries.erase(std::unique(boundaries.begin(), boundaries.end(),
                               [](double a, double b) { return b - a < 1e-12; }),
                   boundaries.end());

  size_t sample_cursor = 0;
  for (size_t k = 0; k + 1 < boundaries.size(); ++k) {
    Span span;
    span.t0 = boundaries[k];
    span.t1 = boundaries[k + 1];
    const double mid = 0.5 * (span.t0 + span.t1);
    double step = spec.config.gap_step_us;
    for (const auto& p : sequence.pulses) {
      if (mid > p.support_begin_us() && mid < p.support_end_us()) {
        span.active.push_back(&p);
        step = std::min(step, p.env.width_us() * spec.config.pulse_step_frac);
      }
    }
    span.step = std::max(step, 1e-6);
    span.record_slot = -1;
    while (sample_cursor < samples.size() &&
           samples[sample_cursor].first <= span.t1 + 1e-12) {
      // Samples coincide with span boundaries by construction.
      span.record_slot = samples[sample_cursor].second;
      ++sample_cursor;
      break;
    }
    schedule.spans.push_back(std::move(span));
  }
  return schedule;
}

std::vector<Complex> run_ion_schedule(const ens::IonRealization& ion,
                                      const RunSpec& spec,
                                      const Schedule& schedule,
                                      uint64_t shot_salt) {
  Matrix3 rho = Matrix3::Zero();
  rho(kLevelI, kLevelI) = 1.0;  // preparation empties |t>

  BathStream bath = BathStream::start(
      spec.bath, shot_salt == 0 ? ion.noise_seed
                                : mix_seed(ion.noise_seed, shot_salt));

  std::vector<Complex> recorded(schedule.total_samples, Complex{0.0, 0.0});
  for (const auto& span : schedule.spans) {
    const double dt = span.t1 - span.t0;
    if (span.active.empty()) {
      if (spec.config.gap_mode == PropagationConfig::GapMode::Analytic)
        gap_analytic(rho, dt, ion, bath, *spec.material);
      else
        gap_stepped(rho, dt, ion, bath, spec.config, *spec.material);
    } else {
      step_span(rho, span.active, span.t0, span.t1, span.step, ion, bath,
                spec.config, *spec.material);
    }
    if (span.record_slot >= 0)
      recorded[span.record_slot] = rho(kLevelI, kLevelE);
  }
  return recorded;
}

}  // namespace

void evolve_pulse(Matrix3& rho, const seq::Pulse& pulse,
                  const ens::IonRealization& ion, BathStream& bath,
                  const PropagationConfig& cfg,
                  const model::MaterialParams& mat) {
  validate(cfg);
  std::vector<const seq::Pulse*> active{&pulse};
  const double step = pulse.env.width_us() * cfg.pulse_step_frac;
  step_span(rho, active, pulse.support_begin_us(), pulse.support_end_us(), step,
            ion, bath, cfg, mat);
}

void evolve_gap(Matrix3& rho, double dt_us, const ens::IonRealization& ion,
                BathStream& bath, const PropagationConfig& cfg,
                const model::MaterialParams& mat) {
  if (dt_us == 0.0) return;
  if (cfg.gap_mode == PropagationConfig::GapMode::Analytic)
    gap_analytic(rho, dt_us, ion, bath, mat);
  else
    gap_stepped(rho, dt_us, ion, bath, cfg, mat);
}

std::vector<std::vector<Complex>> run_ion(const ens::IonRealization& ion,
                                          const RunSpec& spec,
                                          uint64_t shot_salt) {
  const Schedule schedule = build_schedule(spec);
  const auto flat = run_ion_schedule(ion, spec, schedule, shot_salt);
  std::vector<std::vector<Complex>> out;
  for (size_t w = 0; w < spec.windows.size(); ++w) {
    const int begin = schedule.window_offsets[w];
    const int count = spec.windows[w].samples;
    out.emplace_back(flat.begin() + begin, flat.begin() + begin + count);
  }
  return out;
}

std::vector<EnsembleTrace> run_ensemble(
    const std::vector<ens::IonRealization>& ions, const RunSpec& spec,
    int workers, uint64_t shot_salt) {
  if (ions.empty()) throw ValidationError("ensemble must not be empty");
  const Schedule schedule = build_schedule(spec);
  const int n = static_cast<int>(ions.size());

  constexpr int kChunk = 64;   // fixed work grain, independent of workers
  constexpr int kBlocks = 16;  // fixed error-estimation blocks
  const int chunks = (n + kChunk - 1) / kChunk;

  std::vector<std::vector<Complex>> chunk_sums(
      chunks, std::vector<Complex>(schedule.total_samples, Complex{0, 0}));

  if (workers <= 0)
    workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, chunks);

  std::atomic<int> next_chunk{0};
  auto work = [&]() {
    for (;;) {
      const int c = next_chunk.fetch_add(1);
      if (c >= chunks) return;
      const int begin = c * kChunk;
      const int end = std::min(n, begin + kChunk);
      auto& sum = chunk_sums[c];
      for (int j = begin; j < end; ++j) {
        const auto rec = run_ion_schedule(ions[j], spec, schedule, shot_salt);
        for (int s = 0; s < schedule.total_samples; ++s) sum[s] += rec[s];
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  // Fixed-order reductions: chunk -> block -> total.
  const int nblocks = std::min(kBlocks, chunks);
  std::vector<std::vector<Complex>> block_sums(
      nblocks, std::vector<Complex>(schedule.total_samples, Complex{0, 0}));
  std::vector<int> block_counts(nblocks, 0);
  for (int c = 0; c < chunks; ++c) {
    const int b = c % nblocks;
    const int begin = c * kChunk;
    const int end = std::min(n, begin + kChunk);
    block_counts[b] += end - begin;
    for (int s = 0; s < schedule.total_samples; ++s)
      block_sums[b][s] += chunk_sums[c][s];
  }

  std::vector<Complex> total(schedule.total_samples, Complex{0, 0});
  for (int b = 0; b < nblocks; ++b)
    for (int s = 0; s < schedule.total_samples; ++s) total[s] += block_sums[b][s];

  std::vector<EnsembleTrace> traces;
  for (size_t w = 0; w < spec.windows.size(); ++w) {
    EnsembleTrace trace;
    trace.grid = spec.windows[w];
    const int begin = schedule.window_offsets[w];
    const int count = spec.windows[w].samples;
    trace.polarization.resize(count);
    trace.intensity.resize(count);
    for (int k = 0; k < count; ++k) {
      trace.polarization[k] = total[begin + k] / static_cast<double>(n);
      trace.intensity[k] = std::norm(trace.polarization[k]);
    }
    trace.block_sums.resize(nblocks);
    trace.block_counts = block_counts;
    for (int b = 0; b < nblocks; ++b)
      trace.block_sums[b].assign(block_sums[b].begin() + begin,
                                 block_sums[b].begin() + begin + count);
    traces.push_back(std::move(trace));
  }
  return traces;
}

}  // namespace echomem::eng
