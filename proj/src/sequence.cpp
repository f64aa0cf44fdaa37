#include "sequence.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "error.hpp"
#include "units.hpp"

namespace echomem::seq {

namespace {

constexpr double kSupportSigmas = 3.0;  // smooth envelopes truncated here

// sech(beta*t) has amplitude 1/2 at beta*t = arccosh(2).
double sech_beta(double fwhm_us) {
  return 2.0 * std::acosh(2.0) / fwhm_us;
}

}  // namespace

const char* channel_name(Channel c) {
  switch (c) {
    case Channel::OpticalIE: return "optical_ie";
    case Channel::OpticalTE: return "optical_te";
    case Channel::SpinIT: return "spin_it";
  }
  return "?";
}

const char* dd_kind_name(DdSpec::Kind k) {
  switch (k) {
    case DdSpec::Kind::TwoPulse: return "two_pulse";
    case DdSpec::Kind::Cpmg: return "cpmg";
    case DdSpec::Kind::Kdd: return "kdd";
  }
  return "?";
}

Envelope Envelope::gaussian(double fwhm_us) {
  if (!(fwhm_us > 0.0)) throw ValidationError("gaussian fwhm must be positive");
  Envelope e;
  e.kind = Kind::Gaussian;
  e.fwhm_us = fwhm_us;
  return e;
}

Envelope Envelope::sech_chirp(double fwhm_us, double sweep_mhz) {
  if (!(fwhm_us > 0.0)) throw ValidationError("sech fwhm must be positive");
  if (sweep_mhz < 0.0) throw ValidationError("chirp sweep must be >= 0");
  Envelope e;
  e.kind = Kind::SechChirp;
  e.fwhm_us = fwhm_us;
  e.sweep_mhz = sweep_mhz;
  return e;
}

Envelope Envelope::rectangular(double duration_us) {
  if (!(duration_us > 0.0)) throw ValidationError("duration must be positive");
  Envelope e;
  e.kind = Kind::Rectangular;
  e.duration_us = duration_us;
  return e;
}

double Envelope::support_halfwidth_us() const {
  switch (kind) {
    case Kind::Gaussian:
    case Kind::SechChirp: return kSupportSigmas * fwhm_us;
    case Kind::Rectangular: return 0.5 * duration_us;
  }
  return 0.0;
}

double Envelope::width_us() const {
  return kind == Kind::Rectangular ? duration_us : fwhm_us;
}

double Envelope::value(double peak, double t_rel_us) const {
  switch (kind) {
    case Kind::Gaussian: {
      const double x = t_rel_us / fwhm_us;
      return peak * std::exp(-4.0 * M_LN2 * x * x);
    }
    case Kind::SechChirp: {
      const double b = sech_beta(fwhm_us);
      return peak / std::cosh(b * t_rel_us);
    }
    case Kind::Rectangular:
      return std::abs(t_rel_us) <= 0.5 * duration_us ? peak : 0.0;
  }
  return 0.0;
}

double Envelope::inst_detuning_mhz(double t_rel_us) const {
  if (kind != Kind::SechChirp || sweep_mhz == 0.0) return 0.0;
  const double b = sech_beta(fwhm_us);
  return 0.5 * sweep_mhz * std::tanh(b * t_rel_us);
}

double Envelope::chirp_phase_rad(double t_rel_us) const {
  if (kind != Kind::SechChirp || sweep_mhz == 0.0) return 0.0;
  const double b = sech_beta(fwhm_us);
  // 2*pi * (sweep/2) * Integral tanh(b s) ds = pi*sweep*log(cosh(b t))/b
  return kPi * sweep_mhz * std::log(std::cosh(b * t_rel_us)) / b;
}

double calibrate_peak_for_area(const Envelope& env, double area_rad) {
  if (!(area_rad > 0.0)) throw ValidationError("pulse area must be positive");
  switch (env.kind) {
    case Envelope::Kind::Rectangular:
      return area_rad / env.duration_us;
    case Envelope::Kind::Gaussian:
      // Integral of exp(-4 ln2 t^2/f^2) = f * sqrt(pi / (4 ln2))
      return area_rad * 2.0 * std::sqrt(M_LN2 / kPi) / env.fwhm_us;
    case Envelope::Kind::SechChirp:
      // Integral of sech(beta t) = pi / beta
      return area_rad * sech_beta(env.fwhm_us) / kPi;
  }
  return 0.0;
}

void check_overlap(const std::vector<Pulse>& pulses) {
  std::map<Channel, std::vector<const Pulse*>> per_channel;
  for (const auto& p : pulses) per_channel[p.channel].push_back(&p);
  for (auto& [channel, list] : per_channel) {
    std::sort(list.begin(), list.end(), [](const Pulse* a, const Pulse* b) {
      return a->center_us < b->center_us;
    });
    for (size_t k = 1; k < list.size(); ++k) {
      if (list[k]->support_begin_us() < list[k - 1]->support_end_us() - 1e-12) {
        std::ostringstream os;
        os << "pulses on channel " << channel_name(channel)
           << " overlap near t = " << list[k]->center_us << " us";
        throw ValidationError(os.str());
      }
    }
  }
}

namespace {

Pulse place_rf(const Pulse& tmpl, double center_us, double phase_rad) {
  Pulse p = tmpl;
  p.center_us = center_us;
  p.phase_rad = phase_rad;
  return p;
}

Fragment finish_fragment(Fragment frag) {
  check_overlap(frag.pulses);
  return frag;
}

}  // namespace

Fragment build_two_pulse(double total_spin_time_us, const Pulse& rf_template) {
  const double dur = rf_template.env.duration_us;
  if (!(total_spin_time_us > 2.0 * dur))
    throw ValidationError("spin interval too short for two refocusing pulses");
  Fragment frag;
  frag.duration_us = total_spin_time_us;
  frag.pulses.push_back(place_rf(rf_template, 0.25 * total_spin_time_us, 0.0));
  frag.pulses.push_back(place_rf(rf_template, 0.75 * total_spin_time_us, 0.0));
  return finish_fragment(std::move(frag));
}

Fragment build_cpmg(int repetitions, double tau_us, const Pulse& rf_template) {
  if (repetitions < 1) throw ValidationError("repetition count must be >= 1");
  if (!(tau_us > rf_template.env.duration_us))
    throw ValidationError("tau must exceed pulse duration");
  Fragment frag;
  frag.duration_us = 2.0 * repetitions * tau_us;
  for (int k = 0; k < repetitions; ++k) {
    const double block = 2.0 * k * tau_us;
    frag.pulses.push_back(place_rf(rf_template, block + 0.5 * tau_us, 0.0));
    frag.pulses.push_back(place_rf(rf_template, block + 1.5 * tau_us, 0.0));
  }
  return finish_fragment(std::move(frag));
}

Fragment build_kdd(int repetitions, double tau_us, const Pulse& rf_template) {
  if (repetitions < 1) throw ValidationError("repetition count must be >= 1");
  if (!(tau_us > rf_template.env.duration_us))
    throw ValidationError("tau must exceed pulse duration");
  // Five-pulse composite block; the X/Y alternation removes the residual
  // error of a single block.
  static constexpr double kddOffsets[5] = {kPi / 6.0, 0.0, kPi / 2.0, 0.0,
                                           kPi / 6.0};
  Fragment frag;
  frag.duration_us = 20.0 * repetitions * tau_us;
  double t = 0.0;
  for (int k = 0; k < repetitions; ++k) {
    for (int sub = 0; sub < 4; ++sub) {
      const double phi = (sub % 2 == 0) ? 0.0 : kPi / 2.0;  // X, Y, X, Y
      for (int j = 0; j < 5; ++j) {
        frag.pulses.push_back(
            place_rf(rf_template, t + (0.5 + j) * tau_us, phi + kddOffsets[j]));
      }
      t += 5.0 * tau_us;
    }
  }
  return finish_fragment(std::move(frag));
}

Sequence assemble_protocol(const ProtocolSpec& spec) {
  if (spec.inputs.empty()) throw ValidationError("protocol needs an input pulse");
  if (!(spec.t12_us > 0.0) || !(spec.t34_us > 0.0))
    throw ValidationError("protocol delays must be positive");

  const double spin_interval =
      spec.dd.pulses.empty() ? spec.reference_gap_us : spec.dd.duration_us;
  if (spec.dd.pulses.empty() && !(spin_interval > 0.0))
    throw ValidationError("reference protocol needs a positive transfer gap");

  // Earliest support across inputs (offsets <= 0) and the leading transfer
  // pulse tail decides the global time origin.
  double earliest = 0.0;
  for (const auto& in : spec.inputs) {
    if (in.channel != Channel::OpticalIE)
      throw ValidationError("input pulses must drive the (i)-(e) transition");
    if (in.center_us > 0.0)
      throw ValidationError("input offsets are relative to t1 and must be <= 0");
    earliest = std::min(earliest, in.center_us - in.env.support_halfwidth_us());
  }
  earliest = std::min(
      earliest, spec.t12_us - spec.transfer_template.env.support_halfwidth_us());

  const double t1 = -earliest;  // shifts the earliest support to time zero
  const double t2 = t1 + spec.t12_us;
  const double t3 = t2 + spin_interval;
  const double t4 = t3 + spec.t34_us;

  Sequence sequence;
  for (const auto& in : spec.inputs) {
    Pulse p = in;
    p.center_us += t1;
    sequence.pulses.push_back(p);
  }

  Pulse transfer_in = spec.transfer_template;
  transfer_in.channel = Channel::OpticalTE;
  transfer_in.center_us = t2;
  Pulse transfer_out = transfer_in;
  transfer_out.center_us = t3;
  sequence.pulses.push_back(transfer_in);
  sequence.pulses.push_back(transfer_out);

  for (const auto& rf : spec.dd.pulses) {
    Pulse p = rf;
    if (p.channel != Channel::SpinIT)
      throw ValidationError("decoupling pulses must drive the spin transition");
    p.center_us += t2;
    sequence.pulses.push_back(p);
  }

  Pulse refocus = spec.refocus_template;
  refocus.channel = Channel::OpticalIE;
  refocus.center_us = t4;
  sequence.pulses.push_back(refocus);

  std::sort(sequence.pulses.begin(), sequence.pulses.end(),
            [](const Pulse& a, const Pulse& b) { return a.center_us < b.center_us; });
  check_overlap(sequence.pulses);

  Markers markers;
  markers.t_input_us = t1;
  markers.t_transfer_in_us = t2;
  markers.t_transfer_out_us = t3;
  markers.t_refocus_us = t4;
  markers.t_echo_us = t4 + spec.t12_us + spec.t34_us;
  markers.storage_us = markers.t_echo_us - t1;
  // The earliest absorbed input re-emerges last.
  double earliest_center = 0.0;
  for (const auto& in : spec.inputs)
    earliest_center = std::min(earliest_center, in.center_us);
  if (spec.inputs.size() > 1) {
    markers.t_input2_us = t1 + earliest_center;
    markers.t_echo2_us = markers.t_echo_us - earliest_center;
  }
  sequence.markers = markers;

  double end = markers.t_echo2_us.value_or(markers.t_echo_us) + 3.0;
  for (const auto& p : sequence.pulses) end = std::max(end, p.support_end_us());
  sequence.duration_us = end;
  return sequence;
}

std::string dump_sequence(const Sequence& sequence) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  if (sequence.markers) {
    const auto& m = *sequence.markers;
    os << "# markers: t_input=" << m.t_input_us;
    if (m.t_input2_us) os << " t_input2=" << *m.t_input2_us;
    os << " t_transfer_in=" << m.t_transfer_in_us
       << " t_transfer_out=" << m.t_transfer_out_us
       << " t_refocus=" << m.t_refocus_us << " t_echo=" << m.t_echo_us;
    if (m.t_echo2_us) os << " t_echo2=" << *m.t_echo2_us;
    os << " storage=" << m.storage_us << "\n";
  }
  os << "center_us\tchannel\tenvelope\twidth_us\tpeak_rabi_radus\tphase_deg"
        "\tdetuning_mhz\n";
  for (const auto& p : sequence.pulses) {
    const char* env = p.env.kind == Envelope::Kind::Gaussian     ? "gaussian"
                      : p.env.kind == Envelope::Kind::SechChirp  ? "sech_chirp"
                                                                 : "rectangular";
    os << p.center_us << '\t' << channel_name(p.channel) << '\t' << env << '\t'
       << p.env.width_us() << '\t' << p.peak_rabi_radus << '\t'
       << rad_to_deg(p.phase_rad) << '\t' << p.detuning_mhz << '\n';
  }
  return os.str();
}

}  // namespace echomem::seq
