#pragma once

#include <optional>
#include <string>
#include <vector>

namespace echomem::seq {

enum class Channel { OpticalIE, OpticalTE, SpinIT };

const char* channel_name(Channel c);

// Drive envelope.  Smooth kinds are truncated at +-3 fwhm; a rectangle at
// +-duration/2.  The sech kind carries a tanh frequency sweep whose total
// excursion is `sweep_mhz` (instantaneous detuning runs from -sweep/2 to
// +sweep/2 across the pulse).
struct Envelope {
  enum class Kind { Gaussian, SechChirp, Rectangular };

  Kind kind = Kind::Rectangular;
  double fwhm_us = 0.0;      // gaussian / sech amplitude FWHM
  double sweep_mhz = 0.0;    // sech chirp total sweep
  double duration_us = 0.0;  // rectangular only

  static Envelope gaussian(double fwhm_us);
  static Envelope sech_chirp(double fwhm_us, double sweep_mhz);
  static Envelope rectangular(double duration_us);

  double support_halfwidth_us() const;
  // Characteristic width used to pick integration steps.
  double width_us() const;

  // Amplitude shape at offset t_rel from the pulse center, scaled by peak.
  double value(double peak, double t_rel_us) const;
  // Instantaneous chirp detuning in MHz (zero for non-chirped kinds).
  double inst_detuning_mhz(double t_rel_us) const;
  // Accumulated chirp phase: 2*pi * integral of the instantaneous detuning
  // from the pulse center to t_rel, in radians.
  double chirp_phase_rad(double t_rel_us) const;
};

// Peak Rabi frequency (rad/us) giving the requested pulse area (radians).
double calibrate_peak_for_area(const Envelope& env, double area_rad);

struct Pulse {
  Channel channel = Channel::SpinIT;
  double center_us = 0.0;
  Envelope env;
  double peak_rabi_radus = 0.0;
  double phase_rad = 0.0;
  double detuning_mhz = 0.0;  // static offset of the drive carrier

  double support_begin_us() const { return center_us - env.support_halfwidth_us(); }
  double support_end_us() const { return center_us + env.support_halfwidth_us(); }
};

struct Markers {
  double t_input_us = 0.0;                  // primary input center
  std::optional<double> t_input2_us{};      // early input (two-pulse storage)
  double t_transfer_in_us = 0.0;            // pulse 2 center
  double t_transfer_out_us = 0.0;           // pulse 3 center
  double t_refocus_us = 0.0;                // optical pi pulse center
  double t_echo_us = 0.0;                   // expected primary echo
  std::optional<double> t_echo2_us{};       // expected echo of the early input
  double storage_us = 0.0;                  // input-to-echo storage time
};

struct Sequence {
  std::vector<Pulse> pulses;  // sorted by center time
  double duration_us = 0.0;
  std::optional<Markers> markers{};
};

// A timed block of pulses positioned relative to its own start.
struct Fragment {
  std::vector<Pulse> pulses;
  double duration_us = 0.0;
};

struct DdSpec {
  enum class Kind { TwoPulse, Cpmg, Kdd };
  Kind kind = Kind::Cpmg;
  int repetitions = 1;    // N, ignored for TwoPulse
  double tau_us = 30.0;   // inter-pulse delay
};

const char* dd_kind_name(DdSpec::Kind k);

// Two pi pulses at the quarter points of the interval.
Fragment build_two_pulse(double total_spin_time_us, const Pulse& rf_template);
// N repetitions of [tau/2 - pi(X) - tau - pi(X) - tau/2].
Fragment build_cpmg(int repetitions, double tau_us, const Pulse& rf_template);
// N repetitions of KDD(X)KDD(Y)KDD(X)KDD(Y); each KDD(phi) is five pi
// pulses spaced tau with phases phi + {30, 0, 90, 0, 30} degrees.
Fragment build_kdd(int repetitions, double tau_us, const Pulse& rf_template);

struct ProtocolSpec {
  std::vector<Pulse> inputs;   // centers are offsets <= 0 relative to t1
  double t12_us = 2.0;
  double t34_us = 2.0;
  Fragment dd;                 // may be empty (reference protocol)
  Pulse transfer_template;     // (t)-(e) channel
  Pulse refocus_template;      // (i)-(e) channel, area pi
  double reference_gap_us = 0.0;  // transfer separation when dd is empty
};

Sequence assemble_protocol(const ProtocolSpec& spec);

// Throws ValidationError when two pulses on one channel overlap in support.
void check_overlap(const std::vector<Pulse>& pulses);

std::string dump_sequence(const Sequence& sequence);

}  // namespace echomem::seq
