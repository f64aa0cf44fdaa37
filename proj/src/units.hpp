#pragma once

#include <cmath>

// Internal unit conventions: time in microseconds, angular frequency in
// rad/us.  Linear frequencies keep their natural units (MHz, kHz) in the
// public parameter structs and are converted at the point of use.
namespace echomem {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline constexpr double mhz_to_radus(double f_mhz) { return kTwoPi * f_mhz; }
inline constexpr double khz_to_radus(double f_khz) { return kTwoPi * f_khz * 1e-3; }
inline constexpr double radms_to_radus(double w_radms) { return w_radms * 1e-3; }
inline constexpr double radus_to_radms(double w_radus) { return w_radus * 1e3; }
inline constexpr double deg_to_rad(double d) { return d * kPi / 180.0; }
inline constexpr double rad_to_deg(double r) { return r * 180.0 / kPi; }

// FWHM of a gaussian <-> standard deviation.
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

}  // namespace echomem
