#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace echomem::model {

// Three-level lambda scheme: two ground hyperfine levels |i>, |t> and one
// optically excited level |e>.  Frequencies are offsets of the prepared
// absorption lines inside the spectral pit.
struct LevelScheme {
  std::array<std::string, 3> labels{"i", "t", "e"};
  double hf_splitting_mhz = 14.87;  // |i> - |t> ground splitting
  double line_ie_mhz = 12.2;        // prepared (i)-(e) peak position
  double line_te_mhz = 27.0;        // (t)-(e) background line position
};

struct MaterialParams {
  double optical_t2_us = 11.5;         // homogeneous optical coherence time
  double optical_peak_fwhm_mhz = 1.5;  // prepared absorption peak width
  double spin_fwhm_khz = 45.0;         // spin transition inhomogeneous width
  std::optional<double> excited_t1_us{};  // disabled unless set
  double transfer_target = 0.87;       // per-pulse field transfer efficiency
};

LevelScheme default_scheme();
MaterialParams default_material();

// Returns the list of violated invariants, empty when everything holds.
// `offset_tol_mhz` absorbs rounding between the line positions and the
// quoted splitting.
std::vector<std::string> validate(const LevelScheme& scheme,
                                  const MaterialParams& mat,
                                  double offset_tol_mhz = 0.1);

}  // namespace echomem::model
