#include "model.hpp"

#include <cmath>
#include <set>

namespace echomem::model {

LevelScheme default_scheme() { return LevelScheme{}; }

MaterialParams default_material() { return MaterialParams{}; }

std::vector<std::string> validate(const LevelScheme& scheme,
                                  const MaterialParams& mat,
                                  double offset_tol_mhz) {
  std::vector<std::string> diags;

  std::set<std::string> labels(scheme.labels.begin(), scheme.labels.end());
  if (labels.size() != 3)
    diags.push_back("level labels must be three distinct names");

  if (!(scheme.hf_splitting_mhz > 0.0))
    diags.push_back("splitting must be positive");

  const double offset_gap = scheme.line_te_mhz - scheme.line_ie_mhz;
  if (std::abs(offset_gap - scheme.hf_splitting_mhz) > offset_tol_mhz)
    diags.push_back("offset mismatch: line positions differ by " +
                    std::to_string(offset_gap) + " MHz, expected splitting " +
                    std::to_string(scheme.hf_splitting_mhz) + " MHz");

  if (!(mat.optical_t2_us > 0.0))
    diags.push_back("optical T2 must be positive");
  if (!(mat.optical_peak_fwhm_mhz > 0.0))
    diags.push_back("optical peak width must be positive");
  if (!(mat.spin_fwhm_khz > 0.0))
    diags.push_back("spin linewidth must be positive");
  if (mat.excited_t1_us && !(*mat.excited_t1_us > 0.0))
    diags.push_back("excited-state T1 must be positive when enabled");
  if (!(mat.transfer_target > 0.0) || mat.transfer_target > 1.0)
    diags.push_back("transfer efficiency must lie in (0, 1]");

  return diags;
}

}  // namespace echomem::model
