#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "harness.hpp"
#include "units.hpp"

namespace echomem::harness {

using nlohmann::json;

namespace {

void require_keys(const json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!obj.is_object())
    throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key))
      throw ValidationError("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_opt(const json& obj, const char* key, std::optional<double>& out) {
  if (obj.contains(key) && !obj.at(key).is_null())
    out = obj.at(key).get<double>();
}

ExperimentKind parse_kind(const std::string& name) {
  if (name == "storage_sweep") return ExperimentKind::StorageSweep;
  if (name == "phase_sweep") return ExperimentKind::PhaseSweep;
  if (name == "bath_calibration") return ExperimentKind::BathCalibration;
  if (name == "reference") return ExperimentKind::Reference;
  throw ValidationError("unknown experiment kind \"" + name + "\"");
}

seq::DdSpec::Kind parse_dd_kind(const std::string& name) {
  if (name == "two_pulse") return seq::DdSpec::Kind::TwoPulse;
  if (name == "cpmg") return seq::DdSpec::Kind::Cpmg;
  if (name == "kdd") return seq::DdSpec::Kind::Kdd;
  throw ValidationError("unknown decoupling kind \"" + name + "\"");
}

}  // namespace

const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::StorageSweep: return "storage_sweep";
    case ExperimentKind::PhaseSweep: return "phase_sweep";
    case ExperimentKind::BathCalibration: return "bath_calibration";
    case ExperimentKind::Reference: return "reference";
  }
  return "?";
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw ValidationError(std::string("config parse error: ") + err.what());
  }

  require_keys(doc, "config",
               {"kind", "seed", "ions", "workers", "shots",
                "randomize_input_phase", "material", "scheme", "distribution",
                "bath", "bath_calibration", "dd", "protocol",
                "storage_grid_ms", "phase_grid_deg", "storage_ms", "record",
                "engine", "output"});

  ExperimentConfig cfg;
  if (!doc.contains("kind"))
    throw ValidationError("config needs a \"kind\"");
  cfg.kind = parse_kind(doc.at("kind").get<std::string>());
  read(doc, "seed", cfg.seed);
  read(doc, "ions", cfg.ions);
  read(doc, "workers", cfg.workers);
  read(doc, "shots", cfg.shots);
  read(doc, "randomize_input_phase", cfg.randomize_input_phase);

  if (doc.contains("material")) {
    const auto& m = doc.at("material");
    require_keys(m, "material",
                 {"optical_t2_us", "optical_peak_fwhm_mhz", "spin_fwhm_khz",
                  "excited_t1_us", "transfer_target"});
    read(m, "optical_t2_us", cfg.material.optical_t2_us);
    read(m, "optical_peak_fwhm_mhz", cfg.material.optical_peak_fwhm_mhz);
    read(m, "spin_fwhm_khz", cfg.material.spin_fwhm_khz);
    read_opt(m, "excited_t1_us", cfg.material.excited_t1_us);
    read(m, "transfer_target", cfg.material.transfer_target);
  }

  if (doc.contains("scheme")) {
    const auto& s = doc.at("scheme");
    require_keys(s, "scheme", {"hf_splitting_mhz", "line_ie_mhz", "line_te_mhz"});
    read(s, "hf_splitting_mhz", cfg.scheme.hf_splitting_mhz);
    read(s, "line_ie_mhz", cfg.scheme.line_ie_mhz);
    read(s, "line_te_mhz", cfg.scheme.line_te_mhz);
  }

  // Distribution widths default to the material linewidths.
  cfg.distribution.optical_fwhm_mhz = cfg.material.optical_peak_fwhm_mhz;
  cfg.distribution.spin_fwhm_khz = cfg.material.spin_fwhm_khz;
  if (doc.contains("distribution")) {
    const auto& d = doc.at("distribution");
    require_keys(d, "distribution",
                 {"optical_profile", "optical_fwhm_mhz", "spin_fwhm_khz",
                  "rf_sigma", "optical_sigma"});
    if (d.contains("optical_profile")) {
      const auto name = d.at("optical_profile").get<std::string>();
      if (name == "gaussian")
        cfg.distribution.optical_profile = ens::DistributionSpec::Profile::Gaussian;
      else if (name == "lorentzian")
        cfg.distribution.optical_profile = ens::DistributionSpec::Profile::Lorentzian;
      else
        throw ValidationError("unknown optical profile \"" + name + "\"");
    }
    read(d, "optical_fwhm_mhz", cfg.distribution.optical_fwhm_mhz);
    read(d, "spin_fwhm_khz", cfg.distribution.spin_fwhm_khz);
    read(d, "rf_sigma", cfg.distribution.rf_sigma);
    read(d, "optical_sigma", cfg.distribution.optical_sigma);
  }
  cfg.distribution.count = cfg.ions;

  if (doc.contains("bath")) {
    const auto& b = doc.at("bath");
    require_keys(b, "bath", {"enabled", "tau_c_us", "sigma_rad_per_ms"});
    read(b, "enabled", cfg.bath.enabled);
    read(b, "tau_c_us", cfg.bath.tau_c_us);
    read(b, "sigma_rad_per_ms", cfg.bath.sigma_rad_per_ms);
  }

  if (doc.contains("bath_calibration") && !doc.at("bath_calibration").is_null()) {
    const auto& b = doc.at("bath_calibration");
    require_keys(b, "bath_calibration",
                 {"target_t2_us", "tau_c_us", "ions", "grid_points"});
    BathCalibrationConfig cal;
    read(b, "target_t2_us", cal.target_t2_us);
    read(b, "tau_c_us", cal.tau_c_us);
    read(b, "ions", cal.ions);
    read(b, "grid_points", cal.grid_points);
    cfg.bath_calibration = cal;
  } else if (cfg.kind == ExperimentKind::BathCalibration) {
    cfg.bath_calibration = BathCalibrationConfig{};
  }

  if (cfg.kind == ExperimentKind::BathCalibration)
    cfg.dd.kind = seq::DdSpec::Kind::TwoPulse;
  if (cfg.kind == ExperimentKind::PhaseSweep)
    cfg.dd.kind = seq::DdSpec::Kind::Kdd;
  if (doc.contains("dd")) {
    const auto& d = doc.at("dd");
    require_keys(d, "dd", {"kind", "tau_us", "repetitions"});
    if (d.contains("kind")) cfg.dd.kind = parse_dd_kind(d.at("kind").get<std::string>());
    read(d, "tau_us", cfg.dd.tau_us);
    read(d, "repetitions", cfg.dd.repetitions);
  }

  // Two staggered inputs for interference runs, one otherwise.
  cfg.inputs = {InputPulseConfig{}};
  if (cfg.kind == ExperimentKind::PhaseSweep) {
    cfg.inputs = {InputPulseConfig{.offset_us = -1.0}, InputPulseConfig{}};
    if (!cfg.storage_ms) cfg.storage_ms = 3.0;
  }
  if (doc.contains("protocol")) {
    const auto& p = doc.at("protocol");
    require_keys(p, "protocol",
                 {"t12_us", "t34_us", "inputs", "transfer", "rf", "refocus"});
    read(p, "t12_us", cfg.t12_us);
    read(p, "t34_us", cfg.t34_us);
    if (p.contains("inputs")) {
      cfg.inputs.clear();
      for (const auto& item : p.at("inputs")) {
        require_keys(item, "protocol.inputs[]",
                     {"offset_us", "fwhm_ns", "area_pi", "phase_deg"});
        InputPulseConfig in;
        read(item, "offset_us", in.offset_us);
        read(item, "fwhm_ns", in.fwhm_ns);
        read(item, "area_pi", in.area_pi);
        read(item, "phase_deg", in.phase_deg);
        cfg.inputs.push_back(in);
      }
    }
    if (p.contains("transfer")) {
      const auto& t = p.at("transfer");
      require_keys(t, "protocol.transfer",
                   {"fwhm_us", "sweep_mhz", "peak_rabi_radus"});
      read(t, "fwhm_us", cfg.transfer.fwhm_us);
      read(t, "sweep_mhz", cfg.transfer.sweep_mhz);
      read_opt(t, "peak_rabi_radus", cfg.transfer.peak_rabi_radus);
    }
    if (p.contains("rf")) {
      const auto& r = p.at("rf");
      require_keys(r, "protocol.rf", {"duration_us", "area_pi"});
      read(r, "duration_us", cfg.rf.duration_us);
      read(r, "area_pi", cfg.rf.area_pi);
    }
    if (p.contains("refocus")) {
      const auto& r = p.at("refocus");
      require_keys(r, "protocol.refocus", {"fwhm_ns", "area_pi"});
      read(r, "fwhm_ns", cfg.refocus.fwhm_ns);
      read(r, "area_pi", cfg.refocus.area_pi);
    }
  }

  if (doc.contains("storage_grid_ms"))
    cfg.storage_grid_ms = doc.at("storage_grid_ms").get<std::vector<double>>();
  else if (cfg.kind == ExperimentKind::StorageSweep ||
           cfg.kind == ExperimentKind::BathCalibration) {
    for (int k = 0; k < 12; ++k)
      cfg.storage_grid_ms.push_back(0.05 + k * (0.6 - 0.05) / 11.0);
  }

  if (doc.contains("phase_grid_deg"))
    cfg.phase_grid_deg = doc.at("phase_grid_deg").get<std::vector<double>>();
  else if (cfg.kind == ExperimentKind::PhaseSweep) {
    for (int k = 0; k < 8; ++k) cfg.phase_grid_deg.push_back(-45.0 * k);
  }
  read_opt(doc, "storage_ms", cfg.storage_ms);

  if (doc.contains("record")) {
    const auto& r = doc.at("record");
    require_keys(r, "record", {"window_halfwidth_us", "dt_us", "vis_window_ns"});
    read_opt(r, "window_halfwidth_us", cfg.record.window_halfwidth_us);
    read(r, "dt_us", cfg.record.dt_us);
    read(r, "vis_window_ns", cfg.record.vis_window_ns);
  }

  if (doc.contains("engine")) {
    const auto& e = doc.at("engine");
    require_keys(e, "engine",
                 {"pulse_step_frac", "gap_mode", "gap_step_us", "check_invariants"});
    read(e, "pulse_step_frac", cfg.propagation.pulse_step_frac);
    if (e.contains("gap_mode")) {
      const auto name = e.at("gap_mode").get<std::string>();
      if (name == "analytic")
        cfg.propagation.gap_mode = eng::PropagationConfig::GapMode::Analytic;
      else if (name == "stepped")
        cfg.propagation.gap_mode = eng::PropagationConfig::GapMode::Stepped;
      else
        throw ValidationError("unknown gap mode \"" + name + "\"");
    }
    read(e, "gap_step_us", cfg.propagation.gap_step_us);
    read(e, "check_invariants", cfg.propagation.check_invariants);
  }

  if (doc.contains("output")) {
    const auto& o = doc.at("output");
    require_keys(o, "output", {"dir", "write_traces"});
    read(o, "dir", cfg.output.dir);
    read(o, "write_traces", cfg.output.write_traces);
  }

  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> problems;

  for (const auto& diag : model::validate(cfg.scheme, cfg.material))
    problems.push_back(diag);

  if (cfg.ions < 1) problems.push_back("ions must be >= 1");
  if (cfg.shots < 1) problems.push_back("shots must be >= 1");
  if (cfg.workers < 0) problems.push_back("workers must be >= 0");

  try {
    ens::validate(cfg.distribution);
  } catch (const ValidationError& err) {
    problems.push_back(err.what());
  }
  try {
    ens::validate(cfg.bath);
  } catch (const ValidationError& err) {
    problems.push_back(err.what());
  }
  try {
    eng::validate(cfg.propagation);
  } catch (const ValidationError& err) {
    problems.push_back(err.what());
  }

  if (!(cfg.t12_us > 0.0) || !(cfg.t34_us > 0.0))
    problems.push_back("protocol delays must be positive");
  if (cfg.inputs.empty()) problems.push_back("at least one input pulse required");
  for (const auto& in : cfg.inputs) {
    if (in.offset_us > 0.0)
      problems.push_back("input offsets must be <= 0 (relative to the primary)");
    if (!(in.fwhm_ns > 0.0)) problems.push_back("input fwhm must be positive");
    if (in.area_pi < 0.0) problems.push_back("input area must be >= 0");
  }
  if (!(cfg.transfer.fwhm_us > 0.0))
    problems.push_back("transfer fwhm must be positive");
  if (cfg.transfer.sweep_mhz < 0.0)
    problems.push_back("transfer sweep must be >= 0");
  if (!(cfg.rf.duration_us > 0.0))
    problems.push_back("rf duration must be positive");
  if (!(cfg.rf.area_pi > 0.0)) problems.push_back("rf area must be positive");
  if (!(cfg.refocus.fwhm_ns > 0.0))
    problems.push_back("refocusing pulse fwhm must be positive");

  if (cfg.dd.kind != seq::DdSpec::Kind::TwoPulse &&
      !(cfg.dd.tau_us > cfg.rf.duration_us))
    problems.push_back("tau must exceed pulse duration");
  if (cfg.dd.repetitions < 1) problems.push_back("dd repetitions must be >= 1");

  if (!(cfg.record.dt_us > 0.0)) problems.push_back("record dt must be positive");
  if (!(cfg.record.vis_window_ns > 0.0))
    problems.push_back("visibility window must be positive");
  if (cfg.record.window_halfwidth_us && !(*cfg.record.window_halfwidth_us > 0.0))
    problems.push_back("record window halfwidth must be positive");

  const bool has_storage = !cfg.storage_grid_ms.empty();
  const bool has_phase = !cfg.phase_grid_deg.empty();
  switch (cfg.kind) {
    case ExperimentKind::StorageSweep:
      if (!has_storage) problems.push_back("storage sweep needs storage_grid_ms");
      if (has_phase)
        problems.push_back("storage sweep must not carry a phase grid");
      break;
    case ExperimentKind::PhaseSweep:
      if (!has_phase) problems.push_back("phase sweep needs phase_grid_deg");
      if (has_storage)
        problems.push_back("phase sweep must not carry a storage grid");
      if (static_cast<int>(cfg.phase_grid_deg.size()) < 4)
        problems.push_back("phase sweep needs at least 4 phases");
      if (cfg.inputs.size() != 2)
        problems.push_back("phase sweep needs exactly two input pulses");
      if (!cfg.storage_ms)
        problems.push_back("phase sweep needs storage_ms");
      break;
    case ExperimentKind::BathCalibration:
      if (!cfg.bath_calibration)
        problems.push_back("bath calibration needs a bath_calibration section");
      if (!has_storage)
        problems.push_back("bath calibration needs storage_grid_ms for verification");
      if (cfg.dd.kind != seq::DdSpec::Kind::TwoPulse)
        problems.push_back("bath calibration verifies the two-pulse protocol");
      break;
    case ExperimentKind::Reference:
      if (has_storage || has_phase)
        problems.push_back("reference runs take no sweep grids");
      break;
  }
  if (cfg.bath_calibration) {
    if (!(cfg.bath_calibration->target_t2_us > 0.0))
      problems.push_back("calibration target must be positive");
    if (!(cfg.bath_calibration->tau_c_us > 0.0))
      problems.push_back("calibration tau_c must be positive");
    if (cfg.bath_calibration->ions < 1 || cfg.bath_calibration->grid_points < 3)
      problems.push_back("calibration needs >= 1 ion and >= 3 grid points");
  }

  for (double t : cfg.storage_grid_ms)
    if (!(t > 0.0)) problems.push_back("storage times must be positive");
  for (size_t k = 1; k < cfg.storage_grid_ms.size(); ++k)
    if (!(cfg.storage_grid_ms[k] > cfg.storage_grid_ms[k - 1]))
      problems.push_back("storage grid must be strictly increasing");

  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["kind"] = kind_name(cfg.kind);
  doc["seed"] = cfg.seed;
  doc["ions"] = cfg.ions;
  doc["workers"] = cfg.workers;
  doc["shots"] = cfg.shots;
  doc["randomize_input_phase"] = cfg.randomize_input_phase;

  doc["material"] = {
      {"optical_t2_us", cfg.material.optical_t2_us},
      {"optical_peak_fwhm_mhz", cfg.material.optical_peak_fwhm_mhz},
      {"spin_fwhm_khz", cfg.material.spin_fwhm_khz},
      {"excited_t1_us", cfg.material.excited_t1_us
                            ? json(*cfg.material.excited_t1_us)
                            : json(nullptr)},
      {"transfer_target", cfg.material.transfer_target}};
  doc["scheme"] = {{"hf_splitting_mhz", cfg.scheme.hf_splitting_mhz},
                   {"line_ie_mhz", cfg.scheme.line_ie_mhz},
                   {"line_te_mhz", cfg.scheme.line_te_mhz}};
  doc["distribution"] = {
      {"optical_profile",
       cfg.distribution.optical_profile == ens::DistributionSpec::Profile::Gaussian
           ? "gaussian"
           : "lorentzian"},
      {"optical_fwhm_mhz", cfg.distribution.optical_fwhm_mhz},
      {"spin_fwhm_khz", cfg.distribution.spin_fwhm_khz},
      {"rf_sigma", cfg.distribution.rf_sigma},
      {"optical_sigma", cfg.distribution.optical_sigma}};
  doc["bath"] = {{"enabled", cfg.bath.enabled},
                 {"tau_c_us", cfg.bath.tau_c_us},
                 {"sigma_rad_per_ms", cfg.bath.sigma_rad_per_ms}};
  if (cfg.bath_calibration) {
    doc["bath_calibration"] = {
        {"target_t2_us", cfg.bath_calibration->target_t2_us},
        {"tau_c_us", cfg.bath_calibration->tau_c_us},
        {"ions", cfg.bath_calibration->ions},
        {"grid_points", cfg.bath_calibration->grid_points}};
  }
  doc["dd"] = {{"kind", seq::dd_kind_name(cfg.dd.kind)},
               {"tau_us", cfg.dd.tau_us},
               {"repetitions", cfg.dd.repetitions}};

  json inputs = json::array();
  for (const auto& in : cfg.inputs) {
    inputs.push_back({{"offset_us", in.offset_us},
                      {"fwhm_ns", in.fwhm_ns},
                      {"area_pi", in.area_pi},
                      {"phase_deg", in.phase_deg}});
  }
  doc["protocol"] = {
      {"t12_us", cfg.t12_us},
      {"t34_us", cfg.t34_us},
      {"inputs", inputs},
      {"transfer",
       {{"fwhm_us", cfg.transfer.fwhm_us},
        {"sweep_mhz", cfg.transfer.sweep_mhz},
        {"peak_rabi_radus", cfg.transfer.peak_rabi_radus
                                ? json(*cfg.transfer.peak_rabi_radus)
                                : json(nullptr)}}},
      {"rf", {{"duration_us", cfg.rf.duration_us}, {"area_pi", cfg.rf.area_pi}}},
      {"refocus",
       {{"fwhm_ns", cfg.refocus.fwhm_ns}, {"area_pi", cfg.refocus.area_pi}}}};

  if (!cfg.storage_grid_ms.empty()) doc["storage_grid_ms"] = cfg.storage_grid_ms;
  if (!cfg.phase_grid_deg.empty()) doc["phase_grid_deg"] = cfg.phase_grid_deg;
  if (cfg.storage_ms) doc["storage_ms"] = *cfg.storage_ms;

  doc["record"] = {{"window_halfwidth_us",
                    cfg.record.window_halfwidth_us
                        ? json(*cfg.record.window_halfwidth_us)
                        : json(nullptr)},
                   {"dt_us", cfg.record.dt_us},
                   {"vis_window_ns", cfg.record.vis_window_ns}};
  doc["engine"] = {
      {"pulse_step_frac", cfg.propagation.pulse_step_frac},
      {"gap_mode",
       cfg.propagation.gap_mode == eng::PropagationConfig::GapMode::Analytic
           ? "analytic"
           : "stepped"},
      {"gap_step_us", cfg.propagation.gap_step_us},
      {"check_invariants", cfg.propagation.check_invariants}};
  doc["output"] = {{"dir", cfg.output.dir},
                   {"write_traces", cfg.output.write_traces}};
  return doc;
}

}  // namespace echomem::harness
