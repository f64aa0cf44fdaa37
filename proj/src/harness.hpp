#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "engine.hpp"
#include "ensemble.hpp"
#include "model.hpp"
#include "observables.hpp"
#include "sequence.hpp"

namespace echomem::harness {

enum class ExperimentKind { StorageSweep, PhaseSweep, BathCalibration, Reference };

const char* kind_name(ExperimentKind k);

struct InputPulseConfig {
  double offset_us = 0.0;  // <= 0, relative to the primary input
  double fwhm_ns = 200.0;
  double area_pi = 0.1;
  double phase_deg = 0.0;
};

struct TransferConfig {
  double fwhm_us = 2.25;
  double sweep_mhz = 2.0;
  std::optional<double> peak_rabi_radus{};  // unset: calibrate to the target
};

struct RfConfig {
  double duration_us = 5.0;
  double area_pi = 1.0;
};

struct RefocusConfig {
  double fwhm_ns = 425.0;
  double area_pi = 1.0;
};

struct RecordConfig {
  std::optional<double> window_halfwidth_us{};  // unset: 3x expected echo width
  double dt_us = 0.01;
  double vis_window_ns = 50.0;
};

struct BathCalibrationConfig {
  double target_t2_us = 230.0;
  double tau_c_us = 10.0;
  int ions = 2000;
  int grid_points = 10;
};

struct OutputConfig {
  std::string dir = "out";
  bool write_traces = false;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::StorageSweep;
  uint64_t seed = 1;
  int ions = 1000;
  int workers = 0;  // 0: hardware concurrency
  int shots = 1;
  bool randomize_input_phase = false;

  model::LevelScheme scheme;
  model::MaterialParams material;
  ens::DistributionSpec distribution;
  ens::OuParams bath;
  std::optional<BathCalibrationConfig> bath_calibration{};

  seq::DdSpec dd;
  std::vector<InputPulseConfig> inputs;
  double t12_us = 2.0;
  double t34_us = 2.0;
  TransferConfig transfer;
  RfConfig rf;
  RefocusConfig refocus;

  std::vector<double> storage_grid_ms;   // storage sweep / calibration check
  std::vector<double> phase_grid_deg;    // phase sweep
  std::optional<double> storage_ms{};    // phase-sweep storage time

  RecordConfig record;
  eng::PropagationConfig propagation;
  OutputConfig output;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
void validate_config(const ExperimentConfig& cfg);

struct SweepPoint {
  double storage_ms = 0.0;
  double requested_ms = 0.0;
  double eta = 0.0;
  double stderr_ = 0.0;
  int dd_repetitions = 0;
};

struct PhaseResult {
  double phi_deg = 0.0;
  double i_n = 0.0;        // normalized to the grid maximum
  double stderr_ = 0.0;
  double raw_intensity = 0.0;
};

struct TraceExport {
  std::string label;
  obs::EchoTrace trace;
};

struct RunResult {
  ExperimentKind kind = ExperimentKind::StorageSweep;
  std::string config_echo_json;  // reproduces the run byte for byte

  std::vector<SweepPoint> sweep_points;
  obs::DecayFit decay_fit;
  bool have_decay_fit = false;

  std::vector<PhaseResult> phase_points;
  obs::VisibilityFit visibility_fit;
  obs::DoubleGaussianFit double_gaussian_fit;
  bool have_visibility_fit = false;

  ens::OuParams calibrated_bath;
  double calibration_fitted_t2_us = 0.0;
  int calibration_evaluations = 0;
  bool have_calibration = false;

  double reference_energy = 0.0;
  double transfer_field_efficiency = 0.0;
  double transfer_peak_rabi_radus = 0.0;

  std::vector<std::string> warnings;
  std::vector<TraceExport> traces;

  double wall_seconds = 0.0;
  double ion_runs_per_second = 0.0;
  long long ion_runs = 0;
  int workers_used = 0;
};

RunResult run_experiment(const ExperimentConfig& cfg);

// Serialized result document: {kind, config, data, fits, loss_budget,
// warnings, meta}.
nlohmann::json result_to_json(const RunResult& result);
std::string result_summary(const RunResult& result);

// Writes the result document plus the CSV data files into `dir`.
void write_outputs(const RunResult& result, const std::string& dir,
                   bool include_traces);

// Peak transfer-pulse amplitude reaching `target` field efficiency at band
// center, found by bisection on a dephasing-free single-ion simulation.
double calibrate_transfer_amplitude(const TransferConfig& transfer,
                                    double target,
                                    const eng::PropagationConfig& propagation);

}  // namespace echomem::harness
