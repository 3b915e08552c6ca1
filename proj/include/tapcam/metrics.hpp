#pragma once

// Search energy and latency estimates, parameter sweeps, and Monte Carlo
// robustness of the threshold sensing.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tapcam/device.hpp"
#include "tapcam/transient.hpp"

namespace tapcam::metrics {

using device::BranchParams;
using device::VariationSpec;
using transient::CircuitParams;

struct EnergyConfig {
  double e_sa = 1e-15;                 // J per row sense
  double avg_mismatch_fraction = 0.5;  // drives the discharge estimate
  double c_gate = 0.1e-15;             // F, FeFET gate for write energy
};

struct EnergyReport {
  double e_precharge = 0.0;
  double e_sa = 0.0;
  double e_discharge = 0.0;
  double e_total = 0.0;
  double e_per_bit = 0.0;
  double latency = 0.0;
};

struct Geometry {
  std::size_t rows = 64;
  std::size_t wordlength = 64;
};

// Energy of one search over the whole array. Precharge restores every
// matchline and sense node; discharge energy comes from simulating a row
// with round(avg_mismatch_fraction * wordlength) mismatches at `v_eval`
// over `deadline`, which is also the reported latency.
EnergyReport search_energy(const Geometry& geometry,
                           const CircuitParams& circuit,
                           const BranchParams& params, double v_eval,
                           double deadline, const EnergyConfig& energy);

enum class SweepParam { Vdd, Threshold, Rows, Wordlength };

SweepParam parse_sweep_param(const std::string& name);
std::string to_string(SweepParam p);

struct SweepBase {
  BranchParams device;
  CircuitParams circuit;
  Geometry geometry;
  int threshold = 5;  // operating threshold when not swept
  double guard_band = 0.05;
  EnergyConfig energy;
  unsigned threads = 1;
};

struct SweepPoint {
  double value = 0.0;
  bool ok = false;
  EnergyReport energy;
  double v_eval = 0.0;
  // V_ml(n mismatches) - V_ml(n + 1 mismatches) at the deadline.
  double margin = 0.0;
  std::string error;
};

// One calibrate -> simulate -> energy pass per value. A point whose
// calibration is infeasible comes back with ok = false.
std::vector<SweepPoint> sweep(SweepParam param, std::span<const double> values,
                              const SweepBase& base);

void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points,
                     const std::string& config_hash = {});

struct MonteCarloConfig {
  BranchParams device;
  CircuitParams circuit;
  std::size_t wordlength = 64;
  double guard_band = 0.05;
  unsigned threads = 1;
};

struct MonteCarloReport {
  std::size_t runs = 0;
  int threshold = 0;
  double vdd = 0.0;
  double v_eval = 0.0;
  double sense_deadline = 0.0;
  std::vector<std::optional<double>> crossing_times_at_n;
  std::vector<std::optional<double>> crossing_times_at_n_plus_1;
  bool separable = false;
  // min(t_n) - max(t_n+1); +inf when every n-row stays matched.
  double worst_gap = 0.0;
};

// Calibrates V_eval at the nominal card, then for each run resamples every
// branch of an n-mismatch row and an (n+1)-mismatch row and records their
// crossing times.
MonteCarloReport monte_carlo_robustness(int threshold, std::size_t runs,
                                        const VariationSpec& spec, double vdd,
                                        const MonteCarloConfig& config);

void write_monte_carlo_csv(std::ostream& out, const MonteCarloReport& report,
                           const std::string& config_hash = {});
void write_monte_carlo_json(std::ostream& out, const MonteCarloReport& report,
                            const std::string& config_hash = {});

}  // namespace tapcam::metrics
