#pragma once

// Matchline circuit tier.
//
// Closed-form single-node RC discharge of the matchline, and a numerical
// two-node model: the sense node V_o (capacitance c_o) drains through the
// evaluation transistor into the matchline (capacitance c_ml), which drains
// to ground through the conducting mismatch branches. The evaluation
// transistor is an NMOS whose source is the matchline, so its gate bias
// V_eval holds V_o high until the matchline has fallen below
// V_eval - V_tn. Lower V_eval therefore needs a longer discharge, which is
// how a single sense deadline serves every mismatch threshold.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tapcam/cam_core.hpp"
#include "tapcam/device.hpp"

namespace tapcam::transient {

using cam::CamArray;
using cam::CellState;
using cam::TernaryBit;
using device::BranchParams;

struct CircuitParams {
  double c_cell = 0.04e-15;    // F per cell on the matchline
  double c_wire = 1.5e-15;     // F, fixed matchline wiring
  double c_o = 1e-15;          // F, sense node
  double vdd = 1.0;            // V, precharge level
  double sa_threshold = 0.75;  // V, sense-amp trip point on V_o
  double sense_window = 1e-9;  // s
  double dt = 1e-12;           // s, integration step
  double eval_k = 200e-6;      // A/V^2
  double eval_vtn = 0.3;       // V

  double c_ml(std::size_t wordlength) const noexcept {
    return static_cast<double>(wordlength) * c_cell + c_wire;
  }

  // Same card at another supply; the SA trip point keeps its ratio to VDD.
  CircuitParams at_vdd(double new_vdd) const;

  void validate() const;
};

// Threshold -> V_eval, strictly decreasing in threshold.
class VEvalTable {
 public:
  VEvalTable() = default;
  explicit VEvalTable(std::map<int, double> entries);

  // Reference entries for a 64-bit array.
  static VEvalTable reference();

  bool contains(int threshold) const { return entries_.count(threshold) > 0; }
  double at(int threshold) const;
  const std::map<int, double>& entries() const noexcept { return entries_; }
  bool strictly_decreasing() const;

 private:
  std::map<int, double> entries_;
};

struct Calibration {
  VEvalTable table;
  double sense_deadline = 0.0;
  double guard_band = 0.0;
  std::size_t wordlength = 0;
};

struct TransientTrace {
  std::vector<double> times;
  std::vector<double> v_ml;
  std::vector<double> v_o;
  std::vector<bool> sa_out;
  std::optional<double> crossing_time;
  // Energy dissipated in the transistor and mismatch branches.
  double discharge_energy = 0.0;
};

// --- closed-form RC model -------------------------------------------------

// (r_on + r_series) / n; n must be >= 1.
double equivalent_resistance(std::size_t n_mismatch, const BranchParams& params);

// U0 * exp(-t / (R_n C_M)); U0 for n = 0.
double ml_voltage_analytic(double t, std::size_t n_mismatch,
                           const BranchParams& params,
                           const CircuitParams& circuit,
                           std::size_t wordlength);

double discharge_rate(double t, std::size_t n_mismatch,
                      const BranchParams& params, const CircuitParams& circuit,
                      std::size_t wordlength);

// U_n(t) - U_{n+1}(t).
double sense_margin(double t, std::size_t n_mismatch,
                    const BranchParams& params, const CircuitParams& circuit,
                    std::size_t wordlength);

// Time maximising sense_margin for n >= 1 (closed form). For n = 0 the
// margin grows without bound in t, so there is no interior optimum and
// nullopt is returned.
std::optional<double> optimal_sense_time(std::size_t n_mismatch,
                                         const BranchParams& params,
                                         const CircuitParams& circuit,
                                         std::size_t wordlength);

// --- numerical model ------------------------------------------------------

// Square-law NMOS; v_gate is the gate overdrive reference (gate-to-source)
// and v_ds the drain-to-source drop, both >= 0.
double eval_transistor_current(double v_gate, double v_ds,
                               const CircuitParams& circuit);

struct SimOptions {
  bool record = true;             // keep the waveform samples
  bool stop_at_crossing = false;  // end as soon as V_o trips the SA
};

// Integrates the two-node network for `duration` seconds with fixed-step
// RK4. `ml_conductance` is the summed conductance of the conducting
// branches (0 for a matching row).
TransientTrace simulate_matchline(double ml_conductance, double c_ml,
                                  double v_eval, const CircuitParams& circuit,
                                  double duration, SimOptions options = {});

TransientTrace simulate_search(std::span<const CellState> row,
                               std::span<const TernaryBit> query,
                               double v_eval, const BranchParams& params,
                               const CircuitParams& circuit, double duration,
                               SimOptions options = {});

// Row of a (possibly varied) array; each conducting branch uses its own
// parameters.
TransientTrace simulate_row(const CamArray& array, std::size_t row,
                            std::span<const TernaryBit> query, double v_eval,
                            const CircuitParams& circuit, double duration,
                            SimOptions options = {});

// Crossing time for k nominal mismatches, searched up to `horizon`.
std::optional<double> crossing_time(std::size_t k, double v_eval,
                                    const BranchParams& params,
                                    const CircuitParams& circuit,
                                    std::size_t wordlength, double horizon);

// Chooses V_eval per threshold n so that, at deadline T = sense_window,
// n + 1 mismatches trip the SA by T(1 - guard) and n mismatches not before
// T(1 + guard). Throws Error(Infeasible) naming the failing thresholds.
Calibration calibrate_veval(std::span<const int> thresholds,
                            const BranchParams& params,
                            const CircuitParams& circuit,
                            std::size_t wordlength, double guard_band = 0.05);

struct GuardCheck {
  int threshold = 0;
  double v_eval = 0.0;
  std::optional<double> t_n;   // crossing with n mismatches
  std::optional<double> t_n1;  // crossing with n + 1 mismatches
  bool pass = false;
};

// Replays a calibration and checks the guard band for every entry.
std::vector<GuardCheck> verify_calibration(const Calibration& cal,
                                           const BranchParams& params,
                                           const CircuitParams& circuit);

// Rows whose sense amp has not tripped by the deadline. Thresholds at or
// above the wordlength match every row without simulation.
std::vector<std::size_t> threshold_match_transient(
    const CamArray& array, std::span<const TernaryBit> query, int threshold,
    const Calibration& cal, const CircuitParams& circuit);

// Transient sense decisions for a nominal (uniform) array, tabulated per
// calibrated threshold and mismatch count k = 0..wordlength.
class SenseTable {
 public:
  SenseTable(const Calibration& cal, const CircuitParams& circuit,
             const BranchParams& nominal);

  bool has_threshold(int threshold) const;
  // True when a row with k mismatches is sensed as a match.
  bool matched(int threshold, std::size_t k) const;

 private:
  std::size_t wordlength_;
  std::map<int, std::vector<bool>> decisions_;
};

// Sense window and step rescaled by the matchline capacitance ratio, for
// running a card tuned at `reference_wordlength` on another geometry.
CircuitParams scaled_for_wordlength(const CircuitParams& circuit,
                                    std::size_t wordlength,
                                    std::size_t reference_wordlength);

// --- files ----------------------------------------------------------------

void write_trace_csv(std::ostream& out, const TransientTrace& trace);

// JSON key-value file: thresholds, V_eval, deadline, guard band.
void write_calibration(std::ostream& out, const Calibration& cal,
                       const std::string& config_hash = {});
Calibration read_calibration(std::istream& in);

}  // namespace tapcam::transient
