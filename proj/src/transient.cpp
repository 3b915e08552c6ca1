#include "tapcam/transient.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include <fmt/format.h>

#include "json.hpp"
#include "tapcam/error.hpp"

namespace tapcam::transient {

using nlohmann::json;

CircuitParams CircuitParams::at_vdd(double new_vdd) const {
  CircuitParams c = *this;
  c.sa_threshold = sa_threshold / vdd * new_vdd;
  c.vdd = new_vdd;
  return c;
}

void CircuitParams::validate() const {
  auto pos = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!pos(c_cell) || !pos(c_wire) || !pos(c_o))
    fail(ErrorKind::Usage, "circuit: capacitances must be > 0");
  if (!pos(vdd)) fail(ErrorKind::Usage, "circuit: vdd must be > 0");
  if (!(sa_threshold > 0.0 && sa_threshold < vdd))
    fail(ErrorKind::Usage, "circuit: need 0 < sa_threshold < vdd");
  if (!pos(sense_window))
    fail(ErrorKind::Usage, "circuit: sense_window must be > 0");
  if (!pos(dt) || dt > sense_window / 1000.0 * (1.0 + 1e-12))
    fail(ErrorKind::Usage,
         fmt::format("circuit: dt {} s exceeds sense_window / 1000", dt));
  if (!pos(eval_k) || !std::isfinite(eval_vtn) || eval_vtn < 0.0)
    fail(ErrorKind::Usage, "circuit: invalid evaluation transistor card");
}

VEvalTable::VEvalTable(std::map<int, double> entries)
    : entries_(std::move(entries)) {}

VEvalTable VEvalTable::reference() {
  return VEvalTable({{0, 1.00}, {1, 0.75}, {2, 0.63},
                     {3, 0.52}, {4, 0.43}, {5, 0.37}});
}

double VEvalTable::at(int threshold) const {
  auto it = entries_.find(threshold);
  if (it == entries_.end())
    fail(ErrorKind::Usage,
         fmt::format("threshold {} is not in the V_eval table", threshold));
  return it->second;
}

bool VEvalTable::strictly_decreasing() const {
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& [n, v] : entries_) {
    if (!(v < prev)) return false;
    prev = v;
  }
  return true;
}

// --- closed form -----------------------------------------------------------

double equivalent_resistance(std::size_t n_mismatch,
                             const BranchParams& params) {
  if (n_mismatch == 0)
    fail(ErrorKind::Usage,
         "equivalent_resistance: no conduction path for 0 mismatches");
  return (params.r_on + params.r_series) / static_cast<double>(n_mismatch);
}

namespace {

void check_time(double t) {
  if (!(t >= 0.0)) fail(ErrorKind::Usage, "time must be >= 0");
}

double time_constant(std::size_t n, const BranchParams& params,
                     const CircuitParams& circuit, std::size_t wordlength) {
  return equivalent_resistance(n, params) * circuit.c_ml(wordlength);
}

}  // namespace

double ml_voltage_analytic(double t, std::size_t n_mismatch,
                           const BranchParams& params,
                           const CircuitParams& circuit,
                           std::size_t wordlength) {
  check_time(t);
  if (n_mismatch == 0) return circuit.vdd;
  return circuit.vdd *
         std::exp(-t / time_constant(n_mismatch, params, circuit, wordlength));
}

double discharge_rate(double t, std::size_t n_mismatch,
                      const BranchParams& params, const CircuitParams& circuit,
                      std::size_t wordlength) {
  check_time(t);
  if (n_mismatch == 0) return 0.0;
  const double tau = time_constant(n_mismatch, params, circuit, wordlength);
  return circuit.vdd * (-1.0 / tau) * std::exp(-t / tau);
}

double sense_margin(double t, std::size_t n_mismatch,
                    const BranchParams& params, const CircuitParams& circuit,
                    std::size_t wordlength) {
  check_time(t);
  return ml_voltage_analytic(t, n_mismatch, params, circuit, wordlength) -
         ml_voltage_analytic(t, n_mismatch + 1, params, circuit, wordlength);
}

std::optional<double> optimal_sense_time(std::size_t n_mismatch,
                                         const BranchParams& params,
                                         const CircuitParams& circuit,
                                         std::size_t wordlength) {
  if (n_mismatch == 0) return std::nullopt;
  // d/dt [e^{-a t} - e^{-b t}] = 0  =>  t = ln(b / a) / (b - a).
  const double a =
      1.0 / time_constant(n_mismatch, params, circuit, wordlength);
  const double b =
      1.0 / time_constant(n_mismatch + 1, params, circuit, wordlength);
  return std::log(b / a) / (b - a);
}

// --- numerical model ---------------------------------------------------------

double eval_transistor_current(double v_gate, double v_ds,
                               const CircuitParams& circuit) {
  const double ov = v_gate - circuit.eval_vtn;
  if (ov <= 0.0 || v_ds <= 0.0) return 0.0;
  if (v_ds < ov) return circuit.eval_k * (ov * v_ds - 0.5 * v_ds * v_ds);
  return 0.5 * circuit.eval_k * ov * ov;
}

namespace {

struct NodeState {
  double v_o, v_ml, energy;
};

struct Network {
  double g_ml, c_ml, c_o, v_eval;
  const CircuitParams* circuit;

  NodeState derivative(const NodeState& s) const {
    // V_o >= V_ml throughout (nothing recharges the matchline), so the
    // matchline is the transistor source.
    const double vgs = std::max(0.0, v_eval - s.v_ml);
    const double vds = std::max(0.0, s.v_o - s.v_ml);
    const double i_t = eval_transistor_current(vgs, vds, *circuit);
    const double i_ml = g_ml * s.v_ml;
    return {-i_t / c_o, (i_t - i_ml) / c_ml, i_t * vds + i_ml * s.v_ml};
  }
};

NodeState axpy(const NodeState& s, double h, const NodeState& d) {
  return {s.v_o + h * d.v_o, s.v_ml + h * d.v_ml, s.energy + h * d.energy};
}

}  // namespace

TransientTrace simulate_matchline(double ml_conductance, double c_ml,
                                  double v_eval, const CircuitParams& circuit,
                                  double duration, SimOptions options) {
  circuit.validate();
  if (!(ml_conductance >= 0.0) || !std::isfinite(ml_conductance))
    fail(ErrorKind::Usage, "simulate: matchline conductance must be >= 0");
  if (!(c_ml > 0.0)) fail(ErrorKind::Usage, "simulate: c_ml must be > 0");
  if (!(duration > 0.0) || !std::isfinite(duration))
    fail(ErrorKind::Usage, "simulate: duration must be > 0");
  if (!std::isfinite(v_eval)) fail(ErrorKind::Usage, "simulate: bad v_eval");

  const Network net{ml_conductance, c_ml, circuit.c_o, v_eval, &circuit};
  const double h = circuit.dt;
  const auto steps =
      static_cast<std::size_t>(std::ceil(duration / h - 1e-9));
  const double lo = -0.01;
  const double hi = circuit.vdd + 0.01;
  const double sa = circuit.sa_threshold;

  TransientTrace tr;
  if (options.record) {
    tr.times.reserve(steps + 1);
    tr.v_ml.reserve(steps + 1);
    tr.v_o.reserve(steps + 1);
    tr.sa_out.reserve(steps + 1);
  }
  auto push = [&](double t, const NodeState& s) {
    if (!options.record) return;
    tr.times.push_back(t);
    tr.v_ml.push_back(s.v_ml);
    tr.v_o.push_back(s.v_o);
    tr.sa_out.push_back(s.v_o > sa);
  };

  NodeState s{circuit.vdd, circuit.vdd, 0.0};
  push(0.0, s);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * h;
    const NodeState k1 = net.derivative(s);
    const NodeState k2 = net.derivative(axpy(s, 0.5 * h, k1));
    const NodeState k3 = net.derivative(axpy(s, 0.5 * h, k2));
    const NodeState k4 = net.derivative(axpy(s, h, k3));
    const NodeState next{
        s.v_o + h / 6.0 * (k1.v_o + 2 * k2.v_o + 2 * k3.v_o + k4.v_o),
        s.v_ml + h / 6.0 * (k1.v_ml + 2 * k2.v_ml + 2 * k3.v_ml + k4.v_ml),
        s.energy +
            h / 6.0 * (k1.energy + 2 * k2.energy + 2 * k3.energy + k4.energy)};
    if (!(next.v_o >= lo && next.v_o <= hi && next.v_ml >= lo &&
          next.v_ml <= hi))
      fail(ErrorKind::Numeric,
           fmt::format("simulate: node voltage left [{}, {}] V at t = {} s; "
                       "dt = {} s is too large for this circuit card",
                       lo, hi, t + h, h));
    if (!tr.crossing_time && next.v_o <= sa) {
      tr.crossing_time = t + h * (s.v_o - sa) / (s.v_o - next.v_o);
    }
    s = next;
    push(t + h, s);
    if (options.stop_at_crossing && tr.crossing_time) break;
  }
  tr.discharge_energy = s.energy;
  return tr;
}

namespace {

double row_conductance(std::span<const CellState> row,
                       std::span<const TernaryBit> query,
                       const auto& params_of) {
  double g = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (!row[c].valid())
      fail(ErrorKind::Data, "cell holds the unreachable (LowVth, LowVth) state");
    const BranchParams& p1 = params_of(c, 1);
    const BranchParams& p2 = params_of(c, 2);
    const auto bias = cam::search_bias(query[c], p1);
    const double g1 = device::branch_conductance(row[c].m1, bias.m1_gate, p1);
    const double g2 = device::branch_conductance(row[c].m2, bias.m2_gate, p2);
    // Only conducting branches form discharge paths.
    if (g1 > p1.off_conductance()) g += g1;
    if (g2 > p2.off_conductance()) g += g2;
  }
  return g;
}

void check_duration(double duration, const CircuitParams& circuit) {
  if (!(duration >= circuit.sense_window))
    fail(ErrorKind::Usage, "simulate: duration must be >= sense_window");
}

}  // namespace

TransientTrace simulate_search(std::span<const CellState> row,
                               std::span<const TernaryBit> query,
                               double v_eval, const BranchParams& params,
                               const CircuitParams& circuit, double duration,
                               SimOptions options) {
  if (row.size() != query.size())
    fail(ErrorKind::Usage, "simulate_search: row and query lengths differ");
  check_duration(duration, circuit);
  const double g = row_conductance(
      row, query,
      [&](std::size_t, int) -> const BranchParams& { return params; });
  return simulate_matchline(g, circuit.c_ml(row.size()), v_eval, circuit,
                            duration, options);
}

TransientTrace simulate_row(const CamArray& array, std::size_t row,
                            std::span<const TernaryBit> query, double v_eval,
                            const CircuitParams& circuit, double duration,
                            SimOptions options) {
  if (query.size() != array.wordlength())
    fail(ErrorKind::Usage, "simulate_row: query length differs from wordlength");
  check_duration(duration, circuit);
  const double g = row_conductance(
      array.row(row), query,
      [&](std::size_t c, int m) -> const BranchParams& {
        return array.branch(row, c, m);
      });
  return simulate_matchline(g, circuit.c_ml(array.wordlength()), v_eval,
                            circuit, duration, options);
}

std::optional<double> crossing_time(std::size_t k, double v_eval,
                                    const BranchParams& params,
                                    const CircuitParams& circuit,
                                    std::size_t wordlength, double horizon) {
  if (k == 0) return std::nullopt;
  const double g = static_cast<double>(k) * params.on_conductance();
  return simulate_matchline(g, circuit.c_ml(wordlength), v_eval, circuit,
                            horizon, {.record = false, .stop_at_crossing = true})
      .crossing_time;
}

// --- calibration ---------------------------------------------------------------

namespace {

constexpr double kHorizonFactor = 4.0;
constexpr int kBisectionSteps = 60;

bool guard_ok(std::optional<double> t_n, std::optional<double> t_n1,
              double deadline, double guard) {
  const bool fast_enough = t_n1 && *t_n1 <= deadline * (1.0 - guard);
  const bool slow_enough = !t_n || *t_n >= deadline * (1.0 + guard);
  return fast_enough && slow_enough;
}

}  // namespace

Calibration calibrate_veval(std::span<const int> thresholds,
                            const BranchParams& params,
                            const CircuitParams& circuit,
                            std::size_t wordlength, double guard_band) {
  if (!(circuit.sense_window > 0.0))
    fail(ErrorKind::Infeasible,
         "calibration infeasible: sense window must be positive");
  circuit.validate();
  params.validate();
  if (!(guard_band > 0.0 && guard_band < 0.5))
    fail(ErrorKind::Usage, "calibration: guard band must lie in (0, 0.5)");
  if (thresholds.empty())
    fail(ErrorKind::Usage, "calibration: no thresholds requested");

  const double T = circuit.sense_window;
  const double horizon = kHorizonFactor * T;
  auto ct = [&](std::size_t k, double v) {
    return crossing_time(k, v, params, circuit, wordlength, horizon)
        .value_or(horizon);
  };

  std::map<int, double> entries;
  std::vector<std::string> problems;
  for (int n : thresholds) {
    if (n < 0 || static_cast<std::size_t>(n) + 1 > wordlength) {
      fail(ErrorKind::Usage,
           fmt::format("calibration: threshold {} outside [0, {}]", n,
                       wordlength - 1));
    }
    const auto k = static_cast<std::size_t>(n);
    // n >= 1: centre the deadline geometrically between the n and n + 1
    // crossings. n = 0 has no lower neighbour, so place the single
    // mismatch well inside the window.
    auto objective = [&](double v) {
      if (k == 0) return std::log(ct(1, v)) - std::log(T * (1.0 - 2.0 * guard_band));
      return std::log(ct(k, v)) + std::log(ct(k + 1, v)) - 2.0 * std::log(T);
    };
    double lo = circuit.eval_vtn;
    double hi = params.v_write;
    if (objective(hi) > 0.0) {
      problems.push_back(fmt::format(
          "Th-{}: {} mismatches cannot trip the SA within {} s even at "
          "V_eval = {} V",
          n, n + 1, T, hi));
      continue;
    }
    for (int it = 0; it < kBisectionSteps && hi - lo > 1e-9; ++it) {
      const double mid = 0.5 * (lo + hi);
      (objective(mid) > 0.0 ? lo : hi) = mid;
    }
    const double v = hi;
    const auto t_n = k == 0 ? std::nullopt
                            : crossing_time(k, v, params, circuit, wordlength, horizon);
    const auto t_n1 = crossing_time(k + 1, v, params, circuit, wordlength, horizon);
    if (!guard_ok(t_n, t_n1, T, guard_band)) {
      problems.push_back(fmt::format(
          "Th-{}: guard band {} not met at V_eval = {:.4f} V "
          "(t_n = {} s, t_n+1 = {} s)",
          n, guard_band, v, t_n ? fmt::format("{:.4e}", *t_n) : "none",
          t_n1 ? fmt::format("{:.4e}", *t_n1) : "none"));
      continue;
    }
    entries[n] = v;
  }
  if (!problems.empty()) {
    std::string msg = "calibration infeasible:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::Infeasible, msg);
  }
  VEvalTable table(std::move(entries));
  if (!table.strictly_decreasing())
    fail(ErrorKind::Infeasible,
         "calibration infeasible: V_eval is not strictly decreasing in "
         "threshold");
  return {std::move(table), T, guard_band, wordlength};
}

std::vector<GuardCheck> verify_calibration(const Calibration& cal,
                                           const BranchParams& params,
                                           const CircuitParams& circuit) {
  const double horizon = kHorizonFactor * cal.sense_deadline;
  std::vector<GuardCheck> out;
  for (const auto& [n, v] : cal.table.entries()) {
    GuardCheck g;
    g.threshold = n;
    g.v_eval = v;
    const auto k = static_cast<std::size_t>(n);
    g.t_n = crossing_time(k, v, params, circuit, cal.wordlength, horizon);
    g.t_n1 = crossing_time(k + 1, v, params, circuit, cal.wordlength, horizon);
    g.pass = guard_ok(g.t_n, g.t_n1, cal.sense_deadline, cal.guard_band);
    out.push_back(g);
  }
  return out;
}

std::vector<std::size_t> threshold_match_transient(
    const CamArray& array, std::span<const TernaryBit> query, int threshold,
    const Calibration& cal, const CircuitParams& circuit) {
  if (threshold < 0) fail(ErrorKind::Usage, "threshold must be >= 0");
  if (query.size() != array.wordlength())
    fail(ErrorKind::Usage,
         fmt::format("query has {} bits, array wordlength is {}", query.size(),
                     array.wordlength()));
  std::vector<std::size_t> matched;
  if (static_cast<std::size_t>(threshold) >= array.wordlength()) {
    for (std::size_t r = 0; r < array.rows(); ++r) matched.push_back(r);
    return matched;
  }
  if (cal.wordlength != array.wordlength())
    fail(ErrorKind::Usage,
         fmt::format("calibration is for wordlength {}, array has {}",
                     cal.wordlength, array.wordlength()));
  const double v_eval = cal.table.at(threshold);
  const double deadline = cal.sense_deadline;
  const SimOptions opts{.record = false, .stop_at_crossing = true};
  auto sensed_match = [&](const TransientTrace& tr) {
    return !tr.crossing_time || *tr.crossing_time > deadline;
  };

  if (array.uniform_params()) {
    // Identical branches: the waveform depends only on the mismatch count.
    std::unordered_map<std::size_t, bool> by_count;
    const double g_on = array.nominal().on_conductance();
    const double c_ml = circuit.c_ml(array.wordlength());
    for (std::size_t r = 0; r < array.rows(); ++r) {
      const std::size_t k = array.mismatch_count(r, query);
      auto it = by_count.find(k);
      if (it == by_count.end()) {
        const auto tr = simulate_matchline(static_cast<double>(k) * g_on, c_ml,
                                           v_eval, circuit, deadline, opts);
        it = by_count.emplace(k, sensed_match(tr)).first;
      }
      if (it->second) matched.push_back(r);
    }
    return matched;
  }
  for (std::size_t r = 0; r < array.rows(); ++r) {
    const auto tr =
        simulate_row(array, r, query, v_eval, circuit, deadline, opts);
    if (sensed_match(tr)) matched.push_back(r);
  }
  return matched;
}

SenseTable::SenseTable(const Calibration& cal, const CircuitParams& circuit,
                       const BranchParams& nominal)
    : wordlength_(cal.wordlength) {
  const double g_on = nominal.on_conductance();
  const double c_ml = circuit.c_ml(wordlength_);
  const SimOptions opts{.record = false, .stop_at_crossing = true};
  for (const auto& [n, v] : cal.table.entries()) {
    std::vector<bool> row(wordlength_ + 1);
    for (std::size_t k = 0; k <= wordlength_; ++k) {
      const auto tr = simulate_matchline(static_cast<double>(k) * g_on, c_ml, v,
                                         circuit, cal.sense_deadline, opts);
      row[k] = !tr.crossing_time || *tr.crossing_time > cal.sense_deadline;
    }
    decisions_.emplace(n, std::move(row));
  }
}

bool SenseTable::has_threshold(int threshold) const {
  return decisions_.count(threshold) > 0;
}

bool SenseTable::matched(int threshold, std::size_t k) const {
  auto it = decisions_.find(threshold);
  if (it == decisions_.end())
    fail(ErrorKind::Usage,
         fmt::format("threshold {} is not in the V_eval table", threshold));
  if (k > wordlength_) fail(ErrorKind::Usage, "mismatch count exceeds wordlength");
  return it->second[k];
}

CircuitParams scaled_for_wordlength(const CircuitParams& circuit,
                                    std::size_t wordlength,
                                    std::size_t reference_wordlength) {
  CircuitParams c = circuit;
  const double scale = circuit.c_ml(wordlength) / circuit.c_ml(reference_wordlength);
  c.sense_window *= scale;
  c.dt *= scale;
  return c;
}

// --- files -----------------------------------------------------------------------

void write_trace_csv(std::ostream& out, const TransientTrace& trace) {
  out << "t_s,v_ml_V,v_o_V,sa_out\n";
  for (std::size_t i = 0; i < trace.times.size(); ++i)
    out << fmt::format("{:.6e},{:.9f},{:.9f},{}\n", trace.times[i],
                       trace.v_ml[i], trace.v_o[i], trace.sa_out[i] ? 1 : 0);
}

void write_calibration(std::ostream& out, const Calibration& cal,
                       const std::string& config_hash) {
  json j;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["guard_band"] = cal.guard_band;
  j["sense_deadline_s"] = cal.sense_deadline;
  j["wordlength"] = cal.wordlength;
  json table = json::object();
  for (const auto& [n, v] : cal.table.entries()) table[std::to_string(n)] = v;
  j["v_eval_V"] = table;
  out << j.dump(2) << '\n';
}

Calibration read_calibration(std::istream& in) {
  try {
    const json j = json::parse(in);
    Calibration cal;
    cal.guard_band = j.at("guard_band").get<double>();
    cal.sense_deadline = j.at("sense_deadline_s").get<double>();
    cal.wordlength = j.at("wordlength").get<std::size_t>();
    std::map<int, double> entries;
    for (const auto& [key, value] : j.at("v_eval_V").items())
      entries[std::stoi(key)] = value.get<double>();
    cal.table = VEvalTable(std::move(entries));
    if (!cal.table.strictly_decreasing())
      fail(ErrorKind::Data, "V_eval table is not strictly decreasing");
    return cal;
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, fmt::format("malformed V_eval table: {}", e.what()));
  } catch (const std::logic_error& e) {
    fail(ErrorKind::Data, fmt::format("malformed V_eval table: {}", e.what()));
  }
}

}  // namespace tapcam::transient
