#include "tapcam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "json.hpp"
#include "tapcam/cam_core.hpp"
#include "tapcam/error.hpp"
#include "tapcam/parallel.hpp"

namespace tapcam::metrics {

namespace {

using cam::TernaryBit;
using transient::SimOptions;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t as_count(double v, const char* what) {
  if (!(v >= 1.0) || v != std::floor(v) || v > 1e9)
    fail(ErrorKind::Usage,
         fmt::format("sweep: {} value {} must be a positive integer", what, v));
  return static_cast<std::size_t>(v);
}

}  // namespace

EnergyReport search_energy(const Geometry& geometry,
                           const CircuitParams& circuit,
                           const BranchParams& params, double v_eval,
                           double deadline, const EnergyConfig& energy) {
  if (!(energy.avg_mismatch_fraction >= 0.0 &&
        energy.avg_mismatch_fraction <= 1.0))
    fail(ErrorKind::Usage, "avg_mismatch_fraction must lie in [0, 1]");
  if (geometry.rows < 1 || geometry.wordlength < 1)
    fail(ErrorKind::Usage, "energy: empty geometry");
  if (!(energy.e_sa >= 0.0)) fail(ErrorKind::Usage, "energy: e_sa must be >= 0");
  const auto rows = static_cast<double>(geometry.rows);
  const double c_ml = circuit.c_ml(geometry.wordlength);

  EnergyReport r;
  r.e_precharge = rows * (c_ml + circuit.c_o) * circuit.vdd * circuit.vdd;
  r.e_sa = rows * energy.e_sa;
  const auto k = static_cast<std::size_t>(std::lround(
      energy.avg_mismatch_fraction * static_cast<double>(geometry.wordlength)));
  const auto tr = transient::simulate_matchline(
      static_cast<double>(k) * params.on_conductance(), c_ml, v_eval, circuit,
      deadline, SimOptions{.record = false});
  r.e_discharge = rows * tr.discharge_energy;
  r.e_total = r.e_precharge + r.e_sa + r.e_discharge;
  r.e_per_bit = r.e_total / (rows * static_cast<double>(geometry.wordlength));
  r.latency = deadline;
  return r;
}

SweepParam parse_sweep_param(const std::string& name) {
  if (name == "vdd") return SweepParam::Vdd;
  if (name == "threshold") return SweepParam::Threshold;
  if (name == "rows") return SweepParam::Rows;
  if (name == "wordlength") return SweepParam::Wordlength;
  fail(ErrorKind::Usage,
       fmt::format("unknown sweep parameter '{}' (vdd, threshold, rows, "
                   "wordlength)",
                   name));
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::Vdd: return "vdd";
    case SweepParam::Threshold: return "threshold";
    case SweepParam::Rows: return "rows";
    case SweepParam::Wordlength: return "wordlength";
  }
  return "?";
}

namespace {

struct PointSetup {
  CircuitParams circuit;
  Geometry geometry;
  int threshold;
};

PointSetup setup_point(SweepParam param, double value, const SweepBase& base) {
  PointSetup s{base.circuit, base.geometry, base.threshold};
  switch (param) {
    case SweepParam::Vdd:
      if (!(value > 0.0) || !std::isfinite(value))
        fail(ErrorKind::Usage, fmt::format("sweep: vdd {} must be > 0", value));
      s.circuit = base.circuit.at_vdd(value);
      break;
    case SweepParam::Threshold:
      if (value < 0.0 || value != std::floor(value))
        fail(ErrorKind::Usage,
             fmt::format("sweep: threshold {} must be a non-negative integer",
                         value));
      s.threshold = static_cast<int>(value);
      break;
    case SweepParam::Rows:
      s.geometry.rows = as_count(value, "rows");
      break;
    case SweepParam::Wordlength: {
      s.geometry.wordlength = as_count(value, "wordlength");
      if (s.geometry.wordlength > cam::kMaxWordlength)
        fail(ErrorKind::Usage,
             fmt::format("sweep: wordlength {} exceeds {}", value,
                         cam::kMaxWordlength));
      // The sense deadline follows the matchline RC constant of the
      // geometry, relative to the base card.
      s.circuit = transient::scaled_for_wordlength(
          base.circuit, s.geometry.wordlength, base.geometry.wordlength);
      break;
    }
  }
  if (s.threshold < 0 ||
      static_cast<std::size_t>(s.threshold) + 1 > s.geometry.wordlength)
    fail(ErrorKind::Usage,
         fmt::format("sweep: threshold {} needs wordlength > {}", s.threshold,
                     s.threshold));
  return s;
}

}  // namespace

std::vector<SweepPoint> sweep(SweepParam param, std::span<const double> values,
                              const SweepBase& base) {
  if (values.empty()) fail(ErrorKind::Usage, "sweep: no values given");
  std::vector<PointSetup> setups;
  for (double v : values) setups.push_back(setup_point(param, v, base));

  std::vector<SweepPoint> points(values.size());
  parallel_for(values.size(), base.threads, [&](std::size_t i) {
    const PointSetup& s = setups[i];
    SweepPoint& p = points[i];
    p.value = values[i];
    try {
      const int th[] = {s.threshold};
      const auto cal = transient::calibrate_veval(
          th, base.device, s.circuit, s.geometry.wordlength, base.guard_band);
      p.v_eval = cal.table.at(s.threshold);
      p.energy = search_energy(s.geometry, s.circuit, base.device, p.v_eval,
                               cal.sense_deadline, base.energy);
      const double c_ml = s.circuit.c_ml(s.geometry.wordlength);
      const double g = base.device.on_conductance();
      const auto k = static_cast<double>(s.threshold);
      const auto at_n = transient::simulate_matchline(
          k * g, c_ml, p.v_eval, s.circuit, cal.sense_deadline);
      const auto at_n1 = transient::simulate_matchline(
          (k + 1.0) * g, c_ml, p.v_eval, s.circuit, cal.sense_deadline);
      p.margin = at_n.v_ml.back() - at_n1.v_ml.back();
      p.ok = true;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Usage) throw;
      p.ok = false;
      p.error = e.what();
    }
  });
  return points;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points,
                     const std::string& config_hash) {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "value,energy_J,latency_s,margin_V\n";
  for (const auto& p : points) {
    if (p.ok)
      out << fmt::format("{},{:.9e},{:.9e},{:.9f}\n", p.value,
                         p.energy.e_total, p.energy.latency, p.margin);
    else
      out << fmt::format("{},nan,nan,nan\n", p.value);
  }
}

// --- Monte Carlo -------------------------------------------------------------

namespace {

std::uint64_t run_seed(std::uint64_t seed, std::size_t run) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(run)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// All-ones row with `k` zeros at distinct random columns.
std::vector<TernaryBit> row_with_mismatches(std::size_t wordlength,
                                            std::size_t k,
                                            std::mt19937_64& rng) {
  std::vector<std::size_t> cols(wordlength);
  for (std::size_t i = 0; i < wordlength; ++i) cols[i] = i;
  std::vector<TernaryBit> word(wordlength, TernaryBit::One);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, wordlength - 1);
    std::swap(cols[i], cols[pick(rng)]);
    word[cols[i]] = TernaryBit::Zero;
  }
  return word;
}

}  // namespace

MonteCarloReport monte_carlo_robustness(int threshold, std::size_t runs,
                                        const VariationSpec& spec, double vdd,
                                        const MonteCarloConfig& config) {
  if (runs < 1) fail(ErrorKind::Usage, "monte carlo: runs must be >= 1");
  if (threshold < 0 ||
      static_cast<std::size_t>(threshold) + 1 > config.wordlength)
    fail(ErrorKind::Usage,
         fmt::format("monte carlo: threshold {} out of range", threshold));
  spec.validate();
  const CircuitParams circuit = config.circuit.at_vdd(vdd);
  circuit.validate();

  const int th[] = {threshold};
  const auto cal = transient::calibrate_veval(th, config.device, circuit,
                                              config.wordlength,
                                              config.guard_band);
  MonteCarloReport rep;
  rep.runs = runs;
  rep.threshold = threshold;
  rep.vdd = vdd;
  rep.v_eval = cal.table.at(threshold);
  rep.sense_deadline = cal.sense_deadline;
  rep.crossing_times_at_n.resize(runs);
  rep.crossing_times_at_n_plus_1.resize(runs);

  const auto n = static_cast<std::size_t>(threshold);
  const std::size_t wl = config.wordlength;
  const double horizon = 4.0 * cal.sense_deadline;
  const std::vector<TernaryBit> query(wl, TernaryBit::One);

  parallel_for(runs, config.threads, [&](std::size_t r) {
    try {
      VariationSpec rs = spec;
      rs.seed = run_seed(spec.seed, r);
      const auto branches = device::sample_variations(config.device, rs, 4 * wl);
      std::mt19937_64 layout(rs.seed ^ 0x5bd1e995u);
      cam::CamArray array(wl, config.device);
      array.store(row_with_mismatches(wl, n, layout));
      array.store(row_with_mismatches(wl, n + 1, layout));
      const std::span<const BranchParams> all(branches);
      array.set_row_params(0, all.subspan(0, 2 * wl));
      array.set_row_params(1, all.subspan(2 * wl, 2 * wl));
      const SimOptions opts{.record = false, .stop_at_crossing = true};
      rep.crossing_times_at_n[r] =
          transient::simulate_row(array, 0, query, rep.v_eval, circuit,
                                  horizon, opts)
              .crossing_time;
      rep.crossing_times_at_n_plus_1[r] =
          transient::simulate_row(array, 1, query, rep.v_eval, circuit,
                                  horizon, opts)
              .crossing_time;
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("monte carlo run {}: {}", r, e.what()));
    }
  });

  double min_n = kInf;
  double max_n1 = -kInf;
  for (std::size_t r = 0; r < runs; ++r) {
    min_n = std::min(min_n, rep.crossing_times_at_n[r].value_or(kInf));
    max_n1 = std::max(max_n1, rep.crossing_times_at_n_plus_1[r].value_or(kInf));
  }
  rep.separable = max_n1 < min_n;
  rep.worst_gap = min_n == kInf ? kInf : min_n - max_n1;
  return rep;
}

namespace {

std::string fmt_time(const std::optional<double>& t) {
  return t ? fmt::format("{:.9e}", *t) : std::string("none");
}

nlohmann::json stats(const std::vector<std::optional<double>>& v) {
  std::size_t crossed = 0;
  double lo = kInf, hi = -kInf, sum = 0.0;
  for (const auto& t : v) {
    if (!t) continue;
    ++crossed;
    lo = std::min(lo, *t);
    hi = std::max(hi, *t);
    sum += *t;
  }
  nlohmann::json j;
  j["crossed"] = crossed;
  if (crossed > 0) {
    j["min_s"] = lo;
    j["max_s"] = hi;
    j["mean_s"] = sum / static_cast<double>(crossed);
  }
  return j;
}

}  // namespace

void write_monte_carlo_csv(std::ostream& out, const MonteCarloReport& report,
                           const std::string& config_hash) {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "run,ct_n_s,ct_n1_s\n";
  for (std::size_t r = 0; r < report.runs; ++r)
    out << r << ',' << fmt_time(report.crossing_times_at_n[r]) << ','
        << fmt_time(report.crossing_times_at_n_plus_1[r]) << '\n';
}

void write_monte_carlo_json(std::ostream& out, const MonteCarloReport& report,
                            const std::string& config_hash) {
  nlohmann::json j;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["threshold"] = report.threshold;
  j["runs"] = report.runs;
  j["vdd_V"] = report.vdd;
  j["v_eval_V"] = report.v_eval;
  j["sense_deadline_s"] = report.sense_deadline;
  j["separable"] = report.separable;
  if (std::isfinite(report.worst_gap))
    j["worst_gap_s"] = report.worst_gap;
  else
    j["worst_gap_s"] = nullptr;
  j["ct_n"] = stats(report.crossing_times_at_n);
  j["ct_n1"] = stats(report.crossing_times_at_n_plus_1);
  out << j.dump(2) << '\n';
}

}  // namespace tapcam::metrics
