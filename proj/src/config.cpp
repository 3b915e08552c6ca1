#include "tapcam/config.hpp"

#include <fstream>

#include <fmt/format.h>

#include "tapcam/error.hpp"

namespace tapcam::config {

using nlohmann::json;

namespace {

std::string escalation_name(knn::Escalation e) {
  return e == knn::Escalation::Fail ? "fail" : "step_up";
}

std::string tie_name(knn::TieBreak t) {
  return t == knn::TieBreak::LowestClassId ? "lowest_class_id" : "random_seeded";
}

// Overlay `patch` on `base`, refusing keys the base does not have and
// values whose JSON type differs.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object())
    fail(ErrorKind::Usage, fmt::format("config: {} must be an object",
                                       where.empty() ? "root" : where));
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key))
      fail(ErrorKind::Usage, fmt::format("config: unknown key '{}'", path));
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
      continue;
    }
    const bool ok = (slot.is_number() && value.is_number()) ||
                    slot.type() == value.type();
    if (!ok)
      fail(ErrorKind::Usage,
           fmt::format("config: '{}' expects {}, got {}", path,
                       slot.type_name(), value.type_name()));
    slot = value;
  }
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Usage,
         fmt::format("config: {}.{}: {}", section, key, e.what()));
  }
}

}  // namespace

void RunConfig::validate() const {
  device.validate();
  {
    // a zero window passes here; calibration reports it as infeasible
    auto c = circuit;
    if (c.sense_window == 0.0) c.sense_window = 1000.0 * c.dt;
    c.validate();
  }
  variation.validate();
  if (geometry.rows < 1) fail(ErrorKind::Usage, "config: geometry.rows must be >= 1");
  if (geometry.wordlength < 1 || geometry.wordlength > cam::kMaxWordlength)
    fail(ErrorKind::Usage,
         fmt::format("config: geometry.wordlength must lie in [1, {}]",
                     cam::kMaxWordlength));
  if (thresholds.empty())
    fail(ErrorKind::Usage, "config: calibration.thresholds is empty");
  for (int th : thresholds)
    if (th < 0 || static_cast<std::size_t>(th) >= geometry.wordlength)
      fail(ErrorKind::Usage,
           fmt::format("config: threshold {} outside [0, {})", th,
                       geometry.wordlength));
  if (!(guard_band > 0.0 && guard_band < 0.5))
    fail(ErrorKind::Usage, "config: guard_band must lie in (0, 0.5)");
  if (energy.e_sa < 0.0 || energy.c_gate < 0.0 ||
      !(energy.avg_mismatch_fraction >= 0.0 && energy.avg_mismatch_fraction <= 1.0))
    fail(ErrorKind::Usage, "config: bad energy section");
  if (knn.threshold_schedule.empty())
    fail(ErrorKind::Usage, "config: knn.thresholds is empty");
  for (int th : knn.threshold_schedule)
    if (th < 0) fail(ErrorKind::Usage, "config: knn thresholds must be >= 0");
  if (!(knn.split_ratio > 0.0 && knn.split_ratio < 1.0))
    fail(ErrorKind::Usage, "config: knn.split_ratio must lie in (0, 1)");
  if (threads < 1) fail(ErrorKind::Usage, "config: threads must be >= 1");
  if (out_dir.empty()) fail(ErrorKind::Usage, "config: out dir is empty");
}

void RunConfig::sync_seed() {
  variation.seed = seed;
  knn.split_seed = seed;
}

metrics::SweepBase RunConfig::sweep_base() const {
  metrics::SweepBase b;
  b.device = device;
  b.circuit = circuit;
  b.geometry = geometry;
  b.threshold = sweep_threshold;
  b.guard_band = guard_band;
  b.energy = energy;
  b.threads = threads;
  return b;
}

metrics::MonteCarloConfig RunConfig::monte_carlo() const {
  metrics::MonteCarloConfig m;
  m.device = device;
  m.circuit = circuit;
  m.wordlength = geometry.wordlength;
  m.guard_band = guard_band;
  m.threads = threads;
  return m;
}

knn::MatcherEnv RunConfig::matcher_env() const {
  knn::MatcherEnv e;
  e.device = device;
  e.circuit = circuit;
  e.reference_wordlength = geometry.wordlength;
  e.guard_band = guard_band;
  e.threads = threads;
  return e;
}

json to_json(const RunConfig& c) {
  json j;
  j["device"] = {{"vth_low", c.device.vth_low},
                 {"vth_high", c.device.vth_high},
                 {"r_on", c.device.r_on},
                 {"r_off", c.device.r_off},
                 {"r_series", c.device.r_series},
                 {"v_write", c.device.v_write},
                 {"v_search", c.device.v_search}};
  j["circuit"] = {{"c_cell", c.circuit.c_cell},
                  {"c_wire", c.circuit.c_wire},
                  {"c_o", c.circuit.c_o},
                  {"vdd", c.circuit.vdd},
                  {"sa_fraction", c.circuit.sa_threshold / c.circuit.vdd},
                  {"sense_window", c.circuit.sense_window},
                  {"dt", c.circuit.dt},
                  {"eval_k", c.circuit.eval_k},
                  {"eval_vtn", c.circuit.eval_vtn}};
  j["variation"] = {{"sigma_vth", c.variation.sigma_vth},
                    {"rel_sigma_rs", c.variation.rel_sigma_rs}};
  j["geometry"] = {{"rows", c.geometry.rows},
                   {"wordlength", c.geometry.wordlength}};
  j["energy"] = {{"e_sa", c.energy.e_sa},
                 {"avg_mismatch_fraction", c.energy.avg_mismatch_fraction},
                 {"c_gate", c.energy.c_gate}};
  j["calibration"] = {{"thresholds", c.thresholds},
                      {"guard_band", c.guard_band}};
  j["sweep"] = {{"threshold", c.sweep_threshold}};
  j["knn"] = {{"thresholds", c.knn.threshold_schedule},
              {"escalation", escalation_name(c.knn.escalation)},
              {"tie_break", tie_name(c.knn.tie_break)},
              {"split_ratio", c.knn.split_ratio},
              {"levels", c.knn.levels}};
  j["run"] = {{"out", c.out_dir}, {"seed", c.seed}, {"threads", c.threads}};
  return j;
}

RunConfig from_json(const json& patch) {
  json j = to_json(RunConfig{});
  overlay(j, patch, "");

  RunConfig c;
  c.device.vth_low = get<double>(j, "device", "vth_low");
  c.device.vth_high = get<double>(j, "device", "vth_high");
  c.device.r_on = get<double>(j, "device", "r_on");
  c.device.r_off = get<double>(j, "device", "r_off");
  c.device.r_series = get<double>(j, "device", "r_series");
  c.device.v_write = get<double>(j, "device", "v_write");
  c.device.v_search = get<double>(j, "device", "v_search");

  c.circuit.c_cell = get<double>(j, "circuit", "c_cell");
  c.circuit.c_wire = get<double>(j, "circuit", "c_wire");
  c.circuit.c_o = get<double>(j, "circuit", "c_o");
  c.circuit.vdd = get<double>(j, "circuit", "vdd");
  // trip point kept as a fraction of vdd so a vdd override alone is valid
  c.circuit.sa_threshold = get<double>(j, "circuit", "sa_fraction") * c.circuit.vdd;
  c.circuit.sense_window = get<double>(j, "circuit", "sense_window");
  c.circuit.dt = get<double>(j, "circuit", "dt");
  c.circuit.eval_k = get<double>(j, "circuit", "eval_k");
  c.circuit.eval_vtn = get<double>(j, "circuit", "eval_vtn");

  c.variation.sigma_vth = get<double>(j, "variation", "sigma_vth");
  c.variation.rel_sigma_rs = get<double>(j, "variation", "rel_sigma_rs");

  c.geometry.rows = get<std::size_t>(j, "geometry", "rows");
  c.geometry.wordlength = get<std::size_t>(j, "geometry", "wordlength");

  c.energy.e_sa = get<double>(j, "energy", "e_sa");
  c.energy.avg_mismatch_fraction = get<double>(j, "energy", "avg_mismatch_fraction");
  c.energy.c_gate = get<double>(j, "energy", "c_gate");

  c.thresholds = get<std::vector<int>>(j, "calibration", "thresholds");
  c.guard_band = get<double>(j, "calibration", "guard_band");
  c.sweep_threshold = get<int>(j, "sweep", "threshold");

  c.knn.threshold_schedule = get<std::vector<int>>(j, "knn", "thresholds");
  const auto esc = get<std::string>(j, "knn", "escalation");
  if (esc == "fail")
    c.knn.escalation = knn::Escalation::Fail;
  else if (esc == "step_up")
    c.knn.escalation = knn::Escalation::StepUp;
  else
    fail(ErrorKind::Usage,
         fmt::format("config: knn.escalation '{}' (fail, step_up)", esc));
  const auto tie = get<std::string>(j, "knn", "tie_break");
  if (tie == "lowest_class_id")
    c.knn.tie_break = knn::TieBreak::LowestClassId;
  else if (tie == "random_seeded")
    c.knn.tie_break = knn::TieBreak::RandomSeeded;
  else
    fail(ErrorKind::Usage,
         fmt::format("config: knn.tie_break '{}' (lowest_class_id, "
                     "random_seeded)",
                     tie));
  c.knn.split_ratio = get<double>(j, "knn", "split_ratio");
  c.knn.levels = get<std::size_t>(j, "knn", "levels");

  c.out_dir = get<std::string>(j, "run", "out");
  c.seed = get<std::uint64_t>(j, "run", "seed");
  c.threads = get<unsigned>(j, "run", "threads");
  c.sync_seed();
  c.validate();
  return c;
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Usage, fmt::format("cannot open config {}", path));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Usage, fmt::format("{}: {}", path, e.what()));
  }
  return from_json(j);
}

void set(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
    fail(ErrorKind::Usage,
         fmt::format("config: override key '{}' must be section.name", key));
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  json patch = to_json(cfg);
  json leaf;
  leaf[key.substr(dot + 1)] = v;
  json p;
  p[key.substr(0, dot)] = leaf;
  overlay(patch, p, "");
  cfg = from_json(patch);
}

std::string canonical(const RunConfig& cfg) {
  json j = to_json(cfg);
  // where results go and how many workers compute them leave them unchanged
  j["run"].erase("out");
  j["run"].erase("threads");
  return j.dump();
}

std::string hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace tapcam::config
