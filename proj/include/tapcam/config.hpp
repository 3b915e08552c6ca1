#pragma once

// Run configuration: one JSON file with a section per module, overridable
// key by key ("circuit.vdd=0.8"). Unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tapcam/device.hpp"
#include "tapcam/knn.hpp"
#include "tapcam/metrics.hpp"
#include "tapcam/transient.hpp"

namespace tapcam::config {

struct RunConfig {
  device::BranchParams device;
  transient::CircuitParams circuit;
  device::VariationSpec variation;
  metrics::Geometry geometry;
  metrics::EnergyConfig energy;
  std::vector<int> thresholds{0, 1, 2, 3, 4, 5};  // calibrated set
  double guard_band = 0.05;
  int sweep_threshold = 5;
  knn::KnnConfig knn;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  unsigned threads = 1;

  // Throws Error(Usage) on the first broken invariant.
  void validate() const;

  // Copies `seed` into the variation and split seeds.
  void sync_seed();

  metrics::SweepBase sweep_base() const;
  metrics::MonteCarloConfig monte_carlo() const;
  knn::MatcherEnv matcher_env() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep their defaults.
RunConfig from_json(const nlohmann::json& j);

RunConfig load(const std::string& path);

// Dotted key, value parsed as JSON when possible, else taken as a string.
void set(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical dump (sorted keys, no whitespace) minus run.out and
// run.threads, which do not affect results.
std::string canonical(const RunConfig& cfg);
// 16 hex digits, FNV-1a 64 of the canonical dump.
std::string hash(const RunConfig& cfg);

}  // namespace tapcam::config
