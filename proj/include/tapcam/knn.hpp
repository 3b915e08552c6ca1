#pragma once

// K-nearest-neighbour classification on top of threshold matching: every
// stored row within the Hamming threshold votes, majority wins.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tapcam/cam_core.hpp"
#include "tapcam/device.hpp"
#include "tapcam/transient.hpp"

namespace tapcam::knn {

using cam::CamArray;
using cam::TernaryBit;

struct Dataset {
  std::string name;
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dims() const noexcept {
    return features.empty() ? 0 : features.front().size();
  }
};

struct DatasetShape {
  std::size_t instances;
  std::size_t features;
  std::size_t classes;
};

// Shapes of the reference UCI sets (iris, wine, digits).
std::optional<DatasetShape> known_shape(const std::string& name);

// CSV, one instance per line, integer class label in the last column.
// `name` defaults to the file stem; known names are shape-checked.
Dataset load_dataset(const std::string& path, std::string name = {});
Dataset parse_dataset(std::istream& in, const std::string& name);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle; the first round(ratio * n) indices train.
Split split_dataset(std::size_t n, double ratio, std::uint64_t seed);

// min(16, 256 / f), at least 1.
std::size_t default_levels(std::size_t features);

// Per-feature min-max quantiser to levels 0..L, emitted as a thermometer
// code (q ones then L - q zeros). Hamming distance between two codes is
// the L1 distance between their quantised vectors.
class ThermometerEncoder {
 public:
  ThermometerEncoder(const Dataset& ds, std::span<const std::size_t> fit_rows,
                     std::size_t levels);

  std::size_t levels() const noexcept { return levels_; }
  std::size_t wordlength() const noexcept { return mins_.size() * levels_; }
  const std::vector<double>& mins() const noexcept { return mins_; }
  const std::vector<double>& maxs() const noexcept { return maxs_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  std::vector<int> quantize(std::span<const double> x) const;
  std::vector<TernaryBit> encode(std::span<const double> x) const;

 private:
  std::size_t levels_;
  std::vector<double> mins_;
  std::vector<double> maxs_;
  std::vector<std::string> warnings_;
};

struct EncodedDataset {
  std::vector<std::vector<TernaryBit>> words;
  std::vector<int> labels;
  std::size_t levels = 0;
  std::vector<double> mins;
  std::vector<double> maxs;
  std::vector<std::string> warnings;
};

// Fits on `fit_rows` (the training split) and encodes every instance.
EncodedDataset thermometer_encode(const Dataset& ds, std::size_t levels,
                                  std::span<const std::size_t> fit_rows);

enum class Escalation { Fail, StepUp };
enum class TieBreak { LowestClassId, RandomSeeded };
enum class Matcher { Functional, Transient };

Matcher parse_matcher(const std::string& name);
std::string to_string(Matcher m);

struct KnnConfig {
  std::vector<int> threshold_schedule{1, 2, 3, 4, 5, 6};
  Escalation escalation = Escalation::StepUp;
  TieBreak tie_break = TieBreak::LowestClassId;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 1;
  std::size_t levels = 0;  // 0 picks default_levels
};

// Transient-tier sensing for a nominal array. Thresholds missing from the
// calibrated table are answered by the functional rule and counted.
struct TransientEnv {
  const transient::SenseTable* sense = nullptr;
};

struct KnnOutcome {
  std::optional<int> label;  // nullopt: no match and escalation = fail
  std::size_t matched_count = 0;
  int threshold_used = 0;
  bool functional_fallback = false;
};

// Majority vote over `matched` labels; ties per `tie`.
int majority_vote(std::span<const std::size_t> matched,
                  std::span<const int> labels, std::size_t classes,
                  TieBreak tie, std::uint64_t tie_seed);

KnnOutcome knn_classify(const CamArray& train, std::span<const int> labels,
                        std::size_t classes, std::span<const TernaryBit> query,
                        int threshold, const KnnConfig& cfg, Matcher matcher,
                        const TransientEnv& env = {},
                        std::uint64_t tie_seed = 0);

struct AccuracyRow {
  int threshold = 0;
  double accuracy = 0.0;
  double mean_matched = 0.0;
  std::size_t fallbacks = 0;
};

struct QueryAudit {
  std::size_t instance = 0;
  int truth = 0;
  int threshold = 0;
  std::optional<int> predicted;
  std::size_t matched_count = 0;
  int threshold_used = 0;
  bool fallback = false;
};

struct MatcherEnv {
  device::BranchParams device;
  transient::CircuitParams circuit;
  std::size_t reference_wordlength = 64;  // geometry the card was tuned for
  double guard_band = 0.05;
  unsigned threads = 1;
};

struct AccuracyResult {
  std::vector<AccuracyRow> rows;
  std::vector<QueryAudit> audit;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t wordlength = 0;
  std::vector<std::string> warnings;
};

AccuracyResult evaluate_accuracy(const Dataset& ds, const KnnConfig& cfg,
                                 Matcher matcher, const MatcherEnv& env = {});

// Software baseline: Euclidean KNN on min-max scaled features (scaling
// fitted on the training rows), majority vote with lowest-id tie break.
std::vector<int> software_knn(const Dataset& ds,
                              std::span<const std::size_t> train,
                              std::span<const std::size_t> test,
                              std::size_t k);

void write_accuracy_csv(std::ostream& out, std::span<const AccuracyRow> rows,
                        const std::string& config_hash = {});
void write_audit_json(std::ostream& out, const AccuracyResult& result,
                      const std::string& config_hash = {});

}  // namespace tapcam::knn
