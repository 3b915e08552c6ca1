#include "tapcam/knn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "json.hpp"
#include "tapcam/error.hpp"
#include "tapcam/parallel.hpp"

namespace tapcam::knn {

std::optional<DatasetShape> known_shape(const std::string& name) {
  if (name == "iris") return DatasetShape{150, 4, 3};
  if (name == "wine") return DatasetShape{178, 13, 3};
  if (name == "digits") return DatasetShape{5620, 64, 10};
  return std::nullopt;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Dataset parse_dataset(std::istream& in, const std::string& name) {
  Dataset ds;
  ds.name = name;
  const auto shape = known_shape(name);
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split_csv(t);
    if (fields.size() < 2)
      fail(ErrorKind::Data,
           fmt::format("line {}: need at least one feature and a label",
                       lineno));
    const std::size_t f = fields.size() - 1;
    if (!ds.features.empty() && f != ds.dims())
      fail(ErrorKind::Data,
           fmt::format("line {}: {} features, expected {}", lineno, f,
                       ds.dims()));
    std::vector<double> x(f);
    for (std::size_t i = 0; i < f; ++i) {
      const std::string s(fields[i]);
      std::size_t used = 0;
      try {
        x[i] = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size() || s.empty() || !std::isfinite(x[i]))
        fail(ErrorKind::Data,
             fmt::format("line {}: column {} is not a number: '{}'", lineno,
                         i + 1, s));
    }
    int label = 0;
    const auto ls = fields.back();
    const auto [ptr, ec] = std::from_chars(ls.data(), ls.data() + ls.size(), label);
    if (ec != std::errc() || ptr != ls.data() + ls.size())
      fail(ErrorKind::Data,
           fmt::format("line {}: label '{}' is not an integer", lineno, ls));
    if (label < 0 ||
        (shape && static_cast<std::size_t>(label) >= shape->classes))
      fail(ErrorKind::Data,
           fmt::format("line {}: label {} out of range", lineno, label));
    max_label = std::max(max_label, label);
    ds.features.push_back(std::move(x));
    ds.labels.push_back(label);
  }
  if (ds.labels.empty()) fail(ErrorKind::Data, "dataset holds no instances");
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  if (shape) {
    if (ds.size() != shape->instances || ds.dims() != shape->features ||
        ds.classes != shape->classes)
      fail(ErrorKind::Data,
           fmt::format("{}: shape n={} f={} K={} differs from expected "
                       "n={} f={} K={}",
                       name, ds.size(), ds.dims(), ds.classes,
                       shape->instances, shape->features, shape->classes));
  }
  return ds;
}

Dataset load_dataset(const std::string& path, std::string name) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, fmt::format("cannot open dataset {}", path));
  if (name.empty()) name = std::filesystem::path(path).stem().string();
  try {
    return parse_dataset(in, name);
  } catch (const Error& e) {
    fail(e.kind(), fmt::format("{}: {}", path, e.what()));
  }
}

Split split_dataset(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    fail(ErrorKind::Usage, "split ratio must lie in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

std::size_t default_levels(std::size_t features) {
  if (features == 0) return 1;
  return std::max<std::size_t>(1, std::min<std::size_t>(16, cam::kMaxWordlength / features));
}

ThermometerEncoder::ThermometerEncoder(const Dataset& ds,
                                       std::span<const std::size_t> fit_rows,
                                       std::size_t levels)
    : levels_(levels) {
  const std::size_t f = ds.dims();
  if (levels < 1) fail(ErrorKind::Usage, "thermometer: levels must be >= 1");
  if (f * levels > cam::kMaxWordlength)
    fail(ErrorKind::Usage,
         fmt::format("thermometer: {} features x {} levels exceeds {} bits", f,
                     levels, cam::kMaxWordlength));
  if (fit_rows.empty()) fail(ErrorKind::Usage, "thermometer: no rows to fit");
  mins_.assign(f, std::numeric_limits<double>::infinity());
  maxs_.assign(f, -std::numeric_limits<double>::infinity());
  for (auto r : fit_rows) {
    for (std::size_t j = 0; j < f; ++j) {
      mins_[j] = std::min(mins_[j], ds.features.at(r)[j]);
      maxs_[j] = std::max(maxs_[j], ds.features.at(r)[j]);
    }
  }
  for (std::size_t j = 0; j < f; ++j)
    if (!(maxs_[j] > mins_[j]))
      warnings_.push_back(
          fmt::format("feature {} is constant on the fit rows; encoded as "
                      "all zeros",
                      j));
}

std::vector<int> ThermometerEncoder::quantize(std::span<const double> x) const {
  if (x.size() != mins_.size())
    fail(ErrorKind::Usage, "thermometer: feature count differs from fit");
  std::vector<int> q(x.size());
  const auto L = static_cast<double>(levels_);
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double span = maxs_[j] - mins_[j];
    if (!(span > 0.0)) {
      q[j] = 0;
      continue;
    }
    const double level = std::round((x[j] - mins_[j]) / span * L);
    q[j] = static_cast<int>(std::clamp(level, 0.0, L));
  }
  return q;
}

std::vector<TernaryBit> ThermometerEncoder::encode(std::span<const double> x) const {
  const auto q = quantize(x);
  std::vector<TernaryBit> bits;
  bits.reserve(wordlength());
  for (int level : q)
    for (std::size_t b = 0; b < levels_; ++b)
      bits.push_back(static_cast<int>(b) < level ? TernaryBit::One
                                                 : TernaryBit::Zero);
  return bits;
}

EncodedDataset thermometer_encode(const Dataset& ds, std::size_t levels,
                                  std::span<const std::size_t> fit_rows) {
  const ThermometerEncoder enc(ds, fit_rows, levels);
  EncodedDataset out;
  out.levels = levels;
  out.mins = enc.mins();
  out.maxs = enc.maxs();
  out.warnings = enc.warnings();
  out.labels = ds.labels;
  out.words.reserve(ds.size());
  for (const auto& x : ds.features) out.words.push_back(enc.encode(x));
  return out;
}

Matcher parse_matcher(const std::string& name) {
  if (name == "functional") return Matcher::Functional;
  if (name == "transient") return Matcher::Transient;
  fail(ErrorKind::Usage,
       fmt::format("unknown matcher '{}' (functional, transient)", name));
}

std::string to_string(Matcher m) {
  return m == Matcher::Functional ? "functional" : "transient";
}

int majority_vote(std::span<const std::size_t> matched,
                  std::span<const int> labels, std::size_t classes,
                  TieBreak tie, std::uint64_t tie_seed) {
  if (matched.empty()) fail(ErrorKind::Usage, "majority_vote: empty match set");
  std::vector<std::size_t> votes(classes, 0);
  for (auto r : matched) {
    const int c = labels[r];
    if (c < 0 || static_cast<std::size_t>(c) >= classes)
      fail(ErrorKind::Data, "majority_vote: label out of range");
    ++votes[static_cast<std::size_t>(c)];
  }
  const std::size_t best = *std::max_element(votes.begin(), votes.end());
  std::vector<int> leaders;
  for (std::size_t c = 0; c < classes; ++c)
    if (votes[c] == best) leaders.push_back(static_cast<int>(c));
  if (tie == TieBreak::LowestClassId || leaders.size() == 1)
    return leaders.front();
  std::mt19937_64 rng(tie_seed);
  std::uniform_int_distribution<std::size_t> pick(0, leaders.size() - 1);
  return leaders[pick(rng)];
}

namespace {

// Classification given each stored row's mismatch count. `decide(th, k)`
// returns whether k mismatches are sensed as a match at threshold th, and
// flags when it had to use the functional rule.
template <class Decide>
KnnOutcome classify_counts(std::span<const std::size_t> counts,
                           std::span<const int> labels, std::size_t classes,
                           std::size_t wordlength, int threshold,
                           const KnnConfig& cfg, std::uint64_t tie_seed,
                           Decide&& decide) {
  if (threshold < 0 || static_cast<std::size_t>(threshold) > wordlength)
    fail(ErrorKind::Usage,
         fmt::format("threshold {} outside [0, {}]", threshold, wordlength));
  KnnOutcome out;
  std::vector<std::size_t> matched;
  for (int th = threshold;; ++th) {
    matched.clear();
    for (std::size_t r = 0; r < counts.size(); ++r) {
      bool fallback = false;
      if (decide(th, counts[r], fallback)) matched.push_back(r);
      out.functional_fallback |= fallback;
    }
    out.threshold_used = th;
    out.matched_count = matched.size();
    if (!matched.empty()) {
      out.label = majority_vote(matched, labels, classes, cfg.tie_break, tie_seed);
      return out;
    }
    if (cfg.escalation == Escalation::Fail ||
        static_cast<std::size_t>(th) >= wordlength)
      return out;
  }
}

auto make_decider(Matcher matcher, const TransientEnv& env,
                  std::size_t wordlength, bool need_sense = true) {
  if (matcher == Matcher::Transient && env.sense == nullptr && need_sense)
    fail(ErrorKind::Usage, "transient matcher needs a calibrated sense table");
  return [matcher, sense = env.sense, wordlength](int th, std::size_t k,
                                                  bool& fallback) {
    const bool functional = k <= static_cast<std::size_t>(th);
    if (matcher == Matcher::Functional) return functional;
    if (static_cast<std::size_t>(th) >= wordlength) return true;
    if (sense && sense->has_threshold(th)) return sense->matched(th, k);
    fallback = true;
    return functional;
  };
}

std::vector<std::size_t> mismatch_counts(const CamArray& train,
                                         std::span<const TernaryBit> query) {
  std::vector<std::size_t> counts(train.rows());
  for (std::size_t r = 0; r < train.rows(); ++r)
    counts[r] = train.mismatch_count(r, query);
  return counts;
}

std::uint64_t query_seed(std::uint64_t seed, std::size_t instance) {
  return seed ^ (0x9E3779B97F4A7C15ull * (instance + 1));
}

}  // namespace

KnnOutcome knn_classify(const CamArray& train, std::span<const int> labels,
                        std::size_t classes, std::span<const TernaryBit> query,
                        int threshold, const KnnConfig& cfg, Matcher matcher,
                        const TransientEnv& env, std::uint64_t tie_seed) {
  if (labels.size() != train.rows())
    fail(ErrorKind::Usage, "knn_classify: one label per stored row required");
  const auto counts = mismatch_counts(train, query);
  return classify_counts(counts, labels, classes, train.wordlength(), threshold,
                         cfg, tie_seed,
                         make_decider(matcher, env, train.wordlength()));
}

AccuracyResult evaluate_accuracy(const Dataset& ds, const KnnConfig& cfg,
                                 Matcher matcher, const MatcherEnv& env) {
  if (ds.size() < 5)
    fail(ErrorKind::Data,
         fmt::format("dataset {} has {} instances; at least 5 required",
                     ds.name, ds.size()));
  if (cfg.threshold_schedule.empty())
    fail(ErrorKind::Usage, "knn: empty threshold schedule");

  const Split split = split_dataset(ds.size(), cfg.split_ratio, cfg.split_seed);
  const std::size_t levels = cfg.levels ? cfg.levels : default_levels(ds.dims());
  const ThermometerEncoder enc(ds, split.train, levels);
  const std::size_t wl = enc.wordlength();
  for (int th : cfg.threshold_schedule)
    if (th < 0 || static_cast<std::size_t>(th) > wl)
      fail(ErrorKind::Usage,
           fmt::format("knn: threshold {} outside [0, {}]", th, wl));

  CamArray array(wl, env.device);
  std::vector<int> train_labels;
  for (auto r : split.train) {
    array.store(enc.encode(ds.features[r]));
    train_labels.push_back(ds.labels[r]);
  }

  std::optional<transient::SenseTable> sense;
  if (matcher == Matcher::Transient) {
    const auto circuit = transient::scaled_for_wordlength(
        env.circuit, wl, env.reference_wordlength);
    std::vector<int> ths;
    for (int th : cfg.threshold_schedule)
      if (static_cast<std::size_t>(th) < wl) ths.push_back(th);
    std::sort(ths.begin(), ths.end());
    ths.erase(std::unique(ths.begin(), ths.end()), ths.end());
    if (!ths.empty()) {
      const auto cal = transient::calibrate_veval(ths, env.device, circuit, wl,
                                                  env.guard_band);
      sense.emplace(cal, circuit, env.device);
    }
  }
  const TransientEnv tenv{sense ? &*sense : nullptr};
  const std::size_t n_th = cfg.threshold_schedule.size();

  AccuracyResult res;
  res.train_size = split.train.size();
  res.test_size = split.test.size();
  res.wordlength = wl;
  res.warnings = enc.warnings();
  res.audit.resize(split.test.size() * n_th);

  // no sense table only when every scheduled threshold reaches wl
  auto decide = make_decider(matcher, tenv, wl, false);
  parallel_for(split.test.size(), env.threads, [&](std::size_t qi) {
    const std::size_t inst = split.test[qi];
    const auto query = enc.encode(ds.features[inst]);
    const auto counts = mismatch_counts(array, query);
    for (std::size_t t = 0; t < n_th; ++t) {
      const int th = cfg.threshold_schedule[t];
      const auto o = classify_counts(counts, train_labels, ds.classes, wl, th,
                                     cfg, query_seed(cfg.split_seed, inst),
                                     decide);
      QueryAudit& a = res.audit[qi * n_th + t];
      a.instance = inst;
      a.truth = ds.labels[inst];
      a.threshold = th;
      a.predicted = o.label;
      a.matched_count = o.matched_count;
      a.threshold_used = o.threshold_used;
      a.fallback = o.functional_fallback;
    }
  });

  for (std::size_t t = 0; t < n_th; ++t) {
    AccuracyRow row;
    row.threshold = cfg.threshold_schedule[t];
    std::size_t correct = 0, matched = 0;
    for (std::size_t qi = 0; qi < split.test.size(); ++qi) {
      const QueryAudit& a = res.audit[qi * n_th + t];
      correct += a.predicted && *a.predicted == a.truth ? 1 : 0;
      matched += a.matched_count;
      row.fallbacks += a.fallback ? 1 : 0;
    }
    const auto n = static_cast<double>(split.test.size());
    row.accuracy = static_cast<double>(correct) / n;
    row.mean_matched = static_cast<double>(matched) / n;
    res.rows.push_back(row);
  }
  return res;
}

std::vector<int> software_knn(const Dataset& ds,
                              std::span<const std::size_t> train,
                              std::span<const std::size_t> test,
                              std::size_t k) {
  if (k < 1 || train.empty()) fail(ErrorKind::Usage, "software_knn: bad k");
  k = std::min(k, train.size());
  const std::size_t f = ds.dims();
  std::vector<double> lo(f, std::numeric_limits<double>::infinity());
  std::vector<double> hi(f, -std::numeric_limits<double>::infinity());
  for (auto r : train)
    for (std::size_t j = 0; j < f; ++j) {
      lo[j] = std::min(lo[j], ds.features[r][j]);
      hi[j] = std::max(hi[j], ds.features[r][j]);
    }
  auto scaled = [&](std::size_t r, std::size_t j) {
    const double span = hi[j] - lo[j];
    return span > 0.0 ? (ds.features[r][j] - lo[j]) / span : 0.0;
  };

  std::vector<int> out;
  out.reserve(test.size());
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  for (auto q : test) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < f; ++j) {
        const double diff = scaled(q, j) - scaled(train[i], j);
        d += diff * diff;
      }
      dist[i] = {d, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                      dist.end());
    std::vector<std::size_t> votes(ds.classes, 0);
    for (std::size_t i = 0; i < k; ++i)
      ++votes[static_cast<std::size_t>(ds.labels[train[dist[i].second]])];
    out.push_back(static_cast<int>(
        std::max_element(votes.begin(), votes.end()) - votes.begin()));
  }
  return out;
}

void write_accuracy_csv(std::ostream& out, std::span<const AccuracyRow> rows,
                        const std::string& config_hash) {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "threshold,accuracy,mean_matched\n";
  for (const auto& r : rows)
    out << fmt::format("{},{:.6f},{:.6f}\n", r.threshold, r.accuracy,
                       r.mean_matched);
}

void write_audit_json(std::ostream& out, const AccuracyResult& result,
                      const std::string& config_hash) {
  nlohmann::json j;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["train_size"] = result.train_size;
  j["test_size"] = result.test_size;
  j["wordlength"] = result.wordlength;
  j["warnings"] = result.warnings;
  auto& q = j["queries"] = nlohmann::json::array();
  for (const auto& a : result.audit) {
    nlohmann::json e;
    e["instance"] = a.instance;
    e["truth"] = a.truth;
    e["threshold"] = a.threshold;
    e["threshold_used"] = a.threshold_used;
    e["matched"] = a.matched_count;
    if (a.predicted)
      e["predicted"] = *a.predicted;
    else
      e["predicted"] = nullptr;
    q.push_back(std::move(e));
  }
  out << j.dump(1) << '\n';
}

}  // namespace tapcam::knn
