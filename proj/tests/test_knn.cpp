#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "tapcam/error.hpp"
#include "tapcam/knn.hpp"

using namespace tapcam;
using namespace tapcam::knn;
using device::BranchParams;

namespace {

std::string data(const std::string& f) { return std::string(TAPCAM_DATA_DIR) + "/" + f; }

const Dataset& iris() {
  static const Dataset ds = load_dataset(data("iris.csv"));
  return ds;
}

Dataset parse(const std::string& text, const std::string& name = "toy") {
  std::istringstream is(text);
  return parse_dataset(is, name);
}

Dataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t f,
                       std::size_t classes) {
  Dataset ds;
  ds.name = "random";
  ds.classes = classes;
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> c(0, int(classes) - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = c(rng);
    std::vector<double> x(f);
    for (auto& v : x) v = g(rng) + label;
    ds.features.push_back(x);
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace

TEST_CASE("bundled datasets have the expected shapes") {
  for (const char* name : {"iris", "wine", "digits"}) {
    const auto ds = load_dataset(data(std::string(name) + ".csv"));
    const auto shape = known_shape(name);
    REQUIRE(shape.has_value());
    CHECK(ds.size() == shape->instances);
    CHECK(ds.dims() == shape->features);
    CHECK(ds.classes == shape->classes);
  }
  CHECK(known_shape("iris")->instances == 150);
  CHECK(known_shape("iris")->features == 4);
  CHECK(known_shape("wine")->instances == 178);
  CHECK(known_shape("wine")->features == 13);
  CHECK(known_shape("digits")->instances == 5620);
  CHECK(known_shape("digits")->features == 64);
  CHECK(known_shape("digits")->classes == 10);
}

TEST_CASE("malformed rows are reported by line") {
  auto expect = [](const std::string& text, const std::string& where,
                   const std::string& name = "toy") {
    try {
      parse(text, name);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Data);
      CHECK(std::string(e.what()).find(where) != std::string::npos);
    }
  };
  expect("1,2,3,4,0\n1,2,3,1\n", "line 2");
  expect("1,2,3,4,0\n1,a,3,4,1\n", "line 2");
  expect("1,2,3,4,0\n1,2,3,4,1.5\n", "line 2");
  expect("1,2,3,4,0\n1,2,3,4,3\n", "line 2", "iris");
  expect("", "no instances");
  CHECK_THROWS_AS(load_dataset(data("missing.csv")), Error);
  const auto ok = parse("# comment\n1,2,0\n\n3,4,1\n");
  CHECK(ok.size() == 2);
  CHECK(ok.classes == 2);
}

TEST_CASE("split is seeded, disjoint and 8:2") {
  const auto a = split_dataset(150, 0.8, 1);
  const auto b = split_dataset(150, 0.8, 1);
  CHECK(a.train == b.train);
  CHECK(a.train.size() == 120);
  CHECK(a.test.size() == 30);
  std::vector<std::size_t> all = a.train;
  all.insert(all.end(), a.test.begin(), a.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
  CHECK_FALSE(split_dataset(150, 0.8, 2).train == a.train);
  CHECK_THROWS_AS(split_dataset(10, 1.0, 1), Error);
}

TEST_CASE("thermometer codes") {
  const auto ds = parse("0,0\n10,1\n2.5,0\n7.5,1\n");
  const std::vector<std::size_t> fit{0, 1, 2, 3};
  ThermometerEncoder enc(ds, fit, 4);
  CHECK(cam::format_word(enc.encode(ds.features[0])) == "0000");
  CHECK(cam::format_word(enc.encode(ds.features[1])) == "1111");
  CHECK(enc.quantize(ds.features[2])[0] == 1);
  CHECK(enc.quantize(ds.features[3])[0] == 3);
  const auto a = enc.encode(ds.features[2]);
  const auto b = enc.encode(ds.features[3]);
  std::size_t h = 0;
  for (std::size_t i = 0; i < a.size(); ++i) h += a[i] != b[i];
  CHECK(h == 2);
  // clamped outside the fitted range
  const std::vector<double> big{100.0};
  CHECK(cam::format_word(enc.encode(big)) == "1111");

  CHECK(default_levels(4) == 16);
  CHECK(default_levels(13) == 16);
  CHECK(default_levels(64) == 4);
  CHECK(default_levels(300) == 1);
  const std::vector<std::size_t> all{0, 1, 2, 3};
  CHECK_THROWS_AS(ThermometerEncoder(ds, all, 257), Error);
  CHECK_THROWS_AS(ThermometerEncoder(ds, all, 0), Error);
}

TEST_CASE("constant feature encodes as zeros with a warning") {
  const auto ds = parse("1,5,0\n2,5,1\n3,5,0\n");
  const std::vector<std::size_t> fit{0, 1, 2};
  const auto enc = thermometer_encode(ds, 3, fit);
  REQUIRE(enc.warnings.size() == 1);
  CHECK(enc.warnings[0].find("feature 1") != std::string::npos);
  for (const auto& w : enc.words) CHECK(cam::format_word(std::span(w).subspan(3)) == "000");
}

TEST_CASE("encoding isometry on random pairs") {
  std::mt19937_64 rng(17);
  const auto ds = random_dataset(rng, 400, 13, 3);
  std::vector<std::size_t> fit(300);
  for (std::size_t i = 0; i < fit.size(); ++i) fit[i] = i;
  const std::size_t L = default_levels(ds.dims());
  const ThermometerEncoder enc(ds, fit, L);
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  for (int t = 0; t < 10000; ++t) {
    const auto i = pick(rng), j = pick(rng);
    const auto qa = enc.quantize(ds.features[i]);
    const auto qb = enc.quantize(ds.features[j]);
    std::size_t l1 = 0;
    for (std::size_t f = 0; f < qa.size(); ++f)
      l1 += static_cast<std::size_t>(std::abs(qa[f] - qb[f]));
    const auto wa = enc.encode(ds.features[i]);
    const auto wb = enc.encode(ds.features[j]);
    std::size_t h = 0;
    for (std::size_t b = 0; b < wa.size(); ++b) h += wa[b] != wb[b];
    REQUIRE(h == l1);
  }
}

TEST_CASE("majority vote") {
  const std::vector<int> labels{0, 0, 1, 2, 1};
  const std::vector<std::size_t> one{3};
  CHECK(majority_vote(one, labels, 3, TieBreak::LowestClassId, 0) == 2);
  const std::vector<std::size_t> aab{0, 1, 2};
  CHECK(majority_vote(aab, labels, 3, TieBreak::LowestClassId, 0) == 0);
  const std::vector<std::size_t> tie{0, 2, 3};
  CHECK(majority_vote(tie, labels, 3, TieBreak::LowestClassId, 0) == 0);
  std::set<int> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const int c = majority_vote(tie, labels, 3, TieBreak::RandomSeeded, s);
    CHECK(c == majority_vote(tie, labels, 3, TieBreak::RandomSeeded, s));
    seen.insert(c);
  }
  CHECK(seen == std::set<int>{0, 1, 2});
  CHECK_THROWS_AS(majority_vote({}, labels, 3, TieBreak::LowestClassId, 0), Error);
}

TEST_CASE("functional classification equals an exhaustive scan") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> bit(0, 1), lab(0, 3);
  std::uniform_int_distribution<int> thd(0, 12);
  const std::size_t wl = 32;
  auto word = [&] {
    std::vector<TernaryBit> w(wl);
    for (auto& b : w) b = bit(rng) ? TernaryBit::One : TernaryBit::Zero;
    return w;
  };
  CamArray a(wl);
  std::vector<std::vector<TernaryBit>> rows;
  std::vector<int> labels;
  for (int r = 0; r < 32; ++r) {
    rows.push_back(word());
    a.store(rows.back());
    labels.push_back(lab(rng));
  }
  KnnConfig cfg;
  for (int t = 0; t < 100; ++t) {
    auto q = rows[static_cast<std::size_t>(t) % rows.size()];
    for (int f = 0; f < 10; ++f) q[static_cast<std::size_t>(bit(rng) * 16 + f)] = bit(rng) ? TernaryBit::One : TernaryBit::Zero;
    const int th = thd(rng);
    std::vector<std::size_t> dist(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      dist[r] = 0;
      for (std::size_t b = 0; b < wl; ++b) dist[r] += rows[r][b] != q[b];
    }
    int used = th;
    std::vector<std::size_t> votes;
    for (;; ++used) {
      std::vector<std::size_t> m;
      for (std::size_t r = 0; r < rows.size(); ++r)
        if (dist[r] <= std::size_t(used)) m.push_back(r);
      if (!m.empty()) {
        votes.assign(4, 0);
        for (auto r : m) ++votes[std::size_t(labels[r])];
        break;
      }
    }
    const int want = int(std::max_element(votes.begin(), votes.end()) - votes.begin());
    const auto got = knn_classify(a, labels, 4, q, th, cfg, Matcher::Functional);
    REQUIRE(got.label.has_value());
    CHECK(*got.label == want);
    CHECK(got.threshold_used == used);
  }
}

TEST_CASE("escalation policies") {
  CamArray a(8);
  a.store(cam::parse_word("00000000"));
  const std::vector<int> labels{1};
  const auto q = cam::parse_word("11110000");
  KnnConfig cfg;
  cfg.escalation = Escalation::Fail;
  const auto none = knn_classify(a, labels, 2, q, 2, cfg, Matcher::Functional);
  CHECK_FALSE(none.label.has_value());
  CHECK(none.matched_count == 0);
  cfg.escalation = Escalation::StepUp;
  const auto up = knn_classify(a, labels, 2, q, 2, cfg, Matcher::Functional);
  REQUIRE(up.label.has_value());
  CHECK(*up.label == 1);
  CHECK(up.threshold_used == 4);
  CHECK_THROWS_AS(knn_classify(a, labels, 2, q, 9, cfg, Matcher::Functional), Error);
  CHECK_THROWS_AS(knn_classify(a, labels, 2, q, 2, cfg, Matcher::Transient), Error);
}

TEST_CASE("transient classification uses sensed decisions") {
  const std::vector<int> th{0, 1, 2, 3, 4, 5};
  const auto cal = transient::calibrate_veval(th, BranchParams{}, transient::CircuitParams{}, 64);
  const transient::SenseTable sense(cal, transient::CircuitParams{}, BranchParams{});
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> bit(0, 1);
  CamArray a(64);
  std::vector<int> labels;
  for (int r = 0; r < 24; ++r) {
    std::vector<TernaryBit> w(64);
    for (auto& b : w) b = bit(rng) ? TernaryBit::One : TernaryBit::Zero;
    a.store(w);
    labels.push_back(r % 3);
  }
  KnnConfig cfg;
  for (int t = 0; t < 30; ++t) {
    auto q = a.stored_word(static_cast<std::size_t>(t) % 24);
    for (int f = 0; f < t % 9; ++f) q[static_cast<std::size_t>(f * 7)] = TernaryBit::Zero;
    for (int thr = 0; thr <= 5; ++thr) {
      const auto f = knn_classify(a, labels, 3, q, thr, cfg, Matcher::Functional);
      const auto s = knn_classify(a, labels, 3, q, thr, cfg, Matcher::Transient,
                                  TransientEnv{&sense});
      CHECK(f.label == s.label);
      CHECK(f.matched_count == s.matched_count);
      CHECK(f.threshold_used == s.threshold_used);
      CHECK(s.functional_fallback == (s.threshold_used > 5));
    }
  }
}

TEST_CASE("accuracy needs enough instances") {
  const auto ds = parse("1,0\n2,1\n3,0\n4,1\n");
  CHECK_THROWS_AS(evaluate_accuracy(ds, KnnConfig{}, Matcher::Functional), Error);
}

TEST_CASE("single-label training set gives a constant vote") {
  std::mt19937_64 rng(2);
  auto ds = random_dataset(rng, 60, 3, 2);
  KnnConfig cfg;
  const auto split = split_dataset(ds.size(), cfg.split_ratio, cfg.split_seed);
  for (auto r : split.train) ds.labels[r] = 1;
  const auto res = evaluate_accuracy(ds, cfg, Matcher::Functional);
  std::size_t ones = 0;
  for (auto r : split.test) ones += ds.labels[r] == 1;
  const double frac = double(ones) / double(split.test.size());
  REQUIRE(res.rows.size() == 6);
  for (const auto& row : res.rows) CHECK(row.accuracy == doctest::Approx(frac));
}

TEST_CASE("iris accuracy tracks a software KNN with matched-set k") {
  KnnConfig cfg;
  const auto res = evaluate_accuracy(iris(), cfg, Matcher::Functional);
  const auto split = split_dataset(iris().size(), cfg.split_ratio, cfg.split_seed);
  REQUIRE(res.rows.size() == 6);
  double best = 0.0;
  for (const auto& row : res.rows) {
    const auto k = std::max<std::size_t>(1, std::size_t(std::lround(row.mean_matched)));
    const auto sw = software_knn(iris(), split.train, split.test, k);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < split.test.size(); ++i)
      ok += sw[i] == iris().labels[split.test[i]];
    const double sw_acc = double(ok) / double(split.test.size());
    INFO("threshold " << row.threshold << " k " << k);
    CHECK(std::abs(row.accuracy - sw_acc) <= 0.05);
    best = std::max(best, row.accuracy);
  }
  CHECK(best >= 0.85);
}

TEST_CASE("functional and transient accuracy agree on iris and wine") {
  for (const char* f : {"iris.csv", "wine.csv"}) {
    const auto ds = load_dataset(data(f));
    const auto a = evaluate_accuracy(ds, KnnConfig{}, Matcher::Functional);
    const auto b = evaluate_accuracy(ds, KnnConfig{}, Matcher::Transient);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].accuracy == b.rows[i].accuracy);
      CHECK(a.rows[i].mean_matched == b.rows[i].mean_matched);
    }
    for (std::size_t i = 0; i < a.audit.size(); ++i) {
      CHECK(a.audit[i].predicted == b.audit[i].predicted);
      CHECK(a.audit[i].predicted.has_value());
    }
  }
}

TEST_CASE("accuracy tables are deterministic") {
  MatcherEnv one, three;
  three.threads = 3;
  const auto ds = load_dataset(data("wine.csv"));
  std::ostringstream a, b;
  write_accuracy_csv(a, evaluate_accuracy(ds, KnnConfig{}, Matcher::Functional, one).rows, "h");
  write_accuracy_csv(b, evaluate_accuracy(ds, KnnConfig{}, Matcher::Functional, three).rows, "h");
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("# config_hash=h\nthreshold,accuracy,mean_matched\n", 0) == 0);
  CHECK(parse_matcher("transient") == Matcher::Transient);
  CHECK_THROWS_AS(parse_matcher("spice"), Error);
}
