#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "tapcam/cam_core.hpp"
#include "tapcam/error.hpp"
#include "tapcam/transient.hpp"

using namespace tapcam;
using namespace tapcam::transient;
using cam::CamArray;
using cam::TernaryBit;

namespace {

constexpr std::size_t kWl = 64;

const Calibration& nominal_calibration() {
  static const Calibration cal = [] {
    const std::vector<int> th{0, 1, 2, 3, 4, 5};
    return calibrate_veval(th, BranchParams{}, CircuitParams{}, kWl);
  }();
  return cal;
}

std::vector<TernaryBit> random_word(std::mt19937_64& rng, std::size_t n,
                                    double x_prob) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TernaryBit> w(n);
  for (auto& b : w)
    b = u(rng) < x_prob ? TernaryBit::DontCare
                        : (u(rng) < 0.5 ? TernaryBit::Zero : TernaryBit::One);
  return w;
}

// Row at exactly k mismatches from `query` (no wildcards).
std::vector<TernaryBit> at_distance(const std::vector<TernaryBit>& query,
                                    std::size_t k, std::mt19937_64& rng) {
  auto w = query;
  std::vector<std::size_t> idx(w.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < k; ++i)
    w[idx[i]] = w[idx[i]] == TernaryBit::One ? TernaryBit::Zero : TernaryBit::One;
  return w;
}

}  // namespace

TEST_CASE("equivalent resistance") {
  BranchParams p;
  CHECK(equivalent_resistance(1, p) == doctest::Approx(350e3));
  CHECK(equivalent_resistance(2, p) == doctest::Approx(175e3));
  for (std::size_t n = 1; n < 64; ++n)
    CHECK(equivalent_resistance(n, p) / equivalent_resistance(n + 1, p) ==
          doctest::Approx(double(n + 1) / double(n)));
  CHECK_THROWS_AS(equivalent_resistance(0, p), Error);
}

TEST_CASE("closed-form matchline voltage") {
  BranchParams p;
  CircuitParams c;
  for (std::size_t n = 0; n < 8; ++n) CHECK(ml_voltage_analytic(0.0, n, p, c, kWl) == c.vdd);
  CHECK(ml_voltage_analytic(5e-9, 0, p, c, kWl) == c.vdd);
  const double tau = 350e3 * (kWl * c.c_cell + c.c_wire);
  CHECK(ml_voltage_analytic(tau, 1, p, c, kWl) == doctest::Approx(c.vdd / std::exp(1.0)));
  CHECK_THROWS_AS(ml_voltage_analytic(-1e-12, 1, p, c, kWl), Error);
}

TEST_CASE("discharge rate") {
  BranchParams p;
  CircuitParams c;
  const double cm = c.c_ml(kWl);
  CHECK(discharge_rate(0.0, 1, p, c, kWl) == doctest::Approx(-c.vdd / (350e3 * cm)));
  CHECK(discharge_rate(1e-9, 0, p, c, kWl) == 0.0);
  CHECK_THROWS_AS(discharge_rate(-1.0, 1, p, c, kWl), Error);
  // faster with more mismatches while t < R_1 C_M ln(1 + 1/n)
  const double tau1 = 350e3 * cm;
  for (std::size_t n = 1; n < 6; ++n)
    for (double t : {0.0, 0.5 * tau1 * std::log(1.0 + 1.0 / double(n))})
      CHECK(std::abs(discharge_rate(t, n + 1, p, c, kWl)) >
            std::abs(discharge_rate(t, n, p, c, kWl)));

  // centred finite differences at 20 (t, n) points
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ut(0.05e-9, 3e-9);
  std::uniform_int_distribution<int> un(1, 8);
  for (int i = 0; i < 20; ++i) {
    const double t = ut(rng);
    const auto n = static_cast<std::size_t>(un(rng));
    const double h = 1e-15;
    const double fd = (ml_voltage_analytic(t + h, n, p, c, kWl) -
                       ml_voltage_analytic(t - h, n, p, c, kWl)) /
                      (2 * h);
    const double r = discharge_rate(t, n, p, c, kWl);
    CHECK(r <= 0.0);
    CHECK(std::abs(fd - r) / std::abs(r) < 1e-3);
  }
}

TEST_CASE("sense margin and its optimum") {
  BranchParams p;
  CircuitParams c;
  for (std::size_t n = 0; n < 6; ++n) CHECK(sense_margin(0.0, n, p, c, kWl) == 0.0);
  CHECK_FALSE(optimal_sense_time(0, p, c, kWl).has_value());

  const double tau1 = 350e3 * c.c_ml(kWl);
  const double step = tau1 * 1e-4;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n <= 5; ++n) {
    double best_t = 0.0, best = -1.0;
    for (double t = 0.0; t <= 10 * tau1; t += step) {
      const double m = sense_margin(t, n, p, c, kWl);
      if (m > best) {
        best = m;
        best_t = t;
      }
    }
    if (n >= 1) {
      const auto opt = optimal_sense_time(n, p, c, kWl);
      REQUIRE(opt.has_value());
      CHECK(std::abs(*opt - best_t) <= step);
    }
    CHECK(best < prev);
    prev = best;
  }
}

TEST_CASE("evaluation transistor card") {
  CircuitParams c;
  CHECK(eval_transistor_current(c.eval_vtn, 0.5, c) == 0.0);
  CHECK(eval_transistor_current(0.1, 0.5, c) == 0.0);
  for (double vds : {0.05, 0.2, 0.6}) {
    double prev = 0.0;
    for (double vg = 0.0; vg <= 2.0; vg += 0.01) {
      const double i = eval_transistor_current(vg, vds, c);
      CHECK(i >= prev);
      prev = i;
    }
  }
  for (double vg : {0.5, 0.8, 1.2}) {
    const double vov = vg - c.eval_vtn;
    const double triode = c.eval_k * (vov * vov - vov * vov / 2);
    const double sat = c.eval_k / 2 * vov * vov;
    CHECK(triode == doctest::Approx(sat));
    CHECK(eval_transistor_current(vg, vov, c) == doctest::Approx(sat));
    CHECK(eval_transistor_current(vg, vov * (1 - 1e-9), c) == doctest::Approx(sat));
  }
}

TEST_CASE("matching row never discharges") {
  BranchParams p;
  CircuitParams c;
  const auto tr = simulate_matchline(0.0, c.c_ml(kWl), 1.0, c, c.sense_window);
  for (double v : tr.v_o) CHECK(v == c.vdd);
  CHECK_FALSE(tr.crossing_time.has_value());
  CamArray a(kWl);
  std::vector<TernaryBit> q(kWl, TernaryBit::One);
  a.store(q);
  CHECK_THROWS_AS(simulate_search(a.row(0), q, 1.0, p, c, c.sense_window / 2), Error);
  const auto full = simulate_search(a.row(0), q, 1.0, p, c, c.sense_window);
  CHECK_FALSE(full.crossing_time.has_value());
}

TEST_CASE("waveform invariants and energy balance") {
  BranchParams p;
  CircuitParams c;
  const double cm = c.c_ml(kWl);
  for (std::size_t k : {1u, 3u, 6u, 20u}) {
    for (double ve : {0.45, 0.7, 1.0}) {
      const double g = static_cast<double>(k) * p.on_conductance();
      const auto tr = simulate_matchline(g, cm, ve, c, 2e-9);
      int flips = 0;
      for (std::size_t i = 1; i < tr.times.size(); ++i) {
        CHECK(tr.v_ml[i] <= tr.v_ml[i - 1] + 1e-12);
        CHECK(tr.v_o[i] <= tr.v_o[i - 1] + 1e-12);
        const double q0 = cm * tr.v_ml[i - 1] + c.c_o * tr.v_o[i - 1];
        const double q1 = cm * tr.v_ml[i] + c.c_o * tr.v_o[i];
        CHECK(q1 <= q0 + 1e-24);
        flips += tr.sa_out[i] != tr.sa_out[i - 1];
        CHECK(!(tr.sa_out[i] && !tr.sa_out[i - 1]));
      }
      CHECK(flips <= 1);
      const double stored0 = 0.5 * (cm + c.c_o) * c.vdd * c.vdd;
      const double stored1 = 0.5 * cm * tr.v_ml.back() * tr.v_ml.back() +
                             0.5 * c.c_o * tr.v_o.back() * tr.v_o.back();
      CHECK(tr.discharge_energy == doctest::Approx(stored0 - stored1).epsilon(1e-4));
    }
  }
}

TEST_CASE("numeric matchline follows the RC law with a transparent T2") {
  BranchParams p;
  CircuitParams c;
  c.c_o = 1e-17;
  c.eval_k = 20e-6;
  c.dt = 1e-13;
  const double cm = c.c_ml(kWl);
  for (std::size_t n : {1u, 2u, 5u}) {
    const double tau = equivalent_resistance(n, p) * cm;
    const auto tr = simulate_matchline(static_cast<double>(n) * p.on_conductance(),
                                       cm, p.v_write, c, 3 * tau);
    for (std::size_t i = 0; i < tr.times.size(); i += 97) {
      const double a = ml_voltage_analytic(tr.times[i], n, p, c, kWl);
      CHECK(std::abs(tr.v_ml[i] - a) / a < 0.02);
    }
  }
}

TEST_CASE("step halving barely moves crossings") {
  BranchParams p;
  CircuitParams c;
  auto fine = c;
  fine.dt = c.dt / 2;
  const auto& cal = nominal_calibration();
  for (const auto& [th, ve] : cal.table.entries()) {
    for (std::size_t k : {std::size_t(th), std::size_t(th) + 1, std::size_t(th) + 3}) {
      if (k == 0) continue;
      const auto a = crossing_time(k, ve, p, c, kWl, 4e-9);
      const auto b = crossing_time(k, ve, p, fine, kWl, 4e-9);
      REQUIRE(a.has_value() == b.has_value());
      if (a) CHECK(std::abs(*a - *b) / *b < 0.01);
    }
  }
}

TEST_CASE("crossing ordering") {
  BranchParams p;
  CircuitParams c;
  for (double ve : {0.5, 0.8, 1.0}) {
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= 12; ++k) {
      const auto t = crossing_time(k, ve, p, c, kWl, 10e-9);
      REQUIRE(t.has_value());
      CHECK(*t < prev);
      prev = *t;
    }
  }
  for (std::size_t k : {2u, 6u}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double ve = 0.45; ve <= 1.2; ve += 0.05) {
      const auto t = crossing_time(k, ve, p, c, kWl, 20e-9);
      REQUIRE(t.has_value());
      CHECK(*t < prev);
      prev = *t;
    }
  }
}

TEST_CASE("unstable step is reported") {
  BranchParams p;
  CircuitParams c;
  c.c_o = 1e-20;
  try {
    simulate_matchline(10 * p.on_conductance(), c.c_ml(kWl), 1.0, c, c.sense_window);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
  }
}

TEST_CASE("calibration trend and replay") {
  const auto& cal = nominal_calibration();
  CHECK(cal.table.entries().size() == 6);
  CHECK(cal.table.strictly_decreasing());
  double mx = 0.0;
  for (const auto& [th, v] : cal.table.entries()) mx = std::max(mx, v);
  CHECK(cal.table.at(0) == mx);
  CHECK(cal.sense_deadline == CircuitParams{}.sense_window);
  const auto checks = verify_calibration(cal, BranchParams{}, CircuitParams{});
  REQUIRE(checks.size() == 6);
  for (const auto& g : checks) {
    INFO("threshold " << g.threshold);
    CHECK(g.pass);
  }
  CHECK(VEvalTable::reference().strictly_decreasing());
}

TEST_CASE("Th-5 separates 5 from 6 mismatches") {
  const auto& cal = nominal_calibration();
  const double ve = cal.table.at(5);
  const auto t5 = crossing_time(5, ve, BranchParams{}, CircuitParams{}, kWl, 4e-9);
  const auto t6 = crossing_time(6, ve, BranchParams{}, CircuitParams{}, kWl, 4e-9);
  REQUIRE(t6.has_value());
  CHECK(*t6 < cal.sense_deadline);
  CHECK((!t5 || *t5 > cal.sense_deadline));
}

TEST_CASE("calibrated decisions equal the threshold rule for every k") {
  const auto& cal = nominal_calibration();
  const SenseTable sense(cal, CircuitParams{}, BranchParams{});
  for (int th = 0; th <= 5; ++th)
    for (std::size_t k = 0; k <= kWl; ++k)
      CHECK(sense.matched(th, k) == (k <= std::size_t(th)));
  CHECK_FALSE(sense.has_threshold(6));
}

TEST_CASE("degenerate window is infeasible") {
  CircuitParams c;
  c.sense_window = 0.0;
  const std::vector<int> th{0, 1};
  try {
    calibrate_veval(th, BranchParams{}, c, kWl);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Infeasible);
  }
  // guard band beyond the RC ratio at Th-5
  try {
    const std::vector<int> th5{5};
    calibrate_veval(th5, BranchParams{}, CircuitParams{}, kWl, 0.1);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Infeasible);
    CHECK(std::string(e.what()).find("5") != std::string::npos);
  }
}

TEST_CASE("transient matcher equals functional on random arrays") {
  const auto& cal = nominal_calibration();
  CircuitParams c;
  std::mt19937_64 rng(21);
  for (int t = 0; t < 5; ++t) {
    CamArray a(kWl);
    const auto q = random_word(rng, kWl, 0.0);
    for (int r = 0; r < 16; ++r) {
      std::uniform_int_distribution<std::size_t> uk(0, 8);
      a.store(at_distance(q, uk(rng), rng));
    }
    a.store(random_word(rng, kWl, 0.3));
    for (int th = 0; th <= 5; ++th)
      CHECK(threshold_match_transient(a, q, th, cal, c) ==
            cam::threshold_match_functional(a, q, std::size_t(th)));
    CHECK(threshold_match_transient(a, q, int(kWl), cal, c).size() == a.rows());
  }
}

TEST_CASE("wildcard columns do not change transient matches") {
  CircuitParams c;
  const std::vector<int> th{3};
  const auto cal72 = calibrate_veval(th, BranchParams{}, c, 72);
  const auto& cal64 = nominal_calibration();
  std::mt19937_64 rng(4);
  CamArray a(64), b(72);
  const auto q = random_word(rng, 64, 0.0);
  auto q2 = q;
  q2.resize(72, TernaryBit::One);
  for (int r = 0; r < 16; ++r) {
    std::uniform_int_distribution<std::size_t> uk(0, 6);
    auto w = at_distance(q, uk(rng), rng);
    a.store(w);
    w.resize(72, TernaryBit::DontCare);
    b.store(w);
  }
  CHECK(threshold_match_transient(a, q, 3, cal64, c) ==
        threshold_match_transient(b, q2, 3, cal72, c));
  CHECK_THROWS_AS(threshold_match_transient(b, q2, 3, cal64, c), Error);
}

TEST_CASE("calibration file round trip and trace csv") {
  const auto& cal = nominal_calibration();
  std::stringstream ss;
  write_calibration(ss, cal, "abc");
  const auto back = read_calibration(ss);
  CHECK(back.table.entries() == cal.table.entries());
  CHECK(back.sense_deadline == cal.sense_deadline);
  CHECK(back.wordlength == cal.wordlength);
  CHECK(back.guard_band == cal.guard_band);

  std::istringstream bad("{\"v_eval_V\": 3}");
  CHECK_THROWS_AS(read_calibration(bad), Error);

  CircuitParams c;
  const auto tr = simulate_matchline(2 * BranchParams{}.on_conductance(),
                                     c.c_ml(kWl), 0.8, c, c.sense_window);
  std::ostringstream os;
  write_trace_csv(os, tr);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t_s,v_ml_V,v_o_V,sa_out");
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  CHECK(n == tr.times.size());
}

TEST_CASE("simulate_row with varied branches") {
  CircuitParams c;
  const auto& cal = nominal_calibration();
  CamArray a(kWl);
  std::vector<TernaryBit> q(kWl, TernaryBit::One);
  auto w = q;
  for (int i = 0; i < 3; ++i) w[i] = TernaryBit::Zero;
  a.store(w);
  const auto nominal = simulate_row(a, 0, q, cal.table.at(2), c, c.sense_window);
  const auto direct = simulate_search(a.row(0), q, cal.table.at(2), BranchParams{}, c,
                                      c.sense_window);
  CHECK(nominal.v_o == direct.v_o);
  std::vector<BranchParams> br(2 * kWl);
  for (auto& b : br) b.r_series *= 2;
  a.set_row_params(0, br);
  const auto slow = simulate_row(a, 0, q, cal.table.at(2), c, c.sense_window);
  CHECK(slow.v_ml.back() > nominal.v_ml.back());
}
