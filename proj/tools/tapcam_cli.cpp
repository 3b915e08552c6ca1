// Command-line driver. Talks to the simulator only through tapcam.h.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tapcam/tapcam.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  int code;
};

int exit_code(tapcam_status s) {
  switch (s) {
    case TAPCAM_OK: return 0;
    case TAPCAM_ERR_INFEASIBLE:
    case TAPCAM_ERR_NUMERIC: return 2;
    case TAPCAM_ERR_DATA: return 3;
    default: return 1;
  }
}

void check(tapcam_status s, const std::string& context) {
  if (s == TAPCAM_OK) return;
  std::cerr << "error: " << context << ": " << tapcam_last_error() << '\n';
  throw Failure{exit_code(s)};
}

void usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << '\n';
  throw Failure{1};
}

struct ConfigDeleter {
  void operator()(tapcam_config* c) const { tapcam_config_free(c); }
};
struct ArrayDeleter {
  void operator()(tapcam_array* a) const { tapcam_array_free(a); }
};
struct CalDeleter {
  void operator()(tapcam_calibration* c) const { tapcam_calibration_free(c); }
};
struct ResultDeleter {
  void operator()(tapcam_search_result* r) const { tapcam_result_free(r); }
};
using ConfigPtr = std::unique_ptr<tapcam_config, ConfigDeleter>;

// "1..6" or "1,2,5"
std::vector<int> parse_thresholds(const std::string& s) {
  std::vector<int> out;
  try {
    const auto dots = s.find("..");
    if (dots != std::string::npos) {
      const int lo = std::stoi(s.substr(0, dots));
      const int hi = std::stoi(s.substr(dots + 2));
      if (hi < lo) usage_error("threshold range " + s + " is empty");
      for (int t = lo; t <= hi; ++t) out.push_back(t);
      return out;
    }
    std::size_t start = 0;
    for (;;) {
      const auto comma = s.find(',', start);
      std::size_t used = 0;
      const std::string item = s.substr(start, comma - start);
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  } catch (const std::logic_error&) {
    usage_error("cannot parse thresholds '" + s + "'");
  }
  return out;
}

std::string out_dir(const tapcam_config* cfg) {
  char buf[4096];
  check(tapcam_config_out_dir(cfg, buf, sizeof buf), "config");
  fs::path p(buf);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) usage_error("cannot create " + p.string() + ": " + ec.message());
  return p.string();
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string vdd_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void print_rows(const char* label, const tapcam_search_result* res, int tier) {
  std::cout << label << ":";
  const std::size_t n = tapcam_result_count(res, tier);
  for (std::size_t i = 0; i < n; ++i) std::cout << ' ' << tapcam_result_row(res, tier, i);
  if (n == 0) std::cout << " (none)";
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"threshold-match CAM simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "override, section.key=value")->take_all();

  auto* calibrate = app.add_subcommand("calibrate", "calibrate V_eval per threshold");

  auto* search = app.add_subcommand("search", "threshold search on a stored array");
  std::string array_path, query, cal_path;
  int search_th = 0;
  std::vector<std::size_t> trace_rows;
  search->add_option("--array", array_path, "array file, one row per line")
      ->required()->check(CLI::ExistingFile);
  search->add_option("--query", query, "query word over {0,1,X}")->required();
  search->add_option("--threshold", search_th, "mismatch threshold")->required();
  search->add_option("--calibration", cal_path, "V_eval table from calibrate")
      ->check(CLI::ExistingFile);
  search->add_option("--trace", trace_rows, "rows to dump waveforms for")
      ->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "energy/latency sweep");
  std::string sweep_param;
  std::vector<double> sweep_values;
  sweep->add_option("--param", sweep_param, "vdd, threshold, rows or wordlength")
      ->required();
  sweep->add_option("--values", sweep_values, "comma separated values")
      ->required()->delimiter(',');

  auto* mc = app.add_subcommand("montecarlo", "device-variation robustness");
  int mc_th = 5;
  std::size_t mc_runs = 100;
  double mc_vdd = 1.0;
  mc->add_option("--threshold", mc_th, "mismatch threshold")->capture_default_str();
  mc->add_option("--runs", mc_runs, "Monte Carlo runs")->capture_default_str();
  mc->add_option("--vdd", mc_vdd, "supply voltage")->capture_default_str();

  auto* knn = app.add_subcommand("knn", "KNN accuracy over thresholds");
  std::string dataset, matcher = "functional", knn_ths;
  bool audit = false;
  knn->add_option("--dataset", dataset, "CSV dataset, label in last column")
      ->required()->check(CLI::ExistingFile);
  knn->add_option("--matcher", matcher, "functional or transient")
      ->capture_default_str();
  knn->add_option("--thresholds", knn_ths, "e.g. 1..6 or 1,3,5");
  knn->add_flag("--audit", audit, "write per-query decisions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    ConfigPtr cfg;
    {
      tapcam_config* raw = nullptr;
      if (config_path.empty())
        check(tapcam_config_create(&raw), "config");
      else
        check(tapcam_config_load(config_path.c_str(), &raw), "config");
      cfg.reset(raw);
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) usage_error("--set expects key=value: " + o);
      check(tapcam_config_set(cfg.get(), o.substr(0, eq).c_str(),
                              o.substr(eq + 1).c_str()),
            "--set " + o);
    }
    if (out) check(tapcam_config_set(cfg.get(), "run.out",
                                     ("\"" + *out + "\"").c_str()), "--out");
    if (seed)
      check(tapcam_config_set(cfg.get(), "run.seed", std::to_string(*seed).c_str()),
            "--seed");
    if (threads)
      check(tapcam_config_set(cfg.get(), "run.threads",
                              std::to_string(*threads).c_str()),
            "--threads");
    const std::string dir = out_dir(cfg.get());

    if (*calibrate) {
      tapcam_calibration* raw = nullptr;
      check(tapcam_calibrate(cfg.get(), 0, &raw), "calibrate");
      std::unique_ptr<tapcam_calibration, CalDeleter> cal(raw);
      const auto table = join(dir, "calibrate_veval.json");
      const auto report = join(dir, "calibrate_report.csv");
      int pass = 0;
      check(tapcam_calibration_write(cal.get(), cfg.get(), table.c_str()), table);
      check(tapcam_calibration_report(cal.get(), cfg.get(), report.c_str(), &pass),
            report);
      for (std::size_t i = 0; i < tapcam_calibration_size(cal.get()); ++i) {
        int th = 0;
        double v = 0.0;
        check(tapcam_calibration_entry(cal.get(), i, &th, &v), "calibrate");
        std::printf("Th-%d  V_eval = %.4f V\n", th, v);
      }
      std::printf("deadline %.3e s, guard band replay %s\n",
                  tapcam_calibration_deadline(cal.get()), pass ? "ok" : "FAILED");
      std::cout << "wrote " << table << ", " << report << '\n';
      return pass ? 0 : 2;
    }

    if (*search) {
      tapcam_array* araw = nullptr;
      check(tapcam_array_load(cfg.get(), array_path.c_str(), &araw), "array");
      std::unique_ptr<tapcam_array, ArrayDeleter> arr(araw);
      std::unique_ptr<tapcam_calibration, CalDeleter> cal;
      if (!cal_path.empty()) {
        tapcam_calibration* craw = nullptr;
        check(tapcam_calibration_load(cal_path.c_str(), &craw), "calibration");
        cal.reset(craw);
      }
      tapcam_search_result* rraw = nullptr;
      check(tapcam_search(cfg.get(), arr.get(), cal.get(), query.c_str(),
                          search_th, &rraw),
            "search");
      std::unique_ptr<tapcam_search_result, ResultDeleter> res(rraw);
      print_rows("functional", res.get(), 0);
      print_rows("transient ", res.get(), 1);
      const bool agree = tapcam_result_agree(res.get()) != 0;
      std::cout << (agree ? "tiers agree" : "TIERS DISAGREE") << '\n';
      const auto matches = join(dir, "search_matches.csv");
      check(tapcam_result_write(res.get(), cfg.get(), matches.c_str()), matches);
      for (auto r : trace_rows) {
        const auto p = join(dir, "search_trace_row" + std::to_string(r) + ".csv");
        check(tapcam_result_trace(res.get(), r, p.c_str()), p);
      }
      return 0;
    }

    if (*sweep) {
      const auto p = join(dir, "sweep_" + sweep_param + ".csv");
      std::size_t failed = 0;
      check(tapcam_sweep(cfg.get(), sweep_param.c_str(), sweep_values.data(),
                         sweep_values.size(), p.c_str(), &failed),
            "sweep");
      std::cout << "wrote " << p;
      if (failed) std::cout << " (" << failed << " infeasible points)";
      std::cout << '\n';
      return 0;
    }

    if (*mc) {
      const auto stem = "montecarlo_th" + std::to_string(mc_th) + "_vdd" + vdd_tag(mc_vdd);
      const auto csv = join(dir, stem + ".csv");
      const auto json = join(dir, stem + ".json");
      int separable = 0;
      check(tapcam_montecarlo(cfg.get(), mc_th, mc_runs, mc_vdd, csv.c_str(),
                              json.c_str(), &separable),
            "montecarlo");
      std::cout << "separable=" << (separable ? "true" : "false") << '\n'
                << "wrote " << csv << ", " << json << '\n';
      return 0;
    }

    if (*knn) {
      std::vector<int> ths;
      if (!knn_ths.empty()) ths = parse_thresholds(knn_ths);
      const auto stem = "knn_" + fs::path(dataset).stem().string() + "_" + matcher;
      const auto csv = join(dir, stem + ".csv");
      const auto audit_path = join(dir, stem + "_audit.json");
      tapcam_knn_summary s{};
      check(tapcam_knn(cfg.get(), dataset.c_str(), matcher.c_str(),
                       ths.empty() ? nullptr : ths.data(), ths.size(),
                       csv.c_str(), audit ? audit_path.c_str() : nullptr, &s),
            "knn");
      std::printf("train %zu, test %zu, %zu-bit words\n", s.train_size,
                  s.test_size, s.wordlength);
      std::printf("best threshold %d: accuracy %.4f (software 5-NN %.4f)\n",
                  s.best_threshold, s.best_accuracy, s.software_accuracy);
      if (s.fallbacks)
        std::printf("%zu decisions used the functional rule\n", s.fallbacks);
      std::printf("time: cam %.3f s, software %.3f s\n", s.cam_seconds,
                  s.software_seconds);
      std::cout << "wrote " << csv << (audit ? ", " + audit_path : "") << '\n';
      return 0;
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 1;
}
