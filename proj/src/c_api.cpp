#include "tapcam/tapcam.h"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "tapcam/cam_core.hpp"
#include "tapcam/config.hpp"
#include "tapcam/error.hpp"
#include "tapcam/knn.hpp"
#include "tapcam/metrics.hpp"
#include "tapcam/transient.hpp"

using namespace tapcam;

struct tapcam_config {
  config::RunConfig cfg;
};

struct tapcam_array {
  cam::CamArray array;
};

struct tapcam_calibration {
  transient::Calibration cal;
};

struct tapcam_search_result {
  cam::CamArray array;
  std::vector<cam::TernaryBit> query;
  int threshold = 0;
  transient::CircuitParams circuit;
  std::optional<transient::Calibration> cal;
  std::vector<std::size_t> functional;
  std::vector<std::size_t> transient;
};

namespace {

thread_local std::string g_last_error;

tapcam_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return TAPCAM_ERR_USAGE;
    case ErrorKind::Infeasible: return TAPCAM_ERR_INFEASIBLE;
    case ErrorKind::Data: return TAPCAM_ERR_DATA;
    case ErrorKind::Numeric: return TAPCAM_ERR_NUMERIC;
  }
  return TAPCAM_ERR_INTERNAL;
}

template <class F>
tapcam_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return TAPCAM_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown failure";
  }
  return TAPCAM_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  if (p == nullptr) fail(ErrorKind::Usage, fmt::format("{} is NULL", what));
}

// Writes the whole text at once so a failed command leaves no partial file.
void save(const char* path, const std::string& text) {
  need(path, "output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Usage, fmt::format("cannot write {}", path));
  out << text;
  out.flush();
  if (!out) fail(ErrorKind::Usage, fmt::format("write to {} failed", path));
}

void copy_out(const std::string& s, char* buf, std::size_t len) {
  need(buf, "buffer");
  if (len < s.size() + 1)
    fail(ErrorKind::Usage, fmt::format("buffer needs {} bytes", s.size() + 1));
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

transient::CircuitParams circuit_for(const config::RunConfig& cfg,
                                     std::size_t wordlength) {
  return transient::scaled_for_wordlength(cfg.circuit, wordlength,
                                          cfg.geometry.wordlength);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

extern "C" {

const char* tapcam_last_error(void) { return g_last_error.c_str(); }

tapcam_status tapcam_config_create(tapcam_config** out) {
  return guarded([&] {
    need(out, "out");
    auto c = std::make_unique<tapcam_config>();
    c->cfg.sync_seed();
    *out = c.release();
  });
}

tapcam_status tapcam_config_load(const char* path, tapcam_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto c = std::make_unique<tapcam_config>();
    c->cfg = config::load(path);
    *out = c.release();
  });
}

tapcam_status tapcam_config_set(tapcam_config* cfg, const char* key,
                                const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    config::set(cfg->cfg, key, value);
  });
}

tapcam_status tapcam_config_hash(const tapcam_config* cfg, char* buf,
                                 size_t len) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(config::hash(cfg->cfg), buf, len);
  });
}

tapcam_status tapcam_config_out_dir(const tapcam_config* cfg, char* buf,
                                    size_t len) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(cfg->cfg.out_dir, buf, len);
  });
}

tapcam_status tapcam_config_write(const tapcam_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    save(path, config::to_json(cfg->cfg).dump(2) + "\n");
  });
}

void tapcam_config_free(tapcam_config* cfg) { delete cfg; }

tapcam_status tapcam_array_load(const tapcam_config* cfg, const char* path,
                                tapcam_array** out) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    need(out, "out");
    *out = new tapcam_array{cam::CamArray::load(path, cfg->cfg.device)};
  });
}

size_t tapcam_array_rows(const tapcam_array* arr) {
  return arr ? arr->array.rows() : 0;
}

size_t tapcam_array_wordlength(const tapcam_array* arr) {
  return arr ? arr->array.wordlength() : 0;
}

void tapcam_array_free(tapcam_array* arr) { delete arr; }

tapcam_status tapcam_calibrate(const tapcam_config* cfg, size_t wordlength,
                               tapcam_calibration** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    const auto& c = cfg->cfg;
    const std::size_t wl = wordlength ? wordlength : c.geometry.wordlength;
    auto cal = transient::calibrate_veval(c.thresholds, c.device,
                                          circuit_for(c, wl), wl, c.guard_band);
    *out = new tapcam_calibration{std::move(cal)};
  });
}

tapcam_status tapcam_calibration_load(const char* path,
                                      tapcam_calibration** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Data, fmt::format("cannot open {}", path));
    *out = new tapcam_calibration{transient::read_calibration(in)};
  });
}

tapcam_status tapcam_calibration_write(const tapcam_calibration* cal,
                                       const tapcam_config* cfg,
                                       const char* path) {
  return guarded([&] {
    need(cal, "calibration");
    need(cfg, "config");
    std::ostringstream os;
    transient::write_calibration(os, cal->cal, config::hash(cfg->cfg));
    save(path, os.str());
  });
}

tapcam_status tapcam_calibration_report(const tapcam_calibration* cal,
                                        const tapcam_config* cfg,
                                        const char* path, int* all_pass) {
  return guarded([&] {
    need(cal, "calibration");
    need(cfg, "config");
    const auto& c = cfg->cfg;
    const auto checks = transient::verify_calibration(
        cal->cal, c.device, circuit_for(c, cal->cal.wordlength));
    auto t = [](const std::optional<double>& v) {
      return v ? fmt::format("{:.6e}", *v) : std::string("none");
    };
    std::string s = fmt::format("# config_hash={}\n", config::hash(c));
    s += "threshold,v_eval_V,t_n_s,t_n1_s,pass\n";
    bool ok = true;
    for (const auto& g : checks) {
      s += fmt::format("{},{:.6f},{},{},{}\n", g.threshold, g.v_eval, t(g.t_n),
                       t(g.t_n1), g.pass ? 1 : 0);
      ok = ok && g.pass;
    }
    save(path, s);
    if (all_pass) *all_pass = ok ? 1 : 0;
  });
}

size_t tapcam_calibration_size(const tapcam_calibration* cal) {
  return cal ? cal->cal.table.entries().size() : 0;
}

tapcam_status tapcam_calibration_entry(const tapcam_calibration* cal,
                                       size_t index, int* threshold,
                                       double* v_eval) {
  return guarded([&] {
    need(cal, "calibration");
    const auto& e = cal->cal.table.entries();
    if (index >= e.size())
      fail(ErrorKind::Usage, fmt::format("entry {} out of range", index));
    auto it = std::next(e.begin(), static_cast<std::ptrdiff_t>(index));
    if (threshold) *threshold = it->first;
    if (v_eval) *v_eval = it->second;
  });
}

double tapcam_calibration_deadline(const tapcam_calibration* cal) {
  return cal ? cal->cal.sense_deadline : 0.0;
}

void tapcam_calibration_free(tapcam_calibration* cal) { delete cal; }

tapcam_status tapcam_search(const tapcam_config* cfg, const tapcam_array* arr,
                            const tapcam_calibration* cal, const char* query,
                            int threshold, tapcam_search_result** out) {
  return guarded([&] {
    need(cfg, "config");
    need(arr, "array");
    need(query, "query");
    need(out, "out");
    const auto& c = cfg->cfg;
    const std::size_t wl = arr->array.wordlength();
    if (threshold < 0)
      fail(ErrorKind::Usage, fmt::format("threshold {} is negative", threshold));
    auto q = cam::parse_word(query);
    if (q.size() != wl)
      fail(ErrorKind::Data,
           fmt::format("query has {} bits, array wordlength is {}", q.size(),
                       wl));

    auto res = std::make_unique<tapcam_search_result>(
        tapcam_search_result{arr->array, std::move(q), threshold,
                             circuit_for(c, wl), std::nullopt, {}, {}});
    res->functional = cam::threshold_match_functional(
        res->array, res->query, static_cast<std::size_t>(threshold));
    if (static_cast<std::size_t>(threshold) < wl) {
      if (cal) {
        if (cal->cal.wordlength != wl)
          fail(ErrorKind::Usage,
               fmt::format("calibration is for wordlength {}, array has {}",
                           cal->cal.wordlength, wl));
        if (!cal->cal.table.contains(threshold))
          fail(ErrorKind::Usage,
               fmt::format("threshold {} is not calibrated", threshold));
        res->cal = cal->cal;
      } else {
        const int th[] = {threshold};
        res->cal = transient::calibrate_veval(th, c.device, res->circuit, wl,
                                              c.guard_band);
      }
      res->transient = transient::threshold_match_transient(
          res->array, res->query, threshold, *res->cal, res->circuit);
    } else {
      res->transient = res->functional;
    }
    *out = res.release();
  });
}

size_t tapcam_result_count(const tapcam_search_result* res, int transient) {
  if (!res) return 0;
  return transient ? res->transient.size() : res->functional.size();
}

size_t tapcam_result_row(const tapcam_search_result* res, int transient,
                         size_t index) {
  if (!res) return 0;
  const auto& v = transient ? res->transient : res->functional;
  return index < v.size() ? v[index] : 0;
}

int tapcam_result_agree(const tapcam_search_result* res) {
  return res && res->functional == res->transient ? 1 : 0;
}

tapcam_status tapcam_result_write(const tapcam_search_result* res,
                                  const tapcam_config* cfg, const char* path) {
  return guarded([&] {
    need(res, "result");
    need(cfg, "config");
    std::string s = fmt::format("# config_hash={}\n# threshold={}\n",
                                config::hash(cfg->cfg), res->threshold);
    s += "row,mismatches,functional,transient\n";
    auto in = [](const std::vector<std::size_t>& v, std::size_t r) {
      return std::binary_search(v.begin(), v.end(), r) ? 1 : 0;
    };
    for (std::size_t r = 0; r < res->array.rows(); ++r)
      s += fmt::format("{},{},{},{}\n", r,
                       res->array.mismatch_count(r, res->query),
                       in(res->functional, r), in(res->transient, r));
    save(path, s);
  });
}

tapcam_status tapcam_result_trace(const tapcam_search_result* res, size_t row,
                                  const char* path) {
  return guarded([&] {
    need(res, "result");
    if (row >= res->array.rows())
      fail(ErrorKind::Usage, fmt::format("row {} out of range", row));
    if (!res->cal)
      fail(ErrorKind::Usage,
           "no trace: the threshold covers the whole word, nothing is sensed");
    const auto trace = transient::simulate_row(
        res->array, row, res->query, res->cal->table.at(res->threshold),
        res->circuit, res->cal->sense_deadline);
    std::ostringstream os;
    transient::write_trace_csv(os, trace);
    save(path, os.str());
  });
}

void tapcam_result_free(tapcam_search_result* res) { delete res; }

tapcam_status tapcam_sweep(const tapcam_config* cfg, const char* param,
                           const double* values, size_t count,
                           const char* path, size_t* failed) {
  return guarded([&] {
    need(cfg, "config");
    need(param, "param");
    if (count > 0) need(values, "values");
    const auto p = metrics::parse_sweep_param(param);
    const auto points = metrics::sweep(
        p, std::span<const double>(values, count), cfg->cfg.sweep_base());
    std::ostringstream os;
    metrics::write_sweep_csv(os, points, config::hash(cfg->cfg));
    save(path, os.str());
    if (failed) {
      *failed = 0;
      for (const auto& pt : points) *failed += pt.ok ? 0 : 1;
    }
  });
}

tapcam_status tapcam_montecarlo(const tapcam_config* cfg, int threshold,
                                size_t runs, double vdd, const char* csv_path,
                                const char* json_path, int* separable) {
  return guarded([&] {
    need(cfg, "config");
    const auto& c = cfg->cfg;
    const auto rep = metrics::monte_carlo_robustness(threshold, runs,
                                                     c.variation, vdd,
                                                     c.monte_carlo());
    const auto h = config::hash(c);
    std::ostringstream csv, js;
    metrics::write_monte_carlo_csv(csv, rep, h);
    metrics::write_monte_carlo_json(js, rep, h);
    save(csv_path, csv.str());
    save(json_path, js.str());
    if (separable) *separable = rep.separable ? 1 : 0;
  });
}

tapcam_status tapcam_knn(const tapcam_config* cfg, const char* dataset_path,
                         const char* matcher, const int* thresholds,
                         size_t count, const char* csv_path,
                         const char* audit_path, tapcam_knn_summary* summary) {
  return guarded([&] {
    need(cfg, "config");
    need(dataset_path, "dataset path");
    need(matcher, "matcher");
    const auto& c = cfg->cfg;
    knn::KnnConfig kc = c.knn;
    if (thresholds) {
      if (count == 0) fail(ErrorKind::Usage, "knn: empty threshold list");
      kc.threshold_schedule.assign(thresholds, thresholds + count);
    }
    const auto m = knn::parse_matcher(matcher);
    const auto ds = knn::load_dataset(dataset_path);

    auto t0 = std::chrono::steady_clock::now();
    const auto result = knn::evaluate_accuracy(ds, kc, m, c.matcher_env());
    const double cam_s = seconds_since(t0);

    const auto split = knn::split_dataset(ds.size(), kc.split_ratio, kc.split_seed);
    t0 = std::chrono::steady_clock::now();
    const auto sw = knn::software_knn(ds, split.train, split.test, 5);
    const double sw_s = seconds_since(t0);

    const auto h = config::hash(c);
    std::ostringstream os;
    knn::write_accuracy_csv(os, result.rows, h);
    save(csv_path, os.str());
    if (audit_path) {
      std::ostringstream as;
      knn::write_audit_json(as, result, h);
      save(audit_path, as.str());
    }
    if (summary) {
      tapcam_knn_summary s{};
      s.train_size = result.train_size;
      s.test_size = result.test_size;
      s.wordlength = result.wordlength;
      s.best_accuracy = -1.0;
      for (const auto& r : result.rows) {
        if (r.accuracy > s.best_accuracy) {
          s.best_accuracy = r.accuracy;
          s.best_threshold = r.threshold;
        }
        s.fallbacks += r.fallbacks;
      }
      std::size_t correct = 0;
      for (std::size_t i = 0; i < split.test.size(); ++i)
        correct += sw[i] == ds.labels[split.test[i]] ? 1 : 0;
      s.software_accuracy =
          static_cast<double>(correct) / static_cast<double>(split.test.size());
      s.cam_seconds = cam_s;
      s.software_seconds = sw_s;
      *summary = s;
    }
  });
}

}  // extern "C"
