#include "tapcam/device.hpp"

#include <cmath>
#include <random>
#include <string>

#include <fmt/format.h>

#include "tapcam/error.hpp"

namespace tapcam::device {

namespace {

constexpr int kMaxRedraws = 100;

const char* first_violation(const BranchParams& p) {
  const bool finite = std::isfinite(p.vth_low) && std::isfinite(p.vth_high) &&
                      std::isfinite(p.r_on) && std::isfinite(p.r_off) &&
                      std::isfinite(p.r_series) && std::isfinite(p.v_write) &&
                      std::isfinite(p.v_search);
  if (!finite) return "non-finite parameter";
  if (!(p.vth_low > 0.0)) return "vth_low must be > 0";
  if (!(p.vth_low < p.v_search)) return "vth_low must be < v_search";
  if (!(p.v_search < p.vth_high)) return "v_search must be < vth_high";
  if (!(p.r_series > 0.0)) return "r_series must be > 0";
  if (!(p.r_on >= 0.0)) return "r_on must be >= 0";
  if (!(p.r_off >= 1000.0 * (p.r_on + p.r_series)))
    return "r_off must be >= 1000 * (r_on + r_series)";
  if (!(p.v_write > 0.0)) return "v_write must be > 0";
  return nullptr;
}

}  // namespace

void BranchParams::validate() const {
  if (const char* why = first_violation(*this))
    fail(ErrorKind::Usage, fmt::format("invalid branch parameters: {}", why));
}

bool BranchParams::is_valid() const noexcept {
  return first_violation(*this) == nullptr;
}

void VariationSpec::validate() const {
  if (!(sigma_vth >= 0.0) || !std::isfinite(sigma_vth))
    fail(ErrorKind::Usage, "sigma_vth must be >= 0");
  if (!(rel_sigma_rs >= 0.0 && rel_sigma_rs < 1.0))
    fail(ErrorKind::Usage, "rel_sigma_rs must lie in [0, 1)");
}

Siemens branch_conductance(VthState state, Volts v_gate,
                           const BranchParams& params) {
  if (!std::isfinite(v_gate))
    fail(ErrorKind::Usage, "branch_conductance: non-finite gate voltage");
  if (v_gate < 0.0 || v_gate > params.v_write)
    fail(ErrorKind::Usage,
         fmt::format("branch_conductance: gate voltage {} V outside [0, {}]",
                     v_gate, params.v_write));
  const bool conducting = state == VthState::Low && v_gate > params.vth_low;
  return conducting ? params.on_conductance() : params.off_conductance();
}

std::vector<BranchParams> sample_variations(const BranchParams& nominal,
                                            const VariationSpec& spec,
                                            std::size_t count) {
  if (count < 1) fail(ErrorKind::Usage, "sample_variations: count must be >= 1");
  nominal.validate();
  spec.validate();

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<BranchParams> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt == kMaxRedraws)
        fail(ErrorKind::Usage,
             fmt::format("sample_variations: sample {} violates branch "
                         "invariants after {} draws; variation spec is "
                         "degenerate",
                         i, kMaxRedraws));
      // Draw all three normals unconditionally so the stream layout does
      // not depend on which sigmas are zero.
      const double z_low = unit(rng);
      const double z_high = unit(rng);
      const double z_rs = unit(rng);
      BranchParams p = nominal;
      p.vth_low += spec.sigma_vth * z_low;
      p.vth_high += spec.sigma_vth * z_high;
      p.r_series *= 1.0 + spec.rel_sigma_rs * z_rs;
      if (p.vth_low < p.vth_high && p.is_valid()) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

}  // namespace tapcam::device
