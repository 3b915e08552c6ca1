#pragma once

// 1FeFET-1R branch model: a ferroelectric FET in series with a
// current-limiting resistor, reduced to a two-state switch.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tapcam::device {

using Volts = double;
using Ohms = double;
using Siemens = double;

// Logic '1' is the high-threshold state, logic '0' the low-threshold state.
enum class VthState : std::uint8_t { Low, High };

struct BranchParams {
  Volts vth_low = 0.4;
  Volts vth_high = 1.8;
  Ohms r_on = 50e3;
  Ohms r_off = 10e9;
  Ohms r_series = 0.3e6;
  Volts v_write = 4.0;
  Volts v_search = 1.0;

  // Throws Error(Usage) when the ordering or resistance constraints fail.
  void validate() const;
  bool is_valid() const noexcept;

  Siemens on_conductance() const noexcept { return 1.0 / (r_on + r_series); }
  Siemens off_conductance() const noexcept { return 1.0 / r_off; }

  friend bool operator==(const BranchParams&, const BranchParams&) = default;
};

struct VariationSpec {
  Volts sigma_vth = 0.054;
  double rel_sigma_rs = 0.08;
  std::uint64_t seed = 1;

  void validate() const;
};

// Conductance of one branch with the given gate bias. Conducting only when
// the FeFET holds the low threshold and the gate is above it; the series
// resistor pins the ON value, so it does not depend on how far above.
Siemens branch_conductance(VthState state, Volts v_gate,
                           const BranchParams& params);

// Draws `count` independent device instances around `nominal`. Both
// threshold states get additive Normal(0, sigma_vth) noise and the series
// resistor a multiplicative (1 + Normal(0, rel_sigma_rs)) factor. Samples
// that break BranchParams invariants are re-drawn (up to 100 times).
std::vector<BranchParams> sample_variations(const BranchParams& nominal,
                                            const VariationSpec& spec,
                                            std::size_t count);

}  // namespace tapcam::device
