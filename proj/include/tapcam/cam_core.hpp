#pragma once

// 2FeFET-2R ternary cell, the m x n array built from it, and the
// functional (bit-logic) threshold matcher.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tapcam/device.hpp"

namespace tapcam::cam {

using device::BranchParams;
using device::VthState;

enum class TernaryBit : std::uint8_t { Zero, One, DontCare };

char to_char(TernaryBit b) noexcept;

// Parses a word over {0,1,X} (x accepted). Errors carry the 1-based column.
std::vector<TernaryBit> parse_word(std::string_view text);
std::string format_word(std::span<const TernaryBit> word);

struct CellState {
  VthState m1 = VthState::High;
  VthState m2 = VthState::High;

  // (Low, Low) cannot be produced by write_cell.
  bool valid() const noexcept {
    return !(m1 == VthState::Low && m2 == VthState::Low);
  }
  TernaryBit stored() const;

  friend bool operator==(const CellState&, const CellState&) = default;
};

enum class WriteTarget : std::uint8_t { M1, M2, Both };

// Line levels for one write step. bl drives the M1 gate, bl_bar the M2
// gate, scl the shared source line; ml stays grounded during writes.
struct WriteStep {
  double bl = 0.0;
  double bl_bar = 0.0;
  double scl = 0.0;
  double ml = 0.0;
  WriteTarget target = WriteTarget::M1;
  VthState result = VthState::High;
};

struct WriteTrace {
  std::vector<WriteStep> steps;
};

struct WriteResult {
  CellState cell;
  WriteTrace trace;
};

WriteResult write_cell(TernaryBit value, const BranchParams& params);

// One C_gate * V_write^2 charge per write step.
double write_energy(const WriteTrace& trace, double c_gate,
                    const BranchParams& params);

// Gate biases applied to M1 and M2 while searching `query`. A query
// wildcard drives both to ground.
struct SearchBias {
  double m1_gate = 0.0;
  double m2_gate = 0.0;
};
SearchBias search_bias(TernaryBit query, const BranchParams& params);

// True when either branch of the cell opens a path from ML to ground.
bool cell_conducts(CellState cell, TernaryBit query, const BranchParams& params);
// Per-branch parameters, as held by a varied array.
bool cell_conducts(CellState cell, TernaryBit query, const BranchParams& m1,
                   const BranchParams& m2);

// Number of conducting cells; wildcards on either side never count.
std::size_t hamming_distance(std::span<const CellState> row,
                             std::span<const TernaryBit> query,
                             const BranchParams& params = {});

inline constexpr std::size_t kMaxWordlength = 256;

class CamArray {
 public:
  explicit CamArray(std::size_t wordlength, BranchParams nominal = {});

  std::size_t rows() const noexcept { return rows_; }
  std::size_t wordlength() const noexcept { return wordlength_; }
  const BranchParams& nominal() const noexcept { return nominal_; }

  // Appends one row, writing every cell through write_cell.
  void store(std::span<const TernaryBit> word);
  // Replaces the per-branch parameters of one row (2 * wordlength entries,
  // M1 then M2 for each column).
  void set_row_params(std::size_t row, std::span<const BranchParams> branches);

  std::span<const CellState> row(std::size_t r) const;
  std::vector<TernaryBit> stored_word(std::size_t r) const;
  const BranchParams& branch(std::size_t r, std::size_t col, int m) const;
  bool uniform_params() const noexcept { return branch_params_.empty(); }

  // Mismatch count using this array's (possibly varied) branch parameters.
  std::size_t mismatch_count(std::size_t r,
                             std::span<const TernaryBit> query) const;

  // Text form: one row per line over {0,1,X}; blank lines and lines
  // starting with '#' are skipped.
  static CamArray parse(std::istream& in, BranchParams nominal = {});
  static CamArray load(const std::string& path, BranchParams nominal = {});
  void write(std::ostream& out) const;

 private:
  std::size_t wordlength_;
  std::size_t rows_ = 0;
  BranchParams nominal_;
  std::vector<CellState> cells_;
  std::vector<TernaryBit> stored_;
  std::vector<BranchParams> branch_params_;  // empty while uniform
  // cell_conducts(stored, query) under the nominal card.
  std::array<std::array<std::uint8_t, 3>, 3> conducts_{};
};

// Rows whose Hamming distance to `query` is at most `threshold`, ascending.
std::vector<std::size_t> threshold_match_functional(
    const CamArray& array, std::span<const TernaryBit> query,
    std::size_t threshold);

}  // namespace tapcam::cam
