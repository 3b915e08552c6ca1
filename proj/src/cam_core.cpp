#include "tapcam/cam_core.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "tapcam/error.hpp"

namespace tapcam::cam {

char to_char(TernaryBit b) noexcept {
  switch (b) {
    case TernaryBit::Zero: return '0';
    case TernaryBit::One: return '1';
    case TernaryBit::DontCare: return 'X';
  }
  return '?';
}

std::vector<TernaryBit> parse_word(std::string_view text) {
  std::vector<TernaryBit> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    switch (text[i]) {
      case '0': out.push_back(TernaryBit::Zero); break;
      case '1': out.push_back(TernaryBit::One); break;
      case 'X':
      case 'x': out.push_back(TernaryBit::DontCare); break;
      default:
        fail(ErrorKind::Data,
             fmt::format("invalid ternary character '{}' at column {}",
                         text[i], i + 1));
    }
  }
  if (out.empty()) fail(ErrorKind::Data, "empty ternary word");
  return out;
}

std::string format_word(std::span<const TernaryBit> word) {
  std::string s;
  s.reserve(word.size());
  for (auto b : word) s.push_back(to_char(b));
  return s;
}

TernaryBit CellState::stored() const {
  if (m1 == VthState::High && m2 == VthState::Low) return TernaryBit::One;
  if (m1 == VthState::Low && m2 == VthState::High) return TernaryBit::Zero;
  if (m1 == VthState::High && m2 == VthState::High) return TernaryBit::DontCare;
  fail(ErrorKind::Data, "cell holds the unreachable (LowVth, LowVth) state");
}

namespace {

// A full +V_write gate-to-source pulse programs the high-threshold state,
// a full negative pulse the low one; anything smaller leaves it alone.
bool apply_pulse(VthState& state, double v_gs, double v_write) {
  if (v_gs >= v_write) {
    state = VthState::High;
    return true;
  }
  if (v_gs <= -v_write) {
    state = VthState::Low;
    return true;
  }
  return false;
}

struct LineLevels {
  double bl, bl_bar, scl;
};

}  // namespace

WriteResult write_cell(TernaryBit value, const BranchParams& params) {
  const double vw = params.v_write;
  std::vector<LineLevels> schedule;
  switch (value) {
    case TernaryBit::One:
      schedule = {{vw, 0.0, 0.0}, {vw, 0.0, vw}};
      break;
    case TernaryBit::Zero:
      schedule = {{0.0, vw, vw}, {0.0, vw, 0.0}};
      break;
    case TernaryBit::DontCare:
      schedule = {{vw, vw, 0.0}};
      break;
  }

  WriteResult res;
  for (const auto& lv : schedule) {
    const bool w1 = apply_pulse(res.cell.m1, lv.bl - lv.scl, vw);
    const bool w2 = apply_pulse(res.cell.m2, lv.bl_bar - lv.scl, vw);
    WriteStep step{lv.bl, lv.bl_bar, lv.scl, 0.0, WriteTarget::M1,
                   res.cell.m1};
    if (w1 && w2) {
      step.target = WriteTarget::Both;
    } else if (w2) {
      step.target = WriteTarget::M2;
      step.result = res.cell.m2;
    }
    res.trace.steps.push_back(step);
  }
  return res;
}

double write_energy(const WriteTrace& trace, double c_gate,
                    const BranchParams& params) {
  return static_cast<double>(trace.steps.size()) * c_gate * params.v_write *
         params.v_write;
}

SearchBias search_bias(TernaryBit query, const BranchParams& params) {
  // The device storing '1' (high V_TH) sits on the line biased when '1' is
  // searched, so a matching bit leaves both branches off.
  switch (query) {
    case TernaryBit::One: return {params.v_search, 0.0};
    case TernaryBit::Zero: return {0.0, params.v_search};
    case TernaryBit::DontCare: return {0.0, 0.0};
  }
  return {};
}

bool cell_conducts(CellState cell, TernaryBit query, const BranchParams& m1,
                   const BranchParams& m2) {
  if (!cell.valid())
    fail(ErrorKind::Data, "cell holds the unreachable (LowVth, LowVth) state");
  const SearchBias bias = search_bias(query, m1);
  const double g1 = device::branch_conductance(cell.m1, bias.m1_gate, m1);
  const double g2 = device::branch_conductance(cell.m2, bias.m2_gate, m2);
  return g1 > m1.off_conductance() || g2 > m2.off_conductance();
}

bool cell_conducts(CellState cell, TernaryBit query,
                   const BranchParams& params) {
  return cell_conducts(cell, query, params, params);
}

std::size_t hamming_distance(std::span<const CellState> row,
                             std::span<const TernaryBit> query,
                             const BranchParams& params) {
  if (row.size() != query.size())
    fail(ErrorKind::Usage,
         fmt::format("hamming_distance: row has {} cells, query {} bits",
                     row.size(), query.size()));
  std::size_t d = 0;
  for (std::size_t i = 0; i < row.size(); ++i)
    d += cell_conducts(row[i], query[i], params) ? 1 : 0;
  return d;
}

CamArray::CamArray(std::size_t wordlength, BranchParams nominal)
    : wordlength_(wordlength), nominal_(nominal) {
  if (wordlength < 1 || wordlength > kMaxWordlength)
    fail(ErrorKind::Usage,
         fmt::format("wordlength {} outside [1, {}]", wordlength,
                     kMaxWordlength));
  nominal_.validate();
  constexpr TernaryBit all[] = {TernaryBit::Zero, TernaryBit::One,
                                TernaryBit::DontCare};
  for (auto s : all)
    for (auto q : all)
      conducts_[static_cast<int>(s)][static_cast<int>(q)] =
          cell_conducts(write_cell(s, nominal_).cell, q, nominal_) ? 1 : 0;
}

void CamArray::store(std::span<const TernaryBit> word) {
  if (word.size() != wordlength_)
    fail(ErrorKind::Data,
         fmt::format("row {} has {} bits, array wordlength is {}", rows_ + 1,
                     word.size(), wordlength_));
  for (auto b : word) {
    cells_.push_back(write_cell(b, nominal_).cell);
    stored_.push_back(b);
  }
  if (!branch_params_.empty())
    branch_params_.insert(branch_params_.end(), 2 * wordlength_, nominal_);
  ++rows_;
}

void CamArray::set_row_params(std::size_t row,
                              std::span<const BranchParams> branches) {
  if (row >= rows_) fail(ErrorKind::Usage, "set_row_params: row out of range");
  if (branches.size() != 2 * wordlength_)
    fail(ErrorKind::Usage, "set_row_params: need 2 * wordlength parameters");
  for (const auto& b : branches) b.validate();
  if (branch_params_.empty())
    branch_params_.assign(2 * wordlength_ * rows_, nominal_);
  std::copy(branches.begin(), branches.end(),
            branch_params_.begin() +
                static_cast<std::ptrdiff_t>(2 * wordlength_ * row));
}

std::span<const CellState> CamArray::row(std::size_t r) const {
  if (r >= rows_) fail(ErrorKind::Usage, "row index out of range");
  return {cells_.data() + r * wordlength_, wordlength_};
}

std::vector<TernaryBit> CamArray::stored_word(std::size_t r) const {
  if (r >= rows_) fail(ErrorKind::Usage, "row index out of range");
  const auto first = stored_.begin() + static_cast<std::ptrdiff_t>(r * wordlength_);
  return {first, first + static_cast<std::ptrdiff_t>(wordlength_)};
}

const BranchParams& CamArray::branch(std::size_t r, std::size_t col,
                                     int m) const {
  if (branch_params_.empty()) return nominal_;
  return branch_params_[(r * wordlength_ + col) * 2 + (m == 2 ? 1 : 0)];
}

std::size_t CamArray::mismatch_count(std::size_t r,
                                     std::span<const TernaryBit> query) const {
  if (query.size() != wordlength_)
    fail(ErrorKind::Usage,
         fmt::format("query has {} bits, array wordlength is {}", query.size(),
                     wordlength_));
  const auto cells = row(r);
  if (uniform_params()) {
    const TernaryBit* w = stored_.data() + r * wordlength_;
    std::size_t d = 0;
    for (std::size_t c = 0; c < wordlength_; ++c)
      d += conducts_[static_cast<int>(w[c])][static_cast<int>(query[c])];
    return d;
  }
  std::size_t d = 0;
  for (std::size_t c = 0; c < wordlength_; ++c)
    d += cell_conducts(cells[c], query[c], branch(r, c, 1), branch(r, c, 2))
             ? 1
             : 0;
  return d;
}

CamArray CamArray::parse(std::istream& in, BranchParams nominal) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<TernaryBit>> words;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    try {
      words.push_back(parse_word(line));
    } catch (const Error& e) {
      fail(ErrorKind::Data, fmt::format("line {}: {}", lineno, e.what()));
    }
    if (words.back().size() != words.front().size())
      fail(ErrorKind::Data,
           fmt::format("line {}: row has {} bits, expected {}", lineno,
                       words.back().size(), words.front().size()));
  }
  if (words.empty()) fail(ErrorKind::Data, "array file holds no rows");
  CamArray array(words.front().size(), nominal);
  for (const auto& w : words) array.store(w);
  return array;
}

CamArray CamArray::load(const std::string& path, BranchParams nominal) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, fmt::format("cannot open array file {}", path));
  try {
    return parse(in, nominal);
  } catch (const Error& e) {
    fail(e.kind(), fmt::format("{}: {}", path, e.what()));
  }
}

void CamArray::write(std::ostream& out) const {
  for (std::size_t r = 0; r < rows_; ++r)
    out << format_word(stored_word(r)) << '\n';
}

std::vector<std::size_t> threshold_match_functional(
    const CamArray& array, std::span<const TernaryBit> query,
    std::size_t threshold) {
  if (threshold > array.wordlength())
    fail(ErrorKind::Usage,
         fmt::format("threshold {} outside [0, {}]", threshold,
                     array.wordlength()));
  std::vector<std::size_t> matched;
  for (std::size_t r = 0; r < array.rows(); ++r)
    if (array.mismatch_count(r, query) <= threshold) matched.push_back(r);
  return matched;
}

}  // namespace tapcam::cam
