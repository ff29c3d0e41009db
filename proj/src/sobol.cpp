#include "latnas/sobol.hpp"

#include <algorithm>
#include <sstream>

#include "latnas/errors.hpp"

namespace latnas {

namespace {

#include "sobol_directions.inc"

}  // namespace

std::vector<DirectionRow> parse_direction_table(const std::string& text) {
  std::vector<DirectionRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    DirectionRow row;
    if (!(ls >> row.dimension >> row.degree >> row.coefficients)) {
      throw ParseError(lineno, "expected 'd s a m_1 .. m_s'");
    }
    if (row.degree < 1 || row.degree >= kSobolBits) throw ParseError(lineno, "bad polynomial degree");
    for (int i = 0; i < row.degree; ++i) {
      std::uint32_t m = 0;
      if (!(ls >> m)) throw ParseError(lineno, "missing direction integer m_" + std::to_string(i + 1));
      // m_i must be odd and below 2^i.
      if ((m & 1u) == 0 || m >= (1u << (i + 1))) {
        throw ParseError(lineno, "invalid direction integer m_" + std::to_string(i + 1));
      }
      row.initial.push_back(m);
    }
    if (!rows.empty() && row.dimension != rows.back().dimension + 1) {
      throw ParseError(lineno, "dimensions must be consecutive");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::vector<DirectionRow>& bundled_direction_table() {
  static const std::vector<DirectionRow> table = parse_direction_table(kBundledSobolDirections);
  return table;
}

SobolStream::SobolStream(std::size_t dim, std::uint64_t index) : dim_(dim), index_(index) {
  const auto& rows = bundled_direction_table();
  if (dim == 0 || dim > kSobolMaxDimension || dim > rows.size() + 1) {
    throw UnsupportedDimension("Sobol dimension " + std::to_string(dim) + " not in [1, " +
                               std::to_string(std::min(kSobolMaxDimension, rows.size() + 1)) + "]");
  }
  directions_.resize(dim);
  for (int k = 0; k < kSobolBits; ++k) directions_[0][k] = 1u << (kSobolBits - 1 - k);
  for (std::size_t j = 1; j < dim; ++j) {
    const auto& row = rows[j - 1];
    auto& v = directions_[j];
    const int s = row.degree;
    for (int k = 0; k < s && k < kSobolBits; ++k) v[k] = row.initial[k] << (kSobolBits - 1 - k);
    for (int k = s; k < kSobolBits; ++k) {
      std::uint32_t x = v[k - s] ^ (v[k - s] >> s);
      for (int i = 1; i < s; ++i) {
        if ((row.coefficients >> (s - 1 - i)) & 1u) x ^= v[k - i];
      }
      v[k] = x;
    }
  }
  rebuild_state();
}

void SobolStream::rebuild_state() {
  state_.assign(dim_, 0);
  const std::uint64_t gray = index_ ^ (index_ >> 1);
  for (int k = 0; k < kSobolBits; ++k) {
    if ((gray >> k) & 1u) {
      for (std::size_t j = 0; j < dim_; ++j) state_[j] ^= directions_[j][k];
    }
  }
}

void SobolStream::skip_to(std::uint64_t index) {
  if (index >> kSobolBits) throw UnsupportedDimension("Sobol index exceeds 2^32");
  index_ = index;
  rebuild_state();
}

std::vector<double> SobolStream::next() {
  if (index_ >> kSobolBits) throw UnsupportedDimension("Sobol index exceeds 2^32");
  constexpr double scale = 1.0 / 4294967296.0;
  std::vector<double> p(dim_);
  for (std::size_t j = 0; j < dim_; ++j) p[j] = static_cast<double>(state_[j]) * scale;
  // Gray-code step: flip the direction of the lowest zero bit of the index.
  int c = 0;
  while ((index_ >> c) & 1u) ++c;
  if (c < kSobolBits) {
    for (std::size_t j = 0; j < dim_; ++j) state_[j] ^= directions_[j][c];
  }
  ++index_;
  return p;
}

std::vector<double> SobolStream::point_at(std::uint64_t index) const {
  SobolStream copy = *this;
  copy.skip_to(index);
  return copy.next();
}

std::vector<std::vector<double>> sobol_points(std::size_t n, std::size_t dim, std::uint64_t skip) {
  SobolStream stream(dim, skip);
  std::vector<std::vector<double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(stream.next());
  return out;
}

}  // namespace latnas
