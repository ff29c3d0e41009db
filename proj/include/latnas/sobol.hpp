#pragma once

// Unscrambled base-2 Sobol sequence in Gray-code order with Joe-Kuo
// direction numbers. Point i is the XOR of the direction integers selected
// by the bits of gray(i) = i ^ (i >> 1), so any index can be produced
// directly without walking the sequence.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace latnas {

inline constexpr std::size_t kSobolMaxDimension = 64;
inline constexpr int kSobolBits = 32;

/// One row of the direction-number file: `d s a m_1 ... m_s`.
struct DirectionRow {
  int dimension = 0;
  int degree = 0;
  std::uint32_t coefficients = 0;
  std::vector<std::uint32_t> initial;
};

/// Parses the bundled direction-number format; '#' lines are comments.
std::vector<DirectionRow> parse_direction_table(const std::string& text);

/// The direction-number table compiled into the library.
const std::vector<DirectionRow>& bundled_direction_table();

class SobolStream {
 public:
  /// Throws UnsupportedDimension when dim is 0 or exceeds kSobolMaxDimension.
  explicit SobolStream(std::size_t dim, std::uint64_t index = 0);

  std::size_t dimension() const noexcept { return dim_; }
  std::uint64_t index() const noexcept { return index_; }

  /// Jumps to any ordinal in O(dim * bits).
  void skip_to(std::uint64_t index);

  /// Returns the point at index() and advances by one.
  std::vector<double> next();

  /// Point at an arbitrary index, independent of the stream position.
  std::vector<double> point_at(std::uint64_t index) const;

 private:
  void rebuild_state();

  std::size_t dim_;
  std::uint64_t index_;
  std::vector<std::array<std::uint32_t, kSobolBits>> directions_;
  std::vector<std::uint32_t> state_;  // integer coordinates of point index_
};

/// n points of dimension dim starting at ordinal skip.
std::vector<std::vector<double>> sobol_points(std::size_t n, std::size_t dim, std::uint64_t skip = 1);

}  // namespace latnas
