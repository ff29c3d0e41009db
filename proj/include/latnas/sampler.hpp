#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "latnas/latency_model.hpp"
#include "latnas/search_space.hpp"

namespace latnas {

/// Maps a unit-cube point onto the space: coordinate c of a digit with k
/// choices selects choice floor(c * k).
NetworkEncoding quantize(const std::vector<double>& point, const SearchSpaceSpec& space);

/// Sobol-quantized encodings for ordinals [skip, skip + n).
std::vector<NetworkEncoding> sample_encodings(std::size_t n, const SearchSpaceSpec& space,
                                              std::uint64_t skip = 1);

/// Half-open latency interval [lower_ms, upper_ms) and its members.
struct LatencyBucket {
  double lower_ms = 0.0;
  double upper_ms = std::numeric_limits<double>::infinity();
  std::vector<NetworkEncoding> members;
  std::vector<double> latencies_us;

  bool is_overflow() const noexcept { return upper_ms == std::numeric_limits<double>::infinity(); }
  bool contains_us(double latency_us) const noexcept { return bounds().contains_us(latency_us); }
  LatencyBounds bounds() const noexcept { return {lower_ms, upper_ms}; }
};

/// Places every sample into [0, b0), [b0, b1), ..., plus a final overflow
/// bucket [b_last, inf). `bounds_ms` must be strictly increasing and
/// non-negative. Samples are sharded over `workers` threads; results are
/// merged in input order.
std::vector<LatencyBucket> stratify(const std::vector<NetworkEncoding>& samples,
                                    const LatencyFunction& estimator,
                                    const std::vector<double>& bounds_ms, int workers = 1);

/// Writes bucket_NNN.csv (one 41-integer row per network) and manifest.json.
void write_stratification(const std::vector<LatencyBucket>& buckets, const std::string& out_dir);

/// Reads encodings from a CSV file (one row per network, '#' comments allowed).
std::vector<NetworkEncoding> read_encodings_csv(const std::string& path);
void write_encodings_csv(const std::vector<NetworkEncoding>& encodings, const std::string& path);

}  // namespace latnas
