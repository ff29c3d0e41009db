#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "latnas/search_space.hpp"

namespace latnas {

/// Input shape plus layer configuration; one whole block per key.
struct LayerKey {
  LayerType type = LayerType::Conv;
  int input_h = 0;
  int input_w = 0;
  int input_c = 0;
  int kernel = 3;
  int stride = 1;
  int out_filters = 0;
  std::optional<int> expansion;
  std::optional<int> se;
  std::optional<Activation> activation;

  /// e.g. "irb/56x56x32/k3/s2/o64/e4/se1/swish"; absent fields render as '-'.
  std::string canonical() const;
  /// Inverse of canonical(); rejects anything that does not re-render identically.
  static LayerKey parse(const std::string& text);

  friend bool operator==(const LayerKey&, const LayerKey&) = default;
};

struct LayerKeyHash {
  std::size_t operator()(const LayerKey& k) const noexcept;
};

/// One key per body layer followed by the head key. Stride-2 layers halve
/// H and W with ceiling division.
std::vector<LayerKey> layer_keys_of(const NetworkArchitecture& arch);

struct TableMetadata {
  std::string backend = "unknown";
  std::string device = "unknown";
  std::string created = "unset";

  friend bool operator==(const TableMetadata&, const TableMetadata&) = default;
};

inline constexpr int kTableSchemaVersion = 1;

class LatencyTable {
 public:
  TableMetadata metadata;

  /// Throws Error on a duplicate key or a negative/non-finite latency.
  void insert(const LayerKey& key, double latency_us);
  const double* find(const LayerKey& key) const;
  bool contains(const LayerKey& key) const { return find(key) != nullptr; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Entries ordered by canonical key string.
  std::vector<std::pair<std::string, double>> sorted_entries() const;

  friend bool operator==(const LatencyTable& a, const LatencyTable& b) {
    return a.metadata == b.metadata && a.entries_ == b.entries_;
  }

 private:
  std::unordered_map<LayerKey, double, LayerKeyHash> entries_;
};

/// Line format: '#'-prefixed header (format tag, schema version, backend,
/// device, created), then `canonical_key<TAB>latency_us` rows.
std::string serialize_table(const LatencyTable& table);
LatencyTable parse_table(const std::string& text);
void save_table(const LatencyTable& table, const std::string& path);
LatencyTable load_table(const std::string& path);

class LatencyBackend {
 public:
  virtual ~LatencyBackend() = default;
  /// Must be safe to call concurrently.
  virtual double benchmark(const LayerKey& key) = 0;
  virtual std::string id() const = 0;
  virtual std::string device() const { return "unknown"; }
};

/// Roofline-style estimate of a single block on a GV100-class device at
/// batch size 1, FP16.
///
///   latency = max(compute_term, memory_term) + activation_penalty + se_penalty
///
/// compute_term counts a fixed dispatch cost per kernel plus MACs at dense or
/// depthwise throughput; memory_term is bytes moved over effective bandwidth.
/// Swish is an unfused elementwise pass; ReLU fuses into the producer.
struct CostModelConstants {
  double dispatch_us = 7.0;            // per kernel launch
  double dense_macs_per_us = 1.0e7;    // 10 TMAC/s sustained at batch 1
  double depthwise_macs_per_us = 5.0e5;
  double bytes_per_us = 6.0e5;         // 600 GB/s effective DRAM bandwidth
  double bytes_per_element = 2.0;      // FP16
  double relu_us_per_element = 1.0e-7;
  double swish_dispatch_us = 7.0;
  double se_kernels = 3.0;             // pool, excite, scale
  double se_reduction = 4.0;
};

double analytic_cost(const LayerKey& key, const CostModelConstants& c = {});

class AnalyticCostModel final : public LatencyBackend {
 public:
  explicit AnalyticCostModel(CostModelConstants c = {}) : constants_(c) {}
  double benchmark(const LayerKey& key) override { return analytic_cost(key, constants_); }
  std::string id() const override { return "analytic"; }
  std::string device() const override { return "gv100-fp16-model"; }

 private:
  CostModelConstants constants_;
};

/// Serves latencies from a previously recorded table; missing keys fail.
class RecordedTableImport final : public LatencyBackend {
 public:
  explicit RecordedTableImport(LatencyTable table) : table_(std::move(table)) {}
  double benchmark(const LayerKey& key) override;
  std::string id() const override { return "recorded:" + table_.metadata.backend; }
  std::string device() const override { return table_.metadata.device; }

 private:
  LatencyTable table_;
};

/// Runs `/bin/sh -c command`, writes the canonical key plus '\n' to its
/// stdin and reads one decimal microsecond value from stdout. A nonzero
/// exit status or an unparsable reply is a BackendFailure.
class ExternalCommandAdapter final : public LatencyBackend {
 public:
  explicit ExternalCommandAdapter(std::string command, std::string device = "external")
      : command_(std::move(command)), device_(std::move(device)) {}
  double benchmark(const LayerKey& key) override;
  std::string id() const override { return "command"; }
  std::string device() const override { return device_; }

 private:
  std::string command_;
  std::string device_;
};

/// Sum of per-layer entries in layer order. Throws MissingEntry.
double estimate_network_latency(const NetworkArchitecture& arch, const LatencyTable& table);

/// Table-backed estimator. With a backend attached, missing layers are
/// benchmarked once and recorded; without one, they raise MissingEntry.
class LatencyEstimator {
 public:
  explicit LatencyEstimator(LatencyTable table, std::shared_ptr<LatencyBackend> backend = nullptr);

  double estimate_us(const NetworkArchitecture& arch);
  double estimate_us(const NetworkEncoding& encoding, const SearchSpaceSpec& space);

  LatencyTable table() const;
  bool has_backend() const noexcept { return backend_ != nullptr; }

 private:
  double lookup(const LayerKey& key);

  mutable std::shared_mutex mutex_;
  LatencyTable table_;
  std::shared_ptr<LatencyBackend> backend_;
};

/// Half-open latency interval [lower_ms, upper_ms).
struct LatencyBounds {
  double lower_ms = 0.0;
  double upper_ms = 0.0;

  bool contains_us(double latency_us) const noexcept {
    return latency_us >= lower_ms * 1000.0 && latency_us < upper_ms * 1000.0;
  }
  friend bool operator==(const LatencyBounds&, const LatencyBounds&) = default;
};

/// Latency function over encodings, in microseconds.
using LatencyFunction = std::function<double(const NetworkEncoding&)>;

/// Convenience: estimator over an empty table lazily filled by the analytic model.
std::shared_ptr<LatencyEstimator> make_analytic_estimator();
LatencyFunction latency_function(std::shared_ptr<LatencyEstimator> estimator, SearchSpaceSpec space);

struct BuildFailure {
  std::string key;
  std::string cause;
};

struct BuildResult {
  LatencyTable table;
  std::vector<BuildFailure> failures;  // sorted by key
};

/// Benchmarks each distinct key not already in `existing` exactly once.
/// Present entries are never re-measured or modified.
BuildResult build_table(const std::vector<LayerKey>& keys, LatencyBackend& backend, int workers,
                        LatencyTable existing = {});

}  // namespace latnas
