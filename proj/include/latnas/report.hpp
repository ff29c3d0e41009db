#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "latnas/coordinator.hpp"

namespace latnas {

struct ParetoPoint {
  double latency = 0.0;
  double objective = 0.0;
};

/// True when a is at least as fast and as good as b, and strictly better in one.
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

/// Indices of the non-dominated points, ordered by latency (stable for ties).
/// O(n log n).
std::vector<std::size_t> pareto_front(const std::vector<ParetoPoint>& points);

/// Result records of one search together with its bucket.
struct SearchLog {
  std::string source;
  LatencyBounds bounds;
  std::vector<LogRecord> results;  // Result records only
};

/// Reads a checkpoint directory or a results.log whose manifest sits beside it.
SearchLog load_search_log(const std::filesystem::path& path);

struct ModelHubRow {
  std::string name;  // e.g. "net-0p5ms-rank1"
  NetworkEncoding encoding;
  double estimated_latency_ms = 0.0;
  double objective = 0.0;
  bool dominated = false;
  LatencyBounds bucket;
  std::string job_id;
};

/// "0p5" for 0.5, "2" for 2.0, "inf" for an unbounded bucket.
std::string bound_label(double upper_ms);

/// Best `per_bucket` rows of each log, sorted by latency ascending then
/// objective descending; `dominated` is judged among the hub rows.
std::vector<ModelHubRow> build_model_hub(const std::vector<SearchLog>& logs, std::size_t per_bucket = 1);

struct ReportFiles {
  std::filesystem::path model_hub;
  std::filesystem::path pareto;
  std::filesystem::path plot_data;
};

/// Writes model_hub.csv, pareto.csv and plot_data.csv under out_dir. Each
/// starts with a `# schema_version: 1` line. Throws Error if the Pareto
/// self-check fails.
ReportFiles write_report(const std::vector<SearchLog>& logs, const std::filesystem::path& out_dir,
                         std::size_t per_bucket = 1);

}  // namespace latnas
