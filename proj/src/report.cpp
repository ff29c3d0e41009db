#include "latnas/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "latnas/errors.hpp"

namespace latnas {

namespace fs = std::filesystem;

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  return a.latency <= b.latency && a.objective >= b.objective &&
         (a.latency < b.latency || a.objective > b.objective);
}

std::vector<std::size_t> pareto_front(const std::vector<ParetoPoint>& pts) {
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pts[a].latency < pts[b].latency; });

  std::vector<std::size_t> front;
  double best_faster = -INFINITY;  // best objective among strictly faster points
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double group_best = -INFINITY;
    while (j < order.size() && pts[order[j]].latency == pts[order[i]].latency) {
      group_best = std::max(group_best, pts[order[j]].objective);
      ++j;
    }
    if (group_best > best_faster) {
      for (std::size_t k = i; k < j; ++k) {
        if (pts[order[k]].objective == group_best) front.push_back(order[k]);
      }
    }
    best_faster = std::max(best_faster, group_best);
    i = j;
  }
  return front;
}

SearchLog load_search_log(const fs::path& path) {
  fs::path dir = path;
  fs::path log = path;
  if (fs::is_directory(path)) {
    log = path / "results.log";
  } else {
    dir = path.parent_path();
    if (dir.empty()) dir = ".";
  }
  if (!fs::exists(log)) throw Error("no result log at " + log.string());
  const fs::path manifest = dir / "manifest";
  if (!fs::exists(manifest)) throw Error("no manifest next to " + log.string());
  std::ifstream in(manifest);
  auto m = nlohmann::json::parse(in);
  SearchLog out;
  out.source = log.string();
  out.bounds.lower_ms = m.at("config").at("bounds_ms").at(0).get<double>();
  out.bounds.upper_ms = m.at("config").at("bounds_ms").at(1).get<double>();
  std::vector<std::string> warnings;
  for (auto& r : read_result_log(log, &warnings)) {
    if (r.kind == LogRecord::Kind::Result) out.results.push_back(std::move(r));
  }
  return out;
}

std::string bound_label(double upper_ms) {
  if (!std::isfinite(upper_ms)) return "inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, upper_ms);
  std::string s(buf, res.ptr);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string digits(const NetworkEncoding& e) {
  std::string s;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(e[i]);
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

std::vector<ModelHubRow> build_model_hub(const std::vector<SearchLog>& logs, std::size_t per_bucket) {
  std::vector<ModelHubRow> rows;
  for (const auto& log : logs) {
    std::vector<const LogRecord*> recs;
    for (const auto& r : log.results) recs.push_back(&r);
    std::stable_sort(recs.begin(), recs.end(), [](const LogRecord* a, const LogRecord* b) {
      if (*a->objective != *b->objective) return *a->objective > *b->objective;
      if (a->latency_us != b->latency_us) return a->latency_us < b->latency_us;
      return a->job_id < b->job_id;
    });
    for (std::size_t k = 0; k < recs.size() && k < per_bucket; ++k) {
      ModelHubRow row;
      row.name = "net-" + bound_label(log.bounds.upper_ms) + "ms-rank" + std::to_string(k + 1);
      row.encoding = recs[k]->encoding;
      row.estimated_latency_ms = recs[k]->latency_us / 1000.0;
      row.objective = *recs[k]->objective;
      row.bucket = log.bounds;
      row.job_id = recs[k]->job_id;
      rows.push_back(std::move(row));
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ModelHubRow& a, const ModelHubRow& b) {
    if (a.estimated_latency_ms != b.estimated_latency_ms) return a.estimated_latency_ms < b.estimated_latency_ms;
    return a.objective > b.objective;
  });
  std::vector<ParetoPoint> pts;
  for (const auto& r : rows) pts.push_back({r.estimated_latency_ms, r.objective});
  std::vector<bool> on_front(rows.size(), false);
  for (auto i : pareto_front(pts)) on_front[i] = true;
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].dominated = !on_front[i];
  return rows;
}

ReportFiles write_report(const std::vector<SearchLog>& logs, const fs::path& out_dir, std::size_t per_bucket) {
  fs::create_directories(out_dir);
  ReportFiles files{out_dir / "model_hub.csv", out_dir / "pareto.csv", out_dir / "plot_data.csv"};

  std::ostringstream hub;
  hub << "# schema_version: 1\n";
  hub << "name,latency_ms,objective,dominated,bucket_lo_ms,bucket_hi_ms,job_id,encoding\n";
  for (const auto& r : build_model_hub(logs, per_bucket)) {
    hub << r.name << ',' << num(r.estimated_latency_ms) << ',' << num(r.objective) << ','
        << (r.dominated ? "true" : "false") << ',' << num(r.bucket.lower_ms) << ',' << num(r.bucket.upper_ms) << ','
        << r.job_id << ',' << digits(r.encoding) << '\n';
  }

  struct Flat {
    const LogRecord* rec;
    const SearchLog* log;
  };
  std::vector<Flat> all;
  std::vector<ParetoPoint> pts;
  for (const auto& log : logs) {
    for (const auto& r : log.results) {
      all.push_back({&r, &log});
      pts.push_back({r.latency_us / 1000.0, *r.objective});
    }
  }
  const auto front = pareto_front(pts);

  // Self-check: the front is mutually non-dominated and covers every other point.
  std::vector<bool> on_front(pts.size(), false);
  for (auto i : front) on_front[i] = true;
  for (auto i : front) {
    for (auto j : front) {
      if (dominates(pts[j], pts[i])) throw Error("Pareto self-check failed: front point dominated");
    }
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (on_front[i]) continue;
    bool covered = std::any_of(front.begin(), front.end(), [&](std::size_t f) { return dominates(pts[f], pts[i]); });
    if (!covered) throw Error("Pareto self-check failed: a non-dominated point is missing from the front");
  }

  std::ostringstream pareto;
  pareto << "# schema_version: 1\n";
  pareto << "latency_ms,objective,bucket_hi_ms,job_id,encoding\n";
  for (auto i : front) {
    pareto << num(pts[i].latency) << ',' << num(pts[i].objective) << ',' << num(all[i].log->bounds.upper_ms) << ','
           << all[i].rec->job_id << ',' << digits(all[i].rec->encoding) << '\n';
  }

  std::ostringstream plot;
  plot << "# schema_version: 1\n";
  plot << "latency_ms,objective,on_front,bucket_hi_ms\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    plot << num(pts[i].latency) << ',' << num(pts[i].objective) << ',' << (on_front[i] ? 1 : 0) << ','
         << num(all[i].log->bounds.upper_ms) << '\n';
  }

  write_text(files.model_hub, hub.str());
  write_text(files.pareto, pareto.str());
  write_text(files.plot_data, plot.str());
  return files;
}

}  // namespace latnas
