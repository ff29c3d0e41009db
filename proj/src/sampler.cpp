#include "latnas/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "latnas/errors.hpp"
#include "latnas/sobol.hpp"

namespace latnas {

NetworkEncoding quantize(const std::vector<double>& point, const SearchSpaceSpec& space) {
  const auto& digits = space.digits();
  if (point.size() != digits.size()) {
    throw Error("point has " + std::to_string(point.size()) + " coordinates, space has " +
                std::to_string(digits.size()) + " digits");
  }
  NetworkEncoding enc;
  enc.digits.resize(digits.size());
  for (std::size_t i = 0; i < digits.size(); ++i) {
    const auto k = digits[i].values.size();
    double c = std::clamp(point[i], 0.0, std::nextafter(1.0, 0.0));
    auto idx = static_cast<std::size_t>(std::floor(c * static_cast<double>(k)));
    enc.digits[i] = digits[i].values[std::min(idx, k - 1)];
  }
  return enc;
}

std::vector<NetworkEncoding> sample_encodings(std::size_t n, const SearchSpaceSpec& space,
                                              std::uint64_t skip) {
  SobolStream stream(space.digits().size(), skip);
  std::vector<NetworkEncoding> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(quantize(stream.next(), space));
  return out;
}

std::vector<LatencyBucket> stratify(const std::vector<NetworkEncoding>& samples,
                                    const LatencyFunction& estimator,
                                    const std::vector<double>& bounds_ms, int workers) {
  for (std::size_t i = 0; i < bounds_ms.size(); ++i) {
    if (!std::isfinite(bounds_ms[i]) || bounds_ms[i] < 0.0) throw Error("bucket bounds must be finite and >= 0");
    if (i > 0 && !(bounds_ms[i] > bounds_ms[i - 1])) throw Error("bucket bounds must be strictly increasing");
  }
  std::vector<LatencyBucket> buckets(bounds_ms.size() + 1);
  double lo = 0.0;
  for (std::size_t i = 0; i < bounds_ms.size(); ++i) {
    buckets[i].lower_ms = lo;
    buckets[i].upper_ms = bounds_ms[i];
    lo = bounds_ms[i];
  }
  buckets.back().lower_ms = lo;

  std::vector<double> latency(samples.size());
  const std::size_t nthreads = std::max<std::size_t>(1, std::min<std::size_t>(workers, samples.size()));
  std::vector<std::exception_ptr> errors(nthreads);
  auto shard = [&](std::size_t t) {
    const std::size_t begin = samples.size() * t / nthreads;
    const std::size_t end = samples.size() * (t + 1) / nthreads;
    for (std::size_t i = begin; i < end; ++i) {
      try {
        latency[i] = estimator(samples[i]);
      } catch (const std::exception& e) {
        errors[t] = std::make_exception_ptr(
            Error("estimating " + samples[i].to_string() + ": " + e.what()));
        return;
      }
    }
  };
  if (nthreads == 1) {
    shard(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(shard, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double ms = latency[i] / 1000.0;
    auto it = std::upper_bound(bounds_ms.begin(), bounds_ms.end(), ms);
    auto& b = buckets[static_cast<std::size_t>(it - bounds_ms.begin())];
    b.members.push_back(samples[i]);
    b.latencies_us.push_back(latency[i]);
  }
  return buckets;
}

namespace {

std::string bound_text(double v) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

void write_encodings_csv(const std::vector<NetworkEncoding>& encodings, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << "# schema_version: 1\n";
  for (const auto& e : encodings) out << e.to_string() << '\n';
  if (!out) throw Error("failed writing " + path);
}

std::vector<NetworkEncoding> read_encodings_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::vector<NetworkEncoding> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(NetworkEncoding::parse(line));
    } catch (const std::exception& e) {
      throw ParseError(lineno, std::string("bad encoding row: ") + e.what());
    }
  }
  return out;
}

void write_stratification(const std::vector<LatencyBucket>& buckets, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "latnas-stratification";
  manifest["schema_version"] = 1;
  manifest["buckets"] = nlohmann::ordered_json::array();
  std::size_t total = 0;
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "bucket_%03zu.csv", i);
    write_encodings_csv(buckets[i].members, (fs::path(out_dir) / name).string());
    manifest["buckets"].push_back({{"file", name},
                                   {"lower_ms", bound_text(buckets[i].lower_ms)},
                                   {"upper_ms", bound_text(buckets[i].upper_ms)},
                                   {"count", buckets[i].members.size()}});
    total += buckets[i].members.size();
  }
  manifest["total"] = total;
  std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write manifest in " + out_dir);
  out << manifest.dump(2) << '\n';
}

}  // namespace latnas
