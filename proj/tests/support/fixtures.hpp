#pragma once

// Shared test fixtures: the hand-built reference architecture, a small
// enumerable search space, and scratch directories.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "latnas/latency_model.hpp"
#include "latnas/search_space.hpp"

namespace latnas::testing {

/// EfficientNet-B0 layout: swish, SE and IRB stages, 1280-filter head.
inline NetworkArchitecture efficientnet_b0_like() {
  using A = Activation;
  using T = LayerType;
  std::vector<StageConfig> stages = {
      {0, T::Conv, 32, 3, 0, false, A::Swish, 1, 2},   {1, T::IRB, 16, 3, 1, true, A::Swish, 1, 1},
      {2, T::IRB, 24, 3, 6, true, A::Swish, 2, 2},     {3, T::IRB, 40, 5, 6, true, A::Swish, 2, 2},
      {4, T::IRB, 80, 3, 6, true, A::Swish, 3, 2},     {5, T::IRB, 112, 5, 6, true, A::Swish, 3, 1},
      {6, T::IRB, 192, 5, 6, true, A::Swish, 4, 2},    {7, T::IRB, 320, 3, 6, true, A::Swish, 1, 1}};
  return assemble(224, stages, HeadConfig{0, 1280, 1000});
}

/// 4,096-encoding space: nine free digits, every other digit pinned to its
/// middle choice.
inline SearchSpaceSpec shrunken_space() {
  const SearchSpaceSpec full = SearchSpaceSpec::standard();
  const std::map<std::size_t, std::vector<int>> free = {
      {0, {224, 320, 416, 512}}, {10, {1, 8}},  {13, {2, 6}},     {16, {1, 8}},        {28, {0, 5, 10, 15}},
      {34, {1, 15}},             {35, {256, 832}}, {37, {2, 3, 4, 6}}, {40, {0, 15}}};
  SearchSpaceSpec space = full;
  for (std::size_t i = 0; i < full.digits().size(); ++i) {
    auto it = free.find(i);
    if (it != free.end()) {
      space = space.restricted(i, it->second);
    } else {
      const auto& v = full.digits()[i].values;
      space = space.restricted(i, {v[v.size() / 2]});
    }
  }
  return space;
}

inline LatencyBounds shrunken_bounds() { return {0.5, 3.5}; }

/// Every encoding of a space with few choices, in mixed-radix order.
inline std::vector<NetworkEncoding> enumerate_space(const SearchSpaceSpec& space) {
  std::size_t n = 1;
  for (const auto& d : space.digits()) n *= d.values.size();
  std::vector<NetworkEncoding> out;
  out.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    NetworkEncoding e;
    std::size_t r = c;
    for (const auto& d : space.digits()) {
      e.digits.push_back(d.values[r % d.values.size()]);
      r /= d.values.size();
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Uniform random encoding of the space.
inline NetworkEncoding random_encoding(const SearchSpaceSpec& space, std::mt19937_64& rng) {
  NetworkEncoding e;
  for (const auto& d : space.digits()) {
    std::uniform_int_distribution<std::size_t> pick(0, d.values.size() - 1);
    e.digits.push_back(d.values[pick(rng)]);
  }
  return e;
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("latnas-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Backend that counts calls per key; thread-safe.
class CountingBackend final : public LatencyBackend {
 public:
  double benchmark(const LayerKey& key) override {
    std::lock_guard lock(mutex_);
    ++calls_[key.canonical()];
    ++total_;
    return analytic_cost(key);
  }
  std::string id() const override { return "counting"; }
  std::size_t total() const {
    std::lock_guard lock(mutex_);
    return total_;
  }
  std::map<std::string, int> calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, int> calls_;
  std::size_t total_ = 0;
};

}  // namespace latnas::testing
