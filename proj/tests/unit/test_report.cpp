#include <doctest.h>

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "latnas/errors.hpp"
#include "latnas/report.hpp"
#include "../support/fixtures.hpp"

using namespace latnas;
using latnas::testing::ScratchDir;

namespace {

std::set<std::size_t> brute_front(const std::vector<ParetoPoint>& pts) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) dominated = dominates(pts[j], pts[i]);
    if (!dominated) out.insert(i);
  }
  return out;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

LogRecord rec(const std::string& id, double lat_us, double obj) {
  LogRecord r;
  r.job_id = id;
  r.client_id = "c";
  r.encoding = NetworkEncoding(std::vector<int>{1, 2});
  r.latency_us = lat_us;
  r.objective = obj;
  return r;
}

}  // namespace

TEST_CASE("dominance") {
  CHECK(dominates({1, 0.9}, {2, 0.8}));
  CHECK(dominates({1, 0.9}, {1, 0.8}));
  CHECK(dominates({1, 0.9}, {2, 0.9}));
  CHECK_FALSE(dominates({1, 0.9}, {1, 0.9}));
  CHECK_FALSE(dominates({1, 0.5}, {2, 0.9}));
}

TEST_CASE("small fronts by hand") {
  CHECK(pareto_front({}).empty());
  CHECK(pareto_front({{1, 1}}) == std::vector<std::size_t>{0});
  // (3,0.9) and (1,0.5) trade off; (2,0.4) is beaten by (1,0.5)
  CHECK(pareto_front({{3, 0.9}, {2, 0.4}, {1, 0.5}}) == std::vector<std::size_t>{2, 0});
  // exact duplicates both stay
  CHECK(pareto_front({{1, 0.5}, {1, 0.5}}) == std::vector<std::size_t>{0, 1});
  // same latency, lower objective is dominated
  CHECK(pareto_front({{1, 0.5}, {1, 0.7}}) == std::vector<std::size_t>{1});
}

TEST_CASE("front matches brute force on random sets") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ParetoPoint> pts(200);
    for (auto& p : pts) {
      // half the trials use a coarse grid to force ties
      p = trial % 2 ? ParetoPoint{u(rng), u(rng)} : ParetoPoint{double(coarse(rng)), double(coarse(rng))};
    }
    auto front = pareto_front(pts);
    CHECK(std::set<std::size_t>(front.begin(), front.end()) == brute_front(pts));
    for (std::size_t k = 1; k < front.size(); ++k) CHECK(pts[front[k - 1]].latency <= pts[front[k]].latency);
  }
}

TEST_CASE("bound labels") {
  CHECK(bound_label(0.5) == "0p5");
  CHECK(bound_label(2.0) == "2");
  CHECK(bound_label(1.25) == "1p25");
  CHECK(bound_label(INFINITY) == "inf");
}

TEST_CASE("model hub and CSV files") {
  SearchLog fast{"a", {0.0, 0.5}, {rec("1-1", 400, 0.70), rec("1-2", 450, 0.72), rec("1-3", 300, 0.60)}};
  SearchLog slow{"b", {0.5, 1.0}, {rec("1-1", 900, 0.71), rec("1-2", 700, 0.80)}};

  auto hub = build_model_hub({fast, slow}, 1);
  REQUIRE(hub.size() == 2);
  CHECK(hub[0].name == "net-0p5ms-rank1");
  CHECK(hub[0].objective == 0.72);
  CHECK(hub[0].estimated_latency_ms == doctest::Approx(0.45));
  CHECK(hub[1].name == "net-1ms-rank1");
  CHECK_FALSE(hub[0].dominated);
  CHECK_FALSE(hub[1].dominated);

  auto hub2 = build_model_hub({fast, slow}, 2);
  REQUIRE(hub2.size() == 4);
  // 0.9 ms / 0.71 is beaten by 0.7 ms / 0.80
  for (const auto& r : hub2) CHECK(r.dominated == (r.job_id == "1-1" && r.bucket.upper_ms == 1.0));

  ScratchDir dir("report");
  auto files = write_report({fast, slow}, dir.path(), 1);
  for (const auto& p : {files.model_hub, files.pareto, files.plot_data}) {
    auto lines = lines_of(p);
    REQUIRE(lines.size() >= 2);
    CHECK(lines[0] == "# schema_version: 1");
  }
  CHECK(lines_of(files.model_hub)[1] == "name,latency_ms,objective,dominated,bucket_lo_ms,bucket_hi_ms,job_id,encoding");
  auto pareto = lines_of(files.pareto);
  // front over all five results: 0.3/0.60, 0.4/0.70, 0.45/0.72, 0.7/0.80
  CHECK(pareto.size() == 2 + 4);
  CHECK(pareto[2].rfind("0.3,0.6,", 0) == 0);
  CHECK(lines_of(files.plot_data).size() == 2 + 5);
}

TEST_CASE("loading a search log needs the manifest") {
  ScratchDir dir("reportlog");
  CHECK_THROWS_AS(load_search_log(dir.path()), Error);
  const auto space = SearchSpaceSpec::standard();
  CoordinatorConfig cfg;
  cfg.budget = 3;
  cfg.bounds = {0.0, 1.5};
  run_simulated_search(cfg, space, latency_function(make_analytic_estimator(), space),
                       [](const NetworkEncoding&) { return 0.5; }, dir.path(), 1);
  auto log = load_search_log(dir.path());
  CHECK(log.results.size() == 3);
  CHECK(log.bounds == LatencyBounds{0.0, 1.5});
  CHECK(load_search_log(dir.path() / "results.log").results.size() == 3);
}
