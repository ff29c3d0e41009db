#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <set>

#include "latnas/errors.hpp"
#include "latnas/sampler.hpp"
#include "latnas/sobol.hpp"
#include "../support/fixtures.hpp"

using namespace latnas;

TEST_CASE("Sobol points match reference values") {
  // Unscrambled Joe-Kuo sequence as produced by scipy.stats.qmc.Sobol(d=41, scramble=False).
  SobolStream s(41);
  struct Row {
    std::uint64_t index;
    std::vector<std::size_t> dims;
    std::vector<double> values;
  };
  const std::vector<std::size_t> a{0, 1, 7, 20, 40};
  const std::vector<std::size_t> b{0, 3, 11, 29, 40};
  const std::vector<Row> rows = {
      {1, a, {0.5, 0.5, 0.5, 0.5, 0.5}},
      {2, a, {0.75, 0.25, 0.75, 0.25, 0.25}},
      {3, a, {0.25, 0.75, 0.25, 0.75, 0.75}},
      {5, a, {0.875, 0.875, 0.375, 0.625, 0.375}},
      {17, a, {0.59375, 0.96875, 0.34375, 0.21875, 0.90625}},
      {100, a, {0.4140625, 0.2578125, 0.4765625, 0.7578125, 0.7109375}},
      {1023, a, {0.0009765625, 0.7529296875, 0.6181640625, 0.8662109375, 0.6318359375}},
      {123457, b, {0.5264968872070312, 0.9503097534179688, 0.28118133544921875, 0.8252487182617188,
                   0.29395294189453125}},
      {1048583, b, {0.1250014305114746, 0.9584460258483887, 0.4003767967224121, 0.04173994064331055,
                    0.6159348487854004}},
  };
  for (const auto& r : rows) {
    const auto p = s.point_at(r.index);
    for (std::size_t i = 0; i < r.dims.size(); ++i) {
      INFO("index " << r.index << " dim " << r.dims[i]);
      CHECK(p[r.dims[i]] == r.values[i]);
    }
  }
  CHECK(s.point_at(0) == std::vector<double>(41, 0.0));
}

TEST_CASE("Sobol stream, skip and jump agree") {
  SobolStream seq(41, 0);
  SobolStream jumped(41, 0);
  for (std::uint64_t i = 0; i < 3000; ++i) {
    auto p = seq.next();
    if (i % 97 == 0) {
      jumped.skip_to(i);
      CHECK(jumped.next() == p);
    }
  }
  // Disjoint ranges generated independently concatenate to the full range.
  auto whole = sobol_points(200, 41, 1);
  auto first = sobol_points(120, 41, 1);
  auto second = sobol_points(80, 41, 121);
  first.insert(first.end(), second.begin(), second.end());
  CHECK(first == whole);
}

TEST_CASE("Sobol dimension limits") {
  CHECK_THROWS_AS(SobolStream{0}, UnsupportedDimension);
  CHECK_THROWS_AS(SobolStream{kSobolMaxDimension + 1}, UnsupportedDimension);
  CHECK_NOTHROW(SobolStream{std::min(kSobolMaxDimension, bundled_direction_table().size() + 1)});
}

TEST_CASE("direction table parsing") {
  auto rows = parse_direction_table("# comment\n2 1 0 1\n3 2 1 1 3\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].initial == std::vector<std::uint32_t>{1, 3});
  CHECK_THROWS_AS(parse_direction_table("2 1 0 2\n"), ParseError);    // even m
  CHECK_THROWS_AS(parse_direction_table("2 2 0 1\n"), ParseError);    // missing m_2
  CHECK_THROWS_AS(parse_direction_table("2 1 0 1\n4 1 0 1\n"), ParseError);
  CHECK(bundled_direction_table().size() >= 40);
}

TEST_CASE("Sobol 1-D projections are balanced") {
  // Indices [0, 1024) form a (0, 10)-net in every projection.
  const auto net = sobol_points(1024, 41, 0);
  for (std::size_t d = 0; d < 41; ++d) {
    std::vector<int> bins(16, 0);
    for (const auto& p : net) ++bins[static_cast<std::size_t>(p[d] * 16)];
    for (int c : bins) CHECK(c == 64);
  }
  // Dropping the origin swaps point 0 for point 1024: each projection is off by at most one.
  const auto shifted = sobol_points(1024, 41, 1);
  for (std::size_t d = 0; d < 41; ++d) {
    std::vector<int> bins(16, 0);
    for (const auto& p : shifted) ++bins[static_cast<std::size_t>(p[d] * 16)];
    for (int c : bins) CHECK(std::abs(c - 64) <= 1);
  }
}

TEST_CASE("quantize") {
  const auto space = SearchSpaceSpec::standard();
  std::vector<double> zero(41, 0.0);
  NetworkEncoding minimum;
  for (const auto& d : space.digits()) minimum.digits.push_back(d.values.front());
  CHECK(quantize(zero, space) == minimum);
  auto p = zero;
  p[0] = 0.999;
  CHECK(quantize(p, space)[0] == 512);
  p[0] = 0.5;
  CHECK(quantize(p, space)[0] == space.resolution_values()[5]);
  CHECK_THROWS_AS(quantize(std::vector<double>(40, 0.0), space), Error);
}

TEST_CASE("stratify") {
  const auto space = SearchSpaceSpec::standard();
  const auto lat_of = [](double ms) { return [ms](const NetworkEncoding&) { return ms * 1000.0; }; };

  auto samples = sample_encodings(10, space);
  auto b = stratify(samples, lat_of(0.3), {0.5, 1.0, 2.0});
  REQUIRE(b.size() == 4);
  CHECK(b[0].members.size() == 10);
  CHECK(b[3].is_overflow());
  b = stratify(samples, lat_of(0.5), {0.5, 1.0, 2.0});
  CHECK(b[1].members.size() == 10);  // half-open: 0.5 belongs to [0.5, 1)

  CHECK_THROWS_AS(stratify(samples, lat_of(1), {1.0, 0.5}), Error);
  CHECK_THROWS_AS(stratify(samples, lat_of(1), {-1.0}), Error);

  SUBCASE("partition across worker counts") {
    auto est = make_analytic_estimator();
    auto f = latency_function(est, space);
    auto many = sample_encodings(5000, space, 3);
    auto ref = stratify(many, f, {1.0, 2.0, 4.0}, 1);
    std::multiset<NetworkEncoding> all;
    std::size_t total = 0;
    for (const auto& bucket : ref) {
      for (std::size_t i = 0; i < bucket.members.size(); ++i) {
        CHECK(bucket.contains_us(bucket.latencies_us[i]));
        all.insert(bucket.members[i]);
      }
      total += bucket.members.size();
    }
    CHECK(total == many.size());
    CHECK(all == std::multiset<NetworkEncoding>(many.begin(), many.end()));
    for (int w : {2, 7, 16}) {
      auto other = stratify(many, f, {1.0, 2.0, 4.0}, w);
      for (std::size_t k = 0; k < ref.size(); ++k) CHECK(other[k].members == ref[k].members);
    }
  }

  SUBCASE("a million samples with a constant estimator land in one bucket") {
    auto big = sample_encodings(1000000, space);
    auto r = stratify(big, lat_of(0.7), {0.5, 1.0, 2.0}, 8);
    CHECK(r[1].members.size() == 1000000);
    CHECK(r[0].members.empty());
    CHECK(r[2].members.empty());
  }
}

TEST_CASE("stratification files") {
  latnas::testing::ScratchDir dir("strat");
  const auto space = SearchSpaceSpec::standard();
  auto f = latency_function(make_analytic_estimator(), space);
  auto samples = sample_encodings(3000, space);
  auto buckets = stratify(samples, f, {0.5, 1.0, 2.0}, 4);
  write_stratification(buckets, dir.path().string());
  std::ifstream in(dir.path() / "manifest.json");
  auto m = nlohmann::json::parse(in);
  std::size_t sum = 0;
  for (std::size_t k = 0; k < m["buckets"].size(); ++k) {
    const auto& b = m["buckets"][k];
    sum += b["count"].get<std::size_t>();
    auto back = read_encodings_csv((dir.path() / b["file"].get<std::string>()).string());
    CHECK(back == buckets[k].members);
  }
  CHECK(sum == 3000);
  CHECK(m["total"].get<std::size_t>() == 3000);
}
