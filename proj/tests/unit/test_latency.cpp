#include <doctest.h>

#include <random>

#include "latnas/errors.hpp"
#include "latnas/latency_model.hpp"
#include "latnas/sampler.hpp"
#include "../support/fixtures.hpp"

using namespace latnas;
using latnas::testing::CountingBackend;

namespace {

LayerKey irb_key() {
  LayerKey k;
  k.type = LayerType::IRB;
  k.input_h = 56;
  k.input_w = 56;
  k.input_c = 32;
  k.kernel = 3;
  k.stride = 2;
  k.out_filters = 64;
  k.expansion = 4;
  k.se = 1;
  k.activation = Activation::Swish;
  return k;
}

}  // namespace

TEST_CASE("layer key canonical form") {
  const auto k = irb_key();
  CHECK(k.canonical() == "irb/56x56x32/k3/s2/o64/e4/se1/swish");
  CHECK(LayerKey::parse(k.canonical()) == k);
  CHECK_THROWS_AS(LayerKey::parse("irb/56x56x32/k3/s2/o64/e4/se1"), Error);
  CHECK_THROWS_AS(LayerKey::parse("irb/56x56x32/k03/s2/o64/e4/se1/swish"), Error);

  const auto space = SearchSpaceSpec::standard();
  for (const auto& e : sample_encodings(200, space)) {
    for (const auto& key : layer_keys_of(decode(e, space))) CHECK(LayerKey::parse(key.canonical()) == key);
  }
}

TEST_CASE("layer keys follow the stride arithmetic") {
  const auto space = SearchSpaceSpec::standard();
  NetworkEncoding e;
  for (const auto& d : space.digits()) e.digits.push_back(d.values.front());
  const auto arch = decode(e, space);
  const auto keys = layer_keys_of(arch);
  REQUIRE(keys.size() == arch.layers.size() + 1);
  CHECK(keys[0].input_h == 224);
  CHECK(keys[0].input_c == 3);
  CHECK(keys[0].stride == 2);
  CHECK(keys[1].input_h == 112);
  CHECK(keys[1].input_c == arch.layers[0].out_filters);
  CHECK(keys.back().type == LayerType::Head);

  // Stage 2 and stage 3 both open with stride 2: 112 -> 56 -> 28.
  std::vector<int> stage_input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].stage >= 2 && arch.layers[i].stage <= 4 && arch.layers[i].stride == 2) {
      stage_input.push_back(keys[i].input_h);
    }
  }
  CHECK(stage_input == std::vector<int>{112, 56, 28});

  // Odd sizes use ceiling division.
  auto odd = assemble(225, arch.stages);
  CHECK(layer_keys_of(odd)[1].input_h == 113);
}

TEST_CASE("latency table") {
  LatencyTable t;
  auto a = irb_key();
  auto b = a;
  b.kernel = 5;
  t.insert(a, 300.0);
  t.insert(b, 400.0);
  CHECK_THROWS_AS(t.insert(a, 1.0), Error);
  CHECK_THROWS_AS(t.insert(LayerKey::parse("conv/8x8x3/k3/s1/o8/-/-/relu"), -1.0), Error);
  t.metadata = {"analytic", "dev", "unset"};
  CHECK(parse_table(serialize_table(t)) == t);
  CHECK(serialize_table(parse_table(serialize_table(t))) == serialize_table(t));

  const std::string dup = "# schema_version: 1\n" + a.canonical() + "\t1\n" + a.canonical() + "\t2\n";
  CHECK_THROWS_AS(parse_table(dup), DuplicateKey);
  CHECK_THROWS_AS(parse_table("# schema_version: 2\n"), latnas::ParseError);
  CHECK_THROWS_AS(parse_table(a.canonical() + "\tnan\n"), latnas::ParseError);
}

TEST_CASE("network latency is the sum of its layer entries") {
  using A = Activation;
  using T = LayerType;
  auto arch = assemble(64, {{0, T::Conv, 24, 3, 0, false, A::ReLU, 1, 2}});
  auto keys = layer_keys_of(arch);
  REQUIRE(keys.size() == 2);
  LatencyTable t;
  t.insert(keys[0], 300.0);
  t.insert(keys[1], 400.0);
  CHECK(estimate_network_latency(arch, t) == 700.0);

  LatencyTable partial;
  partial.insert(keys[0], 300.0);
  CHECK_THROWS_AS(estimate_network_latency(arch, partial), MissingEntry);
}

TEST_CASE("build_table benchmarks each distinct key once") {
  auto k = irb_key();
  std::vector<LayerKey> keys(10, k);
  CountingBackend counting;
  auto r = build_table(keys, counting, 4);
  CHECK(counting.total() == 1);
  CHECK(r.table.size() == 1);

  const auto space = SearchSpaceSpec::standard();
  std::vector<LayerKey> many;
  for (const auto& e : sample_encodings(300, space)) {
    for (auto& key : layer_keys_of(decode(e, space))) many.push_back(key);
  }
  LatencyTable reference;
  for (int workers : {1, 4, 16}) {
    CountingBackend c;
    auto res = build_table(many, c, workers);
    CHECK(res.failures.empty());
    for (const auto& [key, n] : c.calls()) CHECK(n == 1);
    CHECK(c.total() == res.table.size());
    if (workers == 1) {
      reference = res.table;
    } else {
      CHECK(res.table == reference);
    }
  }

  SUBCASE("existing entries are never re-measured") {
    LatencyTable existing;
    existing.insert(many[0], 12345.0);
    CountingBackend c;
    auto res = build_table(many, c, 8, existing);
    CHECK(*res.table.find(many[0]) == 12345.0);
    CHECK(c.calls().count(many[0].canonical()) == 0);
  }
}

TEST_CASE("backends") {
  const auto k = irb_key();
  SUBCASE("analytic is deterministic") {
    AnalyticCostModel m;
    CHECK(m.benchmark(k) == m.benchmark(k));
    CHECK(m.benchmark(k) > 0.0);
  }
  SUBCASE("recorded table serves its entries only") {
    LatencyTable t;
    t.metadata.backend = "gpu";
    t.insert(k, 42.5);
    RecordedTableImport rec(t);
    CHECK(rec.benchmark(k) == 42.5);
    auto other = k;
    other.kernel = 5;
    CHECK_THROWS_AS(rec.benchmark(other), BackendFailure);
    CHECK(rec.id() == "recorded:gpu");
  }
  SUBCASE("external command") {
    ExternalCommandAdapter ok("read key; echo 17.25");
    CHECK(ok.benchmark(k) == 17.25);
    ExternalCommandAdapter echo_len("read key; printf '%s' \"$key\" | wc -c");
    CHECK(echo_len.benchmark(k) == static_cast<double>(k.canonical().size()));
    ExternalCommandAdapter bad_status("exit 3");
    CHECK_THROWS_AS(bad_status.benchmark(k), BackendFailure);
    ExternalCommandAdapter garbage("echo fast");
    CHECK_THROWS_AS(garbage.benchmark(k), BackendFailure);
    auto res = build_table({k}, bad_status, 2);
    REQUIRE(res.failures.size() == 1);
    CHECK(res.failures[0].key == k.canonical());
    CHECK(res.table.empty());
  }
}

TEST_CASE("estimator fills missing entries through its backend") {
  const auto space = SearchSpaceSpec::standard();
  auto e = sample_encodings(1, space)[0];
  auto arch = decode(e, space);
  LatencyEstimator strict{LatencyTable{}};
  CHECK_THROWS_AS(strict.estimate_us(arch), MissingEntry);

  auto lazy = make_analytic_estimator();
  const double first = lazy->estimate_us(arch);
  CHECK(lazy->table().size() > 0);
  CHECK(lazy->estimate_us(arch) == first);
  CHECK(estimate_network_latency(arch, lazy->table()) == first);
}

TEST_CASE("cost model trends") {
  auto base = irb_key();
  base.se = 0;
  base.activation = Activation::ReLU;
  base.expansion = 3;
  const double c0 = analytic_cost(base);
  auto t = base;
  t.activation = Activation::Swish;
  CHECK(analytic_cost(t) > c0);
  t = base;
  t.se = 1;
  CHECK(analytic_cost(t) > c0);
  t = base;
  t.kernel = 5;
  CHECK(analytic_cost(t) > c0);
  t = base;
  t.expansion = 4;
  CHECK(analytic_cost(t) > c0);
  t = base;
  t.input_h *= 2;
  t.input_w *= 2;
  CHECK(analytic_cost(t) > c0);
  t = base;
  t.out_filters += 16;
  CHECK(analytic_cost(t) > c0);

  // Whole networks: doubling the input resolution is slower.
  const auto space = SearchSpaceSpec::standard();
  auto est = make_analytic_estimator();
  for (const auto& e : sample_encodings(50, space)) {
    auto arch = decode(e, space);
    auto big = assemble(arch.resolution * 2, arch.stages, arch.head);
    CHECK(est->estimate_us(big) > est->estimate_us(arch));
  }
}

TEST_CASE("reference architecture calibration") {
  auto est = make_analytic_estimator();
  const double ms = est->estimate_us(latnas::testing::efficientnet_b0_like()) / 1000.0;
  CHECK(ms >= 1.18 * 0.75);
  CHECK(ms <= 1.18 * 1.25);
}
