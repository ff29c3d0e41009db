#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "latnas/errors.hpp"
#include "latnas/evaluators.hpp"
#include "latnas/sampler.hpp"
#include "../support/fixtures.hpp"

using namespace latnas;

namespace {

NetworkEncoding with_all(NetworkEncoding e, DigitField field, int value) {
  for (int s = 2; s < kSearchedStages; ++s) e[digit_index(s, field)] = value;
  return e;
}

}  // namespace

TEST_CASE("Ackley") {
  CHECK(ackley(std::vector<double>(41, 0.0)) == doctest::Approx(0.0).epsilon(1e-12));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> x(1 + t % 50);
    for (auto& v : x) v = u(rng);
    const double a = ackley(x);
    CHECK(a >= 0.0);
    CHECK(a <= ackley_upper_bound());
  }

  // A space whose digits all have an odd number of choices has its origin on the grid.
  const auto full = SearchSpaceSpec::standard();
  SearchSpaceSpec odd = full;
  NetworkEncoding centre;
  for (std::size_t i = 0; i < full.digits().size(); ++i) {
    const auto& v = full.digits()[i].values;
    if (v.size() >= 3) {
      odd = odd.restricted(i, {v[0], v[1], v[2]});
      centre.digits.push_back(v[1]);
    } else {
      odd = odd.restricted(i, {v[0]});
      centre.digits.push_back(v[0]);
    }
  }
  CHECK(synthetic_ackley(centre, odd) == doctest::Approx(1.0).epsilon(1e-12));

  NetworkEncoding minimum;
  for (const auto& d : full.digits()) minimum.digits.push_back(d.values.front());
  CHECK(synthetic_ackley(minimum, full) < 1.0);
  for (const auto& e : sample_encodings(200, full)) {
    const double y = synthetic_ackley(e, full);
    CHECK(y >= 0.0);
    CHECK(y <= 1.0);
  }
}

TEST_CASE("structured surrogate trends") {
  const auto space = SearchSpaceSpec::standard();
  for (const auto& e : sample_encodings(100, space, 11)) {
    const auto e6 = with_all(e, DigitField::Expansion, 6);
    const auto e2 = with_all(e, DigitField::Expansion, 2);
    CHECK(structured_surrogate(e6, space) - structured_surrogate(e2, space) == doctest::Approx(0.04).epsilon(1e-9));

    auto lo = e;
    auto hi = e;
    lo[0] = 224;
    hi[0] = 384;
    CHECK(structured_surrogate(hi, space) > structured_surrogate(lo, space));

    CHECK(structured_surrogate(with_all(e, DigitField::SE, 1), space) >
          structured_surrogate(with_all(e, DigitField::SE, 0), space));
  }
}

TEST_CASE("surrogate features") {
  auto arch = latnas::testing::efficientnet_b0_like();
  auto f = surrogate_features(arch);
  CHECK(f.depth == 17.0);
  CHECK(f.resolution == 224.0);
  // 16 inverted-residual blocks: one at expansion 1, fifteen at expansion 6.
  CHECK(f.mean_expansion == doctest::Approx((1.0 + 15 * 6.0) / 16.0));
  CHECK(f.se_fraction == 1.0);
}

TEST_CASE("surrogate knees penalize very deep and very wide networks") {
  SurrogateCoefficients c;
  SurrogateFeatures f;
  f.depth = c.depth_knee;
  f.mean_filters = 256;
  const double at_knee = surrogate_score(f, c);
  f.depth = c.depth_knee + 20;
  const double past = surrogate_score(f, c);
  const double gain = c.w_depth * (std::log1p(c.depth_knee + 20) - std::log1p(c.depth_knee));
  CHECK(past - at_knee == doctest::Approx(gain - c.depth_penalty * 400.0));
}

TEST_CASE("surrogate noise is deterministic per seed and encoding") {
  const auto space = SearchSpaceSpec::standard();
  const auto encs = sample_encodings(300, space);
  SurrogateEvaluator noisy(space, {}, 9);
  SurrogateEvaluator same(space, {}, 9);
  SurrogateEvaluator other(space, {}, 10);
  SurrogateEvaluator clean(space);
  double sum = 0.0, sq = 0.0;
  int differ = 0;
  for (const auto& e : encs) {
    CHECK(noisy.evaluate(e) == same.evaluate(e));
    differ += noisy.evaluate(e) != other.evaluate(e);
    const double d = noisy.evaluate(e) - clean.evaluate(e);
    sum += d;
    sq += d * d;
  }
  CHECK(differ > 290);
  const double sd = std::sqrt(sq / encs.size());
  CHECK(std::abs(sum / encs.size()) < 0.0005);
  CHECK(sd == doctest::Approx(0.002).epsilon(0.2));
}

TEST_CASE("coefficient files") {
  SurrogateCoefficients c;
  CHECK(parse_surrogate_coefficients(serialize_surrogate_coefficients(c)) == c);
  std::ifstream in(std::string(LATNAS_SOURCE_DIR) + "/data/surrogate_coefficients.json");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(parse_surrogate_coefficients(ss.str()) == c);
  CHECK_THROWS_AS(parse_surrogate_coefficients("{\"schema_version\": 7, \"coefficients\": {}}"), Error);
  CHECK_THROWS_AS(parse_surrogate_coefficients("not json"), Error);
  c.base = 0.5;
  auto parsed = parse_surrogate_coefficients(serialize_surrogate_coefficients(c));
  CHECK(parsed.base == 0.5);
}

TEST_CASE("evaluator factory") {
  const auto space = SearchSpaceSpec::standard();
  CHECK(make_evaluator("ackley", space)->name() == "ackley");
  CHECK(make_evaluator("surrogate", space)->name() == "surrogate");
  CHECK_THROWS_AS(make_evaluator("imagenet", space), Error);
}
