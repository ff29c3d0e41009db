#include <doctest.h>

#include <random>

#include "latnas/errors.hpp"
#include "latnas/sampler.hpp"
#include "latnas/search_space.hpp"
#include "../support/fixtures.hpp"

using namespace latnas;

namespace {

NetworkEncoding extreme(const SearchSpaceSpec& space, bool maximum) {
  NetworkEncoding e;
  for (const auto& d : space.digits()) e.digits.push_back(maximum ? d.values.back() : d.values.front());
  return e;
}

int stage_layers(const NetworkArchitecture& a, int stage) {
  int n = 0;
  for (const auto& l : a.layers) n += l.stage == stage;
  return n;
}

}  // namespace

TEST_CASE("digit layout") {
  CHECK(kEncodingLength == 41);
  CHECK(SearchSpaceSpec::standard().digits().size() == 41);
  CHECK(digit_index(0, DigitField::Resolution) == 0);
  CHECK(digit_index(0, DigitField::Filters) == 1);
  CHECK(digit_index(1, DigitField::Layers) == 4);
  CHECK(digit_index(2, DigitField::Layers) == 10);
  CHECK(digit_index(5, DigitField::Layers) == 28);
  CHECK(digit_index(7, DigitField::Filters) == 35);
  CHECK(digit_index(7, DigitField::Layers) == 40);
  CHECK_THROWS_AS(digit_index(0, DigitField::Kernel), std::out_of_range);
  CHECK_THROWS_AS(digit_index(8, DigitField::Filters), std::out_of_range);
  const auto space = SearchSpaceSpec::standard();
  for (std::size_t i = 1; i < space.digits().size(); ++i) {
    const auto& d = space.digits()[i];
    CHECK(digit_index(d.stage, d.field) == i);
  }
}

TEST_CASE("decode extremes") {
  const auto space = SearchSpaceSpec::standard();
  SUBCASE("all-minimum") {
    auto a = decode(extreme(space, false), space);
    CHECK(a.resolution == 224);
    CHECK(a.layers.size() == 6);
    CHECK(a.layers.front().out_filters == 24);
    CHECK(stage_layers(a, 5) == 0);
    CHECK(stage_layers(a, 7) == 0);
    for (int s : {0, 1, 2, 3, 4, 6}) CHECK(stage_layers(a, s) == 1);
  }
  SUBCASE("all-maximum") {
    auto a = decode(extreme(space, true), space);
    CHECK(a.resolution == 512);
    CHECK(a.layers.size() == 1 + 4 + 8 + 8 + 10 + 15 + 15 + 15);
    CHECK(a.layers.size() == 76);
  }
  SUBCASE("zero-layer stage keeps its digits") {
    auto e = extreme(space, true);
    e[digit_index(5, DigitField::Layers)] = 0;
    auto a = decode(e, space);
    CHECK(stage_layers(a, 5) == 0);
    CHECK(encode(a, space) == e);
  }
}

TEST_CASE("encode/decode round trip on Sobol samples") {
  const auto space = SearchSpaceSpec::standard();
  for (const auto& e : sample_encodings(2000, space)) {
    REQUIRE(validate(e, space).empty());
    CHECK(encode(decode(e, space), space) == e);
  }
}

TEST_CASE("encode rejects unrepresentable architectures") {
  const auto space = SearchSpaceSpec::standard();
  auto a = decode(sample_encodings(1, space)[0], space);
  SUBCASE("off-grid filters") {
    for (auto& s : a.stages) {
      if (s.stage == 2) s.filters = 40;
    }
    auto rebuilt = assemble(a.resolution, a.stages);
    CHECK_THROWS_AS(encode(rebuilt, space), NotRepresentable);
  }
  SUBCASE("mixed kernels inside a stage") {
    auto e = extreme(space, true);
    auto arch = decode(e, space);
    for (auto& l : arch.layers) {
      if (l.stage == 4) {
        l.kernel = l.kernel == 3 ? 5 : 3;
        break;
      }
    }
    CHECK_THROWS_AS(encode(arch, space), NotRepresentable);
  }
}

TEST_CASE("validate") {
  const auto space = SearchSpaceSpec::standard();
  const auto minimum = extreme(space, false);
  CHECK(validate(minimum, space).empty());

  NetworkEncoding short_one = minimum;
  short_one.digits.pop_back();
  auto v = validate(short_one, space);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == Violation::Kind::LengthMismatch);
  CHECK(v[0].digit == 40);

  NetworkEncoding res = minimum;
  res[0] = 240;
  v = validate(res, space);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == Violation::Kind::OffGrid);
  CHECK(v[0].digit == 0);

  SUBCASE("every digit: just below, just above, between grid points") {
    for (std::size_t i = 0; i < space.digits().size(); ++i) {
      const auto& vals = space.digits()[i].values;
      NetworkEncoding e = minimum;
      e[i] = vals.front() - 1;
      auto below = validate(e, space);
      REQUIRE(below.size() == 1);
      CHECK(below[0].digit == i);
      CHECK(below[0].kind == Violation::Kind::OutOfRange);
      e[i] = vals.back() + 1;
      auto above = validate(e, space);
      REQUIRE(above.size() == 1);
      CHECK(above[0].digit == i);
      CHECK(above[0].kind == Violation::Kind::OutOfRange);
      for (int val : vals) {
        e[i] = val;
        CHECK(validate(e, space).empty());
      }
      for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
        if (vals[k + 1] - vals[k] < 2) continue;
        e[i] = vals[k] + 1;
        auto off = validate(e, space);
        REQUIRE(off.size() == 1);
        CHECK(off[0].digit == i);
        CHECK(off[0].kind == Violation::Kind::OffGrid);
      }
    }
  }
}

TEST_CASE("cardinality") {
  const auto space = SearchSpaceSpec::standard();
  // Per-digit counts by hand: resolution, stem, stage 1, then stages 2..7
  // as filters * kernel(2) * expansion(5) * se(2) * activation(2) * layers.
  boost::multiprecision::cpp_int expected = 10;
  expected *= 2;                    // stem filters
  expected *= 2 * 2 * 4;            // stage 1 kernel, activation, layers
  expected *= 4 * 40 * 8;           // stage 2
  expected *= 5 * 40 * 8;           // stage 3
  expected *= 7 * 40 * 10;          // stage 4
  expected *= 8 * 40 * 16;          // stage 5 (0..15 layers)
  expected *= 10 * 40 * 15;         // stage 6
  expected *= 10 * 40 * 16;         // stage 7 (0..15 layers)
  CHECK(space_cardinality(space) == expected);
  CHECK(space_cardinality(space) > boost::multiprecision::cpp_int("360000000000000000000000"));
  CHECK(space_cardinality(space) < boost::multiprecision::cpp_int("370000000000000000000000"));

  auto doubled = space.with_resolutions({224, 240, 256, 272, 288, 304, 320, 336, 352, 368,
                                         384, 400, 416, 432, 448, 464, 480, 496, 512, 528});
  CHECK(space_cardinality(doubled) == 2 * space_cardinality(space));

  SearchSpaceSpec single = space;
  for (std::size_t i = 0; i < space.digits().size(); ++i) single = single.restricted(i, {space.digits()[i].values[0]});
  CHECK(space_cardinality(single) == 1);

  const auto small = latnas::testing::shrunken_space();
  CHECK(space_cardinality(small) == latnas::testing::enumerate_space(small).size());
  CHECK(space_cardinality(small) == 4096);
}

TEST_CASE("architecture export round trip") {
  const auto space = SearchSpaceSpec::standard();
  for (const auto& e : sample_encodings(50, space, 7)) {
    const auto doc = export_architecture(decode(e, space));
    CHECK(export_architecture(import_architecture(doc)) == doc);
    CHECK(import_architecture(doc) == decode(e, space));
  }
}

TEST_CASE("hand-built skinny architecture exports in stage order") {
  using A = Activation;
  using T = LayerType;
  std::vector<StageConfig> stages = {{0, T::Conv, 32, 3, 0, false, A::ReLU, 1, 2},
                                     {1, T::Conv, 32, 3, 0, false, A::ReLU, 1, 1},
                                     {2, T::FusedIRB, 116, 3, 3, false, A::ReLU, 2, 2},
                                     {3, T::FusedIRB, 144, 3, 3, false, A::ReLU, 2, 2},
                                     {4, T::IRB, 160, 5, 3, true, A::Swish, 3, 2},
                                     {5, T::IRB, 224, 3, 3, true, A::Swish, 3, 1}};
  auto arch = assemble(224, stages);
  std::vector<int> filters;
  for (const auto& l : arch.layers) {
    if (filters.empty() || filters.back() != l.out_filters) filters.push_back(l.out_filters);
  }
  CHECK(filters == std::vector<int>{32, 116, 144, 160, 224});
  const auto doc = export_architecture(arch);
  CHECK(import_architecture(doc) == arch);
  CHECK_THROWS_AS(encode(arch, SearchSpaceSpec::standard()), NotRepresentable);
}
