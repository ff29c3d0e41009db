#include "latnas/evaluators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "latnas/errors.hpp"

namespace latnas {

double ackley(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  const double n = static_cast<double>(x.size());
  double sq = 0.0;
  double cs = 0.0;
  for (double v : x) {
    sq += v * v;
    cs += std::cos(2.0 * std::numbers::pi * v);
  }
  return -20.0 * std::exp(-0.2 * std::sqrt(sq / n)) - std::exp(cs / n) + 20.0 + std::numbers::e;
}

double ackley_upper_bound() {
  // 20 (1 - e^{-0.2 * 5}) bounds the radial term on [-5, 5]^d; the cosine
  // term is at most e - e^{-1}.
  return 20.0 * (1.0 - std::exp(-1.0)) + std::numbers::e - std::exp(-1.0);
}

std::vector<double> ackley_point(const NetworkEncoding& encoding, const SearchSpaceSpec& space) {
  const auto& digits = space.digits();
  std::vector<double> x(digits.size(), 0.0);
  for (std::size_t i = 0; i < digits.size(); ++i) {
    const auto k = digits[i].values.size();
    if (k <= 1) continue;
    auto idx = space.choice_index(i, encoding[i]);
    if (!idx) throw InvalidEncoding(i, "value " + std::to_string(encoding[i]) + " not in the space");
    x[i] = -5.0 + 10.0 * static_cast<double>(*idx) / static_cast<double>(k - 1);
  }
  return x;
}

double synthetic_ackley(const NetworkEncoding& encoding, const SearchSpaceSpec& space) {
  return 1.0 - ackley(ackley_point(encoding, space)) / ackley_upper_bound();
}

SurrogateCoefficients parse_surrogate_coefficients(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw Error(std::string("surrogate coefficients: invalid JSON: ") + e.what());
  }
  if (j.value("schema_version", 0) != kSurrogateSchemaVersion) {
    throw Error("surrogate coefficients: unsupported schema_version");
  }
  SurrogateCoefficients c;
  const auto& k = j.at("coefficients");
  auto get = [&](const char* name, double& field) {
    if (k.contains(name)) field = k.at(name).get<double>();
  };
  get("base", c.base);
  get("w_depth", c.w_depth);
  get("w_width", c.w_width);
  get("w_resolution", c.w_resolution);
  get("w_expansion", c.w_expansion);
  get("w_se", c.w_se);
  get("depth_knee", c.depth_knee);
  get("depth_penalty", c.depth_penalty);
  get("width_knee", c.width_knee);
  get("width_penalty", c.width_penalty);
  get("noise_sigma", c.noise_sigma);
  return c;
}

std::string serialize_surrogate_coefficients(const SurrogateCoefficients& c) {
  nlohmann::ordered_json j;
  j["format"] = "latnas-surrogate";
  j["schema_version"] = kSurrogateSchemaVersion;
  j["coefficients"] = {{"base", c.base},
                       {"w_depth", c.w_depth},
                       {"w_width", c.w_width},
                       {"w_resolution", c.w_resolution},
                       {"w_expansion", c.w_expansion},
                       {"w_se", c.w_se},
                       {"depth_knee", c.depth_knee},
                       {"depth_penalty", c.depth_penalty},
                       {"width_knee", c.width_knee},
                       {"width_penalty", c.width_penalty},
                       {"noise_sigma", c.noise_sigma}};
  return j.dump(2) + "\n";
}

SurrogateCoefficients load_surrogate_coefficients(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_surrogate_coefficients(ss.str());
}

SurrogateFeatures surrogate_features(const NetworkArchitecture& arch) {
  SurrogateFeatures f;
  f.depth = static_cast<double>(arch.layers.size());
  f.resolution = arch.resolution;
  double filters = 0.0;
  double expansion = 0.0;
  double se = 0.0;
  double blocks = 0.0;
  for (const auto& l : arch.layers) {
    filters += l.out_filters;
    if (l.type == LayerType::FusedIRB || l.type == LayerType::IRB) {
      expansion += l.expansion;
      se += l.se ? 1.0 : 0.0;
      blocks += 1.0;
    }
  }
  f.mean_filters = arch.layers.empty() ? 0.0 : filters / f.depth;
  f.mean_expansion = blocks > 0 ? expansion / blocks : 2.0;
  f.se_fraction = blocks > 0 ? se / blocks : 0.0;
  return f;
}

double surrogate_score(const SurrogateFeatures& f, const SurrogateCoefficients& c) {
  double penalty = 0.0;
  if (f.depth > c.depth_knee) penalty += c.depth_penalty * (f.depth - c.depth_knee) * (f.depth - c.depth_knee);
  if (f.mean_filters > c.width_knee) {
    penalty += c.width_penalty * (f.mean_filters - c.width_knee) * (f.mean_filters - c.width_knee);
  }
  return c.base + c.w_depth * std::log1p(f.depth) + c.w_width * std::log1p(f.mean_filters) +
         c.w_resolution * std::log(f.resolution / 224.0) +
         c.w_expansion * (f.mean_expansion - 2.0) / 4.0 * 0.04 + c.w_se * f.se_fraction * 0.005 - penalty;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double standard_normal(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Box-Muller on 53-bit uniforms keeps the draw reproducible across standard libraries.
  double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

double structured_surrogate(const NetworkEncoding& encoding, const SearchSpaceSpec& space,
                            const SurrogateCoefficients& c, std::optional<std::uint64_t> noise_seed) {
  double v = surrogate_score(surrogate_features(decode(encoding, space)), c);
  if (noise_seed) {
    std::uint64_t h = splitmix64(*noise_seed);
    for (int d : encoding.digits) h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(d)));
    v += c.noise_sigma * standard_normal(h);
  }
  return std::clamp(v, 0.0, 1.0);
}

std::unique_ptr<Evaluator> make_evaluator(const std::string& name, const SearchSpaceSpec& space,
                                          std::optional<std::uint64_t> noise_seed,
                                          const SurrogateCoefficients& c) {
  if (name == "ackley") return std::make_unique<AckleyEvaluator>(space);
  if (name == "surrogate") return std::make_unique<SurrogateEvaluator>(space, c, noise_seed);
  throw Error("unknown evaluator '" + name + "' (expected ackley or surrogate)");
}

}  // namespace latnas
