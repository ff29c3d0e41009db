#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latnas/search_space.hpp"

namespace latnas {

/// Objective in [0, 1], higher is better.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual double evaluate(const NetworkEncoding& encoding) const = 0;
  virtual bool deterministic() const { return true; }
  virtual std::string name() const = 0;
};

/// Ackley function on [-5, 5]^d; global minimum 0 at the origin.
double ackley(const std::vector<double>& x);

/// Upper bound of ackley() on [-5, 5]^d for any d.
double ackley_upper_bound();

/// Choice index i of k maps to -5 + 10 * i / (k - 1); single-choice digits map to 0.
std::vector<double> ackley_point(const NetworkEncoding& encoding, const SearchSpaceSpec& space);

/// 1 - ackley(x) / ackley_upper_bound().
double synthetic_ackley(const NetworkEncoding& encoding, const SearchSpaceSpec& space);

/// Coefficients of the structured accuracy surrogate. Loaded from a
/// schema-versioned JSON file; the defaults match data/surrogate_coefficients.json.
struct SurrogateCoefficients {
  double base = 0.70;
  double w_depth = 0.015;
  double w_width = 0.012;
  double w_resolution = 0.06;
  double w_expansion = 1.0;      // scales (mean_expansion - 2) / 4 * 0.04
  double w_se = 1.0;             // scales se_fraction * 0.005
  double depth_knee = 60.0;      // layers
  double depth_penalty = 2.0e-4; // per layer^2 above the knee
  double width_knee = 512.0;     // mean filters
  double width_penalty = 1.0e-6; // per filter^2 above the knee
  double noise_sigma = 0.002;

  friend bool operator==(const SurrogateCoefficients&, const SurrogateCoefficients&) = default;
};

inline constexpr int kSurrogateSchemaVersion = 1;

SurrogateCoefficients parse_surrogate_coefficients(const std::string& json_text);
std::string serialize_surrogate_coefficients(const SurrogateCoefficients& c);
SurrogateCoefficients load_surrogate_coefficients(const std::string& path);

struct SurrogateFeatures {
  double depth = 0;          // body layers
  double mean_filters = 0;   // over body layers
  double resolution = 224;
  double mean_expansion = 2; // over (Fused-)IRB layers; 2 when there are none
  double se_fraction = 0;    // over (Fused-)IRB layers
};

SurrogateFeatures surrogate_features(const NetworkArchitecture& arch);

/// Noiseless surrogate value before clamping to [0, 1].
double surrogate_score(const SurrogateFeatures& f, const SurrogateCoefficients& c);

/// Pseudo-accuracy in [0, 1]. With a noise seed, adds N(0, noise_sigma^2)
/// drawn deterministically from (seed, encoding).
double structured_surrogate(const NetworkEncoding& encoding, const SearchSpaceSpec& space,
                            const SurrogateCoefficients& c = {},
                            std::optional<std::uint64_t> noise_seed = std::nullopt);

class AckleyEvaluator final : public Evaluator {
 public:
  explicit AckleyEvaluator(SearchSpaceSpec space) : space_(std::move(space)) {}
  double evaluate(const NetworkEncoding& e) const override { return synthetic_ackley(e, space_); }
  std::string name() const override { return "ackley"; }

 private:
  SearchSpaceSpec space_;
};

class SurrogateEvaluator final : public Evaluator {
 public:
  SurrogateEvaluator(SearchSpaceSpec space, SurrogateCoefficients c = {},
                     std::optional<std::uint64_t> noise_seed = std::nullopt)
      : space_(std::move(space)), coefficients_(c), noise_seed_(noise_seed) {}
  double evaluate(const NetworkEncoding& e) const override {
    return structured_surrogate(e, space_, coefficients_, noise_seed_);
  }
  std::string name() const override { return "surrogate"; }

 private:
  SearchSpaceSpec space_;
  SurrogateCoefficients coefficients_;
  std::optional<std::uint64_t> noise_seed_;
};

/// "ackley" or "surrogate"; throws Error otherwise.
std::unique_ptr<Evaluator> make_evaluator(const std::string& name, const SearchSpaceSpec& space,
                                          std::optional<std::uint64_t> noise_seed = std::nullopt,
                                          const SurrogateCoefficients& c = {});

}  // namespace latnas
