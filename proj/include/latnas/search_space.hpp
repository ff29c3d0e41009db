#pragma once

// Stage-wise ConvNet search space, its 41-digit integer encoding, and the
// decoded architecture graph.
//
// Digit layout:
//   [0]      input resolution (pixels)
//   [1]      stage 0 filters (stage 1 reuses this count)
//   [2..4]   stage 1 kernel, activation, #layers
//   [5..40]  stages 2..7, six digits each:
//            filters, kernel, expansion, SE, activation, #layers
//
// Digits hold the presented value (pixels, filter counts, kernel size,
// 0/1 flags) rather than choice indices.

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace latnas {

enum class LayerType { Conv, FusedIRB, IRB, Head };
enum class Activation { ReLU = 0, Swish = 1 };

std::string to_string(LayerType t);
std::string to_string(Activation a);
LayerType layer_type_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

enum class DigitField { Resolution, Filters, Kernel, Expansion, SE, Activation, Layers };

std::string to_string(DigitField f);

inline constexpr std::size_t kEncodingLength = 41;
inline constexpr int kSearchedStages = 8;
inline constexpr int kHeadFilters = 1792;
inline constexpr int kNumClasses = 1000;

struct StageSpec {
  int index = 0;
  LayerType layer_type = LayerType::Conv;
  int first_layer_stride = 1;
  std::vector<int> kernel_choices;
  int min_layers = 1;
  int max_layers = 1;
  std::vector<Activation> activation_choices;
  int min_expansion = 0;  // 0 when the stage has no expansion digit
  int max_expansion = 0;
  int filter_lo = 0;
  int filter_hi = 0;
  int filter_step = 1;
  bool searchable_se = false;
};

struct HeadSpec {
  int conv_filters = kHeadFilters;
  int num_classes = kNumClasses;
};

/// One position of the encoding and the values it may take.
struct DigitSpec {
  std::string name;
  int stage = -1;  // -1 for resolution
  DigitField field = DigitField::Resolution;
  std::vector<int> values;  // ascending
};

class SearchSpaceSpec {
 public:
  /// The default space: 8 searched stages plus the fixed head.
  static SearchSpaceSpec standard();

  const std::vector<StageSpec>& stages() const noexcept { return stages_; }
  const std::vector<int>& resolution_values() const noexcept { return digits_[0].values; }
  const std::vector<DigitSpec>& digits() const noexcept { return digits_; }
  const HeadSpec& head() const noexcept { return head_; }

  std::size_t choice_count(std::size_t digit) const { return digits_.at(digit).values.size(); }
  int value_at(std::size_t digit, std::size_t choice) const { return digits_.at(digit).values.at(choice); }
  std::optional<std::size_t> choice_index(std::size_t digit, int value) const;

  /// Copy of this space with one digit limited to `values` (must be non-empty).
  SearchSpaceSpec restricted(std::size_t digit, std::vector<int> values) const;
  SearchSpaceSpec with_resolutions(std::vector<int> values) const;

 private:
  std::vector<StageSpec> stages_;
  std::vector<DigitSpec> digits_;
  HeadSpec head_;
};

/// Position of (stage, field) in the encoding; throws std::out_of_range if the
/// pair carries no digit (e.g. stage 0 kernel).
std::size_t digit_index(int stage, DigitField field);

struct NetworkEncoding {
  std::vector<int> digits;

  NetworkEncoding() = default;
  explicit NetworkEncoding(std::vector<int> d) : digits(std::move(d)) {}

  std::size_t size() const noexcept { return digits.size(); }
  int operator[](std::size_t i) const { return digits[i]; }
  int& operator[](std::size_t i) { return digits[i]; }

  /// Comma-joined digits; identity key for dedup and files.
  std::string to_string() const;
  static NetworkEncoding parse(const std::string& csv);

  friend bool operator==(const NetworkEncoding&, const NetworkEncoding&) = default;
  friend auto operator<=>(const NetworkEncoding&, const NetworkEncoding&) = default;
};

struct Violation {
  enum class Kind { LengthMismatch, OutOfRange, OffGrid };
  Kind kind;
  std::size_t digit = 0;  // for LengthMismatch: the observed length
  int value = 0;

  std::string describe() const;
  friend bool operator==(const Violation&, const Violation&) = default;
};

std::vector<Violation> validate(const NetworkEncoding& encoding, const SearchSpaceSpec& space);

struct StageConfig {
  int stage = 0;
  LayerType type = LayerType::Conv;
  int filters = 0;
  int kernel = 3;
  int expansion = 0;  // 0 for plain convolutions
  bool se = false;
  Activation activation = Activation::ReLU;
  int layers = 1;
  int first_stride = 1;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct LayerConfig {
  int stage = 0;
  LayerType type = LayerType::Conv;
  int kernel = 3;
  int stride = 1;
  int in_filters = 0;
  int out_filters = 0;
  int expansion = 0;
  bool se = false;
  Activation activation = Activation::ReLU;

  friend bool operator==(const LayerConfig&, const LayerConfig&) = default;
};

/// Conv1x1 + global pooling + FC classifier.
struct HeadConfig {
  int in_filters = 0;
  int conv_filters = kHeadFilters;
  int num_classes = kNumClasses;

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct NetworkArchitecture {
  int resolution = 224;
  /// Per-stage configuration, zero-layer stages included so that their digits survive.
  std::vector<StageConfig> stages;
  /// Body layers in execution order, head excluded.
  std::vector<LayerConfig> layers;
  HeadConfig head;

  friend bool operator==(const NetworkArchitecture&, const NetworkArchitecture&) = default;
};

/// Expands stage configurations into explicit layers: the first layer of each
/// stage takes the stage stride, the rest stride 1, and channel counts chain
/// across omitted stages.
NetworkArchitecture assemble(int resolution, std::vector<StageConfig> stages,
                             HeadConfig head = {});

NetworkArchitecture decode(const NetworkEncoding& encoding, const SearchSpaceSpec& space);
NetworkEncoding encode(const NetworkArchitecture& arch, const SearchSpaceSpec& space);

boost::multiprecision::cpp_int space_cardinality(const SearchSpaceSpec& space);

/// Schema-versioned JSON document describing the architecture.
std::string export_architecture(const NetworkArchitecture& arch);
NetworkArchitecture import_architecture(const std::string& document);

inline constexpr int kArchitectureSchemaVersion = 1;

}  // namespace latnas
