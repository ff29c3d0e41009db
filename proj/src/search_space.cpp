#include "latnas/search_space.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "latnas/errors.hpp"

namespace latnas {

namespace {

std::vector<int> grid(int lo, int hi, int step) {
  std::vector<int> out;
  for (int v = lo; v <= hi; v += step) out.push_back(v);
  return out;
}

std::vector<int> activation_values(const StageSpec& s) {
  std::vector<int> out;
  for (auto a : s.activation_choices) out.push_back(static_cast<int>(a));
  std::sort(out.begin(), out.end());
  return out;
}

StageSpec make_stage(int index, LayerType type, int stride, int min_layers, int max_layers,
                     int f_lo, int f_hi, int f_step) {
  StageSpec s;
  s.index = index;
  s.layer_type = type;
  s.first_layer_stride = stride;
  s.kernel_choices = {3, 5};
  s.min_layers = min_layers;
  s.max_layers = max_layers;
  s.activation_choices = {Activation::ReLU, Activation::Swish};
  if (type == LayerType::FusedIRB || type == LayerType::IRB) {
    s.min_expansion = 2;
    s.max_expansion = 6;
    s.searchable_se = true;
  }
  s.filter_lo = f_lo;
  s.filter_hi = f_hi;
  s.filter_step = f_step;
  return s;
}

}  // namespace

std::string to_string(LayerType t) {
  switch (t) {
    case LayerType::Conv: return "conv";
    case LayerType::FusedIRB: return "fused_irb";
    case LayerType::IRB: return "irb";
    case LayerType::Head: return "head";
  }
  return "?";
}

std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "swish"; }

LayerType layer_type_from_string(const std::string& s) {
  if (s == "conv") return LayerType::Conv;
  if (s == "fused_irb") return LayerType::FusedIRB;
  if (s == "irb") return LayerType::IRB;
  if (s == "head") return LayerType::Head;
  throw Error("unknown layer type '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "swish") return Activation::Swish;
  throw Error("unknown activation '" + s + "'");
}

std::string to_string(DigitField f) {
  switch (f) {
    case DigitField::Resolution: return "resolution";
    case DigitField::Filters: return "filters";
    case DigitField::Kernel: return "kernel";
    case DigitField::Expansion: return "expansion";
    case DigitField::SE: return "se";
    case DigitField::Activation: return "activation";
    case DigitField::Layers: return "layers";
  }
  return "?";
}

std::size_t digit_index(int stage, DigitField field) {
  if (field == DigitField::Resolution) return 0;
  if (stage == 0 || stage == 1) {
    switch (field) {
      case DigitField::Filters: return 1;
      case DigitField::Kernel:
        if (stage == 1) return 2;
        break;
      case DigitField::Activation:
        if (stage == 1) return 3;
        break;
      case DigitField::Layers:
        if (stage == 1) return 4;
        break;
      default: break;
    }
    throw std::out_of_range("stage " + std::to_string(stage) + " has no " + to_string(field) +
                            " digit");
  }
  if (stage < 2 || stage > 7) throw std::out_of_range("stage out of range");
  std::size_t base = 5 + static_cast<std::size_t>(stage - 2) * 6;
  switch (field) {
    case DigitField::Filters: return base + 0;
    case DigitField::Kernel: return base + 1;
    case DigitField::Expansion: return base + 2;
    case DigitField::SE: return base + 3;
    case DigitField::Activation: return base + 4;
    case DigitField::Layers: return base + 5;
    default: break;
  }
  throw std::out_of_range("bad field");
}

SearchSpaceSpec SearchSpaceSpec::standard() {
  SearchSpaceSpec sp;
  sp.stages_ = {
      make_stage(0, LayerType::Conv, 2, 1, 1, 24, 32, 8),
      make_stage(1, LayerType::Conv, 1, 1, 4, 24, 32, 8),
      make_stage(2, LayerType::FusedIRB, 2, 1, 8, 32, 80, 16),
      make_stage(3, LayerType::FusedIRB, 2, 1, 8, 48, 112, 16),
      make_stage(4, LayerType::IRB, 2, 1, 10, 96, 192, 16),
      make_stage(5, LayerType::IRB, 1, 0, 15, 112, 224, 16),
      make_stage(6, LayerType::IRB, 2, 1, 15, 128, 416, 32),
      make_stage(7, LayerType::IRB, 1, 0, 15, 256, 832, 64),
  };
  // The stem convolution is a fixed 3x3; only its filter count is searched.
  sp.stages_[0].kernel_choices = {3};

  auto& d = sp.digits_;
  d.push_back({"resolution", -1, DigitField::Resolution, grid(224, 512, 32)});
  const StageSpec& s0 = sp.stages_[0];
  d.push_back({"stage0.filters", 0, DigitField::Filters, grid(s0.filter_lo, s0.filter_hi, s0.filter_step)});
  const StageSpec& s1 = sp.stages_[1];
  d.push_back({"stage1.kernel", 1, DigitField::Kernel, s1.kernel_choices});
  d.push_back({"stage1.activation", 1, DigitField::Activation, activation_values(s1)});
  d.push_back({"stage1.layers", 1, DigitField::Layers, grid(s1.min_layers, s1.max_layers, 1)});
  for (int st = 2; st < kSearchedStages; ++st) {
    const StageSpec& s = sp.stages_[st];
    std::string p = "stage" + std::to_string(st) + ".";
    d.push_back({p + "filters", st, DigitField::Filters, grid(s.filter_lo, s.filter_hi, s.filter_step)});
    d.push_back({p + "kernel", st, DigitField::Kernel, s.kernel_choices});
    d.push_back({p + "expansion", st, DigitField::Expansion, grid(s.min_expansion, s.max_expansion, 1)});
    d.push_back({p + "se", st, DigitField::SE, {0, 1}});
    d.push_back({p + "activation", st, DigitField::Activation, activation_values(s)});
    d.push_back({p + "layers", st, DigitField::Layers, grid(s.min_layers, s.max_layers, 1)});
  }
  return sp;
}

std::optional<std::size_t> SearchSpaceSpec::choice_index(std::size_t digit, int value) const {
  const auto& v = digits_.at(digit).values;
  auto it = std::lower_bound(v.begin(), v.end(), value);
  if (it == v.end() || *it != value) return std::nullopt;
  return static_cast<std::size_t>(it - v.begin());
}

SearchSpaceSpec SearchSpaceSpec::restricted(std::size_t digit, std::vector<int> values) const {
  if (values.empty()) throw Error("restricted digit needs at least one value");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  SearchSpaceSpec out = *this;
  out.digits_.at(digit).values = std::move(values);
  return out;
}

SearchSpaceSpec SearchSpaceSpec::with_resolutions(std::vector<int> values) const {
  return restricted(0, std::move(values));
}

std::string NetworkEncoding::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(digits[i]);
  }
  return out;
}

NetworkEncoding NetworkEncoding::parse(const std::string& csv) {
  NetworkEncoding e;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t pos = 0;
    int v = std::stoi(tok, &pos);
    while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
    if (pos != tok.size()) throw Error("non-integer digit '" + tok + "'");
    e.digits.push_back(v);
  }
  return e;
}

std::string Violation::describe() const {
  switch (kind) {
    case Kind::LengthMismatch:
      return "LengthMismatch(" + std::to_string(digit) + ")";
    case Kind::OutOfRange:
      return "OutOfRange(digit " + std::to_string(digit) + ", value " + std::to_string(value) + ")";
    case Kind::OffGrid:
      return "OffGrid(digit " + std::to_string(digit) + ", value " + std::to_string(value) + ")";
  }
  return "?";
}

std::vector<Violation> validate(const NetworkEncoding& encoding, const SearchSpaceSpec& space) {
  std::vector<Violation> out;
  if (encoding.size() != space.digits().size()) {
    out.push_back({Violation::Kind::LengthMismatch, encoding.size(), 0});
    return out;
  }
  for (std::size_t i = 0; i < encoding.size(); ++i) {
    const auto& values = space.digits()[i].values;
    int v = encoding[i];
    if (v < values.front() || v > values.back()) {
      out.push_back({Violation::Kind::OutOfRange, i, v});
    } else if (!std::binary_search(values.begin(), values.end(), v)) {
      out.push_back({Violation::Kind::OffGrid, i, v});
    }
  }
  return out;
}

NetworkArchitecture assemble(int resolution, std::vector<StageConfig> stages, HeadConfig head) {
  NetworkArchitecture arch;
  arch.resolution = resolution;
  int in = 3;
  for (const auto& s : stages) {
    for (int i = 0; i < s.layers; ++i) {
      LayerConfig l;
      l.stage = s.stage;
      l.type = s.type;
      l.kernel = s.kernel;
      l.stride = i == 0 ? s.first_stride : 1;
      l.in_filters = in;
      l.out_filters = s.filters;
      l.expansion = s.expansion;
      l.se = s.se;
      l.activation = s.activation;
      arch.layers.push_back(l);
      in = s.filters;
    }
  }
  head.in_filters = in;
  arch.head = head;
  arch.stages = std::move(stages);
  return arch;
}

NetworkArchitecture decode(const NetworkEncoding& encoding, const SearchSpaceSpec& space) {
  auto violations = validate(encoding, space);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw InvalidEncoding(v.kind == Violation::Kind::LengthMismatch ? 0 : v.digit, v.describe());
  }
  const auto& specs = space.stages();
  std::vector<StageConfig> stages;
  stages.reserve(kSearchedStages);

  const int stem_filters = encoding[digit_index(0, DigitField::Filters)];
  const auto stem_act = static_cast<Activation>(encoding[digit_index(1, DigitField::Activation)]);

  StageConfig s0;
  s0.stage = 0;
  s0.type = specs[0].layer_type;
  s0.filters = stem_filters;
  s0.kernel = specs[0].kernel_choices.front();
  s0.activation = stem_act;
  s0.layers = 1;
  s0.first_stride = specs[0].first_layer_stride;
  stages.push_back(s0);

  StageConfig s1;
  s1.stage = 1;
  s1.type = specs[1].layer_type;
  s1.filters = stem_filters;
  s1.kernel = encoding[digit_index(1, DigitField::Kernel)];
  s1.activation = stem_act;
  s1.layers = encoding[digit_index(1, DigitField::Layers)];
  s1.first_stride = specs[1].first_layer_stride;
  stages.push_back(s1);

  for (int st = 2; st < kSearchedStages; ++st) {
    StageConfig s;
    s.stage = st;
    s.type = specs[st].layer_type;
    s.filters = encoding[digit_index(st, DigitField::Filters)];
    s.kernel = encoding[digit_index(st, DigitField::Kernel)];
    s.expansion = encoding[digit_index(st, DigitField::Expansion)];
    s.se = encoding[digit_index(st, DigitField::SE)] != 0;
    s.activation = static_cast<Activation>(encoding[digit_index(st, DigitField::Activation)]);
    s.layers = encoding[digit_index(st, DigitField::Layers)];
    s.first_stride = specs[st].first_layer_stride;
    stages.push_back(s);
  }
  HeadConfig head;
  head.conv_filters = space.head().conv_filters;
  head.num_classes = space.head().num_classes;
  return assemble(encoding[0], std::move(stages), head);
}

NetworkEncoding encode(const NetworkArchitecture& arch, const SearchSpaceSpec& space) {
  const auto& specs = space.stages();
  if (arch.stages.size() != static_cast<std::size_t>(kSearchedStages)) {
    throw NotRepresentable("expected 8 stages, got " + std::to_string(arch.stages.size()));
  }
  for (int st = 0; st < kSearchedStages; ++st) {
    const auto& s = arch.stages[st];
    if (s.stage != st) throw NotRepresentable("stage list out of order at " + std::to_string(st));
    if (s.type != specs[st].layer_type) throw NotRepresentable("stage " + std::to_string(st) + " has the wrong layer type");
    if (s.first_stride != specs[st].first_layer_stride) throw NotRepresentable("stage " + std::to_string(st) + " has the wrong stride");
    if (s.type == LayerType::Conv && (s.expansion != 0 || s.se)) {
      throw NotRepresentable("convolution stage " + std::to_string(st) + " carries expansion or SE");
    }
  }

  // Every layer must be the stage configuration verbatim.
  std::vector<int> seen(kSearchedStages, 0);
  int prev_stage = 0;
  int in = 3;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    if (l.stage < prev_stage || l.stage < 0 || l.stage >= kSearchedStages) {
      throw NotRepresentable("layer " + std::to_string(i) + " is out of stage order");
    }
    prev_stage = l.stage;
    const auto& s = arch.stages[l.stage];
    int pos = seen[l.stage]++;
    int want_stride = pos == 0 ? s.first_stride : 1;
    bool uniform = l.type == s.type && l.kernel == s.kernel && l.out_filters == s.filters &&
                   l.expansion == s.expansion && l.se == s.se && l.activation == s.activation;
    if (!uniform) throw NotRepresentable("layer " + std::to_string(i) + " differs from its stage configuration");
    if (l.stride != want_stride) throw NotRepresentable("layer " + std::to_string(i) + " violates the stage stride rule");
    if (l.in_filters != in) throw NotRepresentable("layer " + std::to_string(i) + " breaks the channel chain");
    in = l.out_filters;
  }
  for (int st = 0; st < kSearchedStages; ++st) {
    if (seen[st] != arch.stages[st].layers) {
      throw NotRepresentable("stage " + std::to_string(st) + " declares " + std::to_string(arch.stages[st].layers) +
                             " layers but has " + std::to_string(seen[st]));
    }
  }
  const auto& s0 = arch.stages[0];
  const auto& s1 = arch.stages[1];
  if (s0.layers != 1) throw NotRepresentable("stage 0 must hold exactly one layer");
  if (s0.kernel != specs[0].kernel_choices.front()) throw NotRepresentable("stage 0 kernel is fixed");
  if (s1.filters != s0.filters) throw NotRepresentable("stage 1 must share stage 0 filters");
  if (s1.activation != s0.activation) throw NotRepresentable("stage 0 must share stage 1 activation");
  if (arch.head.conv_filters != space.head().conv_filters || arch.head.num_classes != space.head().num_classes) {
    throw NotRepresentable("head differs from the fixed head");
  }

  std::vector<int> d(kEncodingLength, 0);
  d[0] = arch.resolution;
  d[digit_index(0, DigitField::Filters)] = s0.filters;
  d[digit_index(1, DigitField::Kernel)] = s1.kernel;
  d[digit_index(1, DigitField::Activation)] = static_cast<int>(s1.activation);
  d[digit_index(1, DigitField::Layers)] = s1.layers;
  for (int st = 2; st < kSearchedStages; ++st) {
    const auto& s = arch.stages[st];
    d[digit_index(st, DigitField::Filters)] = s.filters;
    d[digit_index(st, DigitField::Kernel)] = s.kernel;
    d[digit_index(st, DigitField::Expansion)] = s.expansion;
    d[digit_index(st, DigitField::SE)] = s.se ? 1 : 0;
    d[digit_index(st, DigitField::Activation)] = static_cast<int>(s.activation);
    d[digit_index(st, DigitField::Layers)] = s.layers;
  }
  NetworkEncoding enc(std::move(d));
  auto violations = validate(enc, space);
  if (!violations.empty()) throw NotRepresentable(violations.front().describe());
  return enc;
}

boost::multiprecision::cpp_int space_cardinality(const SearchSpaceSpec& space) {
  boost::multiprecision::cpp_int n = 1;
  for (const auto& d : space.digits()) n *= d.values.size();
  return n;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson stage_json(const StageConfig& s) {
  return ojson{{"stage", s.stage},       {"type", to_string(s.type)},
               {"filters", s.filters},   {"kernel", s.kernel},
               {"expansion", s.expansion}, {"se", s.se},
               {"activation", to_string(s.activation)}, {"layers", s.layers},
               {"first_stride", s.first_stride}};
}

ojson layer_json(const LayerConfig& l) {
  return ojson{{"stage", l.stage},         {"type", to_string(l.type)},
               {"kernel", l.kernel},       {"stride", l.stride},
               {"in_filters", l.in_filters}, {"out_filters", l.out_filters},
               {"expansion", l.expansion}, {"se", l.se},
               {"activation", to_string(l.activation)}};
}

}  // namespace

std::string export_architecture(const NetworkArchitecture& arch) {
  ojson doc;
  doc["format"] = "latnas-architecture";
  doc["schema_version"] = kArchitectureSchemaVersion;
  doc["resolution"] = arch.resolution;
  doc["stages"] = ojson::array();
  for (const auto& s : arch.stages) doc["stages"].push_back(stage_json(s));
  doc["layers"] = ojson::array();
  for (const auto& l : arch.layers) doc["layers"].push_back(layer_json(l));
  doc["head"] = ojson{{"type", "conv1x1_pool_fc"},
                      {"in_filters", arch.head.in_filters},
                      {"conv_filters", arch.head.conv_filters},
                      {"num_classes", arch.head.num_classes}};
  return doc.dump(2) + "\n";
}

NetworkArchitecture import_architecture(const std::string& document) {
  ojson doc;
  try {
    doc = ojson::parse(document);
  } catch (const std::exception& e) {
    throw Error(std::string("architecture document is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "latnas-architecture") throw Error("not an architecture document");
    int version = doc.at("schema_version").get<int>();
    if (version != kArchitectureSchemaVersion) {
      throw Error("unsupported architecture schema version " + std::to_string(version));
    }
    NetworkArchitecture arch;
    arch.resolution = doc.at("resolution").get<int>();
    for (const auto& j : doc.at("stages")) {
      StageConfig s;
      s.stage = j.at("stage").get<int>();
      s.type = layer_type_from_string(j.at("type").get<std::string>());
      s.filters = j.at("filters").get<int>();
      s.kernel = j.at("kernel").get<int>();
      s.expansion = j.at("expansion").get<int>();
      s.se = j.at("se").get<bool>();
      s.activation = activation_from_string(j.at("activation").get<std::string>());
      s.layers = j.at("layers").get<int>();
      s.first_stride = j.at("first_stride").get<int>();
      arch.stages.push_back(s);
    }
    for (const auto& j : doc.at("layers")) {
      LayerConfig l;
      l.stage = j.at("stage").get<int>();
      l.type = layer_type_from_string(j.at("type").get<std::string>());
      l.kernel = j.at("kernel").get<int>();
      l.stride = j.at("stride").get<int>();
      l.in_filters = j.at("in_filters").get<int>();
      l.out_filters = j.at("out_filters").get<int>();
      l.expansion = j.at("expansion").get<int>();
      l.se = j.at("se").get<bool>();
      l.activation = activation_from_string(j.at("activation").get<std::string>());
      arch.layers.push_back(l);
    }
    const auto& h = doc.at("head");
    arch.head.in_filters = h.at("in_filters").get<int>();
    arch.head.conv_filters = h.at("conv_filters").get<int>();
    arch.head.num_classes = h.at("num_classes").get<int>();
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed architecture document: ") + e.what());
  }
}

}  // namespace latnas
