#include "latnas/latency_model.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "latnas/errors.hpp"

namespace latnas {

namespace {

int ceil_half(int v) { return (v + 1) / 2; }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

std::string LayerKey::canonical() const {
  std::string s = to_string(type);
  s += '/';
  s += std::to_string(input_h) + 'x' + std::to_string(input_w) + 'x' + std::to_string(input_c);
  s += "/k" + std::to_string(kernel);
  s += "/s" + std::to_string(stride);
  s += "/o" + std::to_string(out_filters);
  s += "/e" + (expansion ? std::to_string(*expansion) : std::string("-"));
  s += "/se" + (se ? std::to_string(*se) : std::string("-"));
  s += '/';
  s += activation ? to_string(*activation) : std::string("-");
  return s;
}

LayerKey LayerKey::parse(const std::string& text) {
  auto parts = split(text, '/');
  if (parts.size() != 8) throw Error("layer key needs 8 '/'-separated fields: '" + text + "'");
  LayerKey k;
  k.type = layer_type_from_string(std::string(parts[0]));
  auto dims = split(parts[1], 'x');
  if (dims.size() != 3 || !parse_int(dims[0], k.input_h) || !parse_int(dims[1], k.input_w) ||
      !parse_int(dims[2], k.input_c)) {
    throw Error("bad input shape in layer key '" + text + "'");
  }
  auto prefixed = [&](std::string_view tok, std::string_view prefix, int& out) {
    if (tok.substr(0, prefix.size()) != prefix || !parse_int(tok.substr(prefix.size()), out)) {
      throw Error("bad field '" + std::string(tok) + "' in layer key '" + text + "'");
    }
  };
  prefixed(parts[2], "k", k.kernel);
  prefixed(parts[3], "s", k.stride);
  prefixed(parts[4], "o", k.out_filters);
  if (parts[5] != "e-") {
    int e = 0;
    prefixed(parts[5], "e", e);
    k.expansion = e;
  }
  if (parts[6] != "se-") {
    int se = 0;
    prefixed(parts[6], "se", se);
    k.se = se;
  }
  if (parts[7] != "-") k.activation = activation_from_string(std::string(parts[7]));
  if (k.canonical() != text) throw Error("layer key is not in canonical form: '" + text + "'");
  return k;
}

std::size_t LayerKeyHash::operator()(const LayerKey& k) const noexcept {
  std::size_t h = static_cast<std::size_t>(k.type);
  auto mix = [&h](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
  mix(static_cast<std::size_t>(k.input_h));
  mix(static_cast<std::size_t>(k.input_w));
  mix(static_cast<std::size_t>(k.input_c));
  mix(static_cast<std::size_t>(k.kernel));
  mix(static_cast<std::size_t>(k.stride));
  mix(static_cast<std::size_t>(k.out_filters));
  mix(k.expansion ? static_cast<std::size_t>(*k.expansion) + 1 : 0);
  mix(k.se ? static_cast<std::size_t>(*k.se) + 1 : 0);
  mix(k.activation ? static_cast<std::size_t>(*k.activation) + 1 : 0);
  return h;
}

std::vector<LayerKey> layer_keys_of(const NetworkArchitecture& arch) {
  std::vector<LayerKey> keys;
  keys.reserve(arch.layers.size() + 1);
  int h = arch.resolution;
  int w = arch.resolution;
  int c = 3;
  for (const auto& l : arch.layers) {
    LayerKey k;
    k.type = l.type;
    k.input_h = h;
    k.input_w = w;
    k.input_c = c;
    k.kernel = l.kernel;
    k.stride = l.stride;
    k.out_filters = l.out_filters;
    if (l.type == LayerType::FusedIRB || l.type == LayerType::IRB) {
      k.expansion = l.expansion;
      k.se = l.se ? 1 : 0;
    }
    k.activation = l.activation;
    keys.push_back(k);
    if (l.stride == 2) {
      h = ceil_half(h);
      w = ceil_half(w);
    }
    c = l.out_filters;
  }
  LayerKey head;
  head.type = LayerType::Head;
  head.input_h = h;
  head.input_w = w;
  head.input_c = c;
  head.kernel = 1;
  head.stride = 1;
  head.out_filters = arch.head.conv_filters;
  keys.push_back(head);
  return keys;
}

void LatencyTable::insert(const LayerKey& key, double latency_us) {
  if (!std::isfinite(latency_us) || latency_us < 0.0) {
    throw Error("latency for " + key.canonical() + " must be finite and >= 0");
  }
  if (!entries_.emplace(key, latency_us).second) throw Error("duplicate key " + key.canonical());
}

const double* LatencyTable::find(const LayerKey& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::pair<std::string, double>> LatencyTable::sorted_entries() const {
  std::vector<std::pair<std::string, double>> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.emplace_back(k.canonical(), v);
  std::sort(out.begin(), out.end());
  return out;
}

std::string serialize_table(const LatencyTable& table) {
  std::string out;
  out += "# latnas-latency-table\n";
  out += "# schema_version: " + std::to_string(kTableSchemaVersion) + "\n";
  out += "# backend: " + table.metadata.backend + "\n";
  out += "# device: " + table.metadata.device + "\n";
  out += "# created: " + table.metadata.created + "\n";
  out += "# columns: canonical_key<TAB>latency_us\n";
  for (const auto& [k, v] : table.sorted_entries()) {
    out += k;
    out += '\t';
    out += format_double(v);
    out += '\n';
  }
  return out;
}

LatencyTable parse_table(const std::string& text) {
  LatencyTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      auto trim = [](std::string s) {
        auto a = s.find_first_not_of(" \t");
        auto b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      std::string name = trim(line.substr(1, colon - 1));
      std::string value = trim(line.substr(colon + 1));
      if (name == "schema_version") {
        int v = 0;
        if (!parse_int(value, v) || v != kTableSchemaVersion) {
          throw ParseError(lineno, "unsupported schema version '" + value + "'");
        }
      } else if (name == "backend") {
        table.metadata.backend = value;
      } else if (name == "device") {
        table.metadata.device = value;
      } else if (name == "created") {
        table.metadata.created = value;
      }
      continue;
    }
    auto fields = split(line, '\t');
    if (fields.size() != 2) throw ParseError(lineno, "expected 'key<TAB>latency_us'");
    LayerKey key;
    try {
      key = LayerKey::parse(std::string(fields[0]));
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
    double v = 0.0;
    if (!parse_double(fields[1], v)) throw ParseError(lineno, "bad latency '" + std::string(fields[1]) + "'");
    if (!std::isfinite(v) || v < 0.0) throw ParseError(lineno, "latency must be finite and >= 0");
    if (table.contains(key)) throw DuplicateKey(lineno, key.canonical());
    table.insert(key, v);
  }
  return table;
}

void save_table(const LatencyTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << serialize_table(table);
  if (!out) throw Error("failed writing " + path);
}

LatencyTable load_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_table(ss.str());
}

double analytic_cost(const LayerKey& key, const CostModelConstants& c) {
  const double h = key.input_h;
  const double w = key.input_w;
  const double cin = key.input_c;
  const double k2 = static_cast<double>(key.kernel) * key.kernel;
  const double ho = key.stride == 2 ? ceil_half(key.input_h) : key.input_h;
  const double wo = key.stride == 2 ? ceil_half(key.input_w) : key.input_w;
  const double out = key.out_filters;
  const double e = key.expansion.value_or(1);

  const double in_el = h * w * cin;
  const double out_el = ho * wo * out;

  double dense = 0, depthwise = 0, weights = 0, elements = 0, kernels = 0;
  double act_el = 0, act_passes = 0, se_el = 0, se_ch = 0;

  switch (key.type) {
    case LayerType::Conv:
      dense = ho * wo * cin * out * k2;
      weights = k2 * cin * out;
      elements = in_el + out_el;
      kernels = 1;
      act_el = out_el;
      act_passes = 1;
      break;
    case LayerType::FusedIRB: {
      const double ce = cin * e;
      const double mid = ho * wo * ce;
      dense = mid * cin * k2 + mid * out;
      weights = k2 * cin * ce + ce * out;
      elements = in_el + 2 * mid + out_el;
      kernels = 2;
      act_el = mid;
      act_passes = 1;
      se_el = mid;
      se_ch = ce;
      break;
    }
    case LayerType::IRB: {
      const double ce = cin * e;
      const double expanded = h * w * ce;
      const double mid = ho * wo * ce;
      dense = expanded * cin + mid * out;
      depthwise = mid * k2;
      weights = cin * ce + k2 * ce + ce * out;
      elements = in_el + 2 * expanded + 2 * mid + out_el;
      kernels = 3;
      act_el = expanded + mid;
      act_passes = 2;
      se_el = mid;
      se_ch = ce;
      break;
    }
    case LayerType::Head: {
      const double conv_el = h * w * out;
      dense = conv_el * cin + out * kNumClasses;
      weights = cin * out + out * kNumClasses;
      elements = in_el + 2 * conv_el;
      kernels = 3;
      break;
    }
  }

  const double compute = kernels * c.dispatch_us + dense / c.dense_macs_per_us +
                         depthwise / c.depthwise_macs_per_us;
  const double memory = (elements + weights) * c.bytes_per_element / c.bytes_per_us;

  double activation_penalty = 0.0;
  if (key.activation) {
    if (*key.activation == Activation::Swish) {
      activation_penalty = act_passes * c.swish_dispatch_us +
                           2.0 * act_el * c.bytes_per_element / c.bytes_per_us;
    } else {
      activation_penalty = act_el * c.relu_us_per_element;
    }
  }

  double se_penalty = 0.0;
  if (key.se && *key.se) {
    const double squeeze = se_ch / c.se_reduction;
    se_penalty = c.se_kernels * c.dispatch_us + 3.0 * se_el * c.bytes_per_element / c.bytes_per_us +
                 2.0 * se_ch * squeeze / c.dense_macs_per_us;
  }
  return std::max(compute, memory) + activation_penalty + se_penalty;
}

double RecordedTableImport::benchmark(const LayerKey& key) {
  if (const double* v = table_.find(key)) return *v;
  throw BackendFailure(key.canonical(), "not present in the recorded table");
}

double ExternalCommandAdapter::benchmark(const LayerKey& key) {
  static const bool sigpipe_ignored = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;

  const std::string canonical = key.canonical();
  int to_child[2];
  int from_child[2];
  if (pipe(to_child) != 0) throw BackendFailure(canonical, std::strerror(errno));
  if (pipe(from_child) != 0) {
    close(to_child[0]);
    close(to_child[1]);
    throw BackendFailure(canonical, std::strerror(errno));
  }
  pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) close(fd);
    throw BackendFailure(canonical, "fork failed");
  }
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) close(fd);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);
  std::string payload = canonical + "\n";
  const char* p = payload.data();
  std::size_t left = payload.size();
  while (left > 0) {
    ssize_t n = write(to_child[1], p, left);
    if (n <= 0) break;
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  close(to_child[1]);
  std::string reply;
  char buf[256];
  ssize_t n;
  while ((n = read(from_child[0], buf, sizeof(buf))) > 0) reply.append(buf, static_cast<std::size_t>(n));
  close(from_child[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw BackendFailure(canonical, "command exited with status " +
                                        std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  }
  auto a = reply.find_first_not_of(" \t\r\n");
  auto b = reply.find_last_not_of(" \t\r\n");
  std::string trimmed = a == std::string::npos ? std::string() : reply.substr(a, b - a + 1);
  double v = 0.0;
  if (!parse_double(trimmed, v) || !std::isfinite(v) || v < 0.0) {
    throw BackendFailure(canonical, "unparsable latency reply '" + trimmed + "'");
  }
  return v;
}

double estimate_network_latency(const NetworkArchitecture& arch, const LatencyTable& table) {
  double total = 0.0;
  for (const auto& k : layer_keys_of(arch)) {
    const double* v = table.find(k);
    if (!v) throw MissingEntry(k.canonical());
    total += *v;
  }
  return total;
}

LatencyEstimator::LatencyEstimator(LatencyTable table, std::shared_ptr<LatencyBackend> backend)
    : table_(std::move(table)), backend_(std::move(backend)) {}

double LatencyEstimator::lookup(const LayerKey& key) {
  {
    std::shared_lock lock(mutex_);
    if (const double* v = table_.find(key)) return *v;
  }
  if (!backend_) throw MissingEntry(key.canonical());
  const double measured = backend_->benchmark(key);
  std::unique_lock lock(mutex_);
  if (const double* v = table_.find(key)) return *v;
  table_.insert(key, measured);
  return measured;
}

double LatencyEstimator::estimate_us(const NetworkArchitecture& arch) {
  double total = 0.0;
  for (const auto& k : layer_keys_of(arch)) total += lookup(k);
  return total;
}

double LatencyEstimator::estimate_us(const NetworkEncoding& encoding, const SearchSpaceSpec& space) {
  return estimate_us(decode(encoding, space));
}

LatencyTable LatencyEstimator::table() const {
  std::shared_lock lock(mutex_);
  return table_;
}

std::shared_ptr<LatencyEstimator> make_analytic_estimator() {
  auto backend = std::make_shared<AnalyticCostModel>();
  LatencyTable table;
  table.metadata.backend = backend->id();
  table.metadata.device = backend->device();
  return std::make_shared<LatencyEstimator>(std::move(table), backend);
}

LatencyFunction latency_function(std::shared_ptr<LatencyEstimator> estimator, SearchSpaceSpec space) {
  return [estimator = std::move(estimator), space = std::move(space)](const NetworkEncoding& e) {
    return estimator->estimate_us(e, space);
  };
}

BuildResult build_table(const std::vector<LayerKey>& keys, LatencyBackend& backend, int workers,
                        LatencyTable existing) {
  std::vector<LayerKey> pending;
  {
    std::unordered_set<LayerKey, LayerKeyHash> seen;
    for (const auto& k : keys) {
      if (existing.contains(k)) continue;
      if (seen.insert(k).second) pending.push_back(k);
    }
  }
  BuildResult result;
  result.table = std::move(existing);
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const LayerKey& k = pending[i];
      try {
        double v = backend.benchmark(k);
        if (!std::isfinite(v) || v < 0.0) throw BackendFailure(k.canonical(), "non-finite or negative latency");
        std::lock_guard lock(mu);
        result.table.insert(k, v);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        result.failures.push_back({k.canonical(), e.what()});
      }
    }
  };
  const std::size_t nthreads =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), std::max<std::size_t>(1, pending.size()));
  if (nthreads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  std::sort(result.failures.begin(), result.failures.end(),
            [](const BuildFailure& a, const BuildFailure& b) { return a.key < b.key; });
  return result;
}

}  // namespace latnas
