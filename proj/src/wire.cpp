#include "latnas/wire.hpp"

#include <json.hpp>

#include "latnas/errors.hpp"

namespace latnas {

using json = nlohmann::ordered_json;

namespace {

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + name + "'");
  return *it;
}

std::string get_string(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) throw ProtocolError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

double get_number(const json& v, const char* name) {
  if (!v.is_number()) throw ProtocolError(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

int get_int(const json& v, const char* name) {
  if (!v.is_number_integer()) throw ProtocolError(std::string("field '") + name + "' must be an integer");
  return v.get<int>();
}

std::optional<double> get_optional_number(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return get_number(*it, name);
}

NetworkEncoding get_encoding(const json& j) {
  const json& v = field(j, "encoding");
  if (!v.is_array()) throw ProtocolError("field 'encoding' must be an array of integers");
  NetworkEncoding e;
  for (const auto& d : v) e.digits.push_back(get_int(d, "encoding"));
  return e;
}

EvalConfig get_eval_config(const json& j) {
  EvalConfig c;
  auto it = j.find("eval_config");
  if (it == j.end() || it->is_null()) return c;
  if (!it->is_object()) throw ProtocolError("field 'eval_config' must be an object");
  if (auto e = it->find("evaluator"); e != it->end()) {
    if (!e->is_string()) throw ProtocolError("eval_config.evaluator must be a string");
    c.evaluator = e->get<std::string>();
  }
  if (auto s = it->find("noise_seed"); s != it->end() && !s->is_null()) {
    if (!s->is_number_unsigned()) throw ProtocolError("eval_config.noise_seed must be a non-negative integer");
    c.noise_seed = s->get<std::uint64_t>();
  }
  if (auto h = it->find("heartbeat_interval_s"); h != it->end()) {
    c.heartbeat_interval_s = get_number(*h, "heartbeat_interval_s");
  }
  return c;
}

struct Writer {
  json operator()(const HelloMsg& m) const {
    return {{"type", "HELLO"}, {"client_id", m.client_id}, {"protocol_version", m.protocol_version}};
  }
  json operator()(const RequestWorkMsg& m) const { return {{"type", "REQUEST_WORK"}, {"client_id", m.client_id}}; }
  json operator()(const ProposalMsg& m) const {
    json cfg = {{"evaluator", m.eval_config.evaluator}};
    cfg["noise_seed"] = m.eval_config.noise_seed ? json(*m.eval_config.noise_seed) : json(nullptr);
    cfg["heartbeat_interval_s"] = m.eval_config.heartbeat_interval_s;
    return {{"type", "PROPOSAL"}, {"job_id", m.job_id}, {"encoding", m.encoding.digits}, {"eval_config", cfg}};
  }
  json operator()(const HeartbeatMsg& m) const {
    json j = {{"type", "HEARTBEAT"}, {"job_id", m.job_id}, {"epoch", m.epoch}};
    j["current_metric"] = m.current_metric ? json(*m.current_metric) : json(nullptr);
    return j;
  }
  json operator()(const ResultMsg& m) const {
    json j = {{"type", "RESULT"}, {"job_id", m.job_id}, {"encoding", m.encoding.digits}};
    j["objective"] = m.objective ? json(*m.objective) : json(nullptr);
    j["epochs_completed"] = m.epochs_completed;
    j["failed"] = m.failed;
    if (!m.error.empty()) j["error"] = m.error;
    j["wall_time_s"] = m.wall_time_s;
    return j;
  }
  json operator()(const AckMsg& m) const {
    json j = {{"type", "ACK"}, {"job_id", m.job_id}};
    if (!m.warning.empty()) j["warning"] = m.warning;
    return j;
  }
  json operator()(const NoWorkMsg& m) const { return {{"type", "NO_WORK"}, {"retry_after_s", m.retry_after_s}}; }
  json operator()(const ShutdownMsg&) const { return {{"type", "SHUTDOWN"}}; }
  json operator()(const ErrorMsg& m) const { return {{"type", "ERROR"}, {"reason", m.reason}}; }
};

}  // namespace

std::string message_type(const WireMessage& msg) {
  static const char* const names[] = {"HELLO",  "REQUEST_WORK", "PROPOSAL", "HEARTBEAT", "RESULT",
                                      "ACK",    "NO_WORK",      "SHUTDOWN", "ERROR"};
  return names[msg.index()];
}

std::string serialize_message(const WireMessage& msg) {
  // dump() escapes control characters, so the line never contains a raw '\n'.
  return std::visit(Writer{}, msg).dump(-1, ' ', false, json::error_handler_t::replace);
}

WireMessage parse_message(const std::string& raw) {
  std::string line = raw;
  if (!line.empty() && line.back() == '\n') line.pop_back();
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.find('\n') != std::string::npos) throw ProtocolError("embedded newline");

  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  const std::string type = get_string(j, "type");

  if (type == "HELLO") {
    return HelloMsg{get_string(j, "client_id"), get_int(field(j, "protocol_version"), "protocol_version")};
  }
  if (type == "REQUEST_WORK") return RequestWorkMsg{get_string(j, "client_id")};
  if (type == "PROPOSAL") return ProposalMsg{get_string(j, "job_id"), get_encoding(j), get_eval_config(j)};
  if (type == "HEARTBEAT") {
    HeartbeatMsg m;
    m.job_id = get_string(j, "job_id");
    if (auto it = j.find("epoch"); it != j.end()) m.epoch = get_int(*it, "epoch");
    m.current_metric = get_optional_number(j, "current_metric");
    return m;
  }
  if (type == "RESULT") {
    ResultMsg m;
    m.job_id = get_string(j, "job_id");
    m.encoding = get_encoding(j);
    m.objective = get_optional_number(j, "objective");
    if (auto it = j.find("epochs_completed"); it != j.end()) m.epochs_completed = get_int(*it, "epochs_completed");
    if (auto it = j.find("failed"); it != j.end()) {
      if (!it->is_boolean()) throw ProtocolError("field 'failed' must be a boolean");
      m.failed = it->get<bool>();
    }
    if (auto it = j.find("error"); it != j.end() && it->is_string()) m.error = it->get<std::string>();
    if (auto w = get_optional_number(j, "wall_time_s")) m.wall_time_s = *w;
    if (!m.failed && !m.objective) throw ProtocolError("RESULT without objective must set failed");
    return m;
  }
  if (type == "ACK") {
    AckMsg m{get_string(j, "job_id"), {}};
    if (auto it = j.find("warning"); it != j.end() && it->is_string()) m.warning = it->get<std::string>();
    return m;
  }
  if (type == "NO_WORK") {
    NoWorkMsg m;
    if (auto r = get_optional_number(j, "retry_after_s")) m.retry_after_s = *r;
    return m;
  }
  if (type == "SHUTDOWN") return ShutdownMsg{};
  if (type == "ERROR") {
    ErrorMsg m;
    if (auto it = j.find("reason"); it != j.end() && it->is_string()) m.reason = it->get<std::string>();
    return m;
  }
  throw ProtocolError("unknown message type '" + type + "'");
}

}  // namespace latnas
