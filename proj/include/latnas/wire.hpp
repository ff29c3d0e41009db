#pragma once

// Line-delimited JSON messages exchanged between the coordinator and its
// clients. One message per line, UTF-8, '\n'-terminated, no embedded newlines.
// Unknown fields are ignored on parse.

#include <optional>
#include <string>
#include <variant>

#include "latnas/search_space.hpp"

namespace latnas {

inline constexpr int kProtocolVersion = 1;

struct HelloMsg {
  std::string client_id;
  int protocol_version = kProtocolVersion;
  friend bool operator==(const HelloMsg&, const HelloMsg&) = default;
};

struct RequestWorkMsg {
  std::string client_id;
  friend bool operator==(const RequestWorkMsg&, const RequestWorkMsg&) = default;
};

/// Settings the server hands out with each job.
struct EvalConfig {
  std::string evaluator = "surrogate";
  std::optional<std::uint64_t> noise_seed;
  double heartbeat_interval_s = 30.0;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct ProposalMsg {
  std::string job_id;
  NetworkEncoding encoding;
  EvalConfig eval_config;
  friend bool operator==(const ProposalMsg&, const ProposalMsg&) = default;
};

struct HeartbeatMsg {
  std::string job_id;
  int epoch = 0;
  std::optional<double> current_metric;
  friend bool operator==(const HeartbeatMsg&, const HeartbeatMsg&) = default;
};

struct ResultMsg {
  std::string job_id;
  NetworkEncoding encoding;
  std::optional<double> objective;  // absent when failed
  int epochs_completed = 0;
  bool failed = false;
  std::string error;
  double wall_time_s = 0.0;
  friend bool operator==(const ResultMsg&, const ResultMsg&) = default;
};

struct AckMsg {
  std::string job_id;
  std::string warning;  // empty when the result was recorded
  friend bool operator==(const AckMsg&, const AckMsg&) = default;
};

struct NoWorkMsg {
  double retry_after_s = 1.0;
  friend bool operator==(const NoWorkMsg&, const NoWorkMsg&) = default;
};

struct ShutdownMsg {
  friend bool operator==(const ShutdownMsg&, const ShutdownMsg&) = default;
};

struct ErrorMsg {
  std::string reason;
  friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

using WireMessage = std::variant<HelloMsg, RequestWorkMsg, ProposalMsg, HeartbeatMsg, ResultMsg, AckMsg,
                                 NoWorkMsg, ShutdownMsg, ErrorMsg>;

/// "HELLO", "REQUEST_WORK", ...
std::string message_type(const WireMessage& msg);

/// Throws ProtocolError on malformed JSON, an unknown type or a missing or
/// mistyped field. A trailing '\n' (and '\r') is tolerated.
WireMessage parse_message(const std::string& line);

/// Single line without the terminating newline.
std::string serialize_message(const WireMessage& msg);

}  // namespace latnas
