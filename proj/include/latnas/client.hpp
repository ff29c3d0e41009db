#pragma once

// Protocol loop for evaluation clients: REQUEST_WORK, evaluate with
// heartbeats, RESULT, until the server says SHUTDOWN.

#include <functional>
#include <string>
#include <vector>

#include "latnas/evaluators.hpp"
#include "latnas/wire.hpp"

namespace latnas {

struct ClientOptions {
  std::string host = "127.0.0.1";
  int port = 0;
  std::string client_id = "client";
  double heartbeat_interval_s = 30.0;  // the server's eval_config may shorten it
  double backoff_initial_s = 0.05;
  double backoff_max_s = 2.0;
  double give_up_after_s = 60.0;  // without a successful connection
  double max_no_work_sleep_s = 5.0;
  /// Test hook: returning true drops the connection right after a PROPOSAL
  /// and ends the loop without a RESULT, as if the process had died.
  std::function<bool(const ProposalMsg&)> crash_after_proposal;
};

struct ClientReport {
  std::size_t completed = 0;  // RESULTs acknowledged without warning
  std::size_t failed = 0;     // evaluations that threw
  std::size_t discarded = 0;  // RESULTs acknowledged with a warning
  std::size_t reconnects = 0;
  std::vector<std::string> acked_job_ids;
  bool shutdown = false;  // ended on SHUTDOWN
  bool crashed = false;   // ended through crash_after_proposal
};

using EvaluateFn = std::function<double(const NetworkEncoding&)>;

/// Throws ProtocolError when the server refuses the session and Error when
/// it stays unreachable for give_up_after_s.
ClientReport run_client(const ClientOptions& options, const EvaluateFn& evaluate);

/// `concurrency` independent protocol loops sharing one evaluator; client ids
/// are "<client_id>-<i>".
std::vector<ClientReport> in_process_client(const ClientOptions& options, const Evaluator& evaluator,
                                            int concurrency = 1);

}  // namespace latnas
