#pragma once

// Coordinator state machine and its durable checkpoint. handle_message() is a
// pure transition over ServerState; the caller carries out the returned
// effects (log appends) before it sends the reply.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "latnas/latency_model.hpp"
#include "latnas/optimizer.hpp"
#include "latnas/search_space.hpp"
#include "latnas/wire.hpp"

namespace latnas {

enum class JobState { Proposed, Assigned, Running, Done, Failed, TimedOut };

std::string to_string(JobState s);
JobState job_state_from_string(const std::string& s);

struct Job {
  std::string job_id;
  NetworkEncoding encoding;
  double latency_us = 0.0;
  JobState state = JobState::Proposed;
  std::string assigned_client;
  double deadline = 0.0;
  std::optional<double> objective;  // set iff Done
  int attempts = 0;                 // number of assignments so far
  bool permanent_failure = false;

  bool terminal() const noexcept { return state == JobState::Done || permanent_failure; }
  friend bool operator==(const Job&, const Job&) = default;
};

struct CoordinatorConfig {
  LatencyBounds bounds{0.0, 2.0};
  std::size_t budget = 100;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  EvalConfig eval;
  int missed_beats = 3;  // deadline = missed_beats * eval.heartbeat_interval_s
  int max_attempts = 3;
  double retry_after_s = 1.0;
  std::size_t snapshot_every = 10;  // state changes between snapshots
  std::size_t snapshots_kept = 3;

  double deadline_s() const { return missed_beats * eval.heartbeat_interval_s; }
  friend bool operator==(const CoordinatorConfig&, const CoordinatorConfig&) = default;
};

/// One line of results.log.
struct LogRecord {
  enum class Kind { Result, Failure };
  Kind kind = Kind::Result;
  std::string job_id;
  std::string client_id;
  NetworkEncoding encoding;
  double latency_us = 0.0;
  std::optional<double> objective;
  int epochs_completed = 0;
  double wall_time_s = 0.0;
  int attempts = 0;
  std::string reason;

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

struct ServerState {
  CoordinatorConfig config;
  std::uint64_t incarnation = 1;
  std::uint64_t next_job = 1;
  std::vector<Job> jobs;                 // creation order
  std::vector<CandidateRecord> history;  // completed results in log order
  std::uint64_t log_seq = 0;             // last sequence number applied
  bool exhausted = false;                // optimizer found no new feasible encoding
  std::string tree_json;                 // partition tree as stored in the last snapshot (informational)

  std::unordered_map<std::string, std::size_t> index;  // job_id -> position in jobs

  Job* find(const std::string& job_id);
  const Job* find(const std::string& job_id) const;
  void add_job(Job job);
  void reindex();

  std::size_t done() const { return history.size(); }
  std::size_t permanent_failures() const;
  std::size_t active() const;  // non-terminal jobs
  bool finished() const;       // nothing left to assign or wait for

  friend bool operator==(const ServerState& a, const ServerState& b) {
    return a.config == b.config && a.incarnation == b.incarnation && a.next_job == b.next_job &&
           a.jobs == b.jobs && a.history == b.history && a.log_seq == b.log_seq && a.exhausted == b.exhausted;
  }
};

/// What handle_message needs besides the state: the space and the latency
/// function used to keep proposals inside the bucket.
struct CoordinatorContext {
  const SearchSpaceSpec& space;
  const LatencyFunction& latency;
};

/// Per-connection identity established by HELLO.
struct Connection {
  std::string client_id;
  bool greeted = false;
};

struct Outcome {
  std::optional<WireMessage> reply;
  bool close = false;
  std::vector<LogRecord> log;  // append durably before sending the reply
};

Outcome handle_message(ServerState& state, const CoordinatorContext& ctx, Connection& conn,
                       const WireMessage& msg, double now);

/// Moves overdue ASSIGNED/RUNNING jobs to TIMED_OUT, or to permanent failure
/// once the attempt limit is reached. Returns the failure records to log.
std::vector<LogRecord> expire_jobs(ServerState& state, double now);

/// Applies a logged record to the state; used by restore and by tests that
/// replay logs. Records for DONE jobs are ignored.
void apply_record(ServerState& state, const LogRecord& record);

std::string serialize_record(const LogRecord& record);
LogRecord parse_record(const std::string& json_text);

/// Compact JSON of a partition tree: classifier, visits, mean and sample
/// indices per node.
std::string tree_to_json(const SearchTreeNode& root);

/// Snapshot body (JSON) and its inverse.
std::string serialize_state(const ServerState& state);
ServerState parse_state(const std::string& json_text);

/// Tree provider for CheckpointStore: the tree propose() would build now.
std::function<std::string(const ServerState&)> history_tree_provider(const SearchSpaceSpec& space);

/// Points at which a simulated crash may be injected.
enum class KillPoint {
  BeforeLogAppend,
  MidLogAppend,  // half of the line reaches the file
  AfterLogAppend,  // durable but not yet acknowledged
  BeforeSnapshotRename,
  AfterSnapshotRename,
  AfterProposal,  // job created, reply not sent
};

std::string to_string(KillPoint k);

struct SimulatedCrash : std::runtime_error {
  explicit SimulatedCrash(KillPoint k) : std::runtime_error("simulated crash at " + to_string(k)), point(k) {}
  KillPoint point;
};

using FaultHook = std::function<void(KillPoint)>;

/// Checkpoint directory: results.log (append-only, `seq<TAB>crc32<TAB>json`),
/// snapshot.<seq> (crc32 line + JSON, written by rename) and manifest.
class CheckpointStore {
 public:
  explicit CheckpointStore(std::filesystem::path dir, FaultHook hook = {});

  const std::filesystem::path& dir() const noexcept { return dir_; }

  /// Creates the directory if needed and checks it is writable. Throws Error.
  void prepare();

  bool has_state() const;

  /// Fresh state, or the restored state with the incarnation bumped and the
  /// manifest rewritten. In-flight jobs come back as PROPOSED. Throws Error
  /// if an existing checkpoint was written for a different configuration.
  ServerState open(const CoordinatorConfig& config, std::vector<std::string>* warnings = nullptr);

  /// Appends with fsync; assigns the record's sequence number.
  void append(ServerState& state, const LogRecord& record);
  void snapshot(const ServerState& state);

  /// Called after every state change; snapshots every config.snapshot_every changes.
  void note_change(const ServerState& state);

  void set_fault_hook(FaultHook hook) { hook_ = std::move(hook); }
  /// Supplies the tree JSON stored with each snapshot.
  void set_tree_provider(std::function<std::string(const ServerState&)> f) { tree_provider_ = std::move(f); }

 private:
  void fire(KillPoint k) const {
    if (hook_) hook_(k);
  }

  std::filesystem::path dir_;
  FaultHook hook_;
  std::function<std::string(const ServerState&)> tree_provider_;
  std::size_t changes_ = 0;
};

/// Restores without touching the manifest (read-only inspection).
ServerState restore_state(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

/// Every valid record of a results.log, in order; stops at the first bad line.
std::vector<LogRecord> read_result_log(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

std::string config_to_json(const CoordinatorConfig& c);
CoordinatorConfig config_from_json(const std::string& text);

/// Deterministic single-process search: `clients` virtual clients take turns
/// on the coordinator state machine with a logical clock. Writes the
/// checkpoint directory and returns the final state.
ServerState run_simulated_search(const CoordinatorConfig& config, const SearchSpaceSpec& space,
                                 const LatencyFunction& latency,
                                 const std::function<double(const NetworkEncoding&)>& evaluate,
                                 const std::filesystem::path& checkpoint_dir, int clients = 4);

}  // namespace latnas
