#pragma once

// Socket front end of the coordinator. Connection threads only parse and
// serialize; a single command loop owns the ServerState and the checkpoint.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "latnas/coordinator.hpp"

namespace latnas {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::filesystem::path checkpoint_dir;
  CoordinatorConfig config;
  double tick_s = 0.05;             // deadline check interval
  double linger_after_finish_s = 2.0;  // keep answering SHUTDOWN this long
};

class CoordinatorServer {
 public:
  CoordinatorServer(ServerOptions options, SearchSpaceSpec space, LatencyFunction latency, FaultHook hook = {});
  ~CoordinatorServer();
  CoordinatorServer(const CoordinatorServer&) = delete;
  CoordinatorServer& operator=(const CoordinatorServer&) = delete;

  /// Restores the checkpoint and binds. Throws Error (bind failure,
  /// unwritable or mismatched checkpoint directory).
  void start();
  int port() const noexcept { return port_; }

  /// Blocks until the search finished (and the linger period passed), stop()
  /// was called, or a simulated crash fired.
  void wait();
  void stop();

  bool crashed() const noexcept { return crashed_.load(); }
  std::optional<KillPoint> crash_point() const;
  /// Consistent once wait() has returned.
  ServerState state() const;
  std::vector<std::string> warnings() const;

 private:
  struct Command;
  void accept_loop();
  void connection_loop(std::uint64_t id, int fd);
  void command_loop();
  std::future<Outcome> submit(std::uint64_t conn, std::optional<WireMessage> msg);
  void shutdown_sockets();
  double now() const;

  ServerOptions options_;
  SearchSpaceSpec space_;
  LatencyFunction latency_;
  FaultHook hook_;
  CheckpointStore store_;
  ServerState state_;
  std::vector<std::string> warnings_;

  int listen_fd_ = -1;
  int port_ = 0;
  std::chrono::steady_clock::time_point epoch_;

  mutable std::mutex mutex_;  // guards the queue, fds, crash info and state snapshots
  std::condition_variable cv_;
  std::deque<std::unique_ptr<Command>> queue_;
  std::map<std::uint64_t, int> conn_fds_;
  std::vector<std::thread> conn_threads_;
  std::uint64_t next_conn_ = 1;
  std::optional<KillPoint> crash_point_;

  std::atomic<bool> stopping_{false};
  std::atomic<bool> crashed_{false};
  std::atomic<bool> done_{false};
  std::thread accept_thread_;
  std::thread loop_thread_;
  std::mutex done_mutex_;
  std::condition_variable done_cv_;
};

}  // namespace latnas
