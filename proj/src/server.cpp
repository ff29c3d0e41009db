#include "latnas/server.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <iostream>

#include "latnas/errors.hpp"
#include "net.hpp"

namespace latnas {

struct CoordinatorServer::Command {
  std::uint64_t conn = 0;
  std::optional<WireMessage> msg;  // empty: the connection went away
  std::promise<Outcome> reply;
};

CoordinatorServer::CoordinatorServer(ServerOptions options, SearchSpaceSpec space, LatencyFunction latency,
                                     FaultHook hook)
    : options_(std::move(options)),
      space_(std::move(space)),
      latency_(std::move(latency)),
      hook_(hook),
      store_(options_.checkpoint_dir, std::move(hook)) {
  store_.set_tree_provider(history_tree_provider(space_));
}

CoordinatorServer::~CoordinatorServer() {
  stop();
  wait();
}

void CoordinatorServer::start() {
  state_ = store_.open(options_.config, &warnings_);
  for (const auto& w : warnings_) std::cerr << "warning: " << w << "\n";
  listen_fd_ = net::listen_on(options_.host, options_.port, &port_);
  epoch_ = std::chrono::steady_clock::now();
  loop_thread_ = std::thread([this] { command_loop(); });
  accept_thread_ = std::thread([this] { accept_loop(); });
}

double CoordinatorServer::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
}

void CoordinatorServer::stop() {
  stopping_ = true;
  cv_.notify_all();
}

void CoordinatorServer::wait() {
  if (loop_thread_.joinable()) loop_thread_.join();
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(mutex_);
    threads.swap(conn_threads_);
  }
  for (auto& t : threads) {
    if (t.joinable()) t.join();
  }
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

std::optional<KillPoint> CoordinatorServer::crash_point() const {
  std::lock_guard lock(mutex_);
  return crash_point_;
}

ServerState CoordinatorServer::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

std::vector<std::string> CoordinatorServer::warnings() const {
  std::lock_guard lock(mutex_);
  return warnings_;
}

void CoordinatorServer::shutdown_sockets() {
  std::lock_guard lock(mutex_);
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  for (auto& [id, fd] : conn_fds_) ::shutdown(fd, SHUT_RDWR);
}

void CoordinatorServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 50);
    if (rc <= 0 || stopping_) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    std::lock_guard lock(mutex_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    const std::uint64_t id = next_conn_++;
    conn_fds_[id] = fd;
    conn_threads_.emplace_back([this, id, fd] { connection_loop(id, fd); });
  }
}

std::future<Outcome> CoordinatorServer::submit(std::uint64_t conn, std::optional<WireMessage> msg) {
  auto cmd = std::make_unique<Command>();
  cmd->conn = conn;
  cmd->msg = std::move(msg);
  auto fut = cmd->reply.get_future();
  {
    std::lock_guard lock(mutex_);
    if (stopping_) {
      cmd->reply.set_exception(std::make_exception_ptr(net::ConnectionLost("server stopping")));
    } else {
      queue_.push_back(std::move(cmd));
    }
  }
  cv_.notify_all();
  return fut;
}

void CoordinatorServer::connection_loop(std::uint64_t id, int fd) {
  net::LineSocket sock(fd);
  try {
    for (;;) {
      const std::string line = sock.read_line();
      WireMessage msg;
      try {
        msg = parse_message(line);
      } catch (const ProtocolError& e) {
        sock.write_line(serialize_message(ErrorMsg{e.what()}));
        break;
      }
      Outcome out = submit(id, std::move(msg)).get();
      if (out.reply) sock.write_line(serialize_message(*out.reply));
      if (out.close) break;
    }
  } catch (const std::exception&) {
    // Peer went away or the server is going down.
  }
  if (!stopping_) {
    try {
      submit(id, std::nullopt).wait();
    } catch (...) {
    }
  }
  std::lock_guard lock(mutex_);
  conn_fds_.erase(id);
  // The LineSocket closes the descriptor on scope exit.
}

void CoordinatorServer::command_loop() {
  const CoordinatorContext ctx{space_, latency_};
  std::map<std::uint64_t, Connection> conns;
  std::optional<double> finished_at;
  try {
    while (!stopping_) {
      std::deque<std::unique_ptr<Command>> batch;
      {
        std::unique_lock lock(mutex_);
        cv_.wait_for(lock, std::chrono::duration<double>(options_.tick_s),
                     [this] { return stopping_ || !queue_.empty(); });
        batch.swap(queue_);
      }
      const double t = now();
      {
        auto expired = expire_jobs(state_, t);
        for (const auto& rec : expired) {
          store_.append(state_, rec);
          store_.note_change(state_);
        }
      }
      for (auto& cmd : batch) {
        if (!cmd->msg) {
          conns.erase(cmd->conn);
          cmd->reply.set_value({});
          continue;
        }
        Outcome out;
        try {
          std::lock_guard lock(mutex_);  // state() readers see whole transitions
          out = handle_message(state_, ctx, conns[cmd->conn], *cmd->msg, t);
        } catch (const SimulatedCrash&) {
          throw;
        } catch (const std::exception& e) {
          std::cerr << "error: " << e.what() << "\n";
          out = Outcome{ErrorMsg{std::string("server error: ") + e.what()}, true, {}};
        }
        for (const auto& rec : out.log) store_.append(state_, rec);
        const bool proposed = out.reply && std::holds_alternative<ProposalMsg>(*out.reply);
        if (proposed && hook_) hook_(KillPoint::AfterProposal);
        if (proposed || !out.log.empty()) store_.note_change(state_);
        cmd->reply.set_value(std::move(out));
      }
      if (state_.finished()) {
        if (!finished_at) {
          store_.snapshot(state_);
          finished_at = t;
        } else if (t - *finished_at >= options_.linger_after_finish_s || conns.empty()) {
          break;
        }
      }
    }
  } catch (const SimulatedCrash& crash) {
    std::lock_guard lock(mutex_);
    crash_point_ = crash.point;
    crashed_ = true;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    crashed_ = true;
  }
  stopping_ = true;
  // Fail whatever is still queued so connection threads can exit.
  {
    std::lock_guard lock(mutex_);
    for (auto& cmd : queue_) {
      cmd->reply.set_exception(std::make_exception_ptr(net::ConnectionLost("server stopped")));
    }
    queue_.clear();
  }
  shutdown_sockets();
}

}  // namespace latnas
