#include "latnas/client.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <thread>

#include "latnas/errors.hpp"
#include "net.hpp"

namespace latnas {

namespace {

using Clock = std::chrono::steady_clock;

void sleep_for(double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); }

WireMessage exchange(net::LineSocket& sock, const WireMessage& msg) {
  sock.write_line(serialize_message(msg));
  WireMessage reply = parse_message(sock.read_line());
  if (const auto* err = std::get_if<ErrorMsg>(&reply)) throw ProtocolError("server refused: " + err->reason);
  return reply;
}

template <class T>
const T& expect(const WireMessage& m, const char* what) {
  if (const auto* v = std::get_if<T>(&m)) return *v;
  throw ProtocolError(std::string("expected ") + what + ", got " + message_type(m));
}

}  // namespace

ClientReport run_client(const ClientOptions& opt, const EvaluateFn& evaluate) {
  ClientReport report;
  std::optional<ResultMsg> pending;  // sent but not yet acknowledged
  double backoff = opt.backoff_initial_s;
  auto last_contact = Clock::now();
  bool first = true;

  auto deliver = [&](net::LineSocket& sock) {
    const AckMsg& ack = expect<AckMsg>(exchange(sock, *pending), "ACK");
    if (ack.warning.empty()) {
      ++report.completed;
      report.acked_job_ids.push_back(pending->job_id);
    } else {
      ++report.discarded;
    }
    pending.reset();
  };

  for (;;) {
    net::LineSocket sock;
    try {
      sock = net::connect_to(opt.host, opt.port);
    } catch (const net::ConnectionLost&) {
      if (std::chrono::duration<double>(Clock::now() - last_contact).count() > opt.give_up_after_s) {
        throw Error("server " + opt.host + ":" + std::to_string(opt.port) + " unreachable");
      }
      sleep_for(backoff);
      backoff = std::min(backoff * 2.0, opt.backoff_max_s);
      continue;
    }
    if (!first) ++report.reconnects;
    first = false;
    backoff = opt.backoff_initial_s;
    last_contact = Clock::now();

    try {
      expect<HelloMsg>(exchange(sock, HelloMsg{opt.client_id, kProtocolVersion}), "HELLO");
      if (pending) deliver(sock);
      for (;;) {
        last_contact = Clock::now();
        WireMessage reply = exchange(sock, RequestWorkMsg{opt.client_id});
        if (std::holds_alternative<ShutdownMsg>(reply)) {
          report.shutdown = true;
          return report;
        }
        if (const auto* nw = std::get_if<NoWorkMsg>(&reply)) {
          sleep_for(std::clamp(nw->retry_after_s, 0.0, opt.max_no_work_sleep_s));
          continue;
        }
        const ProposalMsg& job = expect<ProposalMsg>(reply, "PROPOSAL");
        if (opt.crash_after_proposal && opt.crash_after_proposal(job)) {
          sock.close();
          report.crashed = true;
          return report;
        }

        const double interval = std::max(1e-3, std::min(opt.heartbeat_interval_s, job.eval_config.heartbeat_interval_s));
        const auto started = Clock::now();
        auto fut = std::async(std::launch::async, [&evaluate, enc = job.encoding] { return evaluate(enc); });
        int epoch = 0;
        bool link_ok = true;
        while (fut.wait_for(std::chrono::duration<double>(interval)) != std::future_status::ready) {
          if (!link_ok) continue;
          try {
            expect<AckMsg>(exchange(sock, HeartbeatMsg{job.job_id, ++epoch, std::nullopt}), "ACK");
          } catch (const net::ConnectionLost&) {
            link_ok = false;  // keep evaluating; the result is delivered after reconnecting
          }
        }
        ResultMsg result;
        result.job_id = job.job_id;
        result.encoding = job.encoding;
        result.wall_time_s = std::chrono::duration<double>(Clock::now() - started).count();
        try {
          result.objective = fut.get();
          result.epochs_completed = 1;
        } catch (const std::exception& e) {
          result.failed = true;
          result.error = e.what();
          ++report.failed;
        }
        pending = std::move(result);
        if (!link_ok) throw net::ConnectionLost("lost during evaluation");
        deliver(sock);
      }
    } catch (const net::ConnectionLost&) {
      sleep_for(backoff);
      backoff = std::min(backoff * 2.0, opt.backoff_max_s);
    }
  }
}

std::vector<ClientReport> in_process_client(const ClientOptions& options, const Evaluator& evaluator,
                                            int concurrency) {
  std::vector<ClientReport> reports(static_cast<std::size_t>(std::max(concurrency, 1)));
  std::vector<std::exception_ptr> errors(reports.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    threads.emplace_back([&, i] {
      ClientOptions o = options;
      o.client_id = options.client_id + "-" + std::to_string(i);
      try {
        reports[i] = run_client(o, [&evaluator](const NetworkEncoding& e) { return evaluator.evaluate(e); });
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return reports;
}

}  // namespace latnas
