#include "latnas/coordinator.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "latnas/errors.hpp"

namespace latnas {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string to_string(JobState s) {
  switch (s) {
    case JobState::Proposed: return "PROPOSED";
    case JobState::Assigned: return "ASSIGNED";
    case JobState::Running: return "RUNNING";
    case JobState::Done: return "DONE";
    case JobState::Failed: return "FAILED";
    case JobState::TimedOut: return "TIMED_OUT";
  }
  return "?";
}

JobState job_state_from_string(const std::string& s) {
  for (auto st : {JobState::Proposed, JobState::Assigned, JobState::Running, JobState::Done, JobState::Failed,
                  JobState::TimedOut}) {
    if (to_string(st) == s) return st;
  }
  throw Error("unknown job state '" + s + "'");
}

std::string to_string(KillPoint k) {
  switch (k) {
    case KillPoint::BeforeLogAppend: return "before-log-append";
    case KillPoint::MidLogAppend: return "mid-log-append";
    case KillPoint::AfterLogAppend: return "after-log-append";
    case KillPoint::BeforeSnapshotRename: return "before-snapshot-rename";
    case KillPoint::AfterSnapshotRename: return "after-snapshot-rename";
    case KillPoint::AfterProposal: return "after-proposal";
  }
  return "?";
}

// ---- ServerState ----

Job* ServerState::find(const std::string& job_id) {
  auto it = index.find(job_id);
  return it == index.end() ? nullptr : &jobs[it->second];
}

const Job* ServerState::find(const std::string& job_id) const {
  auto it = index.find(job_id);
  return it == index.end() ? nullptr : &jobs[it->second];
}

void ServerState::add_job(Job job) {
  if (index.count(job.job_id)) throw Error("duplicate job id " + job.job_id);
  index.emplace(job.job_id, jobs.size());
  jobs.push_back(std::move(job));
}

void ServerState::reindex() {
  index.clear();
  for (std::size_t i = 0; i < jobs.size(); ++i) index.emplace(jobs[i].job_id, i);
}

std::size_t ServerState::permanent_failures() const {
  return static_cast<std::size_t>(
      std::count_if(jobs.begin(), jobs.end(), [](const Job& j) { return j.state != JobState::Done && j.permanent_failure; }));
}

std::size_t ServerState::active() const {
  return static_cast<std::size_t>(std::count_if(jobs.begin(), jobs.end(), [](const Job& j) { return !j.terminal(); }));
}

bool ServerState::finished() const {
  return active() == 0 && (exhausted || done() + permanent_failures() >= config.budget);
}

// ---- state machine ----

namespace {

bool in_flight(const Job& j) { return j.state == JobState::Assigned || j.state == JobState::Running; }

bool assignable(const Job& j) {
  return !j.terminal() && (j.state == JobState::Proposed || j.state == JobState::TimedOut || j.state == JobState::Failed);
}

LogRecord failure_record(const Job& job, const std::string& reason) {
  LogRecord r;
  r.kind = LogRecord::Kind::Failure;
  r.job_id = job.job_id;
  r.client_id = job.assigned_client;
  r.encoding = job.encoding;
  r.latency_us = job.latency_us;
  r.attempts = job.attempts;
  r.reason = reason;
  return r;
}

WireMessage assign(ServerState& state, Job& job, const Connection& conn, double now) {
  job.state = JobState::Assigned;
  job.assigned_client = conn.client_id;
  job.attempts += 1;
  job.deadline = now + state.config.deadline_s();
  return ProposalMsg{job.job_id, job.encoding, state.config.eval};
}

Outcome on_request_work(ServerState& state, const CoordinatorContext& ctx, const Connection& conn, double now) {
  Outcome out;
  for (auto& job : state.jobs) {
    if (assignable(job)) {
      out.reply = assign(state, job, conn, now);
      return out;
    }
  }
  const auto& cfg = state.config;
  if (!state.exhausted && state.done() + state.active() + state.permanent_failures() < cfg.budget) {
    std::vector<NetworkEncoding> exclude;
    for (const auto& j : state.jobs) {
      if (!j.terminal()) exclude.push_back(j.encoding);
    }
    try {
      ProposalContext pctx{ctx.space, cfg.bounds, ctx.latency, cfg.optimizer};
      Proposal p = propose_detailed(state.history, exclude, pctx, cfg.seed);
      Job job;
      job.job_id = std::to_string(state.incarnation) + "-" + std::to_string(state.next_job++);
      job.encoding = std::move(p.encoding);
      job.latency_us = p.latency_us;
      state.add_job(std::move(job));
      out.reply = assign(state, state.jobs.back(), conn, now);
      return out;
    } catch (const ExhaustedRegion&) {
      state.exhausted = true;
    }
  }
  if (state.active() == 0) {
    out.reply = ShutdownMsg{};
  } else {
    out.reply = NoWorkMsg{cfg.retry_after_s};
  }
  return out;
}

Outcome on_heartbeat(ServerState& state, const Connection& conn, const HeartbeatMsg& m, double now) {
  Outcome out;
  Job* job = state.find(m.job_id);
  if (!job || !in_flight(*job) || job->assigned_client != conn.client_id) {
    out.reply = AckMsg{m.job_id, "stale heartbeat"};
    return out;
  }
  job->state = JobState::Running;
  job->deadline = now + state.config.deadline_s();
  out.reply = AckMsg{m.job_id, {}};
  return out;
}

Outcome on_result(ServerState& state, const Connection& conn, const ResultMsg& m) {
  Outcome out;
  Job* job = state.find(m.job_id);
  if (!job) {
    out.reply = AckMsg{m.job_id, "unknown job_id; result discarded"};
    return out;
  }
  if (job->state == JobState::Done) {
    out.reply = AckMsg{m.job_id, "duplicate result; discarded"};
    return out;
  }
  if (m.encoding != job->encoding) {
    out.reply = AckMsg{m.job_id, "encoding does not match the job; result discarded"};
    return out;
  }
  if (m.failed) {
    if (job->permanent_failure || !in_flight(*job) || job->assigned_client != conn.client_id) {
      out.reply = AckMsg{m.job_id, "stale failure report; ignored"};
      return out;
    }
    if (job->attempts >= state.config.max_attempts) {
      LogRecord r = failure_record(*job, m.error.empty() ? "evaluation failed" : m.error);
      apply_record(state, r);
      out.log.push_back(std::move(r));
      out.reply = AckMsg{m.job_id, "attempt limit reached; job failed permanently"};
    } else {
      job->state = JobState::Failed;
      job->assigned_client.clear();
      out.reply = AckMsg{m.job_id, {}};
    }
    return out;
  }
  LogRecord r;
  r.kind = LogRecord::Kind::Result;
  r.job_id = job->job_id;
  r.client_id = conn.client_id;
  r.encoding = job->encoding;
  r.latency_us = job->latency_us;
  r.objective = m.objective;
  r.epochs_completed = m.epochs_completed;
  r.wall_time_s = m.wall_time_s;
  apply_record(state, r);
  out.log.push_back(std::move(r));
  out.reply = AckMsg{m.job_id, {}};
  return out;
}

Outcome error_out(const std::string& reason) {
  Outcome out;
  out.reply = ErrorMsg{reason};
  out.close = true;
  return out;
}

}  // namespace

Outcome handle_message(ServerState& state, const CoordinatorContext& ctx, Connection& conn, const WireMessage& msg,
                       double now) {
  if (const auto* hello = std::get_if<HelloMsg>(&msg)) {
    if (hello->protocol_version != kProtocolVersion) {
      return error_out("protocol_version " + std::to_string(hello->protocol_version) + " not supported; server speaks " +
                       std::to_string(kProtocolVersion));
    }
    if (hello->client_id.empty()) return error_out("empty client_id");
    conn.client_id = hello->client_id;
    conn.greeted = true;
    Outcome out;
    out.reply = HelloMsg{hello->client_id, kProtocolVersion};
    return out;
  }
  if (!conn.greeted) return error_out("HELLO required before " + message_type(msg));

  if (std::holds_alternative<RequestWorkMsg>(msg)) return on_request_work(state, ctx, conn, now);
  if (const auto* hb = std::get_if<HeartbeatMsg>(&msg)) return on_heartbeat(state, conn, *hb, now);
  if (const auto* res = std::get_if<ResultMsg>(&msg)) return on_result(state, conn, *res);
  return error_out("unexpected " + message_type(msg) + " from a client");
}

std::vector<LogRecord> expire_jobs(ServerState& state, double now) {
  std::vector<LogRecord> out;
  for (auto& job : state.jobs) {
    if (!in_flight(job) || job.deadline >= now) continue;
    if (job.attempts >= state.config.max_attempts) {
      LogRecord r = failure_record(job, "heartbeat deadline missed");
      apply_record(state, r);
      out.push_back(std::move(r));
    } else {
      job.state = JobState::TimedOut;
      job.assigned_client.clear();
    }
  }
  return out;
}

void apply_record(ServerState& state, const LogRecord& record) {
  Job* job = state.find(record.job_id);
  if (!job) {
    Job j;
    j.job_id = record.job_id;
    j.encoding = record.encoding;
    j.latency_us = record.latency_us;
    j.attempts = record.attempts;
    state.add_job(std::move(j));
    job = &state.jobs.back();
  }
  if (job->state == JobState::Done) return;
  if (record.kind == LogRecord::Kind::Failure) {
    job->state = JobState::Failed;
    job->permanent_failure = true;
    job->attempts = std::max(job->attempts, record.attempts);
    job->assigned_client.clear();
    return;
  }
  job->state = JobState::Done;
  job->permanent_failure = false;
  job->objective = record.objective;
  job->assigned_client = record.client_id;
  CandidateRecord c;
  c.encoding = record.encoding;
  c.estimated_latency_us = record.latency_us;
  c.objective = record.objective;
  c.meta = EvaluationMeta{record.job_id, record.client_id, record.wall_time_s, record.epochs_completed};
  state.history.push_back(std::move(c));
}

// ---- serialization ----

namespace {

json encoding_json(const NetworkEncoding& e) { return e.digits; }

NetworkEncoding encoding_from(const json& j) { return NetworkEncoding(j.get<std::vector<int>>()); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json config_json(const CoordinatorConfig& c) {
  const auto& o = c.optimizer;
  return {
      {"bounds_ms", {c.bounds.lower_ms, c.bounds.upper_ms}},
      {"budget", c.budget},
      {"seed", c.seed},
      {"optimizer",
       {{"cp_factor", o.cp_factor},
        {"min_samples", o.min_samples},
        {"objective_weight", o.objective_weight},
        {"max_tree_depth", o.max_tree_depth},
        {"initial_samples", o.initial_samples},
        {"pool_size", o.pool_size},
        {"rejection_budget", o.rejection_budget},
        {"local_pool_size", o.local_pool_size},
        {"local_parents", o.local_parents},
        {"refine_steps", o.refine_steps},
        {"gp", {{"length_scales", o.gp.length_scales}, {"noise", o.gp.noise}, {"jitter", o.gp.jitter}}}}},
      {"eval",
       {{"evaluator", c.eval.evaluator},
        {"noise_seed", c.eval.noise_seed ? json(*c.eval.noise_seed) : json(nullptr)},
        {"heartbeat_interval_s", c.eval.heartbeat_interval_s}}},
      {"missed_beats", c.missed_beats},
      {"max_attempts", c.max_attempts},
      {"retry_after_s", c.retry_after_s},
      {"snapshot_every", c.snapshot_every},
      {"snapshots_kept", c.snapshots_kept},
  };
}

CoordinatorConfig config_from(const json& j) {
  CoordinatorConfig c;
  c.bounds.lower_ms = j.at("bounds_ms").at(0).get<double>();
  c.bounds.upper_ms = j.at("bounds_ms").at(1).get<double>();
  c.budget = j.at("budget").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& o = j.at("optimizer");
  c.optimizer.cp_factor = o.at("cp_factor").get<double>();
  c.optimizer.min_samples = o.at("min_samples").get<std::size_t>();
  c.optimizer.objective_weight = o.at("objective_weight").get<double>();
  c.optimizer.max_tree_depth = o.at("max_tree_depth").get<int>();
  c.optimizer.initial_samples = o.at("initial_samples").get<std::size_t>();
  c.optimizer.pool_size = o.at("pool_size").get<std::size_t>();
  c.optimizer.rejection_budget = o.at("rejection_budget").get<std::size_t>();
  c.optimizer.local_pool_size = o.at("local_pool_size").get<std::size_t>();
  c.optimizer.local_parents = o.at("local_parents").get<std::size_t>();
  c.optimizer.refine_steps = o.at("refine_steps").get<int>();
  c.optimizer.gp.length_scales = o.at("gp").at("length_scales").get<std::vector<double>>();
  c.optimizer.gp.noise = o.at("gp").at("noise").get<double>();
  c.optimizer.gp.jitter = o.at("gp").at("jitter").get<std::vector<double>>();
  const json& e = j.at("eval");
  c.eval.evaluator = e.at("evaluator").get<std::string>();
  if (!e.at("noise_seed").is_null()) c.eval.noise_seed = e.at("noise_seed").get<std::uint64_t>();
  c.eval.heartbeat_interval_s = e.at("heartbeat_interval_s").get<double>();
  c.missed_beats = j.at("missed_beats").get<int>();
  c.max_attempts = j.at("max_attempts").get<int>();
  c.retry_after_s = j.at("retry_after_s").get<double>();
  c.snapshot_every = j.at("snapshot_every").get<std::size_t>();
  c.snapshots_kept = j.at("snapshots_kept").get<std::size_t>();
  return c;
}

/// Fields that define the search; a checkpoint written under different values is refused.
json identity_json(const CoordinatorConfig& c) {
  json j = config_json(c);
  json id;
  for (const char* key : {"bounds_ms", "budget", "seed", "optimizer"}) id[key] = j[key];
  id["evaluator"] = j["eval"]["evaluator"];
  id["noise_seed"] = j["eval"]["noise_seed"];
  return id;
}

json record_json(const LogRecord& r) {
  json j;
  j["type"] = r.kind == LogRecord::Kind::Result ? "result" : "failure";
  j["job_id"] = r.job_id;
  j["client_id"] = r.client_id;
  j["encoding"] = encoding_json(r.encoding);
  j["latency_us"] = r.latency_us;
  if (r.kind == LogRecord::Kind::Result) {
    j["objective"] = optional_json(r.objective);
    j["epochs_completed"] = r.epochs_completed;
    j["wall_time_s"] = r.wall_time_s;
  } else {
    j["attempts"] = r.attempts;
    j["reason"] = r.reason;
  }
  return j;
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::uint32_t crc_of(const std::string& s) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void fsync_dir(const fs::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

void write_file_atomic(const fs::path& path, const std::string& content, const std::function<void()>& before_rename) {
  fs::path tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error("cannot write " + tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, content.data(), content.size());
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::fsync(fd);
  ::close(fd);
  if (before_rename) before_rename();
  fs::rename(tmp, path);
  fsync_dir(path.parent_path());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct LogScan {
  std::vector<std::pair<std::uint64_t, LogRecord>> records;
  std::uintmax_t valid_bytes = 0;
  bool truncated = false;
};

LogScan scan_log(const fs::path& path, std::vector<std::string>* warnings) {
  LogScan scan;
  if (!fs::exists(path)) return scan;
  const std::string text = read_file(path);
  std::size_t pos = 0;
  std::uint64_t expect = 1;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string reason;
    if (nl == std::string::npos) {
      reason = "incomplete final line";
    } else {
      const std::string line = text.substr(pos, nl - pos);
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) {
        reason = "malformed line";
      } else {
        const std::string seq_text = line.substr(0, t1);
        const std::string crc_text = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string body = line.substr(t2 + 1);
        if (seq_text != std::to_string(expect)) {
          reason = "sequence number " + seq_text + " where " + std::to_string(expect) + " was expected";
        } else if (crc_text != hex32(crc_of(body))) {
          reason = "CRC mismatch";
        } else {
          try {
            scan.records.emplace_back(expect, parse_record(body));
          } catch (const std::exception& e) {
            reason = std::string("unparsable record: ") + e.what();
          }
        }
      }
    }
    if (!reason.empty()) {
      scan.truncated = true;
      if (warnings) {
        warnings->push_back(path.filename().string() + ": " + reason + " at seq " + std::to_string(expect) +
                            "; truncating");
      }
      break;
    }
    ++expect;
    pos = nl + 1;
    scan.valid_bytes = pos;
  }
  return scan;
}

std::vector<std::pair<std::uint64_t, fs::path>> list_snapshots(const fs::path& dir) {
  std::vector<std::pair<std::uint64_t, fs::path>> out;
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("snapshot.", 0) != 0) continue;
    const std::string suffix = name.substr(9);
    if (suffix.empty() || !std::all_of(suffix.begin(), suffix.end(), ::isdigit)) continue;
    out.emplace_back(std::stoull(suffix), entry.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return out;
}

ServerState load_snapshot(const fs::path& path) {
  const std::string text = read_file(path);
  const auto nl = text.find('\n');
  if (nl == std::string::npos) throw CorruptSnapshot(path.string() + ": missing checksum line");
  const std::string body = text.substr(nl + 1);
  if (text.substr(0, nl) != hex32(crc_of(body))) throw CorruptSnapshot(path.string() + ": checksum mismatch");
  try {
    return parse_state(body);
  } catch (const std::exception& e) {
    throw CorruptSnapshot(path.string() + ": " + e.what());
  }
}

ServerState restore_impl(const fs::path& dir, std::vector<std::string>* warnings, bool repair) {
  ServerState state;
  bool have_snapshot = false;
  for (const auto& [seq, path] : list_snapshots(dir)) {
    try {
      state = load_snapshot(path);
      have_snapshot = true;
      break;
    } catch (const CorruptSnapshot& e) {
      if (warnings) warnings->push_back(std::string(e.what()) + "; falling back to an older snapshot");
    }
  }
  if (!have_snapshot) state = ServerState{};
  if (fs::exists(dir / "manifest")) {
    json m = json::parse(read_file(dir / "manifest"));
    state.incarnation = m.at("incarnation").get<std::uint64_t>();
    if (!have_snapshot) state.config = config_from(m.at("config"));
  }

  const fs::path log = dir / "results.log";
  LogScan scan = scan_log(log, warnings);
  if (scan.truncated && repair) {
    fs::resize_file(log, scan.valid_bytes);
  }
  if (!scan.records.empty() && scan.records.back().first < state.log_seq) {
    throw CorruptSnapshot("snapshot covers seq " + std::to_string(state.log_seq) + " but the log ends at " +
                          std::to_string(scan.records.back().first));
  }
  for (const auto& [seq, rec] : scan.records) {
    if (seq <= state.log_seq) continue;
    apply_record(state, rec);
    state.log_seq = seq;
  }
  for (auto& job : state.jobs) {
    if (in_flight(job)) {
      job.state = JobState::Proposed;
      job.assigned_client.clear();
      job.deadline = 0.0;
    }
  }
  return state;
}

}  // namespace

std::string serialize_record(const LogRecord& record) { return record_json(record).dump(); }

LogRecord parse_record(const std::string& text) {
  json j = json::parse(text);
  LogRecord r;
  const std::string type = j.at("type").get<std::string>();
  if (type == "result") {
    r.kind = LogRecord::Kind::Result;
  } else if (type == "failure") {
    r.kind = LogRecord::Kind::Failure;
  } else {
    throw Error("unknown record type '" + type + "'");
  }
  r.job_id = j.at("job_id").get<std::string>();
  r.client_id = j.at("client_id").get<std::string>();
  r.encoding = encoding_from(j.at("encoding"));
  r.latency_us = j.at("latency_us").get<double>();
  if (r.kind == LogRecord::Kind::Result) {
    r.objective = optional_from(j.at("objective"));
    if (!r.objective) throw Error("result record without objective");
    r.epochs_completed = j.at("epochs_completed").get<int>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
  } else {
    r.attempts = j.at("attempts").get<int>();
    r.reason = j.at("reason").get<std::string>();
  }
  return r;
}

std::string config_to_json(const CoordinatorConfig& c) { return config_json(c).dump(2); }
CoordinatorConfig config_from_json(const std::string& text) { return config_from(json::parse(text)); }

std::string serialize_state(const ServerState& s) {
  json jobs = json::array();
  for (const auto& job : s.jobs) {
    jobs.push_back({{"job_id", job.job_id},
                    {"encoding", encoding_json(job.encoding)},
                    {"latency_us", job.latency_us},
                    {"state", to_string(job.state)},
                    {"assigned_client", job.assigned_client},
                    {"deadline", job.deadline},
                    {"objective", optional_json(job.objective)},
                    {"attempts", job.attempts},
                    {"permanent_failure", job.permanent_failure}});
  }
  json history = json::array();
  for (const auto& h : s.history) {
    history.push_back({{"encoding", encoding_json(h.encoding)},
                       {"latency_us", h.estimated_latency_us},
                       {"objective", optional_json(h.objective)},
                       {"job_id", h.meta.job_id},
                       {"client_id", h.meta.client_id},
                       {"wall_time_s", h.meta.wall_time_s},
                       {"epochs_completed", h.meta.epochs_completed}});
  }
  json j = {{"format", "latnas-snapshot"},
            {"schema_version", 1},
            {"log_seq", s.log_seq},
            {"incarnation", s.incarnation},
            {"next_job", s.next_job},
            {"exhausted", s.exhausted},
            {"config", config_json(s.config)},
            {"jobs", jobs},
            {"history", history}};
  j["tree"] = s.tree_json.empty() ? json(nullptr) : json::parse(s.tree_json);
  return j.dump(1) + "\n";
}

ServerState parse_state(const std::string& text) {
  json j = json::parse(text);
  if (j.at("format") != "latnas-snapshot") throw Error("not a snapshot");
  if (j.at("schema_version") != 1) throw Error("unsupported snapshot schema_version");
  ServerState s;
  s.log_seq = j.at("log_seq").get<std::uint64_t>();
  s.incarnation = j.at("incarnation").get<std::uint64_t>();
  s.next_job = j.at("next_job").get<std::uint64_t>();
  s.exhausted = j.at("exhausted").get<bool>();
  s.config = config_from(j.at("config"));
  for (const auto& jj : j.at("jobs")) {
    Job job;
    job.job_id = jj.at("job_id").get<std::string>();
    job.encoding = encoding_from(jj.at("encoding"));
    job.latency_us = jj.at("latency_us").get<double>();
    job.state = job_state_from_string(jj.at("state").get<std::string>());
    job.assigned_client = jj.at("assigned_client").get<std::string>();
    job.deadline = jj.at("deadline").get<double>();
    job.objective = optional_from(jj.at("objective"));
    job.attempts = jj.at("attempts").get<int>();
    job.permanent_failure = jj.at("permanent_failure").get<bool>();
    s.jobs.push_back(std::move(job));
  }
  for (const auto& hj : j.at("history")) {
    CandidateRecord c;
    c.encoding = encoding_from(hj.at("encoding"));
    c.estimated_latency_us = hj.at("latency_us").get<double>();
    c.objective = optional_from(hj.at("objective"));
    c.meta = EvaluationMeta{hj.at("job_id").get<std::string>(), hj.at("client_id").get<std::string>(),
                            hj.at("wall_time_s").get<double>(), hj.at("epochs_completed").get<int>()};
    s.history.push_back(std::move(c));
  }
  if (auto it = j.find("tree"); it != j.end() && !it->is_null()) s.tree_json = it->dump();
  s.reindex();
  return s;
}

namespace {

json tree_node_json(const SearchTreeNode& n) {
  json j = {{"visits", n.visit_count}, {"mean", n.mean_objective}, {"samples", n.samples}};
  if (!n.is_leaf()) {
    j["classifier"] = {{"left_centroid", n.classifier.left_centroid},
                       {"right_centroid", n.classifier.right_centroid},
                       {"tie_side", n.classifier.tie_side}};
    j["children"] = {tree_node_json(n.children[0]), tree_node_json(n.children[1])};
  }
  return j;
}

}  // namespace

std::string tree_to_json(const SearchTreeNode& root) { return tree_node_json(root).dump(); }

std::function<std::string(const ServerState&)> history_tree_provider(const SearchSpaceSpec& space) {
  return [space](const ServerState& s) -> std::string {
    if (s.history.empty()) return {};
    return tree_to_json(build_history_tree(s.history, space, s.config.optimizer));
  };
}

// ---- CheckpointStore ----

CheckpointStore::CheckpointStore(fs::path dir, FaultHook hook) : dir_(std::move(dir)), hook_(std::move(hook)) {}

void CheckpointStore::prepare() {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error("cannot create checkpoint directory " + dir_.string() + ": " + ec.message());
  if (::access(dir_.c_str(), W_OK) != 0) throw Error("checkpoint directory " + dir_.string() + " is not writable");
}

bool CheckpointStore::has_state() const {
  return fs::exists(dir_ / "manifest") || fs::exists(dir_ / "results.log") || !list_snapshots(dir_).empty();
}

ServerState CheckpointStore::open(const CoordinatorConfig& config, std::vector<std::string>* warnings) {
  prepare();
  ServerState state;
  if (has_state()) {
    if (fs::exists(dir_ / "manifest")) {
      json m = json::parse(read_file(dir_ / "manifest"));
      if (identity_json(config_from(m.at("config"))) != identity_json(config)) {
        throw Error("checkpoint directory " + dir_.string() + " belongs to a search with a different configuration");
      }
    }
    state = restore_impl(dir_, warnings, true);
    state.incarnation += 1;
    state.next_job = 1;
    state.exhausted = false;
  } else {
    state.incarnation = 1;
  }
  state.config = config;
  json manifest = {{"format", "latnas-checkpoint"},
                   {"schema_version", 1},
                   {"incarnation", state.incarnation},
                   {"config", config_json(config)}};
  write_file_atomic(dir_ / "manifest", manifest.dump(2) + "\n", {});
  snapshot(state);
  changes_ = 0;
  return state;
}

void CheckpointStore::append(ServerState& state, const LogRecord& record) {
  fire(KillPoint::BeforeLogAppend);
  const std::string body = serialize_record(record);
  const std::uint64_t seq = state.log_seq + 1;
  const std::string line = std::to_string(seq) + "\t" + hex32(crc_of(body)) + "\t" + body + "\n";
  const fs::path path = dir_ / "results.log";
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error("cannot open " + path.string() + ": " + std::strerror(errno));
  try {
    if (hook_) {
      // Write half the line first so a crash here leaves a torn record behind.
      const std::size_t half = line.size() / 2;
      write_all(fd, line.data(), half);
      ::fsync(fd);
      fire(KillPoint::MidLogAppend);
      write_all(fd, line.data() + half, line.size() - half);
    } else {
      write_all(fd, line.data(), line.size());
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::fsync(fd);
  ::close(fd);
  state.log_seq = seq;
  fire(KillPoint::AfterLogAppend);
}

void CheckpointStore::snapshot(const ServerState& state) {
  std::string body;
  if (tree_provider_) {
    ServerState copy = state;
    copy.tree_json = tree_provider_(state);
    body = serialize_state(copy);
  } else {
    body = serialize_state(state);
  }
  const fs::path path = dir_ / ("snapshot." + std::to_string(state.log_seq));
  write_file_atomic(path, hex32(crc_of(body)) + "\n" + body, [this] { fire(KillPoint::BeforeSnapshotRename); });
  fire(KillPoint::AfterSnapshotRename);
  auto snaps = list_snapshots(dir_);
  for (std::size_t i = std::max<std::size_t>(state.config.snapshots_kept, 1); i < snaps.size(); ++i) {
    std::error_code ec;
    fs::remove(snaps[i].second, ec);
  }
}

void CheckpointStore::note_change(const ServerState& state) {
  ++changes_;
  if (state.config.snapshot_every > 0 && changes_ % state.config.snapshot_every == 0) snapshot(state);
}

ServerState restore_state(const fs::path& dir, std::vector<std::string>* warnings) {
  return restore_impl(dir, warnings, false);
}

std::vector<LogRecord> read_result_log(const fs::path& path, std::vector<std::string>* warnings) {
  std::vector<LogRecord> out;
  for (auto& [seq, rec] : scan_log(path, warnings).records) out.push_back(std::move(rec));
  return out;
}

// ---- simulated search ----

ServerState run_simulated_search(const CoordinatorConfig& config, const SearchSpaceSpec& space,
                                 const LatencyFunction& latency,
                                 const std::function<double(const NetworkEncoding&)>& evaluate,
                                 const fs::path& checkpoint_dir, int clients) {
  if (clients < 1) throw Error("need at least one client");
  CheckpointStore store(checkpoint_dir);
  store.set_tree_provider(history_tree_provider(space));
  ServerState state = store.open(config);
  CoordinatorContext ctx{space, latency};

  struct Virtual {
    Connection conn;
    std::optional<ProposalMsg> job;
    bool done = false;
  };
  std::vector<Virtual> vs(static_cast<std::size_t>(clients));
  double clock = 0.0;
  auto step = [&](Virtual& v, const WireMessage& msg) {
    Outcome out = handle_message(state, ctx, v.conn, msg, clock);
    for (const auto& rec : out.log) store.append(state, rec);
    const bool changed = !out.log.empty() || (out.reply && std::holds_alternative<ProposalMsg>(*out.reply));
    if (changed) store.note_change(state);
    return out;
  };
  for (std::size_t i = 0; i < vs.size(); ++i) {
    step(vs[i], HelloMsg{"sim-" + std::to_string(i), kProtocolVersion});
  }

  std::size_t idle_rounds = 0;
  while (std::any_of(vs.begin(), vs.end(), [](const Virtual& v) { return !v.done; })) {
    bool progressed = false;
    for (auto& v : vs) {
      if (v.done) continue;
      clock += 1.0;
      if (v.job) {
        ResultMsg r;
        r.job_id = v.job->job_id;
        r.encoding = v.job->encoding;
        try {
          r.objective = evaluate(v.job->encoding);
          r.epochs_completed = 1;
        } catch (const std::exception& e) {
          r.failed = true;
          r.error = e.what();
        }
        step(v, r);
        v.job.reset();
        progressed = true;
        continue;
      }
      Outcome out = step(v, RequestWorkMsg{v.conn.client_id});
      if (const auto* p = std::get_if<ProposalMsg>(&*out.reply)) {
        v.job = *p;
        progressed = true;
      } else if (std::holds_alternative<ShutdownMsg>(*out.reply)) {
        v.done = true;
        progressed = true;
      }
    }
    idle_rounds = progressed ? 0 : idle_rounds + 1;
    if (idle_rounds > 3) throw Error("simulated search stalled");
  }
  store.snapshot(state);
  return state;
}

}  // namespace latnas
