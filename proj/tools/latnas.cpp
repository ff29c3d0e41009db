// latnas command-line tool. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "latnas/client.hpp"
#include "latnas/coordinator.hpp"
#include "latnas/errors.hpp"
#include "latnas/evaluators.hpp"
#include "latnas/latency_model.hpp"
#include "latnas/report.hpp"
#include "latnas/sampler.hpp"
#include "latnas/search_space.hpp"
#include "latnas/server.hpp"

namespace {

using namespace latnas;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("invalid " + what + " '" + s + "'");
  }
}

LatencyBounds parse_bucket(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("--bucket expects lo:hi, got '" + text + "'");
  LatencyBounds b{parse_double(text.substr(0, colon), "bucket bound"),
                  parse_double(text.substr(colon + 1), "bucket bound")};
  if (!(b.lower_ms >= 0.0) || !(b.upper_ms > b.lower_ms)) throw UsageError("--bucket needs 0 <= lo < hi");
  return b;
}

std::vector<double> parse_bounds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item, "bound"));
  if (out.empty()) throw UsageError("--bounds is empty");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0.0 || (i > 0 && out[i] <= out[i - 1])) {
      throw UsageError("--bounds must be non-negative and strictly increasing");
    }
  }
  return out;
}

std::pair<std::string, int> parse_server(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0) throw UsageError("--server expects host:port");
  const double port = parse_double(text.substr(colon + 1), "port");
  if (port < 1 || port > 65535 || port != static_cast<int>(port)) throw UsageError("bad port in --server");
  return {text.substr(0, colon), static_cast<int>(port)};
}

std::optional<std::uint64_t> noise_seed_of(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t pos = 0;
    auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("invalid --noise-seed '" + s + "'");
  }
}

void check_evaluator(const std::string& name) {
  if (name != "ackley" && name != "surrogate") throw UsageError("--evaluator must be ackley or surrogate");
}

/// Analytic estimator, or a recorded table without fallback.
LatencyFunction make_latency(const std::string& table_path, const SearchSpaceSpec& space) {
  if (table_path.empty()) return latency_function(make_analytic_estimator(), space);
  auto est = std::make_shared<LatencyEstimator>(load_table(table_path));
  return latency_function(est, space);
}

int hardware_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string created_stamp(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) return std::string("epoch:") + epoch;
  return "unset";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latency-stratified neural architecture search"};
  app.require_subcommand(1);
  const SearchSpaceSpec space = SearchSpaceSpec::standard();

  // sample
  auto* sample = app.add_subcommand("sample", "Sobol-quantized encodings as CSV");
  std::size_t sample_count = 1000;
  std::uint64_t sample_skip = 1;
  std::string sample_out;
  sample->add_option("--count", sample_count, "Number of encodings")->check(CLI::PositiveNumber);
  sample->add_option("--skip", sample_skip, "First Sobol ordinal");
  sample->add_option("--out", sample_out, "Output CSV (stdout if omitted)");

  // build-table
  auto* bt = app.add_subcommand("build-table", "Benchmark the layer keys of a network set");
  std::string bt_in, bt_out, bt_backend = "analytic", bt_command, bt_recorded, bt_existing, bt_created,
                          bt_device = "external";
  std::size_t bt_samples = 1000;
  int bt_workers = hardware_workers();
  bt->add_option("--in", bt_in, "Encodings CSV (default: Sobol samples)");
  bt->add_option("--samples", bt_samples, "Sobol networks when --in is absent")->check(CLI::PositiveNumber);
  bt->add_option("--backend", bt_backend, "analytic, command or recorded")
      ->check(CLI::IsMember({"analytic", "command", "recorded"}));
  bt->add_option("--command", bt_command, "Shell command for the command backend");
  bt->add_option("--device", bt_device, "Device label for the command backend");
  bt->add_option("--recorded", bt_recorded, "Table file for the recorded backend");
  bt->add_option("--existing", bt_existing, "Table to extend; present entries are kept");
  bt->add_option("--workers", bt_workers, "Benchmark threads")->check(CLI::PositiveNumber);
  bt->add_option("--created", bt_created, "Metadata stamp (default: SOURCE_DATE_EPOCH or 'unset')");
  bt->add_option("--out", bt_out, "Output table")->required();

  // stratify
  auto* st = app.add_subcommand("stratify", "Bucket Sobol samples by estimated latency");
  std::string st_bounds, st_out, st_table;
  std::size_t st_samples = 1000000;
  std::uint64_t st_skip = 1;
  int st_workers = hardware_workers();
  st->add_option("--bounds", st_bounds, "Bucket bounds in ms, e.g. 0.5,1,2")->required();
  st->add_option("--samples", st_samples, "Number of samples")->check(CLI::PositiveNumber);
  st->add_option("--skip", st_skip, "First Sobol ordinal");
  st->add_option("--workers", st_workers, "Threads")->check(CLI::PositiveNumber);
  st->add_option("--table", st_table, "Recorded latency table (default: analytic model)");
  st->add_option("--out", st_out, "Output directory")->required();

  // shared search options
  struct SearchArgs {
    std::string bucket = "0:2.0";
    std::size_t budget = 100;
    std::uint64_t seed = 0;
    std::string evaluator = "surrogate";
    std::string noise_seed;
    std::string checkpoint_dir;
    std::string table;
    double heartbeat = 30.0;
  };
  auto add_search_options = [](CLI::App* cmd, SearchArgs& a) {
    cmd->add_option("--bucket", a.bucket, "Latency bucket lo:hi in ms");
    cmd->add_option("--budget", a.budget, "Number of evaluations")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", a.seed, "Optimizer seed");
    cmd->add_option("--evaluator", a.evaluator, "ackley or surrogate");
    cmd->add_option("--noise-seed", a.noise_seed, "Surrogate noise seed (noiseless if omitted)");
    cmd->add_option("--table", a.table, "Recorded latency table (default: analytic model)");
  };

  auto* serve = app.add_subcommand("serve", "Run the coordinator");
  SearchArgs sv;
  std::string sv_host = "127.0.0.1";
  int sv_port = 0;
  add_search_options(serve, sv);
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--port", sv_port, "Port (0 picks one)")->check(CLI::Range(0, 65535));
  serve->add_option("--checkpoint-dir", sv.checkpoint_dir, "Checkpoint directory")->required();
  serve->add_option("--heartbeat-interval", sv.heartbeat, "Seconds between client heartbeats")
      ->check(CLI::PositiveNumber);

  auto* client = app.add_subcommand("client", "Evaluate proposals from a coordinator");
  std::string cl_server, cl_evaluator = "surrogate", cl_noise, cl_id = "client";
  int cl_concurrency = 1;
  client->add_option("--server", cl_server, "host:port")->required();
  client->add_option("--evaluator", cl_evaluator, "ackley or surrogate");
  client->add_option("--noise-seed", cl_noise, "Surrogate noise seed");
  client->add_option("--id", cl_id, "Client id");
  client->add_option("--concurrency", cl_concurrency, "Parallel evaluation loops")->check(CLI::PositiveNumber);

  auto* search = app.add_subcommand("search", "Single-process search with simulated clients");
  SearchArgs se;
  std::string se_out;
  int se_clients = 4;
  add_search_options(search, se);
  search->add_option("--checkpoint-dir", se.checkpoint_dir, "Checkpoint directory (holds results.log)")->required();
  search->add_option("--clients", se_clients, "Simulated clients")->check(CLI::PositiveNumber);
  search->add_option("--out", se_out, "Also write report CSVs to this directory");

  auto* report = app.add_subcommand("report", "Model hub, Pareto and plot CSVs from result logs");
  std::vector<std::string> rp_inputs;
  std::string rp_out;
  std::size_t rp_top = 1;
  report->add_option("inputs", rp_inputs, "Checkpoint directories or results.log files")->required();
  report->add_option("--out", rp_out, "Output directory")->required();
  report->add_option("--top", rp_top, "Rows per bucket in the model hub")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  auto coordinator_config = [&](const SearchArgs& a) {
    check_evaluator(a.evaluator);
    CoordinatorConfig c;
    c.bounds = parse_bucket(a.bucket);
    c.budget = a.budget;
    c.seed = a.seed;
    c.eval.evaluator = a.evaluator;
    c.eval.noise_seed = noise_seed_of(a.noise_seed);
    c.eval.heartbeat_interval_s = a.heartbeat;
    return c;
  };

  try {
    if (sample->parsed()) {
      auto encs = sample_encodings(sample_count, space, sample_skip);
      if (sample_out.empty()) {
        for (const auto& e : encs) std::cout << e.to_string() << "\n";
      } else {
        write_encodings_csv(encs, sample_out);
      }
    } else if (bt->parsed()) {
      std::unique_ptr<LatencyBackend> backend;
      if (bt_backend == "analytic") {
        backend = std::make_unique<AnalyticCostModel>();
      } else if (bt_backend == "command") {
        if (bt_command.empty()) throw UsageError("--backend command needs --command");
        backend = std::make_unique<ExternalCommandAdapter>(bt_command, bt_device);
      } else {
        if (bt_recorded.empty()) throw UsageError("--backend recorded needs --recorded");
        backend = std::make_unique<RecordedTableImport>(load_table(bt_recorded));
      }
      auto encs = bt_in.empty() ? sample_encodings(bt_samples, space) : read_encodings_csv(bt_in);
      std::vector<LayerKey> keys;
      for (const auto& e : encs) {
        for (auto& k : layer_keys_of(decode(e, space))) keys.push_back(std::move(k));
      }
      LatencyTable existing;
      if (!bt_existing.empty()) existing = load_table(bt_existing);
      auto result = build_table(keys, *backend, bt_workers, std::move(existing));
      result.table.metadata.backend = backend->id();
      result.table.metadata.device = backend->device();
      result.table.metadata.created = created_stamp(bt_created);
      save_table(result.table, bt_out);
      std::cout << result.table.size() << " entries written to " << bt_out << "\n";
      for (const auto& f : result.failures) std::cerr << "failed: " << f.key << ": " << f.cause << "\n";
      if (!result.failures.empty()) return 2;
    } else if (st->parsed()) {
      const auto bounds = parse_bounds(st_bounds);
      auto latency = make_latency(st_table, space);
      auto encs = sample_encodings(st_samples, space, st_skip);
      auto buckets = stratify(encs, latency, bounds, st_workers);
      write_stratification(buckets, st_out);
      for (const auto& b : buckets) {
        std::cout << "[" << b.lower_ms << ", " << b.upper_ms << ") ms: " << b.members.size() << "\n";
      }
    } else if (serve->parsed()) {
      ServerOptions opts;
      opts.host = sv_host;
      opts.port = sv_port;
      opts.checkpoint_dir = sv.checkpoint_dir;
      opts.config = coordinator_config(sv);
      CoordinatorServer server(opts, space, make_latency(sv.table, space));
      server.start();
      std::cout << "listening on " << sv_host << ":" << server.port() << std::endl;
      server.wait();
      const auto s = server.state();
      std::cout << "done: " << s.done() << " results, " << s.permanent_failures() << " permanent failures\n";
      if (server.crashed()) return 2;
    } else if (client->parsed()) {
      check_evaluator(cl_evaluator);
      auto [host, port] = parse_server(cl_server);
      ClientOptions opts;
      opts.host = host;
      opts.port = port;
      opts.client_id = cl_id;
      auto evaluator = make_evaluator(cl_evaluator, space, noise_seed_of(cl_noise));
      std::size_t completed = 0;
      for (const auto& r : in_process_client(opts, *evaluator, cl_concurrency)) completed += r.completed;
      std::cout << completed << " results accepted\n";
    } else if (search->parsed()) {
      const auto config = coordinator_config(se);
      auto evaluator = make_evaluator(config.eval.evaluator, space, config.eval.noise_seed);
      auto state = run_simulated_search(
          config, space, make_latency(se.table, space),
          [&](const NetworkEncoding& e) { return evaluator->evaluate(e); }, se.checkpoint_dir, se_clients);
      const CandidateRecord* best = nullptr;
      for (const auto& r : state.history) {
        if (!best || *r.objective > *best->objective) best = &r;
      }
      std::cout << state.done() << " results in " << se.checkpoint_dir << "\n";
      if (best) {
        std::cout << "best objective " << *best->objective << " at " << best->estimated_latency_us / 1000.0
                  << " ms: " << best->encoding.to_string() << "\n";
      }
      if (!se_out.empty()) write_report({load_search_log(se.checkpoint_dir)}, se_out);
    } else if (report->parsed()) {
      std::vector<SearchLog> logs;
      for (const auto& in : rp_inputs) logs.push_back(load_search_log(in));
      auto files = write_report(logs, rp_out, rp_top);
      std::cout << "wrote " << files.model_hub.string() << ", " << files.pareto.string() << ", "
                << files.plot_data.string() << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
