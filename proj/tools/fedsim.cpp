// fedsim: federated segmentation experiments from the command line.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "fedsim/error.hpp"
#include "fedsim/experiments.hpp"

namespace fs = std::filesystem;
using namespace fedsim;

namespace {

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return fmt::format("fedsim generated {}", buf);
}

std::pair<std::string, std::uint16_t> split_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw UsageError(fmt::format("expected host:port, got '{}'", endpoint));
  const int port = std::stoi(endpoint.substr(colon + 1));
  if (port < 0 || port > 65535) throw UsageError(fmt::format("bad port in '{}'", endpoint));
  return {endpoint.substr(0, colon), static_cast<std::uint16_t>(port)};
}

const RunConfig& find_run(const ExperimentConfig& cfg, const std::string& name) {
  for (const auto& r : cfg.runs) {
    if (r.name == name) {
      if (r.mode != RunMode::federated) throw UsageError(fmt::format("run '{}' is not federated", name));
      return r;
    }
  }
  throw UsageError(fmt::format("no run named '{}'", name));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-task segmentation simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, carrier, out_file, run_name, endpoint;
  std::uint64_t seed = 0;
  int jobs = 1;
  int image_size = 32;
  std::uint32_t client_id = 0;
  int timeout_ms = 30000;

  auto* run = app.add_subcommand("run", "Execute every run in a config and write results.csv, trace.csv, run.json");
  run->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--carrier", carrier, "Override the carrier of every federated run")
      ->check(CLI::IsMember({"loopback", "socket"}));
  auto* run_seed = run->add_option("--seed", seed, "Override the benchmark seed");
  run->add_option("--jobs", jobs, "Runs to execute in parallel")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic benchmark to a dataset file");
  gen->add_option("--out", out_file, "Output file")->required();
  gen->add_option("--seed", seed, "Benchmark seed")->default_val(1);
  gen->add_option("--image-size", image_size, "Image side length")->default_val(32);

  auto* table = app.add_subcommand("table", "Pretty-print results.csv from an output directory");
  table->add_option("--out-dir", out_dir, "Directory holding results.csv")->required()->check(CLI::ExistingDirectory);

  auto* serve = app.add_subcommand("serve", "Host one federated run over TCP and wait for its clients");
  serve->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  serve->add_option("--run", run_name, "Federated run to host")->required();
  serve->add_option("--listen", endpoint, "host:port to listen on")->required();
  serve->add_option("--out", out_dir, "Output directory")->required();
  auto* serve_seed = serve->add_option("--seed", seed, "Override the benchmark seed");
  serve->add_option("--timeout-ms", timeout_ms, "Handshake timeout")->default_val(30000);

  auto* client = app.add_subcommand("client", "Join a hosted run as one client");
  client->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  client->add_option("--run", run_name, "Federated run to join")->required();
  client->add_option("--connect", endpoint, "Server host:port")->required();
  client->add_option("--client-id", client_id, "Benchmark client index (0-2)")->required();
  auto* client_seed = client->add_option("--seed", seed, "Override the benchmark seed");
  client->add_option("--timeout-ms", timeout_ms, "Connect timeout")->default_val(30000);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentConfig cfg = load_config(config_path);
      if (*run_seed) cfg.benchmark.seed = seed;
      if (!carrier.empty()) {
        for (auto& r : cfg.runs) r.carrier = parse_carrier(carrier);
      }
      const ExperimentContext ctx = make_context(cfg.benchmark);
      const ExperimentResults results = run_experiment(cfg, ctx, jobs);

      fs::create_directories(out_dir);
      const std::string stamp = timestamp();
      std::ofstream(fs::path(out_dir) / "run.json") << run_json(cfg);
      {
        std::ofstream out(fs::path(out_dir) / "results.csv");
        write_results_csv(out, results.rows, stamp);
      }
      {
        std::ofstream out(fs::path(out_dir) / "trace.csv");
        write_trace_csv(out, results.trace, stamp);
      }
      std::cout << format_table(results.rows);
    } else if (*gen) {
      std::vector<ClientDataset> datasets;
      for (const auto& spec : default_benchmark(seed, image_size)) datasets.push_back(generate(spec));
      write_datasets(out_file, datasets);
      for (const auto& ds : datasets) {
        std::cout << fmt::format("client {}: train {} val {} test {}\n", ds.client_id, ds.train.size(),
                                 ds.val.size(), ds.test.size());
      }
    } else if (*table) {
      std::ifstream in(fs::path(out_dir) / "results.csv");
      if (!in) throw UsageError(fmt::format("no results.csv in {}", out_dir));
      std::cout << format_table(read_results_csv(in));
    } else if (*serve) {
      ExperimentConfig cfg = load_config(config_path);
      if (*serve_seed) cfg.benchmark.seed = seed;
      const RunConfig& r = find_run(cfg, run_name);
      const ExperimentContext ctx = make_context(cfg.benchmark);
      const auto [host, port] = split_endpoint(endpoint);
      const AggregationConfig agg = aggregation_config_for(r);
      ServerSession session(agg, ctx.initial, ctx.datasets.size(), config_digest(agg, ctx.spec));
      Listener listener(host, port);
      std::cerr << fmt::format("listening on {}:{} for {} clients\n", host, listener.port(), ctx.datasets.size());
      serve_federation(session, listener, std::chrono::milliseconds(timeout_ms));

      const FederationResult result = session.result();
      const ParamVector& model = result.best ? result.best->params : result.initial_params;
      const ResultRow row = evaluate_table_row(r.name, model, ctx.spec, ctx.datasets);
      std::vector<TraceRow> trace;
      for (const auto& rec : result.trace) {
        for (const auto& c : rec.clients) {
          trace.push_back({r.name, rec.round, c.client_id, c.weight, c.avg_loss, c.val_score, c.loss_scale});
        }
      }
      fs::create_directories(out_dir);
      const std::string stamp = timestamp();
      {
        std::ofstream out(fs::path(out_dir) / "results.csv");
        write_results_csv(out, std::span(&row, 1), stamp);
      }
      {
        std::ofstream out(fs::path(out_dir) / "trace.csv");
        write_trace_csv(out, trace, stamp);
      }
      std::cout << format_table(std::span(&row, 1));
    } else if (*client) {
      ExperimentConfig cfg = load_config(config_path);
      if (*client_seed) cfg.benchmark.seed = seed;
      const RunConfig& r = find_run(cfg, run_name);
      const ExperimentContext ctx = make_context(cfg.benchmark);
      if (client_id >= ctx.datasets.size()) throw UsageError(fmt::format("no client {}", client_id));
      const auto [host, port] = split_endpoint(endpoint);
      const AggregationConfig agg = aggregation_config_for(r);
      ClientSession session({client_config_for(r, client_id, ctx.seed), &ctx.datasets[client_id]}, ctx.spec,
                            config_digest(agg, ctx.spec));
      run_socket_client(session, host, port, std::chrono::milliseconds(timeout_ms));
      std::cerr << fmt::format("client {} finished after {} rounds\n", client_id, session.rounds_seen().size());
    }
  } catch (const Error& e) {
    std::cerr << "fedsim: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fedsim: unexpected error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
