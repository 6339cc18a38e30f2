#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/client.hpp"
#include "fedsim/datagen.hpp"
#include "fedsim/model.hpp"
#include "fedsim/server.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

enum class RunMode { local, federated };

struct RunConfig {
  std::string name;
  RunMode mode = RunMode::federated;
  std::uint32_t local_client = 0;  // dataset index for local runs

  ClientMode client_mode = ClientMode::plain;
  double mu = 0.01;
  double gamma = 1.0;
  double alpha = 0.9;
  double kpi_exponent = 1.0;

  Strategy strategy = Strategy::fedavg;
  double temperature = 2.0;
  int xi = 1;
  bool normalize_xi = false;
  std::uint32_t min_clients = 3;

  std::uint32_t rounds = 20;
  int local_epochs = 2;
  int batch_size = 8;
  double lr = 5e-3;  // desk-scale default; ClientConfig keeps 5e-4
  double share_fraction = 0.25;
  Carrier carrier = Carrier::loopback;

  bool operator==(const RunConfig&) const = default;
};

struct BenchmarkConfig {
  std::uint64_t seed = 1;
  int image_size = 32;
  double noise_sigma = 0.3;
  std::optional<std::string> dataset_file;
  ModelSpec model;

  bool operator==(const BenchmarkConfig&) const = default;
};

struct ExperimentConfig {
  BenchmarkConfig benchmark;
  std::vector<RunConfig> runs;

  void validate() const;

  bool operator==(const ExperimentConfig&) const = default;
};

// INI-style grammar:
//
//   [benchmark]            seed, image_size, noise_sigma, dataset_file,
//                          patch_radius, hidden_units
//   [defaults]             any run key; applies to every run below
//   [run:<name>]           mode = local | federated
//                          client = <index>            (local runs)
//                          client_mode = plain | fedprox | dtp
//                          mu, gamma, alpha, kpi_exponent
//                          strategy = fedavg | dwa, T, xi, normalize_xi
//                          min_clients, rounds, local_epochs, batch_size,
//                          lr, share_fraction, carrier = loopback | socket
//
// Runs keep their file order. '#' and ';' start comments.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

// Table columns: client A organ, client B organ, client B tumor, client C organ.
inline constexpr std::array<const char*, 4> kScoreColumns = {"clientA_organ", "clientB_organ", "clientB_tumor",
                                                             "clientC_organ"};

struct ResultRow {
  std::string run;
  std::array<double, 4> scores{};
  double average = 0.0;  // unweighted mean of the four scores

  bool operator==(const ResultRow&) const = default;
};

struct TraceRow {
  std::string run;
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  double weight = 0.0;
  double avg_loss = 0.0;
  double val_dice = 0.0;
  double loss_scale = 1.0;

  bool operator==(const TraceRow&) const = default;
};

struct RunOutcome {
  ResultRow row;
  std::vector<TraceRow> trace;
  ParamVector model;          // evaluated model (best global or local final)
  std::uint32_t model_round = 0;
};

// Datasets plus the shared initial model for one benchmark seed.
struct ExperimentContext {
  ModelSpec spec;
  std::uint64_t seed = 1;
  std::vector<ClientDataset> datasets;
  ParamVector initial;
};

ExperimentContext make_context(const BenchmarkConfig& cfg);

// Scores one model on every client's test split. Both run kinds go through here.
ResultRow evaluate_table_row(const std::string& name, const ParamVector& params, const ModelSpec& spec,
                             std::span<const ClientDataset> datasets);

ClientConfig client_config_for(const RunConfig& run, std::uint32_t client_id, std::uint64_t seed);
AggregationConfig aggregation_config_for(const RunConfig& run);

// Trains on one client for rounds x local_epochs epochs, resetting the
// optimizer and the cosine schedule every local_epochs epochs, then scores the
// final model on all clients.
RunOutcome run_local_baseline(const RunConfig& run, const ExperimentContext& ctx);

// Full federation; scores the best global checkpoint.
RunOutcome run_federated(const RunConfig& run, const ExperimentContext& ctx,
                         const FederationOptions& base_options = {});

RunOutcome run_one(const RunConfig& run, const ExperimentContext& ctx);

struct ExperimentResults {
  std::vector<ResultRow> rows;
  std::vector<TraceRow> trace;
};

// jobs > 1 runs independent runs on worker threads; numbers do not change.
ExperimentResults run_experiment(const ExperimentConfig& cfg, const ExperimentContext& ctx, int jobs = 1);

// CSV writers. The first line is a '#' comment carrying `stamp`; everything
// after it is deterministic.
void write_results_csv(std::ostream& out, std::span<const ResultRow> rows, const std::string& stamp);
void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows, const std::string& stamp);
std::vector<ResultRow> read_results_csv(std::istream& in);
std::string run_json(const ExperimentConfig& cfg);
std::string format_table(std::span<const ResultRow> rows);

}  // namespace fedsim
