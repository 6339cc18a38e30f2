#include "fedsim/experiments.hpp"

#include <atomic>
#include <exception>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include "json.hpp"

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {
namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kClientStream = 1000;

std::vector<TraceRow> trace_rows(const std::string& run, std::span<const RoundRecord> records) {
  std::vector<TraceRow> out;
  for (const auto& rec : records) {
    for (const auto& c : rec.clients) {
      out.push_back({run, rec.round, c.client_id, c.weight, c.avg_loss, c.val_score, c.loss_scale});
    }
  }
  return out;
}

}  // namespace

ExperimentContext make_context(const BenchmarkConfig& cfg) {
  cfg.model.validate();
  ExperimentContext ctx;
  ctx.spec = cfg.model;
  ctx.seed = cfg.seed;
  if (cfg.dataset_file) {
    ctx.datasets = read_datasets(*cfg.dataset_file);
  } else {
    for (auto spec : default_benchmark(cfg.seed, cfg.image_size)) {
      spec.noise_sigma = cfg.noise_sigma;
      ctx.datasets.push_back(generate(spec));
    }
  }
  if (ctx.datasets.size() != 3) {
    throw UsageError(fmt::format("the benchmark needs exactly three clients, found {}", ctx.datasets.size()));
  }
  ctx.initial = init_params(ctx.spec, derive_seed(cfg.seed, kInitStream));
  return ctx;
}

ResultRow evaluate_table_row(const std::string& name, const ParamVector& params, const ModelSpec& spec,
                             std::span<const ClientDataset> datasets) {
  if (datasets.size() != 3) throw UsageError("results table expects three clients");
  auto score = [&](const ClientDataset& ds, int cls) {
    const int classes[] = {cls};
    return evaluate_dice(params, spec, ds.test, ds.height, ds.width, classes).at(cls);
  };
  ResultRow row;
  row.run = name;
  row.scores = {score(datasets[0], kOrgan), score(datasets[1], kOrgan), score(datasets[1], kTumor),
                score(datasets[2], kOrgan)};
  row.average = (row.scores[0] + row.scores[1] + row.scores[2] + row.scores[3]) / 4.0;
  return row;
}

ClientConfig client_config_for(const RunConfig& run, std::uint32_t client_id, std::uint64_t seed) {
  ClientConfig c;
  c.client_id = client_id;
  c.mode = run.client_mode;
  c.mu = run.mu;
  c.gamma = run.gamma;
  c.alpha = run.alpha;
  c.kpi_exponent = run.kpi_exponent;
  c.local_epochs = run.local_epochs;
  c.batch_size = run.batch_size;
  c.lr = run.lr;
  c.share_fraction = run.share_fraction;
  c.seed = derive_seed(seed, kClientStream + client_id);
  return c;
}

AggregationConfig aggregation_config_for(const RunConfig& run) {
  AggregationConfig a;
  a.strategy = run.strategy;
  a.temperature = run.temperature;
  a.xi = run.xi;
  a.normalize_xi = run.normalize_xi;
  a.min_clients = run.min_clients;
  a.rounds = run.rounds;
  return a;
}

RunOutcome run_local_baseline(const RunConfig& run, const ExperimentContext& ctx) {
  if (run.local_client >= ctx.datasets.size()) {
    throw UsageError(fmt::format("run '{}': no client {}", run.name, run.local_client));
  }
  const ClientDataset& data = ctx.datasets[run.local_client];
  ClientConfig cfg = client_config_for(run, data.client_id, ctx.seed);
  // Nothing is communicated, so the whole delta is applied.
  cfg.share_fraction = 1.0;
  Client client(cfg, ctx.spec, data);

  RunOutcome out;
  ParamVector params = ctx.initial;
  try {
    for (std::uint32_t r = 1; r <= run.rounds; ++r) {
      const RoundReport report = client.local_train(params, r);
      // Same arithmetic as a single-client server applying a full update.
      add_in_place(params, densify(report.update));
      out.trace.push_back({run.name, r, report.client_id, 1.0, report.avg_loss, validation_score(report),
                           report.mean_loss_scale});
    }
  } catch (const DivergenceError& e) {
    throw DivergenceError(fmt::format("run '{}': {}", run.name, e.what()), e.iteration());
  }
  out.row = evaluate_table_row(run.name, params, ctx.spec, ctx.datasets);
  out.model = std::move(params);
  out.model_round = run.rounds;
  return out;
}

RunOutcome run_federated(const RunConfig& run, const ExperimentContext& ctx, const FederationOptions& base_options) {
  std::vector<ClientSetup> setups;
  for (const auto& ds : ctx.datasets) {
    setups.push_back({client_config_for(run, ds.client_id, ctx.seed), &ds});
  }
  FederationOptions options = base_options;
  options.carrier = run.carrier;

  FederationResult result;
  try {
    result = run_federation(aggregation_config_for(run), ctx.spec, ctx.initial, setups, options);
  } catch (const DivergenceError& e) {
    throw DivergenceError(fmt::format("run '{}': {}", run.name, e.what()), e.iteration());
  }

  RunOutcome out;
  if (result.best) {
    out.model = result.best->params;
    out.model_round = result.best->round;
  } else {
    out.model = result.initial_params;
  }
  out.row = evaluate_table_row(run.name, out.model, ctx.spec, ctx.datasets);
  out.trace = trace_rows(run.name, result.trace);
  return out;
}

RunOutcome run_one(const RunConfig& run, const ExperimentContext& ctx) {
  return run.mode == RunMode::local ? run_local_baseline(run, ctx) : run_federated(run, ctx);
}

ExperimentResults run_experiment(const ExperimentConfig& cfg, const ExperimentContext& ctx, int jobs) {
  cfg.validate();
  std::vector<RunOutcome> outcomes(cfg.runs.size());
  std::vector<std::exception_ptr> errors(cfg.runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.runs.size(); i = next++) {
      try {
        outcomes[i] = run_one(cfg.runs[i], ctx);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, jobs));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentResults results;
  for (auto& o : outcomes) {
    results.rows.push_back(o.row);
    results.trace.insert(results.trace.end(), o.trace.begin(), o.trace.end());
  }
  return results;
}

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows, const std::string& stamp) {
  out << "# " << stamp << '\n';
  out << "run";
  for (const char* col : kScoreColumns) out << ',' << col;
  out << ",all_avg\n";
  for (const auto& r : rows) {
    out << r.run;
    for (double s : r.scores) out << fmt::format(",{:.4f}", s);
    out << fmt::format(",{:.4f}\n", r.average);
  }
}

void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows, const std::string& stamp) {
  out << "# " << stamp << '\n';
  out << "run,round,client,weight,avg_loss,val_dice,loss_scale\n";
  for (const auto& t : rows) {
    out << fmt::format("{},{},{},{:.4f},{:.4f},{:.4f},{:.4f}\n", t.run, t.round, t.client, t.weight, t.avg_loss,
                       t.val_dice, t.loss_scale);
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::vector<ResultRow> rows;
  bool header_seen = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::istringstream fields(line);
    std::string cell;
    ResultRow row;
    std::getline(fields, row.run, ',');
    for (auto& s : row.scores) {
      if (!std::getline(fields, cell, ',')) throw UsageError(fmt::format("short results row: {}", line));
      s = std::stod(cell);
    }
    if (!std::getline(fields, cell, ',')) throw UsageError(fmt::format("short results row: {}", line));
    row.average = std::stod(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string run_json(const ExperimentConfig& cfg) {
  using nlohmann::json;
  json j;
  const auto& b = cfg.benchmark;
  j["benchmark"] = {{"seed", b.seed},
                    {"image_size", b.image_size},
                    {"noise_sigma", b.noise_sigma},
                    {"dataset_file", b.dataset_file ? json(*b.dataset_file) : json(nullptr)},
                    {"model",
                     {{"patch_radius", b.model.patch_radius},
                      {"hidden_units", b.model.hidden_units},
                      {"num_classes", b.model.num_classes},
                      {"param_count", b.model.param_count()}}},
                    {"init_seed", derive_seed(b.seed, kInitStream)}};
  json data_seeds = json::array();
  for (std::uint32_t id = 0; id < 3; ++id) data_seeds.push_back(derive_seed(b.seed, id));
  j["benchmark"]["dataset_seeds"] = data_seeds;

  j["runs"] = json::array();
  for (const auto& r : cfg.runs) {
    json run = {{"name", r.name},
                {"mode", r.mode == RunMode::local ? "local" : "federated"},
                {"client_mode", to_string(r.client_mode)},
                {"mu", r.mu},
                {"gamma", r.gamma},
                {"alpha", r.alpha},
                {"kpi_exponent", r.kpi_exponent},
                {"rounds", r.rounds},
                {"local_epochs", r.local_epochs},
                {"batch_size", r.batch_size},
                {"lr", r.lr},
                {"share_fraction", r.share_fraction}};
    if (r.mode == RunMode::local) {
      run["client"] = r.local_client;
    } else {
      run["strategy"] = to_string(r.strategy);
      run["T"] = r.temperature;
      run["xi"] = r.xi;
      run["normalize_xi"] = r.normalize_xi;
      run["min_clients"] = r.min_clients;
      run["carrier"] = to_string(r.carrier);
    }
    json seeds = json::array();
    for (std::uint32_t id = 0; id < 3; ++id) seeds.push_back(client_config_for(r, id, b.seed).seed);
    run["client_seeds"] = seeds;
    j["runs"].push_back(std::move(run));
  }
  return j.dump(2) + "\n";
}

std::string format_table(std::span<const ResultRow> rows) {
  std::size_t width = 3;
  for (const auto& r : rows) width = std::max(width, r.run.size());
  std::string out = fmt::format("{:<{}} | {:>8} | {:>8} {:>8} | {:>8} | {:>8}\n", "run", width, "A organ",
                                "B organ", "B tumor", "C organ", "All avg");
  out += std::string(width + 55, '-') + "\n";
  for (const auto& r : rows) {
    out += fmt::format("{:<{}} | {:>7.1f}% | {:>7.1f}% {:>7.1f}% | {:>7.1f}% | {:>7.1f}%\n", r.run, width,
                       100 * r.scores[0], 100 * r.scores[1], 100 * r.scores[2], 100 * r.scores[3], 100 * r.average);
  }
  return out;
}

}  // namespace fedsim
