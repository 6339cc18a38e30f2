// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>
#include <unordered_set>

#include <unistd.h>

#include <fmt/format.h>

#include "fedsim/client.hpp"
#include "fedsim/experiments.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/server.hpp"
#include "fedsim/transport.hpp"
#include "fedsim/wire.hpp"

namespace fs = std::filesystem;
using namespace fedsim;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, std::string what) {
    if (!ok) {
      pass = false;
      notes.push_back("FAILED " + std::move(what));
    }
  }
  void note(std::string what) { notes.push_back(std::move(what)); }
};

int failures = 0;

// `spent` is time already charged to this criterion by shared setup.
void criterion(int id, const char* title, double budget_s, const std::function<void(Verdict&)>& body,
               double spent = 0.0) {
  Verdict v;
  const auto start = Clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.require(false, fmt::format("exception: {}", e.what()));
  }
  const double secs = spent + std::chrono::duration<double>(Clock::now() - start).count();
  v.require(secs < budget_s, fmt::format("runtime {:.1f}s over the {:.0f}s budget", secs, budget_s));
  if (!v.pass) ++failures;
  std::cout << fmt::format("{} [C{}] {} ({:.1f}s)", v.pass ? "PASS" : "FAIL", id, title, secs) << "\n";
  for (const auto& n : v.notes) std::cout << "       " << n << "\n";
  std::cout.flush();
}

ParamVector random_vector(std::size_t n, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  ParamVector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

void gradient_check(Verdict& v) {
  const ModelSpec spec;
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> pixel(-1.0, 1.0);
  const LabelSpace spaces[] = {{0, 1, 2}, {0, 1}};
  constexpr double kStep = 1e-5;
  constexpr double kFloor = 1e-6;  // denominator floor for coordinates whose gradient is ~0
  double worst = 0.0;
  std::size_t coords = 0;
  for (int draw = 0; draw < 20; ++draw) {
    Batch b;
    b.height = 6;
    b.width = 6;
    b.label_space = spaces[draw % 2];
    std::uniform_int_distribution<std::size_t> pick(0, b.label_space.size() - 1);
    for (int i = 0; i < 2 * 36; ++i) {
      b.images.push_back(pixel(rng));
      b.labels.push_back(static_cast<std::uint8_t>(b.label_space[pick(rng)]));
    }
    const ParamVector w = random_vector(spec.param_count(), rng, 0.5);
    const ParamVector anchor = random_vector(spec.param_count(), rng, 0.5);
    // draws cycle through plain, proximal, DTP-scaled and both
    const double mu = (draw % 4 == 1 || draw % 4 == 3) ? 0.2 : 0.0;
    const double scale = (draw % 4 >= 2) ? 0.37 + 0.1 * draw : 1.0;
    const auto lg = loss_and_grad(w, spec, b, scale, mu, &anchor);
    ParamVector probe = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      probe[i] = w[i] + kStep;
      const double up = loss_and_grad(probe, spec, b, scale, mu, &anchor).loss;
      probe[i] = w[i] - kStep;
      const double down = loss_and_grad(probe, spec, b, scale, mu, &anchor).loss;
      probe[i] = w[i];
      const double fd = (up - down) / (2.0 * kStep);
      const double rel = std::abs(fd - lg.grad[i]) / std::max({std::abs(fd), std::abs(lg.grad[i]), kFloor});
      worst = std::max(worst, rel);
      ++coords;
    }
  }
  v.note(fmt::format("{} coordinates over 20 draws, max relative error {:.3e} (threshold 1e-5)", coords, worst));
  v.require(worst < 1e-5, "finite-difference agreement");
}

// ---------------------------------------------------------------------------
// 2. Algebraic identities

void identities(Verdict& v) {
  const std::uint32_t sizes[] = {48, 165, 18};
  const auto w = fedavg_weights(sizes);
  const double table[] = {0.2078, 0.7143, 0.0779};
  for (int k = 0; k < 3; ++k) {
    v.require(std::abs(w[k] - table[k]) <= 1e-4, fmt::format("fedavg weight {} = {:.6f}", k, w[k]));
  }
  v.note(fmt::format("fedavg([48,165,18]) = [{:.4f}, {:.4f}, {:.4f}]", w[0], w[1], w[2]));

  const std::uint32_t ids[] = {0, 1, 2};
  const auto fresh = initial_state(ParamVector(4), ids);
  for (int xi : {1, 2, 3}) {
    for (double x : dwa_weights(fresh, 2.0, xi)) {
      v.require(x == static_cast<double>(xi) / 3.0, fmt::format("DWA round-1 weight xi={} is {}", xi, x));
    }
  }

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> loss(0.05, 3.0);
  double worst_sum = 0.0, worst_uniform = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto s = fresh;
    for (auto& [id, h] : s.loss_history) h = {loss(rng), loss(rng)};
    const int xi = 1 + trial % 3;
    const auto lam = dwa_weights(s, 2.0, xi);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(lam.begin(), lam.end(), 0.0) - xi));
    for (double x : dwa_weights(s, 1e6, 1)) worst_uniform = std::max(worst_uniform, std::abs(x - 1.0 / 3.0));
  }
  v.require(worst_sum <= 1e-9, fmt::format("sum of DWA weights off by {:.2e}", worst_sum));
  v.require(worst_uniform <= 1e-4, fmt::format("DWA at T=1e6 off uniform by {:.2e}", worst_uniform));
  v.note(fmt::format("max |sum - xi| = {:.1e}, max deviation from uniform at T=1e6 = {:.1e}", worst_sum,
                     worst_uniform));

  for (double gamma : {0.5, 1.0, 2.0, 5.0}) {
    v.require(dtp_weight(1.0, gamma) == 0.0, fmt::format("dtp_weight(1, {}) != 0", gamma));
  }

  std::uniform_int_distribution<std::size_t> dim(1, 2000);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t P = dim(rng);
    ParamVector d = random_vector(P, rng, 1.0);
    if (trial % 3 == 0) {
      for (auto& x : d) x = std::round(4.0 * x) / 4.0;  // plenty of ties
    }
    const auto m = top_fraction_mask(d, 0.25);
    const auto expect = static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(P)));
    v.require(m.entries.size() == expect, fmt::format("P={} kept {} entries, expected {}", P, m.entries.size(), expect));
    std::vector<char> kept(P, 0);
    double min_kept = INFINITY;
    for (const auto& e : m.entries) {
      kept[e.index] = 1;
      min_kept = std::min(min_kept, std::abs(e.delta));
    }
    double max_dropped = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      if (!kept[p]) max_dropped = std::max(max_dropped, std::abs(d[p]));
    }
    v.require(min_kept >= max_dropped, fmt::format("P={} retained a smaller magnitude than it dropped", P));
  }
}

// ---------------------------------------------------------------------------
// 3. Reduction equivalences

void reductions(Verdict& v) {
  BenchmarkConfig bc;
  const auto ctx = make_context(bc);

  RunConfig plain;
  plain.name = "fedavg";
  plain.rounds = 5;
  RunConfig prox = plain;
  prox.name = "fedprox";
  prox.client_mode = ClientMode::fedprox;
  prox.mu = 0.0;

  auto setups_for = [&](const RunConfig& run) {
    std::vector<ClientSetup> s;
    for (const auto& d : ctx.datasets) s.push_back({client_config_for(run, d.client_id, ctx.seed), &d});
    return s;
  };
  const auto a = run_federation(aggregation_config_for(plain), ctx.spec, ctx.initial, setups_for(plain));
  const auto b = run_federation(aggregation_config_for(prox), ctx.spec, ctx.initial, setups_for(prox));
  v.require(a == b, "FedProx(mu=0) differs from FedAvg");
  v.require(a.trace.size() == 5, "FedAvg run did not complete 5 rounds");
  v.note(fmt::format("FedProx(mu=0) vs FedAvg, 5 rounds: {}", a == b ? "bit-identical" : "DIFFERENT"));

  // Single client, full share: R rounds of FL against R x local_epochs epochs
  // of standalone training with the optimizer reset every local_epochs.
  RunConfig single;
  single.name = "single";
  single.rounds = 4;
  single.local_epochs = 2;
  single.share_fraction = 1.0;
  single.min_clients = 1;
  single.mode = RunMode::local;
  single.local_client = 2;
  const ClientDataset& data = ctx.datasets[2];
  const ClientConfig ccfg = client_config_for(single, data.client_id, ctx.seed);

  const ClientSetup one[] = {{ccfg, &data}};
  const auto fl = run_federation(aggregation_config_for(single), ctx.spec, ctx.initial, one);

  // standalone oracle written against the primitives, not the Client class
  ParamVector params = ctx.initial;
  const std::size_t n = data.train.size(), bs = static_cast<std::size_t>(ccfg.batch_size);
  const std::size_t per_round = static_cast<std::size_t>(ccfg.local_epochs) * ((n + bs - 1) / bs);
  for (std::uint32_t r = 1; r <= single.rounds; ++r) {
    const ParamVector start = params;
    Adam adam(params.size(), ccfg.adam);
    std::mt19937_64 rng(derive_seed(ccfg.seed, r));
    std::vector<std::size_t> order(n);
    std::size_t it = 0;
    for (int e = 0; e < ccfg.local_epochs; ++e) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t s = 0; s < n; s += bs, ++it) {
        const auto batch = make_batch(data.train, std::span(order).subspan(s, std::min(n, s + bs) - s), data.height,
                                      data.width, data.label_space);
        adam.step(params, data_loss_and_grad(params, ctx.spec, batch).grad,
                  cosine_lr(ccfg.lr, ccfg.lr_floor_ratio, it, per_round));
      }
    }
    // the round boundary re-bases on the shared delta, as a lone client's server does
    ParamVector delta = difference(params, start);
    params = start;
    add_in_place(params, delta);
  }
  const auto local = run_local_baseline(single, ctx);
  v.require(fl.final_params == params, "single-client FL differs from the standalone oracle");
  v.require(local.model == params, "local baseline differs from the standalone oracle");
  std::size_t differing = 0;
  for (std::size_t i = 0; i < params.size(); ++i) differing += fl.final_params[i] != params[i];
  v.note(fmt::format("share_fraction=1 single-client FL ({} rounds x {} epochs) vs standalone: {} of {} coordinates differ",
                     single.rounds, single.local_epochs, differing, params.size()));
}

// ---------------------------------------------------------------------------
// 4. Oracle equivalence

RoundReport random_report(std::mt19937_64& rng, std::uint32_t id, std::uint32_t round, std::size_t dim) {
  std::uniform_int_distribution<std::uint32_t> small(1, 500);
  RoundReport r;
  r.client_id = id;
  r.round = round;
  r.update = top_fraction_mask(random_vector(dim, rng, 1.0), 0.05 + 0.9 * (small(rng) / 500.0), round);
  r.avg_loss = small(rng) / 100.0;
  r.n_samples = small(rng);
  r.iterations = small(rng);
  r.mean_loss_scale = small(rng) / 250.0;
  for (int c = 1; c <= static_cast<int>(small(rng) % 3); ++c) r.val_dice[c] = small(rng) / 500.0;
  return r;
}

void oracles(Verdict& v) {
  std::mt19937_64 rng(4242);
  const std::size_t P = 467;
  const std::uint32_t ids[] = {0, 1, 2};
  const ParamVector global = random_vector(P, rng, 1.0);
  std::vector<RoundReport> reports;
  for (std::uint32_t id : {1u, 2u, 0u}) reports.push_back(random_report(rng, id, 1, P));
  const std::vector<double> weights = {0.25, 0.6, 0.15};
  const auto next = aggregate(initial_state(global, ids), reports, weights, 3);

  std::vector<double> acc(P, 0.0);
  for (std::uint32_t id = 0; id < 3; ++id) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (reports[k].client_id != id) continue;
      std::vector<double> dense(P, 0.0);
      for (const auto& e : reports[k].update.entries) dense[e.index] = e.delta;
      for (std::size_t p = 0; p < P; ++p) acc[p] += weights[k] * dense[p];
    }
  }
  std::size_t mismatched = 0;
  for (std::size_t p = 0; p < P; ++p) mismatched += next.global_params[p] != global[p] + acc[p];
  v.require(mismatched == 0, fmt::format("{} coordinates differ from the dense oracle", mismatched));
  v.note(fmt::format("aggregate vs dense oracle: {} of {} coordinates differ", mismatched, P));

  int bad = 0;
  std::uniform_int_distribution<std::uint32_t> any;
  for (int i = 0; i < 1000; ++i) {
    Message m;
    switch (1 + i % 6) {
      case 1: m = {MessageKind::join, 0, kUnassignedId, JoinRequest{}}; break;
      case 2: m = {MessageKind::join_ack, 0, kServerId, JoinAck{(std::uint64_t{any(rng)} << 32) | any(rng), any(rng) % 3}}; break;
      case 3: m = make_global_model(any(rng) % 60, random_vector(any(rng) % 600, rng, 1.0)); break;
      case 4: m = make_client_update(random_report(rng, any(rng) % 3, 1 + any(rng) % 60, 1 + any(rng) % 600)); break;
      case 5: m = make_control(MessageKind::round_done, any(rng) % 60, kServerId); break;
      default: m = make_control(MessageKind::shutdown, any(rng) % 60, kServerId); break;
    }
    const auto frame = encode(m);
    if (!(decode(frame) == m) || encode(decode(frame)) != frame) ++bad;
  }
  v.require(bad == 0, fmt::format("{} of 1000 messages failed to round-trip", bad));
  v.note(fmt::format("encode/decode: {} of 1000 randomized messages round-tripped", 1000 - bad));

  const auto ctx = make_context(BenchmarkConfig{});
  RunConfig run;
  run.name = "carrier";
  run.rounds = 5;
  std::vector<ClientSetup> setups;
  for (const auto& d : ctx.datasets) setups.push_back({client_config_for(run, d.client_id, ctx.seed), &d});
  const auto loop = run_federation(aggregation_config_for(run), ctx.spec, ctx.initial, setups);
  FederationOptions sock;
  sock.carrier = Carrier::socket;
  const auto net = run_federation(aggregation_config_for(run), ctx.spec, ctx.initial, setups, sock);
  v.require(loop == net, "loopback and socket results differ");
  v.note(fmt::format("loopback vs socket, 3 clients x 5 rounds: {}", loop == net ? "bit-identical" : "DIFFERENT"));
}

// ---------------------------------------------------------------------------
// 5 & 6. Benchmark runs over seeds {1, 2, 3}

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<ResultRow> locals;
  ResultRow fedavg, dwa;
  double benchmark_seconds = 0.0;
};

std::vector<SeedResult> benchmark_results;

RunConfig benchmark_run(std::string name) {
  RunConfig r;
  r.name = std::move(name);
  r.rounds = 20;
  r.local_epochs = 2;
  return r;
}

void run_benchmark() {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto start = Clock::now();
    BenchmarkConfig bc;
    bc.seed = seed;
    const auto ctx = make_context(bc);
    SeedResult s;
    s.seed = seed;
    for (std::uint32_t c = 0; c < 3; ++c) {
      auto r = benchmark_run(fmt::format("local_{}", "ABC"[c]));
      r.mode = RunMode::local;
      r.local_client = c;
      s.locals.push_back(run_local_baseline(r, ctx).row);
    }
    s.fedavg = run_federated(benchmark_run("fedavg"), ctx).row;
    auto dwa = benchmark_run("dwa");
    dwa.strategy = Strategy::dwa;
    dwa.temperature = 2.0;
    dwa.xi = 2;
    s.dwa = run_federated(dwa, ctx).row;
    s.benchmark_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    benchmark_results.push_back(std::move(s));
  }
}

std::string row_text(const ResultRow& r) {
  return fmt::format("{:<8} A {:.3f} | B {:.3f} {:.3f} | C {:.3f} | avg {:.3f}", r.run, r.scores[0], r.scores[1],
                     r.scores[2], r.scores[3], r.average);
}

void generalization(Verdict& v) {
  std::vector<double> fed, best_local, gaps;
  for (const auto& s : benchmark_results) {
    double best = -1.0;
    for (const auto& l : s.locals) best = std::max(best, l.average);
    fed.push_back(s.fedavg.average);
    best_local.push_back(best);
    gaps.push_back(s.fedavg.average - best);
    v.note(fmt::format("seed {}:", s.seed));
    for (const auto& l : s.locals) v.note("  " + row_text(l));
    v.note("  " + row_text(s.fedavg));
  }
  const double gap = median(fed) - median(best_local);
  v.note(fmt::format("median FedAvg all-avg {:.4f}, median best-local all-avg {:.4f}, gap {:+.4f} (need >= +0.05); "
                     "median per-seed gap {:+.4f}",
                     median(fed), median(best_local), gap, median(gaps)));
  v.require(gap >= 0.05, "FedAvg does not beat the best local model by 5 Dice points");
}

void small_client(Verdict& v) {
  std::vector<double> fed, dwa;
  for (const auto& s : benchmark_results) {
    fed.push_back(s.fedavg.scores[3]);
    dwa.push_back(s.dwa.scores[3]);
    v.note(fmt::format("seed {}: client C organ FedAvg {:.4f}, DWA(T=2, xi=2) {:.4f}", s.seed, s.fedavg.scores[3],
                       s.dwa.scores[3]));
  }
  const double margin = median(dwa) - median(fed);
  v.note(fmt::format("median client C organ: FedAvg {:.4f}, DWA {:.4f}, margin {:+.4f}", median(fed), median(dwa),
                     margin));
  v.require(margin >= 0.0, "DWA is worse than FedAvg on client C");
}

// ---------------------------------------------------------------------------
// 7. Determinism and privacy boundary

std::string without_first_line(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto nl = all.find('\n');
  return nl == std::string::npos ? std::string{} : all.substr(nl + 1);
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

void determinism_and_privacy(Verdict& v) {
  const fs::path dir = fs::temp_directory_path() / fmt::format("fedsim_acceptance_{}", ::getpid());
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path config = dir / "det.ini";
  {
    std::ofstream out(config);
    out << "[benchmark]\nseed = 5\n\n[defaults]\nrounds = 3\nlocal_epochs = 1\n\n"
           "[run:local_C]\nmode = local\nclient = 2\n\n"
           "[run:fedavg]\n\n"
           "[run:dtp_dwa]\nclient_mode = dtp\nstrategy = dwa\nxi = 2\ncarrier = socket\n";
  }
  for (const char* name : {"a", "b"}) {
    const std::string cmd = fmt::format("\"{}\" run --config \"{}\" --out \"{}\" > \"{}\" 2>&1", FEDSIM_CLI_PATH,
                                        config.string(), (dir / name).string(), (dir / (std::string(name) + ".log")).string());
    const int rc = std::system(cmd.c_str());
    v.require(rc == 0, fmt::format("CLI run '{}' exited with status {}", name, rc));
  }
  for (const char* file : {"results.csv", "trace.csv"}) {
    const auto a = dir / "a" / file, b = dir / "b" / file;
    v.require(fs::exists(a) && fs::exists(b), fmt::format("{} missing", file));
    v.require(first_line(a).rfind('#', 0) == 0, fmt::format("{} lacks its stamp line", file));
    const bool same = without_first_line(a) == without_first_line(b) && !without_first_line(a).empty();
    v.require(same, fmt::format("{} differs between identical invocations", file));
    v.note(fmt::format("{}: {} after the stamp line", file, same ? "byte-identical" : "DIFFERENT"));
  }
  {
    std::ifstream in(dir / "a" / "results.csv");
    const auto rows = read_results_csv(in);
    v.require(rows.size() == 3, fmt::format("results.csv has {} rows, expected 3", rows.size()));
  }

  // Frame-tag audit of a socket run.
  const auto ctx = make_context(BenchmarkConfig{});
  RunConfig run;
  run.name = "audit";
  run.rounds = 3;
  run.local_epochs = 1;
  run.client_mode = ClientMode::dtp;
  run.strategy = Strategy::dwa;
  std::vector<ClientSetup> setups;
  for (const auto& d : ctx.datasets) setups.push_back({client_config_for(run, d.client_id, ctx.seed), &d});
  std::vector<std::vector<std::uint8_t>> frames;
  FederationOptions opt;
  opt.carrier = Carrier::socket;
  opt.observer = [&](std::span<const std::uint8_t> f) { frames.emplace_back(f.begin(), f.end()); };
  run_federation(aggregation_config_for(run), ctx.spec, ctx.initial, setups, opt);

  std::map<int, int> tags;
  int undecodable = 0;
  std::size_t bytes = 0;
  for (const auto& f : frames) {
    bytes += f.size();
    if (f.size() < kHeaderBytes || !is_known_kind(f[4])) {
      ++tags[f.size() > 4 ? f[4] : -1];
      ++undecodable;
      continue;
    }
    ++tags[f[4]];
    try {
      decode(f);
    } catch (const std::exception&) {
      ++undecodable;
    }
  }
  std::string tag_text;
  for (const auto& [t, n] : tags) tag_text += fmt::format(" {}:{}", t, n);
  v.note(fmt::format("{} frames, {} bytes; tag counts{}", frames.size(), bytes, tag_text));
  v.require(!frames.empty(), "observer saw no frames");
  v.require(undecodable == 0, fmt::format("{} frames were not well-formed protocol messages", undecodable));
  for (int t = 1; t <= 6; ++t) v.require(tags.contains(t), fmt::format("message kind {} never observed", t));
  v.require(tags.size() == 6, "frames carry tags outside the six message kinds");

  // Raw-data search: every 8-pixel run of any image (as big-endian doubles, the
  // wire encoding) and every label row that contains foreground.
  std::unordered_set<std::string_view> windows;
  constexpr std::size_t kImageWindow = 64;
  for (const auto& f : frames) {
    const std::string_view s(reinterpret_cast<const char*>(f.data()), f.size());
    for (std::size_t i = 0; i + kImageWindow <= s.size(); ++i) windows.insert(s.substr(i, kImageWindow));
  }
  std::string blob;
  for (const auto& f : frames) blob.append(reinterpret_cast<const char*>(f.data()), f.size());
  std::size_t image_hits = 0, label_hits = 0, rows_checked = 0;
  for (const auto& d : ctx.datasets) {
    for (const auto* split : {&d.train, &d.val, &d.test}) {
      for (const auto& s : *split) {
        std::string enc;
        for (double x : s.image) {
          std::uint64_t bits;
          std::memcpy(&bits, &x, 8);
          for (int k = 7; k >= 0; --k) enc.push_back(static_cast<char>(bits >> (8 * k)));
        }
        for (std::size_t i = 0; i + kImageWindow <= enc.size(); i += 8) {
          image_hits += windows.contains(std::string_view(enc).substr(i, kImageWindow));
        }
        for (int y = 0; y < d.height; ++y) {
          const auto* row = s.labels.data() + static_cast<std::size_t>(y) * d.width;
          if (std::all_of(row, row + d.width, [](std::uint8_t c) { return c == 0; })) continue;
          ++rows_checked;
          label_hits += blob.find(std::string_view(reinterpret_cast<const char*>(row), d.width)) != std::string::npos;
        }
      }
    }
  }
  v.note(fmt::format("raw-data search: {} image windows and {} of {} foreground label rows found in frames",
                     image_hits, label_hits, rows_checked));
  v.require(image_hits == 0, "image bytes appear on the wire");
  v.require(label_hits == 0, "label bytes appear on the wire");
  fs::remove_all(dir);
}

}  // namespace

int main() {
  std::cout << "fedsim acceptance suite\n";
  criterion(1, "gradient matches central finite differences", 30, gradient_check);
  criterion(2, "algebraic identities", 10, identities);
  criterion(3, "reduction equivalences", 120, reductions);
  criterion(4, "oracle equivalence", 60, oracles);

  const auto start = Clock::now();
  run_benchmark();
  const double bench = std::chrono::duration<double>(Clock::now() - start).count();
  std::cout << fmt::format("       benchmark runs (seeds 1-3, 3 local + FedAvg + DWA each): {:.1f}s\n", bench);
  // Both criteria share the same benchmark runs; each is charged the full time.
  criterion(5, "FedAvg beats the best local model by >= 5 Dice points", 600, generalization, bench);
  criterion(6, "DWA(T=2, xi=2) no worse than FedAvg on the small client", 600, small_client, bench);

  criterion(7, "determinism and privacy boundary", 180, determinism_and_privacy);

  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : fmt::format("{} CRITERIA FAILED", failures)) << "\n";
  return failures == 0 ? 0 : 1;
}
