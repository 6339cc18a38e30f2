#include "fedsim/server.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "fedsim/error.hpp"

namespace fedsim {

std::string_view to_string(Strategy s) {
  return s == Strategy::fedavg ? "fedavg" : "dwa";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "fedavg") return Strategy::fedavg;
  if (text == "dwa") return Strategy::dwa;
  throw UsageError(fmt::format("unknown aggregation strategy '{}'", text));
}

void AggregationConfig::validate() const {
  if (strategy == Strategy::dwa) {
    if (!(temperature > 0.0)) throw UsageError("DWA temperature must be positive");
    if (xi < 1) throw UsageError("DWA xi must be a positive integer");
  }
  if (min_clients < 1) throw UsageError("min_clients must be >= 1");
}

GlobalState initial_state(ParamVector params, std::span<const std::uint32_t> client_ids) {
  GlobalState state;
  state.global_params = std::move(params);
  for (auto id : client_ids) {
    state.loss_history[id] = LossHistory{};
  }
  return state;
}

std::vector<double> fedavg_weights(std::span<const std::uint32_t> sample_counts) {
  if (sample_counts.empty()) throw UsageError("fedavg_weights: no clients");
  double total = 0.0;
  for (auto n : sample_counts) {
    if (n == 0) throw UsageError("fedavg_weights: every client needs a positive sample count");
    total += static_cast<double>(n);
  }
  std::vector<double> w;
  w.reserve(sample_counts.size());
  for (auto n : sample_counts) {
    w.push_back(static_cast<double>(n) / total);
  }
  return w;
}

std::vector<double> dwa_weights(const GlobalState& state, double temperature, int xi, bool normalize) {
  if (state.loss_history.empty()) throw UsageError("dwa_weights: no client loss history");
  if (!(temperature > 0.0)) throw UsageError("dwa_weights: temperature must be positive");
  if (xi < 1) throw UsageError("dwa_weights: xi must be a positive integer");

  std::vector<double> scaled;
  for (const auto& [id, h] : state.loss_history) {
    const double rho = std::max(h.previous, kLossFloor) / std::max(h.before_previous, kLossFloor);
    if (!std::isfinite(rho)) {
      throw ProtocolError(fmt::format("client {}: loss ratio is not finite", id));
    }
    scaled.push_back(rho / temperature);
  }
  const double top = *std::max_element(scaled.begin(), scaled.end());
  double sum = 0.0;
  for (auto& s : scaled) {
    s = std::exp(s - top);
    sum += s;
  }
  const double scale = normalize ? 1.0 : static_cast<double>(xi);
  for (auto& s : scaled) {
    s = scale * s / sum;
  }
  return scaled;
}

double validation_score(const RoundReport& report) {
  if (report.val_dice.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [cls, d] : report.val_dice) sum += d;
  return sum / static_cast<double>(report.val_dice.size());
}

GlobalState aggregate(GlobalState state, std::span<const RoundReport> reports, std::span<const double> weights,
                      std::uint32_t min_clients) {
  if (reports.size() != weights.size()) {
    throw UsageError(fmt::format("aggregate: {} reports but {} weights", reports.size(), weights.size()));
  }
  if (reports.size() < min_clients) {
    return state;
  }
  for (const auto& r : reports) {
    if (r.round != state.round || r.update.round != state.round) {
      throw ProtocolError(fmt::format("client {} sent an update for round {} during round {}", r.client_id,
                                      r.round, state.round));
    }
    if (r.update.dim != state.global_params.size()) {
      throw ProtocolError(fmt::format("client {} sent an update of dimension {}, model has {}", r.client_id,
                                      r.update.dim, state.global_params.size()));
    }
  }

  // Deterministic order regardless of arrival.
  std::vector<std::size_t> order(reports.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return reports[a].client_id < reports[b].client_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (reports[order[i]].client_id == reports[order[i - 1]].client_id) {
      throw ProtocolError(fmt::format("duplicate update from client {}", reports[order[i]].client_id));
    }
  }

  std::vector<SparseUpdate> updates;
  std::vector<double> ordered_weights;
  RoundRecord record;
  record.round = state.round;
  double score = 0.0;
  for (std::size_t i : order) {
    const RoundReport& r = reports[i];
    updates.push_back(r.update);
    ordered_weights.push_back(weights[i]);
    record.clients.push_back({r.client_id, weights[i], r.avg_loss, validation_score(r), r.mean_loss_scale});
    score += validation_score(r);
  }
  score /= static_cast<double>(reports.size());

  // The reported validation scores describe the model broadcast this round.
  if (!state.best || score > state.best->score) {
    state.best = Checkpoint{state.round, state.global_params, score};
  }

  add_in_place(state.global_params, weighted_sum(updates, ordered_weights));

  for (std::size_t i : order) {
    auto& h = state.loss_history[reports[i].client_id];
    h.before_previous = h.previous;
    h.previous = reports[i].avg_loss > 0.0 ? reports[i].avg_loss : kLossFloor;
  }
  state.trace.push_back(std::move(record));
  ++state.round;
  return state;
}

const Checkpoint& select_best(const GlobalState& state) {
  if (state.completed_rounds() == 0 || !state.best) {
    throw UsageError("select_best: no completed rounds");
  }
  return *state.best;
}

Server::Server(AggregationConfig cfg, ParamVector initial, std::span<const std::uint32_t> client_ids)
    : cfg_(cfg), state_(initial_state(std::move(initial), client_ids)) {
  cfg_.validate();
}

std::vector<double> Server::weights_for(std::span<const RoundReport> reports) const {
  if (cfg_.strategy == Strategy::fedavg) {
    std::vector<std::uint32_t> counts;
    for (const auto& r : reports) counts.push_back(r.n_samples);
    return fedavg_weights(counts);
  }
  // DWA weights are indexed by client id through the loss history.
  const auto all = dwa_weights(state_, cfg_.temperature, cfg_.xi, cfg_.normalize_xi);
  std::vector<double> out;
  for (const auto& r : reports) {
    auto it = state_.loss_history.find(r.client_id);
    if (it == state_.loss_history.end()) {
      throw ProtocolError(fmt::format("update from unregistered client {}", r.client_id));
    }
    out.push_back(all[static_cast<std::size_t>(std::distance(state_.loss_history.begin(), it))]);
  }
  return out;
}

bool Server::submit(RoundReport report) {
  if (report.round < state_.round) {
    return false;  // late update for a round that already closed
  }
  if (report.round != state_.round) {
    throw ProtocolError(fmt::format("client {} sent an update for round {} during round {}", report.client_id,
                                    report.round, state_.round));
  }
  if (!state_.loss_history.contains(report.client_id)) {
    throw ProtocolError(fmt::format("update from unregistered client {}", report.client_id));
  }
  for (const auto& p : pending_) {
    if (p.client_id == report.client_id) {
      throw ProtocolError(fmt::format("duplicate update from client {} in round {}", report.client_id, report.round));
    }
  }
  pending_.push_back(std::move(report));
  if (pending_.size() < cfg_.min_clients) {
    return false;
  }
  const auto weights = weights_for(pending_);
  state_ = aggregate(std::move(state_), pending_, weights, cfg_.min_clients);
  pending_.clear();
  return true;
}

}  // namespace fedsim
