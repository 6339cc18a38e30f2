#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedsim/client.hpp"
#include "fedsim/param_math.hpp"

namespace fedsim {

enum class Strategy { fedavg, dwa };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

struct AggregationConfig {
  Strategy strategy = Strategy::fedavg;
  double temperature = 2.0;  // DWA T
  int xi = 1;                // DWA scale; weights sum to xi unless normalized
  bool normalize_xi = false;
  std::uint32_t min_clients = 3;
  std::uint32_t rounds = 60;

  void validate() const;

  bool operator==(const AggregationConfig&) const = default;
};

// Round-averaged losses from the previous two rounds. Both start at 1 so
// that every ratio equals 1 after the first round.
struct LossHistory {
  double previous = 1.0;         // L_{r-1}
  double before_previous = 1.0;  // L_{r-2}

  bool operator==(const LossHistory&) const = default;
};

inline constexpr double kLossFloor = 1e-12;

struct Checkpoint {
  std::uint32_t round = 0;
  ParamVector params;
  double score = 0.0;

  bool operator==(const Checkpoint&) const = default;
};

struct ClientRoundRecord {
  std::uint32_t client_id = 0;
  double weight = 0.0;
  double avg_loss = 0.0;
  double val_score = 0.0;
  double loss_scale = 1.0;

  bool operator==(const ClientRoundRecord&) const = default;
};

struct RoundRecord {
  std::uint32_t round = 0;
  std::vector<ClientRoundRecord> clients;  // sorted by client id

  bool operator==(const RoundRecord&) const = default;
};

struct GlobalState {
  std::uint32_t round = 1;  // round currently being collected
  ParamVector global_params;
  std::map<std::uint32_t, LossHistory> loss_history;
  std::optional<Checkpoint> best;
  std::vector<RoundRecord> trace;

  std::uint32_t completed_rounds() const noexcept { return round - 1; }

  bool operator==(const GlobalState&) const = default;
};

GlobalState initial_state(ParamVector params, std::span<const std::uint32_t> client_ids);

// n_k / sum(n).
std::vector<double> fedavg_weights(std::span<const std::uint32_t> sample_counts);

// xi * softmax(rho / T) with rho_k = L_{k,r-1} / L_{k,r-2}, in client-id order
// of state.loss_history. Divided by xi when `normalize` is set.
std::vector<double> dwa_weights(const GlobalState& state, double temperature, int xi, bool normalize = false);

// Mean over classes of the reported validation Dice.
double validation_score(const RoundReport& report);

// Applies one round. With fewer than min_clients reports the state comes back
// unchanged (the server keeps waiting). `weights` pairs with `reports`.
GlobalState aggregate(GlobalState state, std::span<const RoundReport> reports, std::span<const double> weights,
                      std::uint32_t min_clients);

// Best checkpoint by mean client validation score; earlier round wins ties.
const Checkpoint& select_best(const GlobalState& state);

// Stateful wrapper that buffers reports and aggregates once enough arrive.
class Server {
 public:
  Server(AggregationConfig cfg, ParamVector initial, std::span<const std::uint32_t> client_ids);

  // Returns true when this report completed the round.
  bool submit(RoundReport report);

  std::vector<double> weights_for(std::span<const RoundReport> reports) const;

  bool finished() const noexcept { return state_.completed_rounds() >= cfg_.rounds; }
  const GlobalState& state() const noexcept { return state_; }
  const AggregationConfig& config() const noexcept { return cfg_; }

 private:
  AggregationConfig cfg_;
  GlobalState state_;
  std::vector<RoundReport> pending_;
};

}  // namespace fedsim
