#pragma once

#include <cstdint>
#include <map>
#include <string_view>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/param_math.hpp"

namespace fedsim {

enum class ClientMode { plain, fedprox, dtp };
enum class OptimizerKind { adam, sgd };

std::string_view to_string(ClientMode mode);
ClientMode parse_client_mode(std::string_view text);

struct ClientConfig {
  std::uint32_t client_id = 0;
  ClientMode mode = ClientMode::plain;
  double mu = 0.0;            // FedProx strength
  double gamma = 1.0;         // DTP focusing exponent
  double alpha = 0.9;         // DTP EMA factor
  double kpi_exponent = 1.0;  // DTP KPI exponent
  int local_epochs = 10;
  int batch_size = 8;
  double lr = 5e-4;
  double lr_floor_ratio = 0.01;
  OptimizerKind optimizer = OptimizerKind::adam;
  AdamParams adam;
  double share_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const;

  bool operator==(const ClientConfig&) const = default;
};

struct RoundReport {
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;
  SparseUpdate update;             // sparsified (final - global)
  double avg_loss = 0.0;           // mean unscaled Dice + CE over the round's iterations
  std::uint32_t n_samples = 0;     // local training-set size
  std::map<int, double> val_dice;  // received global model, foreground classes only
  std::uint32_t iterations = 0;
  double mean_loss_scale = 1.0;    // mean DTP weight over the round; 1 outside DTP mode

  bool operator==(const RoundReport&) const = default;
};

struct DtpState {
  double kappa_bar = 1.0;
  bool initialized = false;

  bool operator==(const DtpState&) const = default;
};

inline constexpr double kKpiFloor = 1e-6;

// d^exponent clamped to [1e-6, 1].
double kpi(double batch_dice, double exponent);

// First observation initializes the average; afterwards (1-a)k + a*prev.
DtpState kpi_ema(const DtpState& prev, double kappa, double alpha);

// -(1 - kbar)^gamma * log(kbar).
double dtp_weight(double kappa_bar, double gamma);

struct TrainingLog {
  std::vector<double> base_losses;
  std::vector<double> loss_scales;
  std::vector<double> batch_dice;
};

// Stateful local trainer for one client. DTP state carries over from round
// to round; the optimizer is rebuilt at the start of every round.
class Client {
 public:
  Client(ClientConfig cfg, ModelSpec spec, const ClientDataset& dataset);

  RoundReport local_train(const ParamVector& global_params, std::uint32_t round);

  const ClientConfig& config() const noexcept { return cfg_; }
  const ClientDataset& dataset() const noexcept { return *dataset_; }
  const ModelSpec& model_spec() const noexcept { return spec_; }
  const DtpState& dtp_state() const noexcept { return dtp_; }
  const TrainingLog& last_log() const noexcept { return log_; }
  const ParamVector& last_final_params() const noexcept { return final_params_; }

  // Number of optimizer steps per round.
  std::size_t iterations_per_round() const;

 private:
  ClientConfig cfg_;
  ModelSpec spec_;
  const ClientDataset* dataset_;
  DtpState dtp_;
  TrainingLog log_;
  ParamVector final_params_;
};

// Foreground classes (label space minus background) used for validation.
std::vector<int> foreground_classes(const LabelSpace& space);

}  // namespace fedsim
