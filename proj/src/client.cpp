#include "fedsim/client.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

std::string_view to_string(ClientMode mode) {
  switch (mode) {
    case ClientMode::plain: return "plain";
    case ClientMode::fedprox: return "fedprox";
    case ClientMode::dtp: return "dtp";
  }
  return "?";
}

ClientMode parse_client_mode(std::string_view text) {
  if (text == "plain") return ClientMode::plain;
  if (text == "fedprox") return ClientMode::fedprox;
  if (text == "dtp") return ClientMode::dtp;
  throw UsageError(fmt::format("unknown client mode '{}'", text));
}

void ClientConfig::validate() const {
  if (local_epochs < 1) throw UsageError("local_epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("lr must be finite and non-negative");
  if (!(lr_floor_ratio >= 0.0 && lr_floor_ratio <= 1.0)) throw UsageError("lr_floor_ratio must lie in [0, 1]");
  if (!(share_fraction > 0.0 && share_fraction <= 1.0)) throw UsageError("share_fraction must lie in (0, 1]");
  // mu == 0 is accepted in fedprox mode; it reduces to plain training.
  if (mode == ClientMode::fedprox && !(mu >= 0.0 && std::isfinite(mu))) {
    throw UsageError("fedprox mode needs a finite mu >= 0");
  }
  if (mode == ClientMode::dtp) {
    if (!(gamma > 0.0)) throw UsageError("dtp mode needs gamma > 0");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw UsageError("dtp mode needs alpha in [0, 1)");
    if (!(kpi_exponent > 0.0)) throw UsageError("dtp mode needs kpi_exponent > 0");
  }
}

double kpi(double batch_dice, double exponent) {
  return std::clamp(std::pow(batch_dice, exponent), kKpiFloor, 1.0);
}

DtpState kpi_ema(const DtpState& prev, double kappa, double alpha) {
  if (!prev.initialized) return {kappa, true};
  return {(1.0 - alpha) * kappa + alpha * prev.kappa_bar, true};
}

double dtp_weight(double kappa_bar, double gamma) {
  if (kappa_bar >= 1.0) return 0.0;
  return -std::pow(1.0 - kappa_bar, gamma) * std::log(kappa_bar);
}

std::vector<int> foreground_classes(const LabelSpace& space) {
  std::vector<int> out;
  for (int c : space) {
    if (c != kBackground) out.push_back(c);
  }
  return out;
}

Client::Client(ClientConfig cfg, ModelSpec spec, const ClientDataset& dataset)
    : cfg_(cfg), spec_(spec), dataset_(&dataset) {
  cfg_.validate();
  spec_.validate();
}

std::size_t Client::iterations_per_round() const {
  const std::size_t n = dataset_->train.size();
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  return static_cast<std::size_t>(cfg_.local_epochs) * ((n + bs - 1) / bs);
}

RoundReport Client::local_train(const ParamVector& global_params, std::uint32_t round) {
  if (global_params.size() != spec_.param_count()) {
    throw UsageError(fmt::format("client {}: global model has length {}, expected {}", cfg_.client_id,
                                 global_params.size(), spec_.param_count()));
  }
  const auto& train = dataset_->train;
  if (train.empty()) {
    throw UsageError(fmt::format("client {}: empty training set", cfg_.client_id));
  }

  RoundReport report;
  report.client_id = cfg_.client_id;
  report.round = round;
  report.n_samples = static_cast<std::uint32_t>(train.size());
  report.val_dice = evaluate_dice(global_params, spec_, dataset_->val, dataset_->height, dataset_->width,
                                  foreground_classes(dataset_->label_space));

  const std::size_t total = iterations_per_round();
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  const double mu = cfg_.mode == ClientMode::fedprox ? cfg_.mu : 0.0;

  std::mt19937_64 rng(derive_seed(cfg_.seed, round));
  ParamVector params = global_params;
  Adam adam(params.size(), cfg_.adam);
  log_ = {};
  log_.base_losses.reserve(total);

  std::vector<std::size_t> order(train.size());
  std::size_t iteration = 0;
  for (int epoch = 0; epoch < cfg_.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs, ++iteration) {
      const std::size_t stop = std::min(order.size(), start + bs);
      const Batch batch = make_batch(train, std::span(order).subspan(start, stop - start), dataset_->height,
                                     dataset_->width, dataset_->label_space);
      const DataLoss data = data_loss_and_grad(params, spec_, batch);
      const double base = data.terms.base();
      if (!std::isfinite(base)) {
        throw DivergenceError(
            fmt::format("client {} round {}: non-finite loss at iteration {}", cfg_.client_id, round, iteration),
            iteration);
      }

      double scale = 1.0;
      const double soft_dice = std::clamp(data.terms.soft_dice(), 0.0, 1.0);
      if (cfg_.mode == ClientMode::dtp) {
        dtp_ = kpi_ema(dtp_, kpi(soft_dice, cfg_.kpi_exponent), cfg_.alpha);
        scale = dtp_weight(dtp_.kappa_bar, cfg_.gamma);
      }
      const LossAndGrad step = compose_loss(data, params, scale, mu, &global_params);
      if (!std::isfinite(step.loss)) {
        throw DivergenceError(
            fmt::format("client {} round {}: non-finite loss at iteration {}", cfg_.client_id, round, iteration),
            iteration);
      }

      const double lr = cosine_lr(cfg_.lr, cfg_.lr_floor_ratio, iteration, total);
      if (cfg_.optimizer == OptimizerKind::adam) {
        adam.step(params, step.grad, lr);
      } else {
        sgd_step(params, step.grad, lr);
      }

      log_.base_losses.push_back(base);
      log_.loss_scales.push_back(scale);
      log_.batch_dice.push_back(soft_dice);
    }
  }

  report.iterations = static_cast<std::uint32_t>(total);
  report.avg_loss = std::accumulate(log_.base_losses.begin(), log_.base_losses.end(), 0.0) /
                    static_cast<double>(total);
  report.mean_loss_scale = std::accumulate(log_.loss_scales.begin(), log_.loss_scales.end(), 0.0) /
                           static_cast<double>(total);
  if (!params.all_finite()) {
    throw DivergenceError(fmt::format("client {} round {}: parameters diverged", cfg_.client_id, round), total);
  }
  report.update = top_fraction_mask(difference(params, global_params), cfg_.share_fraction, round);
  final_params_ = std::move(params);
  return report;
}

}  // namespace fedsim
