#pragma once

#include <cstddef>
#include <vector>

#include "fedsim/param_math.hpp"

namespace fedsim {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamParams&) const = default;
};

class Adam {
 public:
  Adam(std::size_t size, AdamParams hp = {});

  void step(ParamVector& params, const ParamVector& grad, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamParams hp_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

void sgd_step(ParamVector& params, const ParamVector& grad, double lr);

// Cosine annealing over `total` iterations from base_lr down to
// floor_ratio * base_lr at the last one.
double cosine_lr(double base_lr, double floor_ratio, std::size_t iteration, std::size_t total);

}  // namespace fedsim
