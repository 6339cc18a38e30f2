#include "fedsim/optim.hpp"

#include <cmath>
#include <numbers>

#include "fedsim/error.hpp"

namespace fedsim {

Adam::Adam(std::size_t size, AdamParams hp) : hp_(hp), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(ParamVector& params, const ParamVector& grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw UsageError("Adam::step: size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = hp_.beta1 * m_[i] + (1.0 - hp_.beta1) * grad[i];
    v_[i] = hp_.beta2 * v_[i] + (1.0 - hp_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + hp_.epsilon);
  }
}

void sgd_step(ParamVector& params, const ParamVector& grad, double lr) {
  if (params.size() != grad.size()) {
    throw UsageError("sgd_step: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr * grad[i];
  }
}

double cosine_lr(double base_lr, double floor_ratio, std::size_t iteration, std::size_t total) {
  if (total <= 1) return base_lr;
  const double floor = floor_ratio * base_lr;
  const double progress = static_cast<double>(iteration) / static_cast<double>(total - 1);
  return floor + 0.5 * (base_lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace fedsim
