#include "fedsim/param_math.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "fedsim/error.hpp"

namespace fedsim {

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::size_t retained_count(std::size_t dim, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError(fmt::format("share fraction must lie in (0, 1], got {}", fraction));
  }
  // The relative nudge keeps products like 0.1 * 30 = 3.0000000000000004 from
  // rounding up to 4.
  const double exact = fraction * static_cast<double>(dim);
  auto m = static_cast<std::size_t>(std::ceil(exact * (1.0 - 1e-12)));
  return std::clamp<std::size_t>(m, 1, dim);
}

SparseUpdate top_fraction_mask(const ParamVector& delta, double fraction, std::uint32_t round) {
  if (delta.empty()) {
    throw UsageError("top_fraction_mask: empty delta");
  }
  if (!delta.all_finite()) {
    throw UsageError("top_fraction_mask: delta contains non-finite values");
  }
  const std::size_t dim = delta.size();
  const std::size_t keep = retained_count(dim, fraction);

  std::vector<std::uint32_t> order(dim);
  std::iota(order.begin(), order.end(), 0u);
  auto larger = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(delta[a]);
    const double mb = std::abs(delta[b]);
    return ma > mb || (ma == mb && a < b);
  };
  if (keep < dim) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), larger);
    order.resize(keep);
  }
  std::sort(order.begin(), order.end());

  SparseUpdate out;
  out.round = round;
  out.dim = static_cast<std::uint32_t>(dim);
  out.entries.reserve(keep);
  for (std::uint32_t idx : order) {
    out.entries.push_back({idx, delta[idx]});
  }
  return out;
}

void validate(const SparseUpdate& update) {
  std::int64_t last = -1;
  for (const auto& e : update.entries) {
    if (static_cast<std::int64_t>(e.index) <= last) {
      throw UsageError(fmt::format("sparse update indices not strictly increasing at {}", e.index));
    }
    if (e.index >= update.dim) {
      throw UsageError(fmt::format("sparse index {} out of range for dimension {}", e.index, update.dim));
    }
    if (!std::isfinite(e.delta)) {
      throw UsageError(fmt::format("sparse delta at index {} is not finite", e.index));
    }
    last = e.index;
  }
}

ParamVector densify(const SparseUpdate& update) {
  validate(update);
  ParamVector dense(update.dim);
  for (const auto& e : update.entries) {
    dense[e.index] = e.delta;
  }
  return dense;
}

ParamVector weighted_sum(std::span<const SparseUpdate> updates, std::span<const double> weights) {
  if (updates.size() != weights.size()) {
    throw UsageError(fmt::format("weighted_sum: {} updates but {} weights", updates.size(), weights.size()));
  }
  if (updates.empty()) {
    throw UsageError("weighted_sum: no updates");
  }
  const std::uint32_t dim = updates.front().dim;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (!std::isfinite(weights[k]) || weights[k] < 0.0) {
      throw UsageError(fmt::format("weighted_sum: weight {} is {}", k, weights[k]));
    }
    if (updates[k].dim != dim) {
      throw UsageError(fmt::format("weighted_sum: update {} has dimension {}, expected {}", k, updates[k].dim, dim));
    }
    validate(updates[k]);
  }

  ParamVector result(dim);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    for (const auto& e : updates[k].entries) {
      result[e.index] += weights[k] * e.delta;
    }
  }
  return result;
}

double sq_distance(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) {
    throw UsageError(fmt::format("sq_distance: lengths {} and {} differ", a.size(), b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

ParamVector difference(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) {
    throw UsageError(fmt::format("difference: lengths {} and {} differ", a.size(), b.size()));
  }
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = a[i] - b[i];
  }
  return out;
}

void add_in_place(ParamVector& target, const ParamVector& delta) {
  if (target.size() != delta.size()) {
    throw UsageError(fmt::format("add_in_place: lengths {} and {} differ", target.size(), delta.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i] += delta[i];
  }
}

}  // namespace fedsim
