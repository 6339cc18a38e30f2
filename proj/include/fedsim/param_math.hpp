#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace fedsim {

// Flat model parameterization. The unit shipped between server and clients.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t size, double fill = 0.0) : values_(size, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

struct SparseEntry {
  std::uint32_t index = 0;
  double delta = 0.0;

  bool operator==(const SparseEntry&) const = default;
};

// Top-fraction slice of a client's model delta. `dim` is the dense length P.
struct SparseUpdate {
  std::uint32_t round = 0;
  std::uint32_t dim = 0;
  std::vector<SparseEntry> entries;

  bool operator==(const SparseUpdate&) const = default;
};

// ceil(fraction * dim), clamped to [1, dim].
std::size_t retained_count(std::size_t dim, double fraction);

// Keeps the ceil(fraction * P) entries of largest magnitude. Ties at the
// cutoff go to the lower index. Output indices are strictly increasing.
SparseUpdate top_fraction_mask(const ParamVector& delta, double fraction, std::uint32_t round = 0);

// Throws UsageError unless indices are strictly increasing, below dim, and finite.
void validate(const SparseUpdate& update);

ParamVector densify(const SparseUpdate& update);

// result[p] = sum_k weights[k] * delta_k[p]; unshared coordinates contribute 0.
ParamVector weighted_sum(std::span<const SparseUpdate> updates, std::span<const double> weights);

double sq_distance(const ParamVector& a, const ParamVector& b);

ParamVector difference(const ParamVector& a, const ParamVector& b);  // a - b

void add_in_place(ParamVector& target, const ParamVector& delta);

}  // namespace fedsim
