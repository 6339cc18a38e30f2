#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fedsim/param_math.hpp"
#include "fedsim/sample.hpp"

namespace fedsim {

// Per-pixel segmentation network: the zero-padded square patch around a pixel
// feeds one tanh hidden layer, followed by a softmax over num_classes.
//
// Parameter layout inside the flat vector:
//   [ W1 (hidden x patch_area) | b1 (hidden) | W2 (classes x hidden) | b2 (classes) ]
struct ModelSpec {
  int patch_radius = 2;
  int hidden_units = 16;
  int num_classes = 3;

  int patch_diameter() const noexcept { return 2 * patch_radius + 1; }
  int patch_area() const noexcept { return patch_diameter() * patch_diameter(); }
  std::size_t param_count() const noexcept;

  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

inline constexpr int kBackground = 0;
inline constexpr int kOrgan = 1;
inline constexpr int kTumor = 2;

// Soft Dice smoothing, added to numerator and denominator.
inline constexpr double kDiceSmoothing = 1e-5;

struct Batch {
  int height = 0;
  int width = 0;
  std::vector<double> images;         // B x H x W
  std::vector<std::uint8_t> labels;   // B x H x W
  LabelSpace label_space;

  std::size_t pixels_per_image() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::size_t batch_size() const noexcept {
    return pixels_per_image() == 0 ? 0 : images.size() / pixels_per_image();
  }

  void validate(const ModelSpec& spec) const;
};

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, int height, int width,
                 const LabelSpace& label_space);
Batch make_batch(std::span<const Sample> samples, int height, int width, const LabelSpace& label_space);

// Hidden layer ~ N(0, 1/patch_area); output layer starts at zero so that
// untrained models predict the uniform distribution.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

// Per-pixel class probabilities, B x H x W x C.
std::vector<double> forward(const ParamVector& params, const ModelSpec& spec, const Batch& batch);

// Argmax of forward(); ties resolve to the lower class id.
std::vector<std::uint8_t> predict(const ParamVector& params, const ModelSpec& spec, const Batch& batch);

struct LossTerms {
  double cross_entropy = 0.0;
  double dice_loss = 0.0;  // mean over label-space classes of 1 - soft Dice

  double base() const noexcept { return cross_entropy + dice_loss; }
  double soft_dice() const noexcept { return 1.0 - dice_loss; }
};

// Loss terms and the gradient of the unscaled Dice + CE loss. Both terms use a
// softmax restricted to the batch's label space, so classes outside it
// receive no supervision.
struct DataLoss {
  LossTerms terms;
  ParamVector grad;
};
DataLoss data_loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Batch& batch);

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

// loss = loss_scale * (Dice + CE) + prox_mu / 2 * |params - anchor|^2.
// anchor is required when prox_mu > 0.
LossAndGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Batch& batch,
                          double loss_scale, double prox_mu, const ParamVector* anchor);

// Combines a data gradient with scaling and the proximal pull. Shared by
// loss_and_grad and the client trainer.
LossAndGrad compose_loss(const DataLoss& data, const ParamVector& params, double loss_scale, double prox_mu,
                         const ParamVector* anchor);

// Mean over label-space classes of (1 - soft Dice). probs and targets are
// N x num_classes; channels outside label_space are never read.
double soft_dice_loss(std::span<const double> probs, std::span<const double> targets, int num_classes,
                      const LabelSpace& label_space);

// Hard Dice 2|A n B| / (|A| + |B|) for one class. Both masks empty -> 1.
double dice_score(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth, int class_id);

// Hard Dice per requested class over a whole split, pooled across images.
std::map<int, double> evaluate_dice(const ParamVector& params, const ModelSpec& spec,
                                    std::span<const Sample> samples, int height, int width,
                                    std::span<const int> classes);

}  // namespace fedsim
