#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "fedsim/error.hpp"

namespace fedsim {
namespace {

struct Layout {
  std::size_t area, hidden, classes;
  std::size_t w1, b1, w2, b2, total;

  explicit Layout(const ModelSpec& spec)
      : area(static_cast<std::size_t>(spec.patch_area())),
        hidden(static_cast<std::size_t>(spec.hidden_units)),
        classes(static_cast<std::size_t>(spec.num_classes)) {
    w1 = 0;
    b1 = w1 + hidden * area;
    w2 = b1 + hidden;
    b2 = w2 + classes * hidden;
    total = b2 + classes;
  }
};

void check_params(const ParamVector& params, const ModelSpec& spec) {
  if (params.size() != spec.param_count()) {
    throw UsageError(fmt::format("parameter vector has length {}, model expects {}", params.size(),
                                 spec.param_count()));
  }
}

// Fills `patch` with the zero-padded neighbourhood of (y, x).
void extract_patch(const double* image, int height, int width, int y, int x, int radius, double* patch) {
  std::size_t k = 0;
  for (int dy = -radius; dy <= radius; ++dy) {
    const int yy = y + dy;
    for (int dx = -radius; dx <= radius; ++dx) {
      const int xx = x + dx;
      patch[k++] = (yy >= 0 && yy < height && xx >= 0 && xx < width) ? image[yy * width + xx] : 0.0;
    }
  }
}

// Hidden activations and logits for one patch.
void pixel_forward(const Layout& L, const double* p, const double* patch, double* hidden, double* logits) {
  for (std::size_t j = 0; j < L.hidden; ++j) {
    const double* row = p + L.w1 + j * L.area;
    double a = p[L.b1 + j];
    for (std::size_t i = 0; i < L.area; ++i) {
      a += row[i] * patch[i];
    }
    hidden[j] = std::tanh(a);
  }
  for (std::size_t c = 0; c < L.classes; ++c) {
    const double* row = p + L.w2 + c * L.hidden;
    double z = p[L.b2 + c];
    for (std::size_t j = 0; j < L.hidden; ++j) {
      z += row[j] * hidden[j];
    }
    logits[c] = z;
  }
}

// Softmax over the classes flagged in `active`; inactive entries get 0.
void masked_softmax(const double* logits, const std::vector<char>& active, std::size_t classes, double* out) {
  double zmax = -INFINITY;
  for (std::size_t c = 0; c < classes; ++c) {
    if (active[c]) zmax = std::max(zmax, logits[c]);
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    out[c] = active[c] ? std::exp(logits[c] - zmax) : 0.0;
    sum += out[c];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    out[c] /= sum;
  }
}

std::vector<char> active_mask(const LabelSpace& space, std::size_t classes) {
  std::vector<char> active(classes, 0);
  for (int c : space) active[static_cast<std::size_t>(c)] = 1;
  return active;
}

}  // namespace

std::size_t ModelSpec::param_count() const noexcept {
  const auto area = static_cast<std::size_t>(patch_area());
  const auto h = static_cast<std::size_t>(hidden_units);
  const auto c = static_cast<std::size_t>(num_classes);
  return (area * h + h) + (h * c + c);
}

void ModelSpec::validate() const {
  if (patch_radius < 0) throw UsageError("patch_radius must be >= 0");
  if (hidden_units < 1) throw UsageError("hidden_units must be >= 1");
  if (num_classes < 2 || num_classes > 255) throw UsageError("num_classes must lie in [2, 255]");
}

void Batch::validate(const ModelSpec& spec) const {
  spec.validate();
  if (height < spec.patch_diameter() || width < spec.patch_diameter()) {
    throw UsageError(fmt::format("batch images {}x{} are smaller than the {}-pixel patch", height, width,
                                 spec.patch_diameter()));
  }
  const std::size_t ppi = pixels_per_image();
  if (images.empty() || images.size() % ppi != 0) {
    throw UsageError("batch image buffer is empty or not a whole number of images");
  }
  if (labels.size() != images.size()) {
    throw UsageError("batch labels and images differ in size");
  }
  if (label_space.empty() || label_space.front() != kBackground ||
      !std::is_sorted(label_space.begin(), label_space.end()) ||
      std::adjacent_find(label_space.begin(), label_space.end()) != label_space.end() ||
      label_space.back() >= spec.num_classes) {
    throw UsageError("label space must be sorted, unique, contain background and fit the model");
  }
  const auto active = active_mask(label_space, static_cast<std::size_t>(spec.num_classes));
  for (std::uint8_t y : labels) {
    if (y >= spec.num_classes || !active[y]) {
      throw UsageError(fmt::format("label {} is outside the batch label space", static_cast<int>(y)));
    }
  }
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, int height, int width,
                 const LabelSpace& label_space) {
  Batch batch;
  batch.height = height;
  batch.width = width;
  batch.label_space = label_space;
  const std::size_t ppi = batch.pixels_per_image();
  batch.images.reserve(indices.size() * ppi);
  batch.labels.reserve(indices.size() * ppi);
  for (std::size_t idx : indices) {
    const Sample& s = samples[idx];
    if (s.image.size() != ppi || s.labels.size() != ppi) {
      throw UsageError("sample does not match the declared image size");
    }
    batch.images.insert(batch.images.end(), s.image.begin(), s.image.end());
    batch.labels.insert(batch.labels.end(), s.labels.begin(), s.labels.end());
  }
  return batch;
}

Batch make_batch(std::span<const Sample> samples, int height, int width, const LabelSpace& label_space) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(samples, all, height, width, label_space);
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Layout L(spec);
  ParamVector p(L.total);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(L.area)));
  for (std::size_t i = 0; i < L.hidden * L.area; ++i) {
    p[L.w1 + i] = normal(rng);
  }
  return p;
}

std::vector<double> forward(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
  check_params(params, spec);
  spec.validate();
  const Layout L(spec);
  const std::size_t ppi = batch.pixels_per_image();
  const std::size_t count = batch.batch_size();
  const std::vector<char> all(L.classes, 1);

  std::vector<double> probs(count * ppi * L.classes);
  std::vector<double> patch(L.area), hidden(L.hidden), logits(L.classes);
  for (std::size_t b = 0; b < count; ++b) {
    const double* image = batch.images.data() + b * ppi;
    for (int y = 0; y < batch.height; ++y) {
      for (int x = 0; x < batch.width; ++x) {
        const std::size_t n = b * ppi + static_cast<std::size_t>(y * batch.width + x);
        extract_patch(image, batch.height, batch.width, y, x, spec.patch_radius, patch.data());
        pixel_forward(L, params.data(), patch.data(), hidden.data(), logits.data());
        masked_softmax(logits.data(), all, L.classes, probs.data() + n * L.classes);
      }
    }
  }
  return probs;
}

std::vector<std::uint8_t> predict(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
  const auto probs = forward(params, spec, batch);
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  std::vector<std::uint8_t> out(probs.size() / classes);
  for (std::size_t n = 0; n < out.size(); ++n) {
    const double* row = probs.data() + n * classes;
    out[n] = static_cast<std::uint8_t>(std::max_element(row, row + classes) - row);
  }
  return out;
}

double soft_dice_loss(std::span<const double> probs, std::span<const double> targets, int num_classes,
                      const LabelSpace& label_space) {
  if (probs.size() != targets.size() || num_classes <= 0 || probs.size() % static_cast<std::size_t>(num_classes)) {
    throw UsageError("soft_dice_loss: probability and target shapes disagree");
  }
  if (label_space.empty()) {
    throw UsageError("soft_dice_loss: empty label space");
  }
  const auto classes = static_cast<std::size_t>(num_classes);
  const std::size_t pixels = probs.size() / classes;
  double loss = 0.0;
  for (int c : label_space) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t n = 0; n < pixels; ++n) {
      const double q = probs[n * classes + static_cast<std::size_t>(c)];
      const double g = targets[n * classes + static_cast<std::size_t>(c)];
      inter += q * g;
      psum += q;
      gsum += g;
    }
    loss += 1.0 - (2.0 * inter + kDiceSmoothing) / (psum + gsum + kDiceSmoothing);
  }
  return loss / static_cast<double>(label_space.size());
}

DataLoss data_loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
  check_params(params, spec);
  batch.validate(spec);
  const Layout L(spec);
  const std::size_t ppi = batch.pixels_per_image();
  const std::size_t count = batch.batch_size();
  const std::size_t pixels = count * ppi;
  const auto active = active_mask(batch.label_space, L.classes);
  const double inv_pixels = 1.0 / static_cast<double>(pixels);
  const double inv_space = 1.0 / static_cast<double>(batch.label_space.size());
  const double* p = params.data();

  std::vector<double> probs(pixels * L.classes), targets(pixels * L.classes, 0.0);
  std::vector<double> hiddens(pixels * L.hidden);
  std::vector<double> patch(L.area), logits(L.classes);

  DataLoss out;
  double ce = 0.0;
  for (std::size_t b = 0; b < count; ++b) {
    const double* image = batch.images.data() + b * ppi;
    for (int y = 0; y < batch.height; ++y) {
      for (int x = 0; x < batch.width; ++x) {
        const std::size_t n = b * ppi + static_cast<std::size_t>(y * batch.width + x);
        extract_patch(image, batch.height, batch.width, y, x, spec.patch_radius, patch.data());
        pixel_forward(L, p, patch.data(), hiddens.data() + n * L.hidden, logits.data());
        double* q = probs.data() + n * L.classes;
        masked_softmax(logits.data(), active, L.classes, q);
        const std::uint8_t label = batch.labels[n];
        targets[n * L.classes + label] = 1.0;
        ce -= std::log(q[label]);
      }
    }
  }
  out.terms.cross_entropy = ce * inv_pixels;
  out.terms.dice_loss = soft_dice_loss(probs, targets, spec.num_classes, batch.label_space);

  // Per-class Dice numerators and denominators.
  std::vector<double> num(L.classes, 0.0), den(L.classes, 0.0);
  for (int c : batch.label_space) {
    const auto cc = static_cast<std::size_t>(c);
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t n = 0; n < pixels; ++n) {
      inter += probs[n * L.classes + cc] * targets[n * L.classes + cc];
      psum += probs[n * L.classes + cc];
      gsum += targets[n * L.classes + cc];
    }
    num[cc] = 2.0 * inter + kDiceSmoothing;
    den[cc] = psum + gsum + kDiceSmoothing;
  }

  out.grad = ParamVector(L.total);
  double* g = out.grad.data();
  std::vector<double> dq(L.classes), dz(L.classes), dh(L.hidden);
  for (std::size_t b = 0; b < count; ++b) {
    const double* image = batch.images.data() + b * ppi;
    for (int y = 0; y < batch.height; ++y) {
      for (int x = 0; x < batch.width; ++x) {
        const std::size_t n = b * ppi + static_cast<std::size_t>(y * batch.width + x);
        const double* q = probs.data() + n * L.classes;
        const double* t = targets.data() + n * L.classes;
        const double* h = hiddens.data() + n * L.hidden;

        // d(dice loss)/dq, then through the restricted softmax.
        double qdq = 0.0;
        for (std::size_t c = 0; c < L.classes; ++c) {
          dq[c] = active[c] ? -inv_space * (2.0 * t[c] * den[c] - num[c]) / (den[c] * den[c]) : 0.0;
          qdq += q[c] * dq[c];
        }
        for (std::size_t c = 0; c < L.classes; ++c) {
          dz[c] = active[c] ? q[c] * (dq[c] - qdq) + (q[c] - t[c]) * inv_pixels : 0.0;
        }

        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t c = 0; c < L.classes; ++c) {
          if (dz[c] == 0.0) continue;
          double* gw2 = g + L.w2 + c * L.hidden;
          const double* w2 = p + L.w2 + c * L.hidden;
          for (std::size_t j = 0; j < L.hidden; ++j) {
            gw2[j] += dz[c] * h[j];
            dh[j] += w2[j] * dz[c];
          }
          g[L.b2 + c] += dz[c];
        }

        extract_patch(image, batch.height, batch.width, y, x, spec.patch_radius, patch.data());
        for (std::size_t j = 0; j < L.hidden; ++j) {
          const double da = dh[j] * (1.0 - h[j] * h[j]);
          if (da == 0.0) continue;
          double* gw1 = g + L.w1 + j * L.area;
          for (std::size_t i = 0; i < L.area; ++i) {
            gw1[i] += da * patch[i];
          }
          g[L.b1 + j] += da;
        }
      }
    }
  }
  return out;
}

LossAndGrad compose_loss(const DataLoss& data, const ParamVector& params, double loss_scale, double prox_mu,
                         const ParamVector* anchor) {
  if (!(loss_scale >= 0.0) || !std::isfinite(loss_scale)) {
    throw UsageError(fmt::format("loss_scale must be finite and non-negative, got {}", loss_scale));
  }
  if (!(prox_mu >= 0.0) || !std::isfinite(prox_mu)) {
    throw UsageError(fmt::format("prox_mu must be finite and non-negative, got {}", prox_mu));
  }
  if (prox_mu > 0.0 && anchor == nullptr) {
    throw UsageError("proximal term requested without an anchor model");
  }
  LossAndGrad out;
  out.loss = loss_scale * data.terms.base();
  out.grad = ParamVector(data.grad.size());
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    out.grad[i] = loss_scale * data.grad[i];
  }
  if (prox_mu > 0.0) {
    out.loss += 0.5 * prox_mu * sq_distance(params, *anchor);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      out.grad[i] += prox_mu * (params[i] - (*anchor)[i]);
    }
  }
  return out;
}

LossAndGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Batch& batch,
                          double loss_scale, double prox_mu, const ParamVector* anchor) {
  if (!(loss_scale > 0.0)) {
    throw UsageError(fmt::format("loss_scale must be positive, got {}", loss_scale));
  }
  if (prox_mu > 0.0 && anchor == nullptr) {
    throw UsageError("proximal term requested without an anchor model");
  }
  return compose_loss(data_loss_and_grad(params, spec, batch), params, loss_scale, prox_mu, anchor);
}

double dice_score(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth, int class_id) {
  if (predicted.size() != truth.size()) {
    throw UsageError(fmt::format("dice_score: shapes {} and {} differ", predicted.size(), truth.size()));
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool in_a = predicted[i] == class_id;
    const bool in_b = truth[i] == class_id;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::map<int, double> evaluate_dice(const ParamVector& params, const ModelSpec& spec,
                                    std::span<const Sample> samples, int height, int width,
                                    std::span<const int> classes) {
  std::vector<std::uint8_t> predicted, truth;
  LabelSpace all_classes(static_cast<std::size_t>(spec.num_classes));
  for (int c = 0; c < spec.num_classes; ++c) all_classes[static_cast<std::size_t>(c)] = c;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t idx[] = {i};
    const Batch one = make_batch(samples, idx, height, width, all_classes);
    const auto pred = predict(params, spec, one);
    predicted.insert(predicted.end(), pred.begin(), pred.end());
    truth.insert(truth.end(), one.labels.begin(), one.labels.end());
  }
  std::map<int, double> out;
  for (int c : classes) {
    out[c] = dice_score(predicted, truth, c);
  }
  return out;
}

}  // namespace fedsim
