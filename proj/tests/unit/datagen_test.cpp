#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fedsim/datagen.hpp"
#include "fedsim/error.hpp"
#include "fedsim/model.hpp"

using namespace fedsim;

namespace {

double organ_pixel_mean(const ClientDataset& d) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto* split : {&d.train, &d.val, &d.test}) {
    for (const auto& s : *split) {
      for (std::size_t i = 0; i < s.image.size(); ++i) {
        if (s.labels[i] == kOrgan) {
          sum += s.image[i];
          ++n;
        }
      }
    }
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("split counts") {
  CHECK(split_counts(80).train == 48);
  CHECK(split_counts(275).train == 165);
  CHECK(split_counts(30).train == 18);
  const auto s = split_counts(31);
  CHECK(s.train == 18);
  CHECK(s.val == 6);
  CHECK(s.test == 7);
}

TEST_CASE("default benchmark shape") {
  const auto specs = default_benchmark(1);
  REQUIRE(specs.size() == 3);
  std::vector<ClientDataset> data;
  for (const auto& s : specs) data.push_back(generate(s));
  CHECK(data[0].train.size() == 48);
  CHECK(data[1].train.size() == 165);
  CHECK(data[2].train.size() == 18);
  CHECK(data[0].label_space == LabelSpace{0, 1});
  CHECK(data[1].label_space == LabelSpace{0, 1, 2});
  CHECK(data[2].label_space == LabelSpace{0, 1});
  for (const auto& d : data) {
    bool has_tumor = false, has_organ = false;
    for (const auto& s : d.train) {
      CHECK(s.image.size() == 32u * 32u);
      has_tumor |= std::count(s.labels.begin(), s.labels.end(), kTumor) > 0;
      has_organ |= std::count(s.labels.begin(), s.labels.end(), kOrgan) > 0;
      CHECK(*std::max_element(s.image.begin(), s.image.end()) <= 1.0);
      CHECK(*std::min_element(s.image.begin(), s.image.end()) >= -1.0);
    }
    CHECK(has_organ);
    CHECK(has_tumor == (d.client_id == 1));
  }
  CHECK_THROWS_AS(default_benchmark(1, 12), UsageError);
}

TEST_CASE("generation is deterministic per seed") {
  const auto spec = default_benchmark(5)[2];
  CHECK(generate(spec) == generate(spec));
  auto other = spec;
  other.seed = 6;
  CHECK_FALSE(generate(spec) == generate(other));
}

TEST_CASE("intensity shift moves foreground pixels only") {
  auto spec = default_benchmark(3)[2];
  spec.noise_sigma = 0.0;
  auto flat = spec;
  flat.intensity_shift = 0.0;
  const auto shifted = generate(spec), base = generate(flat);
  REQUIRE(shifted.train.size() == base.train.size());
  for (std::size_t k = 0; k < base.train.size(); ++k) {
    const auto& a = shifted.train[k];
    const auto& b = base.train[k];
    CHECK(a.labels == b.labels);
    double diff = 0.0, fg = 0.0;
    for (std::size_t i = 0; i < a.image.size(); ++i) {
      diff += a.image[i] - b.image[i];
      fg += a.labels[i] != kBackground;
    }
    const double n = static_cast<double>(a.image.size());
    CHECK(diff / n == doctest::Approx(spec.intensity_shift * fg / n).epsilon(1e-9));
  }

  // With noise, the organ-pixel means of A and C sit about 0.15 apart.
  const auto specs = default_benchmark(1);
  const double gap = organ_pixel_mean(generate(specs[0])) - organ_pixel_mean(generate(specs[2]));
  CHECK(std::abs(gap - 0.15) < 0.03);
}

TEST_CASE("tumors sit strictly inside the organ") {
  const auto d = generate(default_benchmark(2)[1]);
  const int H = d.height, W = d.width;
  int tumors = 0;
  for (const auto& s : d.train) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        if (s.labels[y * W + x] != kTumor) continue;
        ++tumors;
        const int ny[] = {y - 1, y + 1, y, y};
        const int nx[] = {x, x, x - 1, x + 1};
        for (int k = 0; k < 4; ++k) {
          REQUIRE(ny[k] >= 0);
          REQUIRE(nx[k] < W);
          CHECK(s.labels[ny[k] * W + nx[k]] != kBackground);
        }
      }
    }
  }
  CHECK(tumors > 0);
}

TEST_CASE("organ-only clients fold tumor pixels into the organ class") {
  auto spec = default_benchmark(4)[1];
  spec.has_tumor_labels = false;
  const auto d = generate(spec);
  CHECK(d.label_space == LabelSpace{0, 1});
  for (const auto& s : d.train) CHECK(std::count(s.labels.begin(), s.labels.end(), kTumor) == 0);
}

TEST_CASE("dataset file round trip") {
  std::vector<ClientDataset> data;
  for (auto s : default_benchmark(9, 16)) {
    s.n_total = 6;
    data.push_back(generate(s));
  }
  const auto path = std::filesystem::temp_directory_path() / "fedsim_datagen_test.fsds";
  write_datasets(path, data);
  CHECK(read_datasets(path) == data);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS_AS(read_datasets(path), UsageError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_datasets(path), UsageError);
}

TEST_CASE("invalid specs are rejected") {
  ClientDatasetSpec s;
  s.n_total = 4;
  CHECK_THROWS_AS(generate(s), UsageError);
  s.n_total = 10;
  s.image_size = 16;
  CHECK_THROWS_AS(generate(s), UsageError);  // organ of radius 9 cannot fit
  s.image_size = 32;
  s.tumor_radius = {2.0, 6.0};
  CHECK_THROWS_AS(generate(s), UsageError);
  s.tumor_radius = {2.0, 4.0};
  s.noise_sigma = -1.0;
  CHECK_THROWS_AS(generate(s), UsageError);
}

TEST_CASE("client C test images are darker by the shift times the foreground fraction") {
  const auto specs = default_benchmark(1);
  auto unshifted = specs[2];
  unshifted.intensity_shift = 0.0;
  const auto c = generate(specs[2]), flat = generate(unshifted);
  double diff = 0.0, fg = 0.0, n = 0.0;
  for (std::size_t k = 0; k < c.test.size(); ++k) {
    for (std::size_t i = 0; i < c.test[k].image.size(); ++i) {
      diff += flat.test[k].image[i] - c.test[k].image[i];
      fg += c.test[k].labels[i] != kBackground;
      n += 1.0;
    }
  }
  // clipping at +1 trims part of the unshifted tumor intensities, so allow a little slack
  CHECK(diff / n == doctest::Approx(0.15 * fg / n).epsilon(0.1));
}

TEST_CASE("splits are disjoint and every image has an organ") {
  const auto d = generate(default_benchmark(6)[0]);
  std::vector<const Sample*> all;
  for (const auto* split : {&d.train, &d.val, &d.test}) {
    for (const auto& s : *split) all.push_back(&s);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(std::count(all[i]->labels.begin(), all[i]->labels.end(), kOrgan) > 0);
    for (std::size_t j = i + 1; j < all.size(); ++j) CHECK_FALSE(all[i]->image == all[j]->image);
  }
}
