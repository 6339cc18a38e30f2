#include "fedsim/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "fedsim/error.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {
namespace {

struct Geometry {
  double cy, cx, ry, rx, angle;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx;
    const double v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
  }
};

void check_spec(const ClientDatasetSpec& spec) {
  if (spec.n_total < 5) {
    throw UsageError(fmt::format("client {}: n_total must be >= 5, got {}", spec.client_id, spec.n_total));
  }
  if (spec.image_size < 1) throw UsageError("image_size must be positive");
  if (!(spec.noise_sigma >= 0.0)) throw UsageError("noise_sigma must be non-negative");
  const auto& o = spec.organ_radius;
  const auto& t = spec.tumor_radius;
  if (!(o.min >= 1.0 && o.max >= o.min)) throw UsageError("organ radius range must satisfy 1 <= min <= max");
  if (!(t.min >= 0.5 && t.max >= t.min)) throw UsageError("tumor radius range must satisfy 0.5 <= min <= max");
  // The organ needs a one-pixel margin on both sides.
  if (2.0 * o.max + 2.0 > spec.image_size) {
    throw UsageError(fmt::format("organ radius {} does not fit a {}-pixel image", o.max, spec.image_size));
  }
  if (t.max + 1.0 > o.min) {
    throw UsageError("tumor radius range must stay strictly inside the smallest organ");
  }
}

Sample draw_sample(const ClientDatasetSpec& spec, std::mt19937_64& rng) {
  const int size = spec.image_size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Geometry organ{};
  organ.ry = uniform(spec.organ_radius.min, spec.organ_radius.max);
  organ.rx = uniform(spec.organ_radius.min, spec.organ_radius.max);
  organ.angle = uniform(0.0, std::numbers::pi);
  const double reach = std::max(organ.rx, organ.ry) + 1.0;
  organ.cy = std::round(uniform(reach, size - 1 - reach));
  organ.cx = std::round(uniform(reach, size - 1 - reach));

  std::vector<char> organ_mask(static_cast<std::size_t>(size * size), 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      organ_mask[static_cast<std::size_t>(y * size + x)] = organ.contains(y, x);
    }
  }
  auto in_organ = [&](int y, int x) {
    return y >= 0 && y < size && x >= 0 && x < size && organ_mask[static_cast<std::size_t>(y * size + x)];
  };

  // A tumor is kept only if every pixel and its 4-neighbours lie in the organ.
  std::vector<char> tumor_mask(organ_mask.size(), 0);
  const bool wants_tumor = unit(rng) < kTumorProbability;
  if (wants_tumor) {
    const double radius = uniform(spec.tumor_radius.min, spec.tumor_radius.max);
    const double inner = std::max(0.0, std::min(organ.rx, organ.ry) - radius - 1.0);
    for (int attempt = 0; attempt < 16; ++attempt) {
      const double r = inner * std::sqrt(unit(rng));
      const double phi = uniform(0.0, 2.0 * std::numbers::pi);
      const double ty = std::round(organ.cy + r * std::sin(phi));
      const double tx = std::round(organ.cx + r * std::cos(phi));
      bool ok = true;
      std::vector<char> candidate(organ_mask.size(), 0);
      for (int y = 0; y < size && ok; ++y) {
        for (int x = 0; x < size; ++x) {
          if ((y - ty) * (y - ty) + (x - tx) * (x - tx) > radius * radius) continue;
          if (!in_organ(y, x) || !in_organ(y - 1, x) || !in_organ(y + 1, x) || !in_organ(y, x - 1) ||
              !in_organ(y, x + 1)) {
            ok = false;
            break;
          }
          candidate[static_cast<std::size_t>(y * size + x)] = 1;
        }
      }
      if (ok && std::count(candidate.begin(), candidate.end(), 1) > 0) {
        tumor_mask = std::move(candidate);
        break;
      }
    }
  }

  Sample s;
  s.image.resize(organ_mask.size());
  s.labels.resize(organ_mask.size());
  std::normal_distribution<double> noise(0.0, 1.0);
  const double organ_level = kOrganIntensity + spec.intensity_shift;
  const double tumor_level = kTumorIntensity + spec.intensity_shift;
  for (std::size_t i = 0; i < organ_mask.size(); ++i) {
    double level = 0.0;
    std::uint8_t label = kBackground;
    if (tumor_mask[i]) {
      level = tumor_level;
      label = spec.has_tumor_labels ? kTumor : kOrgan;
    } else if (organ_mask[i]) {
      level = organ_level;
      label = kOrgan;
    }
    s.image[i] = std::clamp(level + spec.noise_sigma * noise(rng), -1.0, 1.0);
    s.labels[i] = label;
  }
  return s;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

void put_f64(std::ostream& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  put_u32(out, static_cast<std::uint32_t>(bits >> 32));
  put_u32(out, static_cast<std::uint32_t>(bits));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw UsageError("dataset file truncated");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

double get_f64(std::istream& in) {
  const std::uint64_t hi = get_u32(in);
  const std::uint64_t lo = get_u32(in);
  return std::bit_cast<double>((hi << 32) | lo);
}

}  // namespace

SplitCounts split_counts(int n_total) {
  SplitCounts c;
  c.train = (6 * n_total) / 10;
  c.val = (2 * n_total) / 10;
  c.test = n_total - c.train - c.val;
  return c;
}

ClientDataset generate(const ClientDatasetSpec& spec) {
  check_spec(spec);
  std::mt19937_64 rng(derive_seed(spec.seed, spec.client_id));

  ClientDataset ds;
  ds.client_id = spec.client_id;
  ds.height = spec.image_size;
  ds.width = spec.image_size;
  ds.label_space = spec.has_tumor_labels ? LabelSpace{kBackground, kOrgan, kTumor} : LabelSpace{kBackground, kOrgan};

  const SplitCounts counts = split_counts(spec.n_total);
  for (int i = 0; i < spec.n_total; ++i) {
    Sample s = draw_sample(spec, rng);
    if (i < counts.train) {
      ds.train.push_back(std::move(s));
    } else if (i < counts.train + counts.val) {
      ds.val.push_back(std::move(s));
    } else {
      ds.test.push_back(std::move(s));
    }
  }
  return ds;
}

std::vector<ClientDatasetSpec> default_benchmark(std::uint64_t seed, int image_size) {
  if (image_size < 16) {
    throw UsageError(fmt::format("benchmark images must be at least 16 pixels, got {}", image_size));
  }
  const double scale = image_size / 32.0;
  ClientDatasetSpec a;
  a.client_id = 0;
  a.image_size = image_size;
  a.organ_radius = {5.0 * scale, 9.0 * scale};
  a.tumor_radius = {std::max(0.5, 2.0 * scale), std::min(4.0 * scale, 5.0 * scale - 1.0)};
  a.n_total = 80;
  a.has_tumor_labels = false;
  a.intensity_shift = 0.0;
  a.seed = seed;

  ClientDatasetSpec b = a;
  b.client_id = 1;
  b.n_total = 275;
  b.has_tumor_labels = true;
  b.intensity_shift = 0.1;

  ClientDatasetSpec c = a;
  c.client_id = 2;
  c.n_total = 30;
  c.has_tumor_labels = false;
  c.intensity_shift = -0.15;

  return {a, b, c};
}

void write_datasets(const std::filesystem::path& path, std::span<const ClientDataset> datasets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError(fmt::format("cannot open {} for writing", path.string()));
  out.write("FSDS", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(datasets.size()));
  for (const auto& ds : datasets) {
    put_u32(out, ds.client_id);
    put_u32(out, static_cast<std::uint32_t>(ds.height));
    put_u32(out, static_cast<std::uint32_t>(ds.width));
    put_u32(out, static_cast<std::uint32_t>(ds.train.size()));
    put_u32(out, static_cast<std::uint32_t>(ds.val.size()));
    put_u32(out, static_cast<std::uint32_t>(ds.test.size()));
    out.put(static_cast<char>(ds.label_space.size()));
    for (int c : ds.label_space) out.put(static_cast<char>(c));
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
      for (const auto& s : *split) {
        for (double v : s.image) put_f64(out, v);
        out.write(reinterpret_cast<const char*>(s.labels.data()), static_cast<std::streamsize>(s.labels.size()));
      }
    }
  }
  if (!out) throw UsageError(fmt::format("failed writing {}", path.string()));
}

std::vector<ClientDataset> read_datasets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot open {}", path.string()));
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "FSDS") {
    throw UsageError(fmt::format("{} is not a dataset file", path.string()));
  }
  if (const auto version = get_u32(in); version != 1) {
    throw UsageError(fmt::format("unsupported dataset file version {}", version));
  }
  const std::uint32_t count = get_u32(in);
  std::vector<ClientDataset> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    ClientDataset ds;
    ds.client_id = get_u32(in);
    ds.height = static_cast<int>(get_u32(in));
    ds.width = static_cast<int>(get_u32(in));
    const std::uint32_t sizes[3] = {get_u32(in), get_u32(in), get_u32(in)};
    const int space = in.get();
    if (space <= 0) throw UsageError("dataset file has an empty label space");
    for (int i = 0; i < space; ++i) ds.label_space.push_back(in.get());
    const auto ppi = static_cast<std::size_t>(ds.height) * static_cast<std::size_t>(ds.width);
    std::vector<Sample>* splits[3] = {&ds.train, &ds.val, &ds.test};
    for (int s = 0; s < 3; ++s) {
      for (std::uint32_t i = 0; i < sizes[s]; ++i) {
        Sample sample;
        sample.image.resize(ppi);
        sample.labels.resize(ppi);
        for (auto& v : sample.image) v = get_f64(in);
        if (!in.read(reinterpret_cast<char*>(sample.labels.data()), static_cast<std::streamsize>(ppi))) {
          throw UsageError("dataset file truncated");
        }
        splits[s]->push_back(std::move(sample));
      }
    }
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace fedsim
