// Copyright 2026 The wwcnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "wwcnn/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "binio.hpp"
#include "wwcnn/rng.hpp"

namespace wwcnn {

namespace {

using Point = std::array<double, 2>;
using Loop = std::vector<Point>;
using Outline = std::vector<Loop>;  // even-odd fill over all loops

constexpr std::array<char, 4> kDatasetMagic{'W', 'W', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr int kSupersample = 4;
constexpr double kPi = std::numbers::pi;

Loop regular(std::size_t n, double radius, double start_deg) {
  Loop l;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = start_deg * kPi / 180.0 + 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
    l.push_back({radius * std::cos(t), radius * std::sin(t)});
  }
  return l;
}

Loop star(std::size_t points, double inner) {
  Loop l;
  for (std::size_t i = 0; i < 2 * points; ++i) {
    const double r = i % 2 ? inner : 1.0;
    const double t = kPi / 2 + kPi * static_cast<double>(i) / static_cast<double>(points);
    l.push_back({r * std::cos(t), r * std::sin(t)});
  }
  return l;
}

Loop ellipse(double rx, double ry, std::size_t n = 40) {
  Loop l;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
    l.push_back({rx * std::cos(t), ry * std::sin(t)});
  }
  return l;
}

Outline canonical_shape(std::size_t set, std::size_t k) {
  if (set == 0) {
    switch (k) {
      case 0: return {regular(3, 1.0, 90)};
      case 1: return {regular(4, 1.0, 45)};
      case 2: return {regular(5, 1.0, 90)};
      case 3: return {star(5, 0.42)};
      case 4: return {ellipse(1.0, 0.55)};
      case 5:
        return {{{-0.3, 1}, {0.3, 1}, {0.3, 0.3}, {1, 0.3}, {1, -0.3}, {0.3, -0.3},
                 {0.3, -1}, {-0.3, -1}, {-0.3, -0.3}, {-1, -0.3}, {-1, 0.3}, {-0.3, 0.3}}};
      case 6:
        return {{{-0.15, -1}, {0.15, -1}, {0.15, 0.1}, {0.6, 0.1}, {0, 1}, {-0.6, 0.1}, {-0.15, 0.1}}};
      case 7:
        return {{{-0.85, 0.95}, {0.85, 0.95}, {0.85, 0.55}, {0.18, 0.55}, {0.18, -0.95},
                 {-0.18, -0.95}, {-0.18, 0.55}, {-0.85, 0.55}}};
      case 8:
        return {{{-0.6, 0.95}, {-0.2, 0.95}, {-0.2, -0.55}, {0.7, -0.55}, {0.7, -0.95}, {-0.6, -0.95}}};
      case 9: return {ellipse(1.0, 1.0), ellipse(0.55, 0.55)};
    }
  } else {
    switch (k) {
      case 0: return {regular(6, 1.0, 0)};
      case 1: return {{{0, 1}, {0.55, 0}, {0, -1}, {-0.55, 0}}};
      case 2: return {{{-1, -0.6}, {1, -0.6}, {0.45, 0.6}, {-0.45, 0.6}}};
      case 3: return {star(6, 0.5)};
      case 4: {
        Loop l;
        for (int i = 0; i <= 20; ++i) {
          const double t = kPi * i / 20.0;
          l.push_back({std::cos(t), std::sin(t) - 0.4});
        }
        return {l};
      }
      case 5: return {{{-0.7, 1}, {0.7, 1}, {0.12, 0}, {0.7, -1}, {-0.7, -1}, {-0.12, 0}}};
      case 6: return {{{-0.9, -0.2}, {0, 0.7}, {0.9, -0.2}, {0.9, -0.7}, {0, 0.2}, {-0.9, -0.7}}};
      case 7:
        return {{{-0.8, 0.9}, {-0.4, 0.9}, {-0.4, -0.4}, {0.4, -0.4}, {0.4, 0.9}, {0.8, 0.9},
                 {0.8, -0.9}, {-0.8, -0.9}}};
      case 8: return {{{-1, -0.5}, {0.4, -0.5}, {1, 0.5}, {-0.4, 0.5}}};
      case 9: {
        // Outer unit-circle arc, then back along a circle centred at (0.9, 0).
        Loop l;
        for (int i = 0; i <= 16; ++i) {
          const double t = kPi / 3 + (4 * kPi / 3) * i / 16.0;
          l.push_back({std::cos(t), std::sin(t)});
        }
        const double c = 0.9, rho = std::sqrt(0.16 + 0.75);
        const double a0 = std::atan2(-std::sqrt(0.75), 0.5 - c);
        for (int i = 1; i < 12; ++i) {
          const double t = a0 - (2 * kPi + 2 * a0) * i / 12.0;
          l.push_back({c + rho * std::cos(t), rho * std::sin(t)});
        }
        return {l};
      }
    }
  }
  throw ConfigError("no shape " + std::to_string(k) + " in set " + std::to_string(set));
}

bool inside(const Outline& o, double x, double y) {
  bool in = false;
  for (const auto& loop : o) {
    for (std::size_t i = 0, j = loop.size() - 1; i < loop.size(); j = i++) {
      const auto& a = loop[i];
      const auto& b = loop[j];
      if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
    }
  }
  return in;
}

double edge_distance(const Outline& o, double x, double y) {
  double best = 1e300;
  for (const auto& loop : o) {
    for (std::size_t i = 0, j = loop.size() - 1; i < loop.size(); j = i++) {
      const double ax = loop[j][0], ay = loop[j][1];
      const double dx = loop[i][0] - ax, dy = loop[i][1] - ay;
      const double len2 = dx * dx + dy * dy;
      double t = len2 > 0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = ax + t * dx - x, ey = ay + t * dy - y;
      best = std::min(best, ex * ex + ey * ey);
    }
  }
  return std::sqrt(best);
}

struct InstanceStyle {
  double scale;
  double stroke;  // outline half-width in shape units
  double fill;
  double outline;
  std::vector<double> tint;  // per channel
  Outline shape;             // canonical shape with perturbed vertices
  std::vector<std::uint64_t> background_seeds;
};

InstanceStyle instance_style(const GenConfig& cfg, std::size_t category, std::size_t instance) {
  Rng rng(derive_seed(derive_seed(derive_seed(cfg.seed, "instance"), category), instance));
  InstanceStyle s;
  s.scale = rng.uniform(0.85, 1.15);
  s.stroke = rng.uniform(0.03, 0.09);
  s.fill = rng.uniform(0.6, 0.9);
  s.outline = s.fill * rng.uniform(0.45, 0.7);
  for (std::size_t c = 0; c < cfg.channels; ++c) s.tint.push_back(cfg.channels == 1 ? 1.0 : rng.uniform(0.7, 1.0));
  s.shape = canonical_shape(cfg.shape_set, category);
  for (auto& loop : s.shape) {
    const double sigma = loop.size() > 16 ? 0.025 : 0.05;
    for (auto& p : loop) {
      p[0] += rng.normal(0.0, sigma);
      p[1] += rng.normal(0.0, sigma);
    }
  }
  for (std::size_t b = 0; b < cfg.backgrounds; ++b) s.background_seeds.push_back(rng.next_u64());
  return s;
}

// Low-contrast texture: bilinear upsampling of a coarse random grid plus fine noise.
std::vector<double> background_texture(std::uint64_t seed, std::size_t h, std::size_t w) {
  Rng rng(seed);
  constexpr std::size_t g = 5;
  std::array<double, g * g> grid{};
  for (auto& v : grid) v = rng.uniform();
  const double base = rng.uniform(0.1, 0.3);
  const double amp = rng.uniform(0.05, 0.15);
  std::vector<double> tex(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double gy = static_cast<double>(y) / static_cast<double>(h - 1 + (h == 1)) * (g - 1);
      const double gx = static_cast<double>(x) / static_cast<double>(w - 1 + (w == 1)) * (g - 1);
      const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), g - 2);
      const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), g - 2);
      const double fy = gy - y0, fx = gx - x0;
      const double v = (1 - fy) * ((1 - fx) * grid[y0 * g + x0] + fx * grid[y0 * g + x0 + 1]) +
                       fy * ((1 - fx) * grid[(y0 + 1) * g + x0] + fx * grid[(y0 + 1) * g + x0 + 1]);
      tex[y * w + x] = base + amp * v + rng.normal(0.0, 0.02);
    }
  }
  return tex;
}

std::vector<float> render(const GenConfig& cfg, const InstanceStyle& st, std::size_t rot,
                          std::size_t az, const std::vector<double>& bg) {
  const std::size_t h = cfg.height, w = cfg.width;
  const double theta = 2.0 * kPi * static_cast<double>(rot) / static_cast<double>(cfg.n_rot);
  const double squash =
      cfg.n_az > 1 ? 0.35 + 0.65 * static_cast<double>(az) / static_cast<double>(cfg.n_az - 1) : 1.0;
  const double radius = 0.38 * static_cast<double>(std::min(h, w)) * st.scale;
  const double cx = 0.5 * static_cast<double>(w), cy = 0.5 * static_cast<double>(h);
  const double ct = std::cos(theta), sn = std::sin(theta);

  // Shape in pixel coordinates (y grows downwards).
  Outline px = st.shape;
  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (auto& loop : px) {
    for (auto& p : loop) {
      const double rx = p[0] * ct - p[1] * sn;
      const double ry = (p[0] * sn + p[1] * ct) * squash;
      p = {cx + radius * rx, cy - radius * ry};
      x_lo = std::min(x_lo, p[0]);
      x_hi = std::max(x_hi, p[0]);
      y_lo = std::min(y_lo, p[1]);
      y_hi = std::max(y_hi, p[1]);
    }
  }
  const double half_stroke = st.stroke * radius;
  x_lo -= half_stroke + 1;
  x_hi += half_stroke + 1;
  y_lo -= half_stroke + 1;
  y_hi += half_stroke + 1;

  std::vector<float> img(h * w * cfg.channels);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double b = bg[y * w + x];
      double fill_cov = 0.0, outline_cov = 0.0;
      if (x + 1 >= x_lo && x <= x_hi && y + 1 >= y_lo && y <= y_hi) {
        for (int sy = 0; sy < kSupersample; ++sy) {
          for (int sx = 0; sx < kSupersample; ++sx) {
            const double px_x = static_cast<double>(x) + (sx + 0.5) / kSupersample;
            const double px_y = static_cast<double>(y) + (sy + 0.5) / kSupersample;
            if (edge_distance(px, px_x, px_y) <= half_stroke) outline_cov += 1.0;
            else if (inside(px, px_x, px_y)) fill_cov += 1.0;
          }
        }
        fill_cov /= kSupersample * kSupersample;
        outline_cov /= kSupersample * kSupersample;
      }
      const double bg_cov = 1.0 - fill_cov - outline_cov;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const double v = st.tint[c] * (fill_cov * st.fill + outline_cov * st.outline) + bg_cov * b;
        img[(y * w + x) * cfg.channels + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

void GenConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("generator config: ") + name + " must be positive");
  };
  positive(categories, "categories");
  positive(n_rot, "n_rot");
  positive(n_az, "n_az");
  positive(instances, "instances");
  positive(backgrounds, "backgrounds");
  positive(height, "height");
  positive(width, "width");
  positive(channels, "channels");
  if (categories > kShapesPerSet)
    throw ConfigError("generator config: at most " + std::to_string(kShapesPerSet) + " categories per shape set");
  if (shape_set >= kShapeSets) throw ConfigError("generator config: shape_set must be 0 or 1");
  if (channels != 1 && channels != 3) throw ConfigError("generator config: channels must be 1 or 3");
  if (height < 8 || width < 8) throw ConfigError("generator config: images must be at least 8x8");
}

std::string_view shape_name(std::size_t shape_set, std::size_t category) {
  static constexpr std::array<std::string_view, kShapesPerSet> set0{
      "triangle", "square", "pentagon", "star", "ellipse", "cross", "arrow", "T", "L", "ring"};
  static constexpr std::array<std::string_view, kShapesPerSet> set1{
      "hexagon", "rhombus", "trapezoid", "star6", "semicircle", "hourglass", "chevron", "U",
      "parallelogram", "crescent"};
  if (shape_set >= kShapeSets || category >= kShapesPerSet) throw ConfigError("no such shape");
  return shape_set == 0 ? set0[category] : set1[category];
}

Dataset generate(const GenConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.meta = {static_cast<std::uint32_t>(cfg.categories), static_cast<std::uint32_t>(cfg.poses()),
            static_cast<std::uint32_t>(cfg.n_rot),      static_cast<std::uint32_t>(cfg.n_az),
            static_cast<std::uint32_t>(cfg.height),     static_cast<std::uint32_t>(cfg.width),
            static_cast<std::uint32_t>(cfg.channels)};
  const std::uint64_t record_root = derive_seed(cfg.seed, "record");
  d.records.reserve(cfg.categories * cfg.instances * cfg.poses());
  for (std::size_t k = 0; k < cfg.categories; ++k) {
    for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
      const auto style = instance_style(cfg, k, inst);
      std::map<std::size_t, std::vector<double>> textures;
      for (std::size_t r = 0; r < cfg.n_rot; ++r) {
        for (std::size_t a = 0; a < cfg.n_az; ++a) {
          Rng rng(derive_seed(record_root, d.records.size()));
          const std::size_t b = rng.below(cfg.backgrounds);
          auto it = textures.find(b);
          if (it == textures.end())
            it = textures.emplace(b, background_texture(style.background_seeds[b], cfg.height, cfg.width)).first;
          SampleRecord rec;
          rec.image = render(cfg, style, r, a, it->second);
          rec.category = static_cast<std::uint32_t>(k);
          rec.pose = static_cast<std::uint32_t>(encode_pose(r, a, cfg.n_az));
          rec.instance = static_cast<std::uint32_t>(inst);
          rec.background = static_cast<std::uint32_t>(b);
          d.records.push_back(std::move(rec));
        }
      }
    }
  }
  return d;
}

std::pair<Dataset, Dataset> split_by_instance(const Dataset& data, double train_fraction,
                                              std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("train fraction must lie in (0, 1]");
  std::map<std::uint32_t, std::set<std::uint32_t>> instances;
  for (const auto& r : data.records) instances[r.category].insert(r.instance);

  std::map<std::uint32_t, std::set<std::uint32_t>> train_ids;
  for (const auto& [cat, ids] : instances) {
    std::vector<std::uint32_t> order(ids.begin(), ids.end());
    Rng rng(derive_seed(derive_seed(seed, "split"), cat));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(order.size()) - 1e-9));
    if (n_train == 0 || n_train >= order.size())
      throw ConfigError("category " + std::to_string(cat) + " has " + std::to_string(order.size()) +
                        " instances: too few for a train fraction of " + std::to_string(train_fraction) +
                        " (both splits must be non-empty)");
    train_ids[cat].insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  }
  std::pair<Dataset, Dataset> out;
  out.first.meta = out.second.meta = data.meta;
  for (const auto& r : data.records) {
    (train_ids[r.category].count(r.instance) ? out.first : out.second).records.push_back(r);
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  detail::BinWriter w(os);
  w.bytes(kDatasetMagic.data(), kDatasetMagic.size());
  w.put<std::uint32_t>(kDatasetVersion);
  const auto& m = data.meta;
  for (auto v : {m.categories, m.poses, m.n_rot, m.n_az, m.height, m.width, m.channels}) w.put<std::uint32_t>(v);
  w.put<std::uint64_t>(data.records.size());
  for (const auto& r : data.records) {
    if (r.image.size() != m.pixels()) throw ConfigError("record image size does not match dataset header");
    w.put<std::uint32_t>(r.category);
    w.put<std::uint32_t>(r.pose);
    w.put<std::uint32_t>(r.instance);
    w.put<std::uint32_t>(r.background);
    w.bytes(r.image.data(), r.image.size() * sizeof(float));
  }
  w.check(path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path.string() + "'");
  detail::BinReader r(is, "dataset '" + path.string() + "'");
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kDatasetMagic) throw IoError("dataset '" + path.string() + "': bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kDatasetVersion)
    throw IoError("dataset '" + path.string() + "': unsupported version " + std::to_string(version));
  Dataset d;
  auto& m = d.meta;
  for (auto* f : {&m.categories, &m.poses, &m.n_rot, &m.n_az, &m.height, &m.width, &m.channels})
    *f = r.get<std::uint32_t>("header");
  if (m.categories == 0 || m.poses == 0 || m.n_rot * m.n_az != m.poses || m.pixels() == 0)
    throw IoError("dataset '" + path.string() + "': inconsistent header");
  const auto count = r.get<std::uint64_t>("record count");
  d.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    SampleRecord rec;
    rec.category = r.get<std::uint32_t>(where);
    rec.pose = r.get<std::uint32_t>(where);
    rec.instance = r.get<std::uint32_t>(where);
    rec.background = r.get<std::uint32_t>(where);
    rec.image.resize(m.pixels());
    r.bytes(rec.image.data(), rec.image.size() * sizeof(float), where);
    if (rec.category >= m.categories || rec.pose >= m.poses)
      throw IoError("dataset '" + path.string() + "': " + where + " has labels outside the header ranges");
    d.records.push_back(std::move(rec));
  }
  if (!r.at_eof())
    throw IoError("dataset '" + path.string() + "': record count mismatch (trailing data after " +
                  std::to_string(count) + " records)");
  return d;
}

void write_pnm(const std::filesystem::path& path, std::span<const float> image, std::size_t height,
               std::size_t width, std::size_t channels) {
  if (image.size() != height * width * channels || (channels != 1 && channels != 3))
    throw ConfigError("write_pnm: image size does not match H x W x C");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << (channels == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << "\n255\n";
  for (float v : image) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    os.put(static_cast<char>(b));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, bool with_pose) {
  const auto& m = data.meta;
  Batch<T> b;
  b.images = Tensor<T>({indices.size(), m.channels, m.height, m.width});
  b.category.reserve(indices.size());
  if (with_pose) b.pose.reserve(indices.size());
  const std::size_t plane = std::size_t{m.height} * m.width;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& rec = data.records.at(indices[n]);
    T* dst = b.images.data() + n * m.channels * plane;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < m.channels; ++c) dst[c * plane + p] = static_cast<T>(rec.image[p * m.channels + c]);
    b.category.push_back(rec.category);
    if (with_pose) b.pose.push_back(rec.pose);
  }
  return b;
}

template Batch<float> make_batch(const Dataset&, std::span<const std::size_t>, bool);
template Batch<double> make_batch(const Dataset&, std::span<const std::size_t>, bool);

}  // namespace wwcnn
