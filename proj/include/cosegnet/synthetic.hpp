#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cosegnet/error.hpp"
#include "cosegnet/image_io.hpp"

// Toy co-segmentation corpus: every image of a group contains one object of
// the group's category (a fixed shape archetype in a category-specific
// colour range), plus distractor shapes of other categories over a noisy
// background.
namespace coseg::synth {

enum class Archetype { disk, triangle, cross, ring, bar, square, diamond, crescent };

inline constexpr std::size_t kArchetypeCount = 8;

inline const char* archetype_name(std::size_t k) {
  static constexpr const char* names[kArchetypeCount] = {"disk", "triangle", "cross", "ring",
                                                         "bar", "square", "diamond", "crescent"};
  return names[k];
}

// u, v are offsets from the centre in units of the object radius.
inline bool inside(Archetype a, double u, double v) {
  switch (a) {
    case Archetype::disk: return u * u + v * v <= 1.0;
    case Archetype::triangle: return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) * 0.5;
    case Archetype::cross:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case Archetype::ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case Archetype::bar: return std::abs(u) <= 1.0 && std::abs(v) <= 0.35;
    case Archetype::square: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case Archetype::diamond: return std::abs(u) + std::abs(v) <= 1.0;
    case Archetype::crescent:
      return u * u + v * v <= 1.0 && (u - 0.45) * (u - 0.45) + v * v > 0.6 * 0.6;
  }
  return false;
}

inline std::array<double, 3> base_color(std::size_t category) {
  static constexpr std::array<std::array<double, 3>, kArchetypeCount> colors{{
      {0.85, 0.15, 0.15},
      {0.15, 0.75, 0.20},
      {0.15, 0.30, 0.90},
      {0.90, 0.85, 0.10},
      {0.85, 0.20, 0.80},
      {0.10, 0.80, 0.85},
      {0.95, 0.55, 0.10},
      {0.50, 0.20, 0.70},
  }};
  return colors[category];
}

struct SynthConfig {
  std::size_t n_groups = 40;
  std::size_t images_per_group = 5;
  std::size_t categories = 8;
  std::size_t image_size = 64;
  std::size_t clutter_level = 2;  // distractor shapes per image
  double min_radius = 0.14;       // fraction of image size
  double max_radius = 0.24;
  double color_jitter = 0.08;
  double noise = 0.05;
};

struct SynthImage {
  io::Image8 image;
  io::Image8 mask;
  std::size_t foreground_pixels = 0;
};

struct SynthGroup {
  std::string name;
  std::size_t category = 0;
  std::vector<SynthImage> images;
};

namespace detail {

struct Placement {
  std::size_t category;
  double cx, cy, r;
  std::array<double, 3> color;
};

inline void paint(std::vector<double>& rgb, std::size_t size, const Placement& p,
                  std::vector<std::uint8_t>* mask, std::size_t* coverage) {
  const auto arch = static_cast<Archetype>(p.category);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - p.cx) / p.r;
      const double v = (static_cast<double>(y) + 0.5 - p.cy) / p.r;
      if (!inside(arch, u, v)) continue;
      for (std::size_t c = 0; c < 3; ++c) rgb[(y * size + x) * 3 + c] = p.color[c];
      if (mask) {
        (*mask)[y * size + x] = 255;
        ++*coverage;
      }
    }
  }
}

}  // namespace detail

inline std::vector<SynthGroup> generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.categories < 1 || cfg.categories > kArchetypeCount) {
    throw ConfigError("synthetic categories must lie in [1, " + std::to_string(kArchetypeCount) + "]");
  }
  if (cfg.image_size < 8 || cfg.n_groups < 1 || cfg.images_per_group < 1) {
    throw ConfigError("synthetic dataset extents must be positive (image_size >= 8)");
  }
  if (cfg.clutter_level > 0 && cfg.categories < 2) {
    throw ConfigError("distractors need at least two categories");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double size = static_cast<double>(cfg.image_size);

  auto place = [&](std::size_t category) {
    detail::Placement p;
    p.category = category;
    p.r = size * (cfg.min_radius + (cfg.max_radius - cfg.min_radius) * unit(rng));
    p.cx = p.r + (size - 2.0 * p.r) * unit(rng);
    p.cy = p.r + (size - 2.0 * p.r) * unit(rng);
    auto base = base_color(category);
    for (std::size_t c = 0; c < 3; ++c) {
      p.color[c] = std::clamp(base[c] + cfg.color_jitter * (2.0 * unit(rng) - 1.0), 0.0, 1.0);
    }
    return p;
  };
  auto overlaps = [](const detail::Placement& a, const detail::Placement& b) {
    const double dx = a.cx - b.cx, dy = a.cy - b.cy;
    return std::sqrt(dx * dx + dy * dy) < a.r + b.r;
  };

  std::vector<SynthGroup> groups;
  for (std::size_t g = 0; g < cfg.n_groups; ++g) {
    SynthGroup group;
    char name[32];
    std::snprintf(name, sizeof(name), "g%03zu", g);
    group.name = name;
    group.category = g % cfg.categories;
    for (std::size_t i = 0; i < cfg.images_per_group; ++i) {
      const std::size_t n = cfg.image_size;
      std::vector<double> rgb(n * n * 3);
      const double gray = 0.35 + 0.3 * unit(rng);
      std::array<double, 3> tint{};
      for (double& t : tint) t = 0.04 * (2.0 * unit(rng) - 1.0);
      for (std::size_t p = 0; p < n * n; ++p)
        for (std::size_t c = 0; c < 3; ++c) rgb[p * 3 + c] = gray + tint[c];

      detail::Placement target = place(group.category);
      std::vector<detail::Placement> distractors;
      for (std::size_t k = 0; k < cfg.clutter_level; ++k) {
        std::size_t other = static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.categories - 1));
        other = std::min(other, cfg.categories - 2);
        if (other >= group.category) ++other;
        detail::Placement d = place(other);
        for (int attempt = 0; attempt < 20; ++attempt) {
          bool clash = overlaps(d, target);
          for (const auto& e : distractors) clash = clash || overlaps(d, e);
          if (!clash) break;
          d = place(other);
        }
        distractors.push_back(d);
      }
      for (const auto& d : distractors) detail::paint(rgb, n, d, nullptr, nullptr);
      SynthImage out;
      out.mask = io::Image8{n, n, 1, std::vector<std::uint8_t>(n * n, 0)};
      detail::paint(rgb, n, target, &out.mask.pixels, &out.foreground_pixels);

      out.image = io::Image8{n, n, 3, std::vector<std::uint8_t>(n * n * 3)};
      for (std::size_t k = 0; k < rgb.size(); ++k) {
        out.image.pixels[k] = io::to_byte(rgb[k] + cfg.noise * gauss(rng));
      }
      group.images.push_back(std::move(out));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

// Writes root/<group>/{images,masks}/imgNN.png and root/labels.txt.
inline void write_dataset(const std::filesystem::path& root, const std::vector<SynthGroup>& groups) {
  std::filesystem::create_directories(root);
  std::ofstream labels(root / "labels.txt", std::ios::trunc);
  if (!labels) throw IoError("cannot write " + (root / "labels.txt").string());
  for (const auto& g : groups) {
    const auto images = root / g.name / "images";
    const auto masks = root / g.name / "masks";
    std::filesystem::create_directories(images);
    std::filesystem::create_directories(masks);
    for (std::size_t i = 0; i < g.images.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "img%02zu.png", i);
      io::write_png((images / stem).string(), g.images[i].image);
      io::write_png((masks / stem).string(), g.images[i].mask);
    }
    labels << g.name << ' ' << g.category << '\n';
  }
}

}  // namespace coseg::synth
