#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cosegnet/image_io.hpp"
#include "cosegnet/ops.hpp"

namespace coseg {

// One co-segmentation group. Images and masks are resized to the training
// size; original extents are kept so predictions can be mapped back.
struct ImageGroup {
  std::string name;
  std::vector<std::string> stems;
  std::vector<Tensor> images;    // S x S x 3 in [0,1]
  std::vector<Tensor> gt_masks;  // S x S binary; empty for inference-only groups
  std::vector<Tensor> original_masks;
  std::vector<std::pair<std::size_t, std::size_t>> original_sizes;  // (h, w)
  std::optional<std::size_t> category;

  std::size_t size() const { return images.size(); }
  bool has_masks() const { return !gt_masks.empty(); }
};

inline Tensor resize_image(const Tensor& img, std::size_t h, std::size_t w) {
  NoGradScope no_grad;
  return ops::resample(img, h, w, ops::ResampleMode::bilinear);
}

// Gray values >= 128 become foreground.
inline Tensor binarize_mask(const io::Image8& img) {
  Tensor t(Shape{img.height, img.width});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.pixels[i] >= 128 ? 1.0 : 0.0;
  return t;
}

inline Tensor resize_mask(const Tensor& mask, std::size_t h, std::size_t w) {
  NoGradScope no_grad;
  Tensor m3 = ops::reshape(mask, Shape{mask.dim(0), mask.dim(1), 1});
  Tensor r = ops::resample(m3, h, w, ops::ResampleMode::nearest);
  return Tensor(Shape{h, w}, std::vector<double>(r.data().begin(), r.data().end()));
}

namespace detail {
inline std::vector<std::filesystem::path> sorted_pngs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}
}  // namespace detail

// Loads `dir/images/*.png` and, when present, `dir/masks/*.png` with
// matching stems.
inline ImageGroup load_group(const std::filesystem::path& dir, std::size_t image_size) {
  ImageGroup g;
  g.name = dir.filename().string();
  const auto image_files = detail::sorted_pngs(dir / "images");
  const auto mask_dir = dir / "masks";
  const bool with_masks = std::filesystem::is_directory(mask_dir);
  for (const auto& path : image_files) {
    io::Image8 img = io::read_png(path.string(), 3);
    g.stems.push_back(path.stem().string());
    g.original_sizes.emplace_back(img.height, img.width);
    g.images.push_back(resize_image(io::to_tensor_rgb(img), image_size, image_size));
    if (with_masks) {
      const auto mpath = mask_dir / (path.stem().string() + ".png");
      if (!std::filesystem::exists(mpath)) {
        throw ValidationError("mask missing for image " + path.string() + " (expected " + mpath.string() + ")");
      }
      io::Image8 m = io::read_png(mpath.string(), 1);
      if (m.height != img.height || m.width != img.width) {
        throw ValidationError("mask " + mpath.string() + " does not match the size of " + path.string());
      }
      Tensor bin = binarize_mask(m);
      g.original_masks.push_back(bin);
      g.gt_masks.push_back(resize_mask(bin, image_size, image_size));
    }
  }
  if (with_masks) {
    for (const auto& mpath : detail::sorted_pngs(mask_dir)) {
      if (std::find(g.stems.begin(), g.stems.end(), mpath.stem().string()) == g.stems.end()) {
        throw ValidationError("mask " + mpath.string() + " has no matching image in " + (dir / "images").string());
      }
    }
  }
  return g;
}

inline std::map<std::string, std::size_t> read_labels(const std::filesystem::path& file) {
  std::map<std::string, std::size_t> labels;
  std::ifstream in(file);
  if (!in) throw IoError("cannot read labels file " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string group;
    long long id = -1;
    if (!(ls >> group)) continue;
    if (!(ls >> id) || id < 0) {
      throw ValidationError(file.string() + ":" + std::to_string(lineno) + ": expected '<group> <category_id>'");
    }
    labels[group] = static_cast<std::size_t>(id);
  }
  return labels;
}

struct Dataset {
  std::vector<ImageGroup> groups;
  std::vector<std::string> warnings;

  // Largest category id + 1 over labelled groups.
  std::size_t category_count() const {
    std::size_t n = 0;
    for (const auto& g : groups)
      if (g.category) n = std::max(n, *g.category + 1);
    return n;
  }
};

// Layout: root/<group>/images/*.png, optional root/<group>/masks/*.png and
// optional root/labels.txt. num_classes = 0 disables the id range check.
inline Dataset load_dataset(const std::filesystem::path& root, std::size_t image_size, std::size_t num_classes = 0) {
  if (!std::filesystem::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  std::map<std::string, std::size_t> labels;
  if (std::filesystem::exists(root / "labels.txt")) labels = read_labels(root / "labels.txt");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory() && std::filesystem::is_directory(e.path() / "images")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    ImageGroup g = load_group(dir, image_size);
    if (g.images.empty()) {
      ds.warnings.push_back("group " + g.name + " has no images; skipped");
      continue;
    }
    if (auto it = labels.find(g.name); it != labels.end()) {
      if (num_classes && it->second >= num_classes) {
        throw ValidationError((root / "labels.txt").string() + ": category id " + std::to_string(it->second) +
                              " for group " + g.name + " is >= " + std::to_string(num_classes));
      }
      g.category = it->second;
    }
    ds.groups.push_back(std::move(g));
  }
  if (ds.groups.empty()) ds.warnings.push_back("dataset " + root.string() + " contains no groups");
  return ds;
}

}  // namespace coseg
