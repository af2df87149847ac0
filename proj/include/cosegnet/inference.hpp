#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "cosegnet/dataset.hpp"
#include "cosegnet/image_io.hpp"
#include "cosegnet/metrics.hpp"
#include "cosegnet/model.hpp"

namespace coseg {

struct GroupPrediction {
  std::vector<Tensor> probabilities;  // original resolution, [0,1]
  std::vector<Tensor> binary;         // probabilities >= 0.5
  std::vector<Tensor> spatial;        // working-resolution heatmaps
  spatial::SpectralSolution solution;
};

inline Tensor resize_probability(const Tensor& p, std::size_t h, std::size_t w) {
  if (p.dim(0) == h && p.dim(1) == w) return p.clone();
  NoGradScope no_grad;
  Tensor r = ops::resample(ops::reshape(p, Shape{p.dim(0), p.dim(1), 1}), h, w, ops::ResampleMode::bilinear);
  return Tensor(Shape{h, w}, std::vector<double>(r.data().begin(), r.data().end()));
}

inline Tensor threshold(const Tensor& p, double t = 0.5) {
  Tensor b(p.dims());
  for (std::size_t i = 0; i < p.size(); ++i) b[i] = p[i] >= t ? 1.0 : 0.0;
  return b;
}

// Co-segments a whole group; at least two images are required because the
// modulators are defined relative to the group.
inline GroupPrediction predict_group(const CoSegNet& model, const ImageGroup& group) {
  if (group.size() < 2) {
    throw ValidationError("group '" + group.name + "' has " + std::to_string(group.size()) +
                          " image(s); co-segmentation needs at least 2 images of the same category");
  }
  NoGradScope no_grad;
  GroupOutput out = model.forward(group.images);
  GroupPrediction pred;
  pred.solution = out.solution;
  for (std::size_t n = 0; n < group.size(); ++n) {
    const auto [h, w] = group.original_sizes.empty()
                            ? std::pair{out.masks[n].dim(0), out.masks[n].dim(1)}
                            : group.original_sizes[n];
    pred.probabilities.push_back(resize_probability(out.masks[n], h, w));
    pred.binary.push_back(threshold(pred.probabilities.back()));
    pred.spatial.push_back(out.spatial.masks[n]);
  }
  return pred;
}

// Min-max normalised heatmap for inspection; constant maps become mid-gray.
inline io::Image8 heatmap_image(const Tensor& s) {
  const auto [lo, hi] = std::minmax_element(s.data().begin(), s.data().end());
  Tensor n(s.dims());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < s.size(); ++i) n[i] = span > 0.0 ? (s[i] - *lo) / span : 0.5;
  return io::from_tensor_gray(n);
}

// Writes <stem>_prob.png, <stem>_mask.png and <stem>_spatial.png per image.
inline void write_prediction(const std::filesystem::path& out_dir, const ImageGroup& group,
                             const GroupPrediction& pred) {
  std::filesystem::create_directories(out_dir);
  for (std::size_t n = 0; n < group.size(); ++n) {
    const std::string stem = group.stems.at(n);
    io::write_png((out_dir / (stem + "_prob.png")).string(), io::from_tensor_gray(pred.probabilities[n]));
    io::write_png((out_dir / (stem + "_mask.png")).string(), io::from_tensor_gray(pred.binary[n]));
    io::write_png((out_dir / (stem + "_spatial.png")).string(), heatmap_image(pred.spatial[n]));
  }
}

// Scores the model on every group that has ground truth, at original resolution.
inline MetricReport evaluate_model(const CoSegNet& model, const std::vector<ImageGroup>& groups) {
  MetricAccumulator acc;
  for (const ImageGroup& g : groups) {
    if (!g.has_masks()) continue;
    GroupPrediction pred = predict_group(model, g);
    for (std::size_t n = 0; n < g.size(); ++n) acc.add(g.name, g.stems[n], pred.binary[n], g.original_masks[n]);
  }
  return acc.finish();
}

}  // namespace coseg
