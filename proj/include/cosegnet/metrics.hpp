#pragma once

#include <string>
#include <vector>

#include "cosegnet/error.hpp"
#include "cosegnet/tensor.hpp"

namespace coseg {

struct ImageScore {
  std::string group;
  std::string stem;
  double precision = 0.0;  // (TP + TN) / all pixels
  double jaccard = 0.0;    // TP / (TP + FP + FN); 1 when both masks are empty
};

struct GroupScore {
  std::string group;
  double precision = 0.0;
  double jaccard = 0.0;
};

// Averages are taken image -> group -> overall.
struct MetricReport {
  std::vector<ImageScore> images;
  std::vector<GroupScore> groups;
  double precision = 0.0;
  double jaccard = 0.0;
};

inline ImageScore score_mask(const Tensor& pred, const Tensor& gt) {
  if (pred.size() != gt.size() || pred.dims() != gt.dims()) throw ShapeError("evaluate", pred.dims(), gt.dims());
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= 0.5, g = gt[i] >= 0.5;
    if (p && g) ++tp;
    else if (!p && !g) ++tn;
    else if (p) ++fp;
    else ++fn;
  }
  ImageScore s;
  s.precision = static_cast<double>(tp + tn) / static_cast<double>(pred.size());
  const std::size_t uni = tp + fp + fn;
  s.jaccard = uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
  return s;
}

// Accumulates per-image scores; groups are formed from consecutive calls
// with the same group name.
class MetricAccumulator {
 public:
  void add(const std::string& group, const std::string& stem, const Tensor& pred, const Tensor& gt) {
    ImageScore s = score_mask(pred, gt);
    s.group = group;
    s.stem = stem;
    report_.images.push_back(s);
  }

  MetricReport finish() const {
    MetricReport r = report_;
    for (std::size_t i = 0; i < r.images.size();) {
      std::size_t j = i;
      GroupScore g{r.images[i].group, 0.0, 0.0};
      while (j < r.images.size() && r.images[j].group == g.group) {
        g.precision += r.images[j].precision;
        g.jaccard += r.images[j].jaccard;
        ++j;
      }
      g.precision /= static_cast<double>(j - i);
      g.jaccard /= static_cast<double>(j - i);
      r.groups.push_back(g);
      i = j;
    }
    for (const auto& g : r.groups) {
      r.precision += g.precision;
      r.jaccard += g.jaccard;
    }
    if (!r.groups.empty()) {
      r.precision /= static_cast<double>(r.groups.size());
      r.jaccard /= static_cast<double>(r.groups.size());
    }
    return r;
  }

 private:
  MetricReport report_;
};

inline MetricReport evaluate(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                             const std::string& group = "group") {
  if (pred.size() != gt.size()) throw ShapeError("evaluate: prediction and ground-truth counts differ");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(group, std::to_string(i), pred[i], gt[i]);
  return acc.finish();
}

}  // namespace coseg
