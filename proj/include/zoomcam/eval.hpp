#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zoomcam/labeling.hpp"

namespace zoomcam {

// Label excluded from segmentation scoring.
inline constexpr std::uint32_t kIgnoreLabel = 255;

// Inclusive-pixel intersection over union.
inline double iou_box(const BBox& a, const BBox& b) {
  const std::size_t ix0 = std::max(a.x_min, b.x_min);
  const std::size_t iy0 = std::max(a.y_min, b.y_min);
  const std::size_t ix1 = std::min(a.x_max, b.x_max);
  const std::size_t iy1 = std::min(a.y_max, b.y_max);
  if (ix0 > ix1 || iy0 > iy1) return 0.0;
  const double inter = static_cast<double>((ix1 - ix0 + 1) * (iy1 - iy0 + 1));
  const double uni = static_cast<double>(a.area() + b.area()) - inter;
  return inter / uni;
}

struct LocRecord {
  std::size_t gt_class = 0;
  std::vector<BBox> gt_boxes;
  std::vector<std::size_t> predicted_ranking;  // best first, no duplicates
  std::map<std::size_t, BBox> predicted_box_per_class;
};

// A record is a hit when gt_class is among the first k ranked classes and
// its predicted box overlaps some ground-truth box with IoU > 0.5.
inline bool localization_hit(const LocRecord& r, std::size_t k) {
  const std::size_t top = std::min(k, r.predicted_ranking.size());
  const auto end = r.predicted_ranking.begin() + static_cast<std::ptrdiff_t>(top);
  if (std::find(r.predicted_ranking.begin(), end, r.gt_class) == end) return false;
  const auto it = r.predicted_box_per_class.find(r.gt_class);
  if (it == r.predicted_box_per_class.end()) return false;
  return std::any_of(r.gt_boxes.begin(), r.gt_boxes.end(),
                     [&](const BBox& g) { return iou_box(it->second, g) > 0.5; });
}

// Percent of records that are not hits.
inline double topk_localization_error(std::span<const LocRecord> records,
                                      std::size_t k) {
  if (k == 0) throw Error("k must be at least 1");
  if (records.empty()) throw Error("no localization records");
  std::size_t hits = 0;
  for (const auto& r : records) hits += localization_hit(r, k) ? 1 : 0;
  return 100.0 * (1.0 - static_cast<double>(hits) /
                            static_cast<double>(records.size()));
}

struct SegRecord {
  SegMap predicted;
  SegMap ground_truth;
};

// Pooled true-positive / false-positive / false-negative counts per class.
struct SegCounts {
  std::vector<std::uint64_t> tp, fp, fn;

  explicit SegCounts(std::size_t classes) : tp(classes), fp(classes), fn(classes) {}

  std::optional<double> iou(std::size_t c) const {
    const std::uint64_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) return std::nullopt;
    return static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
};

// Counts over labels 0..class_count (0 = background). Ground-truth pixels
// labeled kIgnoreLabel are skipped.
inline SegCounts segmentation_counts(std::span<const SegRecord> records,
                                     std::size_t class_count) {
  if (records.empty()) throw Error("no segmentation records");
  const std::size_t n = class_count + 1;
  SegCounts counts(n);
  for (const auto& r : records) {
    if (r.predicted.height != r.ground_truth.height ||
        r.predicted.width != r.ground_truth.width)
      throw Error("predicted and ground-truth segmentation sizes differ");
    for (std::size_t j = 0; j < r.ground_truth.labels.size(); ++j) {
      const std::uint32_t g = r.ground_truth.labels[j];
      if (g == kIgnoreLabel) continue;
      const std::uint32_t p = r.predicted.labels[j];
      if (g >= n || p >= n)
        throw Error("label " + std::to_string(std::max(g, p)) +
                    " exceeds class count " + std::to_string(class_count));
      if (p == g) {
        ++counts.tp[g];
      } else {
        ++counts.fp[p];
        ++counts.fn[g];
      }
    }
  }
  return counts;
}

// IoU of one class; nullopt when the class appears in neither prediction nor
// ground truth.
inline std::optional<double> iou_seg(std::span<const SegRecord> records,
                                     std::size_t class_id,
                                     std::size_t class_count) {
  if (class_id > class_count)
    throw Error("class " + std::to_string(class_id) + " exceeds class count");
  return segmentation_counts(records, class_count).iou(class_id);
}

// Unweighted mean IoU over the classes that occur somewhere.
inline double miou(std::span<const SegRecord> records, std::size_t class_count) {
  const SegCounts counts = segmentation_counts(records, class_count);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c <= class_count; ++c) {
    if (auto v = counts.iou(c)) {
      sum += *v;
      ++present;
    }
  }
  if (present == 0) throw Error("no scored pixels");
  return sum / static_cast<double>(present);
}

}  // namespace zoomcam
