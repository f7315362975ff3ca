#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zoomcam/aggregation.hpp"
#include "zoomcam/labeling.hpp"
#include "zoomcam/saliency.hpp"

namespace zoomcam {

enum class Method { Cam, GradCam, ZoomCam };

inline Method parse_method(std::string_view s) {
  if (s == "cam") return Method::Cam;
  if (s == "gradcam") return Method::GradCam;
  if (s == "zoomcam") return Method::ZoomCam;
  throw Error("unknown method '" + std::string(s) + "'");
}

// Parses "all", "lastK=<k>" or "names=a,b,...".
inline LayerPolicy parse_layer_policy(std::string_view s) {
  if (s == "all") return AllLayers{};
  if (s.starts_with("lastK=")) {
    const std::string digits(s.substr(6));
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
      throw Error("bad layer policy '" + std::string(s) + "'");
    return LastK{std::stoul(digits)};
  }
  if (s.starts_with("names=")) {
    ExplicitLayers e;
    std::string rest(s.substr(6));
    std::size_t start = 0;
    while (start <= rest.size()) {
      const std::size_t comma = rest.find(',', start);
      const std::string name =
          rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (name.empty()) throw Error("empty layer name in '" + std::string(s) + "'");
      e.names.push_back(name);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return e;
  }
  throw Error("bad layer policy '" + std::string(s) + "'");
}

struct ExplainOptions {
  Method method = Method::ZoomCam;
  LayerPolicy layers = AllLayers{};
};

// Visual explanation for one class at input resolution. CAM uses the layer
// feeding global average pooling. Grad-CAM and Zoom-CAM compute one map per
// selected layer and fold them with aggregate().
inline SaliencyMap explain(const ModelGraph& model, const ActivationTape& tape,
                           std::size_t class_idx, const ExplainOptions& opts) {
  SaliencyMap folded;
  if (opts.method == Method::Cam) {
    folded = normalize_minmax(cam(model, tape, class_idx));
  } else {
    std::vector<SaliencyMap> maps;
    for (const auto& name : select_layers(model, opts.layers)) {
      maps.push_back(opts.method == Method::ZoomCam
                         ? zoom_cam_layer(model, tape, class_idx, name)
                         : grad_cam_layer(model, tape, class_idx, name));
    }
    folded = aggregate(maps);
  }
  const auto& shape = model.input_shape();
  return upsample_bilinear(folded, shape[1], shape[2]);
}

inline SaliencyMap explain(const ModelGraph& model, const Tensor& input,
                           std::size_t class_idx, const ExplainOptions& opts) {
  const auto result = forward(model, input);
  return explain(model, result.tape, class_idx, opts);
}

inline BBox localize(const SaliencyMap& map, double tau,
                     Connectivity conn = Connectivity::Eight) {
  return largest_component_bbox(threshold_relative(map, tau), conn);
}

// Class ids ordered by descending score; equal scores keep index order.
inline std::vector<std::size_t> rank_classes(const ScoreVector& scores) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

inline SegMap pseudo_segment(const ModelGraph& model, const Tensor& input,
                             std::span<const std::size_t> classes, double tau,
                             const ExplainOptions& opts) {
  if (classes.empty()) throw Error("pseudo_segment: no classes");
  const auto result = forward(model, input);
  std::vector<SaliencyMap> maps;
  for (std::size_t c : classes) maps.push_back(explain(model, result.tape, c, opts));
  return fuse_multilabel(maps, tau);
}

}  // namespace zoomcam
