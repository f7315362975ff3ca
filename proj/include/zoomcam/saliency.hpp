#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "zoomcam/graph.hpp"

namespace zoomcam {

// Single-channel class evidence map L^c. Values are nonnegative.
// `normalized` marks maps whose values came out of min-max normalization
// and therefore lie in [0, 1].
struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::size_t class_idx = 0;
  std::string layer_name;
  bool normalized = false;

  SaliencyMap() = default;
  SaliencyMap(std::size_t h, std::size_t w, std::size_t cls, std::string layer)
      : height(h), width(w), values(h * w, 0.0), class_idx(cls),
        layer_name(std::move(layer)) {}

  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t size() const { return values.size(); }
};

// Per-channel weights alpha_k and the spatial count Z they were averaged over.
struct ChannelWeights {
  std::vector<double> values;
  std::size_t spatial_count = 1;
};

// Conv layers together with the ReLU that directly follows each of them.
// Returns, shallow to deep, the name of that ReLU when present, otherwise the
// conv layer itself.
inline std::vector<std::string> conv_block_outputs(const ModelGraph& model) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.layer(i).is<Conv2d>()) continue;
    if (i + 1 < model.layer_count() && model.layer(i + 1).is<ReLU>())
      out.push_back(model.layer(i + 1).name);
    else
      out.push_back(model.layer(i).name);
  }
  return out;
}

inline std::string last_conv_block(const ModelGraph& model) {
  auto blocks = conv_block_outputs(model);
  if (blocks.empty()) throw Error("model has no conv layer");
  return blocks.back();
}

namespace detail {

inline const Tensor& spatial_activation(const ModelGraph& model,
                                        const ActivationTape& tape,
                                        std::size_t layer) {
  const Tensor& act = tape.entry(layer).output;
  if (act.rank() != 4)
    throw Error("layer '" + model.layer(layer).name +
                "' output is not a 4-D activation");
  return act;
}

// Channel-weighted sum of a (1,C,H,W) activation.
inline SaliencyMap weighted_channel_sum(const Tensor& act,
                                        const std::vector<double>& alpha,
                                        std::size_t cls, std::string layer) {
  const std::size_t h = act.dim(2), w = act.dim(3);
  SaliencyMap map(h, w, cls, std::move(layer));
  for (std::size_t k = 0; k < act.dim(1); ++k) {
    if (alpha[k] == 0.0) continue;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        map.at(y, x) += alpha[k] * act.at(0, k, y, x);
  }
  return map;
}

inline void rectify(SaliencyMap& map) {
  for (double& v : map.values) v = v > 0.0 ? v : 0.0;
}

struct GapHead {
  std::size_t gap;
  std::size_t linear;
};

inline GapHead find_gap_head(const ModelGraph& model) {
  const std::size_t n = model.layer_count();
  const std::string msg = "CAM requires GAP architecture";
  if (n < 2 || !model.layer(n - 1).is<Linear>()) throw Error(msg);
  std::size_t gap = n - 2;
  if (model.layer(gap).is<Flatten>()) {
    if (gap == 0) throw Error(msg);
    --gap;
  }
  if (!model.layer(gap).is<GlobalAvgPool>() || gap == 0) throw Error(msg);
  return {gap, n - 1};
}

}  // namespace detail

// Class-activation weights read from the GAP -> Linear head.
inline ChannelWeights cam_weights(const ModelGraph& model,
                                  const ActivationTape& tape,
                                  std::size_t class_idx) {
  detail::check_class(model, class_idx);
  detail::check_tape(model, tape);
  const auto head = detail::find_gap_head(model);
  const Tensor& act = tape.entry(head.gap).input;
  const auto& lin = std::get<Linear>(model.layer(head.linear).kind);
  const Tensor& w = tape.params()[head.linear].weight;
  ChannelWeights out;
  out.values.resize(lin.in_dim);
  for (std::size_t k = 0; k < lin.in_dim; ++k)
    out.values[k] = w[class_idx * lin.in_dim + k];
  out.spatial_count = act.dim(2) * act.dim(3);
  return out;
}

// CAM: ReLU(sum_k w_k^c A_k) over the activation entering global average
// pooling.
inline SaliencyMap cam(const ModelGraph& model, const ActivationTape& tape,
                       std::size_t class_idx) {
  const ChannelWeights alpha = cam_weights(model, tape, class_idx);
  const auto head = detail::find_gap_head(model);
  const Tensor& act = tape.entry(head.gap).input;
  SaliencyMap map = detail::weighted_channel_sum(
      act, alpha.values, class_idx, model.layer(head.gap - 1).name);
  detail::rectify(map);
  return map;
}

// Spatially averaged gradient per channel of the named layer.
inline ChannelWeights grad_cam_weights(const ModelGraph& model,
                                       const ActivationTape& tape,
                                       std::size_t class_idx,
                                       std::string_view layer_name) {
  const std::size_t layer = model.layer_index(layer_name);
  detail::spatial_activation(model, tape, layer);
  const Tensor grad = backward_to_layer(model, tape, class_idx, layer_name);
  const std::size_t channels = grad.dim(1);
  const std::size_t area = grad.dim(2) * grad.dim(3);
  ChannelWeights out;
  out.values.assign(channels, 0.0);
  out.spatial_count = area;
  for (std::size_t k = 0; k < channels; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < area; ++j) acc += grad[k * area + j];
    out.values[k] = acc / static_cast<double>(area);
  }
  return out;
}

// Grad-CAM recipe at any 4-D layer.
inline SaliencyMap grad_cam_layer(const ModelGraph& model,
                                  const ActivationTape& tape,
                                  std::size_t class_idx,
                                  std::string_view layer_name) {
  const ChannelWeights alpha =
      grad_cam_weights(model, tape, class_idx, layer_name);
  const std::size_t layer = model.layer_index(layer_name);
  SaliencyMap map = detail::weighted_channel_sum(
      tape.entry(layer).output, alpha.values, class_idx,
      std::string(layer_name));
  detail::rectify(map);
  return map;
}

inline SaliencyMap grad_cam(const ModelGraph& model, const ActivationTape& tape,
                            std::size_t class_idx) {
  return grad_cam_layer(model, tape, class_idx, last_conv_block(model));
}

// Full gradient tensor dS^c/dB applied pointwise by Zoom-CAM.
inline Tensor weight_mask(const ModelGraph& model, const ActivationTape& tape,
                          std::size_t class_idx, std::string_view layer_name) {
  return backward_to_layer(model, tape, class_idx, layer_name);
}

// sum_p dS^c/dB_p(m,n) * B_p(m,n) before rectification. For bias-free models
// its total equals S^c.
inline SaliencyMap signed_contribution(const ModelGraph& model,
                                       const ActivationTape& tape,
                                       std::size_t class_idx,
                                       std::string_view layer_name) {
  const std::size_t layer = model.layer_index(layer_name);
  const Tensor& act = detail::spatial_activation(model, tape, layer);
  const Tensor grad = weight_mask(model, tape, class_idx, layer_name);
  const std::size_t h = act.dim(2), w = act.dim(3), area = h * w;
  SaliencyMap map(h, w, class_idx, std::string(layer_name));
  for (std::size_t p = 0; p < act.dim(1); ++p)
    for (std::size_t j = 0; j < area; ++j)
      map.values[j] += grad[p * area + j] * act[p * area + j];
  return map;
}

// Zoom-CAM map of one layer at its native resolution, without the 1/Z
// factor (a per-map constant that normalization removes).
inline SaliencyMap zoom_cam_layer(const ModelGraph& model,
                                  const ActivationTape& tape,
                                  std::size_t class_idx,
                                  std::string_view layer_name) {
  SaliencyMap map = signed_contribution(model, tape, class_idx, layer_name);
  detail::rectify(map);
  return map;
}

}  // namespace zoomcam
