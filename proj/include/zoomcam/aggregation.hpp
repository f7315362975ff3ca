#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "zoomcam/saliency.hpp"

namespace zoomcam {

// Min-max normalization to [0, 1]. A constant map carries no evidence and
// becomes all zeros.
inline SaliencyMap normalize_minmax(SaliencyMap map) {
  if (!map.values.empty()) {
    const auto [lo_it, hi_it] =
        std::minmax_element(map.values.begin(), map.values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi > lo) {
      const double span = hi - lo;
      for (double& v : map.values) v = (v - lo) / span;
    } else {
      std::fill(map.values.begin(), map.values.end(), 0.0);
    }
  }
  map.normalized = true;
  return map;
}

// Bilinear upsampling with half-pixel centers: output pixel i samples input
// coordinate (i + 0.5) * in / out - 0.5, clamped to the valid range.
inline SaliencyMap upsample_bilinear(const SaliencyMap& map, std::size_t out_h,
                                     std::size_t out_w) {
  if (out_h < map.height || out_w < map.width)
    throw Error("upsample_bilinear: cannot downscale " +
                std::to_string(map.height) + "x" + std::to_string(map.width) +
                " to " + std::to_string(out_h) + "x" + std::to_string(out_w));
  if (map.height == 0 || map.width == 0)
    throw Error("upsample_bilinear: empty map");
  if (out_h == map.height && out_w == map.width) return map;

  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double hi = static_cast<double>(in - 1);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, hi);
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[i] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(map.height, out_h);
  const auto tx = taps(map.width, out_w);

  SaliencyMap out(out_h, out_w, map.class_idx, map.layer_name);
  out.normalized = map.normalized;
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      const double top =
          map.at(a.i0, b.i0) * (1.0 - b.frac) + map.at(a.i0, b.i1) * b.frac;
      const double bottom =
          map.at(a.i1, b.i0) * (1.0 - b.frac) + map.at(a.i1, b.i1) * b.frac;
      out.at(y, x) = top * (1.0 - a.frac) + bottom * a.frac;
    }
  }
  return out;
}

// max over maps of U(N(map)), at the grid of the largest map.
inline SaliencyMap aggregate(std::span<const SaliencyMap> maps) {
  if (maps.empty()) throw Error("aggregate: no maps");
  std::size_t out_h = 0, out_w = 0;
  for (const auto& m : maps) {
    if (m.class_idx != maps.front().class_idx)
      throw Error("aggregate: maps belong to different classes");
    out_h = std::max(out_h, m.height);
    out_w = std::max(out_w, m.width);
  }
  SaliencyMap out(out_h, out_w, maps.front().class_idx, "aggregate");
  for (const auto& m : maps) {
    const SaliencyMap up = upsample_bilinear(normalize_minmax(m), out_h, out_w);
    for (std::size_t j = 0; j < out.size(); ++j)
      out.values[j] = std::max(out.values[j], up.values[j]);
  }
  out.normalized = true;
  return out;
}

struct AllLayers {};
struct LastK {
  std::size_t k = 1;
};
struct ExplicitLayers {
  std::vector<std::string> names;
};
using LayerPolicy = std::variant<AllLayers, LastK, ExplicitLayers>;

// Conv-block outputs chosen by `policy`, ordered shallow to deep.
inline std::vector<std::string> select_layers(const ModelGraph& model,
                                              const LayerPolicy& policy) {
  const std::vector<std::string> blocks = conv_block_outputs(model);
  if (std::holds_alternative<AllLayers>(policy)) {
    if (blocks.empty()) throw Error("model has no conv layer");
    return blocks;
  }
  if (const auto* last = std::get_if<LastK>(&policy)) {
    if (last->k == 0 || last->k > blocks.size())
      throw Error("lastK=" + std::to_string(last->k) + " but the model has " +
                  std::to_string(blocks.size()) + " conv layers");
    return {blocks.end() - static_cast<std::ptrdiff_t>(last->k), blocks.end()};
  }
  const auto& names = std::get<ExplicitLayers>(policy).names;
  if (names.empty()) throw Error("explicit layer list is empty");
  std::vector<std::pair<std::size_t, std::string>> picked;
  for (const auto& n : names) {
    const std::size_t idx = model.layer_index(n);
    if (model.output_dims(idx).size() != 4)
      throw Error("layer '" + n + "' output is not a 4-D activation");
    picked.emplace_back(idx, n);
  }
  std::sort(picked.begin(), picked.end());
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  std::vector<std::string> out;
  for (auto& p : picked) out.push_back(std::move(p.second));
  return out;
}

}  // namespace zoomcam
