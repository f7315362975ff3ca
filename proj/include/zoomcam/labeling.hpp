#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "zoomcam/saliency.hpp"

namespace zoomcam {

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<unsigned char> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v = true) {
    bits[y * width + x] = v ? 1 : 0;
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Inclusive pixel coordinates.
struct BBox {
  std::size_t x_min = 0;
  std::size_t y_min = 0;
  std::size_t x_max = 0;
  std::size_t y_max = 0;

  std::size_t area() const { return (x_max - x_min + 1) * (y_max - y_min + 1); }
  friend bool operator==(const BBox&, const BBox&) = default;
};

// Per-pixel class labels, 0 = background.
struct SegMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;

  SegMap() = default;
  SegMap(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}

  std::uint32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::uint32_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }

  friend bool operator==(const SegMap&, const SegMap&) = default;
};

struct Pixel {
  std::size_t y = 0;
  std::size_t x = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

// Pixels of one component in row-major order.
using Component = std::vector<Pixel>;

enum class Connectivity { Four = 4, Eight = 8 };

// Keeps pixels strictly above tau * max(map).
inline BinaryMask threshold_relative(const SaliencyMap& map, double tau) {
  if (!(tau > 0.0 && tau < 1.0))
    throw Error("threshold tau must lie in (0, 1), got " + std::to_string(tau));
  BinaryMask mask(map.height, map.width);
  if (map.values.empty()) return mask;
  const double peak = *std::max_element(map.values.begin(), map.values.end());
  const double cut = tau * peak;
  for (std::size_t j = 0; j < map.size(); ++j)
    mask.bits[j] = map.values[j] > cut ? 1 : 0;
  return mask;
}

namespace detail {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

// Two-pass union-find labeling. Components are ordered by their first pixel
// in row-major scan order.
inline std::vector<Component> connected_components(
    const BinaryMask& mask, Connectivity conn = Connectivity::Eight) {
  const std::size_t h = mask.height, w = mask.width;
  detail::DisjointSet sets(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      const std::size_t here = y * w + x;
      if (x > 0 && mask.at(y, x - 1)) sets.unite(here, here - 1);
      if (y > 0) {
        if (mask.at(y - 1, x)) sets.unite(here, here - w);
        if (conn == Connectivity::Eight) {
          if (x > 0 && mask.at(y - 1, x - 1)) sets.unite(here, here - w - 1);
          if (x + 1 < w && mask.at(y - 1, x + 1)) sets.unite(here, here - w + 1);
        }
      }
    }
  }
  std::vector<Component> out;
  std::vector<std::size_t> slot(h * w, SIZE_MAX);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      const std::size_t root = sets.find(y * w + x);
      if (slot[root] == SIZE_MAX) {
        slot[root] = out.size();
        out.emplace_back();
      }
      out[slot[root]].push_back({y, x});
    }
  }
  return out;
}

inline BBox component_bbox(const Component& comp) {
  if (comp.empty()) throw Error("empty component has no bounding box");
  BBox box{comp.front().x, comp.front().y, comp.front().x, comp.front().y};
  for (const Pixel& p : comp) {
    box.x_min = std::min(box.x_min, p.x);
    box.x_max = std::max(box.x_max, p.x);
    box.y_min = std::min(box.y_min, p.y);
    box.y_max = std::max(box.y_max, p.y);
  }
  return box;
}

// Box around the largest component. Equal sizes resolve to the smallest
// (y_min, x_min) box corner, then to scan order.
inline BBox largest_component_bbox(const BinaryMask& mask,
                                   Connectivity conn = Connectivity::Eight) {
  const auto comps = connected_components(mask, conn);
  if (comps.empty()) throw Error("no foreground");
  const Component* best = nullptr;
  BBox best_box;
  for (const auto& c : comps) {
    const BBox box = component_bbox(c);
    if (!best || c.size() > best->size() ||
        (c.size() == best->size() &&
         std::pair(box.y_min, box.x_min) < std::pair(best_box.y_min, best_box.x_min))) {
      best = &c;
      best_box = box;
    }
  }
  return best_box;
}

// Multi-class pseudo-label. Map i votes for label maps[i].class_idx + 1. A
// pixel is a candidate for a class when it passes that class's relative
// threshold; the candidate with the largest value wins, ties go to the lower
// label, and pixels with no candidate stay background.
inline SegMap fuse_multilabel(std::span<const SaliencyMap> maps, double tau) {
  if (maps.empty()) throw Error("fuse_multilabel: no class maps");
  const std::size_t h = maps.front().height, w = maps.front().width;
  std::vector<BinaryMask> passes;
  for (const auto& m : maps) {
    if (m.height != h || m.width != w)
      throw Error("fuse_multilabel: map size mismatch");
    passes.push_back(threshold_relative(m, tau));
  }
  SegMap seg(h, w);
  for (std::size_t j = 0; j < h * w; ++j) {
    std::uint32_t label = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      if (!passes[i].bits[j]) continue;
      const double v = maps[i].values[j];
      const auto cand = static_cast<std::uint32_t>(maps[i].class_idx + 1);
      if (label == 0 || v > best || (v == best && cand < label)) {
        label = cand;
        best = v;
      }
    }
    seg.labels[j] = label;
  }
  return seg;
}

}  // namespace zoomcam
