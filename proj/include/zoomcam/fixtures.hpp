#pragma once

// Deterministic synthetic models and inputs. Every number drawn here is
// rounded to 32-bit precision so fixtures survive the file format unchanged.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomcam/graph.hpp"
#include "zoomcam/io.hpp"
#include "zoomcam/labeling.hpp"

namespace zoomcam {

// mt19937_64 with distributions written out so the stream is identical on
// every standard library.
class FixtureRng {
 public:
  explicit FixtureRng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {  // [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) {  // [0, n)
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }
  bool coin() { return (engine_() >> 63) != 0; }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

inline Tensor random_tensor(FixtureRng& rng, Dims dims, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = to_file_precision(scale * rng.normal());
  return t;
}

enum class Head { GapLinear, FlattenLinear };

struct RandomNetOptions {
  bool bias_free = true;
  Head head = Head::GapLinear;
  bool pool = true;          // max-pool after the first conv block
  bool relu_after_last = true;
};

// Small random chain: conv, ReLU, [maxpool], conv, [ReLU], head, linear.
// Shapes are drawn from the seed with inputs no larger than 1x3x16x16.
inline ModelGraph random_net(std::uint64_t seed, const RandomNetOptions& opt = {}) {
  FixtureRng rng(seed);
  const std::size_t in_c = 1 + rng.index(3);
  const std::size_t in_h = 6 + rng.index(11);
  const std::size_t in_w = 6 + rng.index(11);
  const std::size_t c1 = 1 + rng.index(4);
  const std::size_t c2 = 1 + rng.index(4);
  const std::size_t classes = 2 + rng.index(3);
  const std::size_t k1 = 1 + rng.index(3);
  const std::size_t pad1 = rng.index((k1 - 1) / 2 + 1);  // output never exceeds input
  const std::size_t stride1 = 1 + rng.index(2);
  const std::size_t k2 = 1 + rng.index(3);
  const std::size_t pad2 = k2 / 2;
  const bool b1 = !opt.bias_free && rng.coin();
  const bool b2 = !opt.bias_free && rng.coin();
  const bool b3 = !opt.bias_free && rng.coin();

  std::vector<LayerSpec> layers;
  ParamSet params;
  auto add = [&](std::string name, LayerKind kind, LayerParams p = {}) {
    layers.push_back({std::move(name), std::move(kind)});
    params.push_back(std::move(p));
  };
  auto conv_params = [&](const Conv2d& c, bool bias) {
    const double scale =
        std::sqrt(2.0 / static_cast<double>(c.in_channels * c.kernel_h * c.kernel_w));
    LayerParams p;
    p.weight = random_tensor(rng, {c.out_channels, c.in_channels, c.kernel_h, c.kernel_w},
                             scale);
    if (bias) p.bias = random_tensor(rng, {c.out_channels}, 0.1);
    return p;
  };

  Conv2d conv1{in_c, c1, k1, k1, stride1, stride1, pad1, pad1, b1};
  add("conv1", conv1, conv_params(conv1, b1));
  add("relu1", ReLU{});
  std::size_t h = (in_h + 2 * pad1 - k1) / stride1 + 1;
  std::size_t w = (in_w + 2 * pad1 - k1) / stride1 + 1;
  if (opt.pool && h >= 2 && w >= 2) {
    add("pool1", MaxPool{2, 2, 2, 2});
    h = (h - 2) / 2 + 1;
    w = (w - 2) / 2 + 1;
  }
  Conv2d conv2{c1, c2, k2, k2, 1, 1, pad2, pad2, b2};
  if (h + 2 * pad2 < k2 || w + 2 * pad2 < k2) conv2.kernel_h = conv2.kernel_w = 1;
  add("conv2", conv2, conv_params(conv2, b2));
  h = (h + 2 * conv2.pad_h - conv2.kernel_h) + 1;
  w = (w + 2 * conv2.pad_w - conv2.kernel_w) + 1;
  if (opt.relu_after_last) add("relu2", ReLU{});

  std::size_t features = c2;
  if (opt.head == Head::GapLinear) {
    add("gap", GlobalAvgPool{});
    add("flatten", Flatten{});
  } else {
    add("flatten", Flatten{});
    features = c2 * h * w;
  }
  LayerParams lp;
  lp.weight = random_tensor(rng, {classes, features},
                            std::sqrt(1.0 / static_cast<double>(features)));
  if (b3) lp.bias = random_tensor(rng, {classes}, 0.1);
  add("fc", Linear{features, classes, b3}, std::move(lp));
  return ModelGraph({in_c, in_h, in_w}, std::move(layers), std::move(params), classes);
}

inline Tensor random_input(const ModelGraph& model, std::uint64_t seed) {
  FixtureRng rng(seed ^ 0x9E3779B97F4A7C15ull);
  return random_tensor(rng, model.input_dims());
}

// ---------------------------------------------------------------------------
// Scenario fixtures.

struct GroundTruthBox {
  std::size_t class_idx = 0;
  BBox box;
};

struct Fixture {
  std::string scenario;
  std::uint64_t seed = 0;
  ModelGraph model;
  Tensor image;
  std::vector<GroundTruthBox> boxes;
  SegMap segmentation;  // label = class + 1
  std::size_t target_class = 0;
};

namespace detail {

inline Tensor filled_conv_weight(std::size_t out_c, std::size_t in_c, std::size_t k,
                                 const std::vector<double>& taps_1d,
                                 bool diagonal) {
  Tensor w({out_c, in_c, k, k});
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t c = 0; c < in_c; ++c) {
      if (diagonal && o != c) continue;
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) w.at(o, c, u, v) = taps_1d[u] * taps_1d[v];
    }
  return w;
}

inline void paint(Tensor& img, std::size_t channel, const BBox& b, double value) {
  for (std::size_t y = b.y_min; y <= b.y_max; ++y)
    for (std::size_t x = b.x_min; x <= b.x_max; ++x) img.at(0, channel, y, x) = value;
}

inline void label(SegMap& seg, const BBox& b, std::uint32_t id) {
  for (std::size_t y = b.y_min; y <= b.y_max; ++y)
    for (std::size_t x = b.x_min; x <= b.x_max; ++x) seg.at(y, x) = id;
}

}  // namespace detail

// A 64x64 image with a 24x24 and a 4x4 bright square on a negative
// background, and a bias-free detector net:
//   conv 3x3 (sum) > relu > conv 5x5 (smooth) > relu > maxpool 4/4
//   > conv 3x3 (sum) > relu > maxpool 4/4 > conv 1x1 > relu > gap > linear
// The second 3x3 sum rewards spatial extent, so at the final 4x4 grid the
// small square retains only a ninth of the large square's response.
inline Fixture small_object_fixture(std::uint64_t seed) {
  FixtureRng rng(seed);
  std::vector<LayerSpec> layers;
  ParamSet params;
  auto add = [&](std::string name, LayerKind kind, LayerParams p = {}) {
    layers.push_back({std::move(name), std::move(kind)});
    params.push_back(std::move(p));
  };
  add("conv1", Conv2d{1, 1, 3, 3, 1, 1, 1, 1, false},
      {detail::filled_conv_weight(1, 1, 3, {1, 1, 1}, false), {}});
  add("relu1", ReLU{});
  add("conv2", Conv2d{1, 1, 5, 5, 1, 1, 2, 2, false},
      {detail::filled_conv_weight(1, 1, 5, {0.5, 1, 1, 1, 0.5}, false), {}});
  add("relu2", ReLU{});
  add("pool1", MaxPool{4, 4, 4, 4});
  add("conv3", Conv2d{1, 1, 3, 3, 1, 1, 1, 1, false},
      {detail::filled_conv_weight(1, 1, 3, {1, 1, 1}, false), {}});
  add("relu3", ReLU{});
  add("pool2", MaxPool{4, 4, 4, 4});
  add("conv4", Conv2d{1, 1, 1, 1, 1, 1, 0, 0, false},
      {detail::filled_conv_weight(1, 1, 1, {1}, false), {}});
  add("relu4", ReLU{});
  add("gap", GlobalAvgPool{});
  add("flatten", Flatten{});
  add("fc", Linear{1, 2, false}, {Tensor({2, 1}, std::vector<double>{1.0, -1.0}), {}});

  Fixture f{"small-object", seed,
            ModelGraph({1, 64, 64}, std::move(layers), std::move(params), 2),
            Tensor({1, 1, 64, 64}), {}, SegMap(64, 64), 0};
  for (double& v : f.image.data()) v = to_file_precision(rng.uniform(-0.7, -0.55));
  const BBox large{4, 4, 27, 27};
  const BBox small{44, 44, 47, 47};
  detail::paint(f.image, 0, large, 1.0);
  detail::paint(f.image, 0, small, 1.0);
  f.boxes = {{0, large}, {0, small}};
  detail::label(f.segmentation, large, 1);
  detail::label(f.segmentation, small, 1);
  return f;
}

// Two classes on a 2-channel 32x32 image: class 0 (channel 0) appears twice,
// class 1 (channel 1) once.
inline Fixture two_instance_fixture(std::uint64_t seed) {
  FixtureRng rng(seed);
  std::vector<LayerSpec> layers;
  ParamSet params;
  auto add = [&](std::string name, LayerKind kind, LayerParams p = {}) {
    layers.push_back({std::move(name), std::move(kind)});
    params.push_back(std::move(p));
  };
  add("conv1", Conv2d{2, 2, 3, 3, 1, 1, 1, 1, false},
      {detail::filled_conv_weight(2, 2, 3, {1, 1, 1}, true), {}});
  add("relu1", ReLU{});
  add("pool1", MaxPool{2, 2, 2, 2});
  add("conv2", Conv2d{2, 2, 3, 3, 1, 1, 1, 1, false},
      {detail::filled_conv_weight(2, 2, 3, {0.5, 1, 0.5}, true), {}});
  add("relu2", ReLU{});
  add("gap", GlobalAvgPool{});
  add("flatten", Flatten{});
  add("fc", Linear{2, 2, false},
      {Tensor({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0}), {}});

  Fixture f{"two-instance", seed,
            ModelGraph({2, 32, 32}, std::move(layers), std::move(params), 2),
            Tensor({1, 2, 32, 32}), {}, SegMap(32, 32), 0};
  for (double& v : f.image.data()) v = to_file_precision(rng.uniform(-0.7, -0.55));
  const BBox a1{3, 4, 10, 11};
  const BBox a2{20, 22, 27, 29};
  const BBox b1{18, 3, 27, 12};
  detail::paint(f.image, 0, a1, 1.0);
  detail::paint(f.image, 0, a2, 1.0);
  detail::paint(f.image, 1, b1, 1.0);
  f.boxes = {{0, a1}, {0, a2}, {1, b1}};
  detail::label(f.segmentation, a1, 1);
  detail::label(f.segmentation, a2, 1);
  detail::label(f.segmentation, b1, 2);
  return f;
}

// Random bias-free GAP-head net with a random input; no ground truth.
inline Fixture gap_head_fixture(std::uint64_t seed) {
  ModelGraph model = random_net(seed, {true, Head::GapLinear, true, true});
  Tensor image = random_input(model, seed);
  const auto& s = model.input_shape();
  return Fixture{"gap-head", seed, std::move(model), std::move(image), {},
                 SegMap(s[1], s[2]), 0};
}

inline Fixture make_fixture(const std::string& scenario, std::uint64_t seed) {
  if (scenario == "small-object") return small_object_fixture(seed);
  if (scenario == "two-instance") return two_instance_fixture(seed);
  if (scenario == "gap-head") return gap_head_fixture(seed);
  throw Error("unknown scenario '" + scenario + "'");
}

// Writes model.json, weights.zct, image.zct, gt_seg.zct, gt_boxes.txt and
// fixture.json into `dir`.
inline void write_fixture(const Fixture& f, const fs::path& dir) {
  fs::create_directories(dir);
  save_model(dir / "model.json", f.model, "weights.zct");
  save_tensor(dir / "image.zct", f.image);
  save_segmap(dir / "gt_seg.zct", f.segmentation);
  std::string boxes;
  for (const auto& b : f.boxes) boxes += format_box(b.box);
  detail::write_file(dir / "gt_boxes.txt", boxes);

  nlohmann::json meta;
  meta["scenario"] = f.scenario;
  meta["seed"] = f.seed;
  meta["model"] = "model.json";
  meta["image"] = "image.zct";
  meta["segmentation"] = "gt_seg.zct";
  meta["target_class"] = f.target_class;
  meta["gt_boxes"] = nlohmann::json::array();
  for (const auto& b : f.boxes)
    meta["gt_boxes"].push_back({{"class", b.class_idx}, {"box", box_to_json(b.box)}});
  detail::write_file(dir / "fixture.json", meta.dump(2) + "\n");
}

}  // namespace zoomcam
