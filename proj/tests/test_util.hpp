#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "zoomcam/zoomcam.hpp"

namespace zoomcam::test {

struct Layer {
  std::string name;
  LayerKind kind;
  LayerParams params;
};

inline ModelGraph chain(ModelGraph::Shape3 input, std::size_t classes, std::vector<Layer> ls) {
  std::vector<LayerSpec> specs;
  ParamSet params;
  for (auto& l : ls) {
    specs.push_back({l.name, l.kind});
    params.push_back(std::move(l.params));
  }
  return ModelGraph(input, std::move(specs), std::move(params), classes);
}

inline Tensor identity_1x1(std::size_t c) {
  Tensor w({c, c, 1, 1});
  for (std::size_t i = 0; i < c; ++i) w.at(i, i, 0, 0) = 1.0;
  return w;
}

// 1x2x2 input, 1x1 identity conv "a", GAP head with fc weight 4.
inline ModelGraph tiny_gap_model() {
  return chain({1, 2, 2}, 1,
               {{"a", Conv2d{1, 1, 1, 1}, {identity_1x1(1), {}}},
                {"gap", GlobalAvgPool{}, {}},
                {"flatten", Flatten{}, {}},
                {"fc", Linear{1, 1, false}, {Tensor({1, 1}, {4.0}), {}}}});
}

// Layer "b" reproduces a C x H x W input through an identity 1x1 conv; the
// head is a flatten plus a linear layer whose rows are `rows`, so the
// gradient of class c at "b" equals rows[c] reshaped.
inline ModelGraph probe_model(ModelGraph::Shape3 input, const std::vector<std::vector<double>>& rows) {
  const std::size_t n = input[0] * input[1] * input[2];
  std::vector<double> w;
  for (const auto& r : rows) w.insert(w.end(), r.begin(), r.end());
  return chain(input, rows.size(),
               {{"b", Conv2d{input[0], input[0], 1, 1}, {identity_1x1(input[0]), {}}},
                {"flatten", Flatten{}, {}},
                {"fc", Linear{n, rows.size(), false}, {Tensor({rows.size(), n}, w), {}}}});
}

inline SaliencyMap make_map(std::size_t h, std::size_t w, std::vector<double> v,
                            std::size_t cls = 0) {
  SaliencyMap m(h, w, cls, "m");
  m.values = std::move(v);
  return m;
}

inline SaliencyMap random_map(FixtureRng& rng, std::size_t h, std::size_t w, std::size_t cls = 0) {
  SaliencyMap m(h, w, cls, "r");
  for (double& v : m.values) v = rng.uniform(0.0, 3.0);
  return m;
}

inline BinaryMask random_mask(FixtureRng& rng, std::size_t h, std::size_t w, double density) {
  BinaryMask m(h, w);
  for (auto& b : m.bits) b = rng.uniform() < density;
  return m;
}

inline SegMap random_segmap(FixtureRng& rng, std::size_t h, std::size_t w, std::size_t classes,
                            bool with_ignore) {
  SegMap s(h, w);
  for (auto& l : s.labels) {
    l = static_cast<std::uint32_t>(rng.index(classes + 1));
    if (with_ignore && rng.uniform() < 0.1) l = kIgnoreLabel;
  }
  return s;
}

// conv1 > relu1 > conv2 > [relu2] > gap > flatten > fc, bias-free, with
// kernels up to 3x3 and the conv1 output grid no larger than 8x8.
inline ModelGraph two_conv_gap_net(std::uint64_t seed) {
  FixtureRng rng(seed);
  const std::size_t c0 = 1 + rng.index(2), c1 = 1 + rng.index(3), c2 = 1 + rng.index(3);
  const std::size_t h = 3 + rng.index(6), w = 3 + rng.index(6);
  const std::size_t k1 = 1 + rng.index(3), p1 = rng.index((k1 - 1) / 2 + 1);
  const std::size_t h1 = h + 2 * p1 - k1 + 1, w1 = w + 2 * p1 - k1 + 1;
  std::size_t k2 = 1 + rng.index(3);
  const std::size_t s2 = 1 + rng.index(2), p2 = rng.index(k2);
  if (h1 + 2 * p2 < k2 || w1 + 2 * p2 < k2) k2 = 1;
  const bool relu2 = rng.coin();
  const std::size_t classes = 2 + rng.index(2);

  std::vector<Layer> ls;
  ls.push_back({"conv1", Conv2d{c0, c1, k1, k1, 1, 1, p1, p1},
                {random_tensor(rng, {c1, c0, k1, k1}), {}}});
  ls.push_back({"relu1", ReLU{}, {}});
  ls.push_back({"conv2", Conv2d{c1, c2, k2, k2, s2, s2, p2, p2},
                {random_tensor(rng, {c2, c1, k2, k2}), {}}});
  if (relu2) ls.push_back({"relu2", ReLU{}, {}});
  ls.push_back({"gap", GlobalAvgPool{}, {}});
  ls.push_back({"flatten", Flatten{}, {}});
  ls.push_back({"fc", Linear{c2, classes, false}, {random_tensor(rng, {classes, c2}), {}}});
  return chain({c0, h, w}, classes, std::move(ls));
}

// Largest deviation between the backprop weight mask at the conv1 block of a
// two_conv_gap_net and the explicit filter-tap sums times the head weights
// over Z. Checked at the pre-ReLU conv1 output (ReLU-passing positions must
// match, the rest must be zero) and at the post-ReLU relu1 output.
inline double filter_tap_deviation(const ModelGraph& m, const Tensor& input) {
  const auto r = forward(m, input);
  const auto& conv2 = std::get<Conv2d>(m.layer(2).kind);
  const Dims& in = m.output_dims(1);
  const Dims& out = m.output_dims(2);
  std::vector<unsigned char> keep;
  const bool relu2 = m.layer(3).is<ReLU>();
  for (double v : r.tape.entry(2).output.data()) keep.push_back(v > 0.0);
  const auto W = oracle::filter_tap_sums(conv2, m.params()[2].weight, in[2], in[3], out[2],
                                         out[3], relu2 ? &keep : nullptr);
  const double z = static_cast<double>(out[2] * out[3]);
  const Tensor& fc = m.params().back().weight;
  const std::size_t c1 = in[1], area = in[2] * in[3];

  double worst = 0.0;
  for (std::size_t c = 0; c < m.class_count(); ++c) {
    const Tensor pre = weight_mask(m, r.tape, c, "conv1");
    const Tensor post = weight_mask(m, r.tape, c, "relu1");
    for (std::size_t p = 0; p < c1; ++p)
      for (std::size_t j = 0; j < area; ++j) {
        double expect = 0.0;
        for (std::size_t k = 0; k < conv2.out_channels; ++k)
          expect += fc[c * conv2.out_channels + k] / z * W[(k * c1 + p) * area + j];
        const std::size_t idx = p * area + j;
        const bool pass = r.tape.entry(0).output[idx] > 0.0;
        worst = std::max(worst, std::abs(post[idx] - expect));
        worst = std::max(worst, std::abs(pre[idx] - (pass ? expect : 0.0)));
      }
  }
  return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("zoomcam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace zoomcam::test
