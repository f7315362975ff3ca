#include <gtest/gtest.h>

#include "checks.hpp"
#include "test_util.hpp"
#include "zoomcam/zoomcam.hpp"

using namespace zoomcam;
using namespace zoomcam::test;

TEST(Parse, Methods) {
  EXPECT_EQ(parse_method("cam"), Method::Cam);
  EXPECT_EQ(parse_method("gradcam"), Method::GradCam);
  EXPECT_EQ(parse_method("zoomcam"), Method::ZoomCam);
  EXPECT_THROW(parse_method("scorecam"), Error);
}

TEST(Parse, LayerPolicies) {
  EXPECT_TRUE(std::holds_alternative<AllLayers>(parse_layer_policy("all")));
  EXPECT_EQ(std::get<LastK>(parse_layer_policy("lastK=3")).k, 3u);
  EXPECT_EQ(std::get<ExplicitLayers>(parse_layer_policy("names=a,b")).names,
            (std::vector<std::string>{"a", "b"}));
  for (const char* bad : {"", "last", "lastK=", "lastK=x", "names=", "names=a,,b", "names=a,"})
    EXPECT_THROW(parse_layer_policy(bad), Error) << bad;
}

TEST(Explain, OutputAtInputResolutionAndNormalized) {
  const ModelGraph m = random_net(21, {false, Head::GapLinear, true, true});
  const Tensor x = random_input(m, 21);
  for (Method method : {Method::Cam, Method::GradCam, Method::ZoomCam}) {
    const LayerPolicy policy = method == Method::ZoomCam ? LayerPolicy{AllLayers{}}
                                                         : LayerPolicy{LastK{1}};
    const SaliencyMap s = explain(m, x, 0, {method, policy});
    EXPECT_EQ(s.height, m.input_shape()[1]);
    EXPECT_EQ(s.width, m.input_shape()[2]);
    for (double v : s.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Explain, SingleLayerZoomCamIsUpsampledNormalizedLayerMap) {
  const ModelGraph m = random_net(22, {false, Head::GapLinear, true, true});
  const auto r = forward(m, random_input(m, 22));
  const SaliencyMap s = explain(m, r.tape, 1, {Method::ZoomCam, LastK{1}});
  const SaliencyMap layer = normalize_minmax(zoom_cam_layer(m, r.tape, 1, last_conv_block(m)));
  const SaliencyMap want = oracle::bilinear_tent(layer, m.input_shape()[1], m.input_shape()[2]);
  for (std::size_t j = 0; j < s.size(); ++j) EXPECT_NEAR(s.values[j], want.values[j], 1e-12);
}

TEST(Explain, TapeAndInputOverloadsAgree) {
  const ModelGraph m = random_net(23);
  const Tensor x = random_input(m, 23);
  const auto r = forward(m, x);
  EXPECT_EQ(explain(m, x, 0, {}).values, explain(m, r.tape, 0, {}).values);
}

TEST(Explain, CamOnNonGapModelFails) {
  const ModelGraph m = random_net(24, {true, Head::FlattenLinear, true, true});
  EXPECT_THROW(explain(m, random_input(m, 24), 0, {Method::Cam, LastK{1}}), Error);
}

TEST(RankClasses, StableDescending) {
  EXPECT_EQ(rank_classes(ScoreVector{{1, 3, 3, -2}}), (std::vector<std::size_t>{1, 2, 0, 3}));
}

TEST(PseudoSegment, TwoInstanceFixture) {
  const Fixture f = make_fixture("two-instance", 0);
  const std::vector<std::size_t> classes = {0, 1};
  const SegMap seg = pseudo_segment(f.model, f.image, classes, 0.25, {});
  EXPECT_EQ(seg.height, 32u);
  // Centres of the three instances carry their own label.
  EXPECT_EQ(seg.at(7, 6), 1u);
  EXPECT_EQ(seg.at(25, 23), 1u);
  EXPECT_EQ(seg.at(7, 22), 2u);
  const std::vector<SegRecord> recs = {{seg, f.segmentation}};
  EXPECT_GT(miou(recs, 2), 0.5);
  EXPECT_THROW(pseudo_segment(f.model, f.image, std::vector<std::size_t>{}, 0.25, {}), Error);
}

TEST(SmallObject, AllLayerAggregateRecoversSmallInstance) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const SmallObjectOutcome o = small_object_outcome(seed);
    EXPECT_LE(o.last_layer_iou, 0.5) << seed;
    EXPECT_GT(o.all_layer_best_iou, 0.5) << seed;
    EXPECT_LE(o.all_layer_top1, o.last_layer_top1) << seed;
  }
}

TEST(SmallObject, LastGridCollapsesSmallInstanceResponse) {
  const Fixture f = make_fixture("small-object", 0);
  const auto r = forward(f.model, f.image);
  const Tensor& last = r.tape.entry(f.model.layer_index("relu4")).output;
  ASSERT_EQ(last.dims(), (Dims{1, 1, 4, 4}));
  // Large square peaks in the top-left cells; the small one lands in (2,2) / (3,3).
  double large = 0.0;
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) large = std::max(large, last.at(0, 0, y, x));
  const double small = std::max(last.at(0, 0, 2, 2), last.at(0, 0, 3, 3));
  EXPECT_GT(large, 0.0);
  EXPECT_LT(small, 0.25 * large);
}
