#include <gtest/gtest.h>

#include "checks.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "zoomcam/zoomcam.hpp"

using namespace zoomcam;
using namespace zoomcam::test;

namespace {

BinaryMask mask_from(std::size_t h, std::size_t w, std::vector<int> bits) {
  BinaryMask m(h, w);
  for (std::size_t j = 0; j < bits.size(); ++j) m.bits[j] = bits[j] != 0;
  return m;
}

std::vector<std::size_t> sizes(const std::vector<Component>& comps) {
  std::vector<std::size_t> out;
  for (const auto& c : comps) out.push_back(c.size());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Threshold, StrictRelativeCut) {
  const BinaryMask m = threshold_relative(make_map(2, 2, {1.0, 0.2, 0.3, 0.26}), 0.25);
  EXPECT_EQ(m, mask_from(2, 2, {1, 0, 1, 1}));
  // Equal to the cut does not pass.
  EXPECT_EQ(threshold_relative(make_map(1, 2, {1.0, 0.25}), 0.25), mask_from(1, 2, {1, 0}));
}

TEST(Threshold, ZeroMapIsEmpty) {
  EXPECT_EQ(threshold_relative(make_map(2, 2, {0, 0, 0, 0}), 0.25).count(), 0u);
}

TEST(Threshold, RejectsTauOutsideUnitInterval) {
  const SaliencyMap m = make_map(1, 1, {1});
  EXPECT_THROW(threshold_relative(m, 0.0), Error);
  EXPECT_THROW(threshold_relative(m, 1.0), Error);
  EXPECT_THROW(threshold_relative(m, -0.5), Error);
}

TEST(Threshold, ScaleInvariant) {
  FixtureRng rng(17);
  for (int i = 0; i < 200; ++i) {
    const SaliencyMap m = random_map(rng, 5, 7);
    const double tau = rng.uniform(0.05, 0.95);
    const double c = std::ldexp(1.0, static_cast<int>(rng.index(20)) - 10);
    SaliencyMap scaled = m;
    for (double& v : scaled.values) v *= c;
    EXPECT_EQ(threshold_relative(scaled, tau), threshold_relative(m, tau));
  }
}

TEST(Components, FourConnectivity) {
  const auto comps = connected_components(mask_from(3, 3, {1, 1, 0, 0, 0, 0, 0, 0, 1}),
                                          Connectivity::Four);
  EXPECT_EQ(sizes(comps), (std::vector<std::size_t>{1, 2}));
}

TEST(Components, DiagonalPair) {
  const BinaryMask m = mask_from(2, 2, {1, 0, 0, 1});
  EXPECT_EQ(connected_components(m, Connectivity::Four).size(), 2u);
  EXPECT_EQ(connected_components(m, Connectivity::Eight).size(), 1u);
}

TEST(Components, EmptyMask) {
  EXPECT_TRUE(connected_components(BinaryMask(3, 3)).empty());
}

TEST(Components, MatchFloodFillOnRandomMasks) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) EXPECT_EQ(check_components(seed), "");
}

TEST(LargestBox, LShapeBeatsSinglePixel) {
  BinaryMask m(4, 4);
  m.set(0, 0);
  m.set(1, 0);
  m.set(1, 1);
  m.set(3, 3);
  EXPECT_EQ(largest_component_bbox(m), (BBox{0, 0, 1, 1}));
  EXPECT_EQ(largest_component_bbox(m), oracle::flood_fill_largest_box(m, Connectivity::Eight));
}

TEST(LargestBox, SinglePixel) {
  BinaryMask m(4, 7);
  m.set(2, 5);
  EXPECT_EQ(largest_component_bbox(m), (BBox{5, 2, 5, 2}));
}

TEST(LargestBox, FullMask) {
  BinaryMask m(3, 5);
  std::fill(m.bits.begin(), m.bits.end(), 1);
  EXPECT_EQ(largest_component_bbox(m, Connectivity::Four), (BBox{0, 0, 4, 2}));
}

TEST(LargestBox, TieGoesToTopLeftCorner) {
  BinaryMask m(5, 5);
  m.set(0, 4);
  m.set(3, 1);
  EXPECT_EQ(largest_component_bbox(m), (BBox{4, 0, 4, 0}));
}

TEST(LargestBox, EmptyMaskIsAnError) {
  try {
    largest_component_bbox(BinaryMask(2, 2));
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no foreground");
  }
}

TEST(Fusion, PerClassCutsThenPixelwiseMax) {
  const std::vector<SaliencyMap> maps = {make_map(1, 2, {0.9, 0.1}, 0),
                                         make_map(1, 2, {0.3, 0.8}, 1)};
  EXPECT_EQ(fuse_multilabel(maps, 0.25).labels, (std::vector<std::uint32_t>{1, 2}));
}

TEST(Fusion, SingleClassReducesToThreshold) {
  const SaliencyMap m = make_map(2, 2, {1.0, 0.2, 0.3, 0.26}, 4);
  const SegMap seg = fuse_multilabel(std::vector<SaliencyMap>{m}, 0.25);
  const BinaryMask mask = threshold_relative(m, 0.25);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(seg.labels[j], mask.bits[j] ? 5u : 0u);
}

TEST(Fusion, ZeroMapsAreBackground) {
  const std::vector<SaliencyMap> maps = {make_map(1, 3, {0, 0, 0}, 0),
                                         make_map(1, 3, {0, 0, 0}, 1)};
  EXPECT_EQ(fuse_multilabel(maps, 0.25).labels, std::vector<std::uint32_t>(3, 0));
}

TEST(Fusion, TiesGoToLowerClass) {
  const std::vector<SaliencyMap> maps = {make_map(1, 2, {1.0, 0.5}, 3),
                                         make_map(1, 2, {1.0, 0.5}, 1)};
  EXPECT_EQ(fuse_multilabel(maps, 0.25).labels, (std::vector<std::uint32_t>{2, 2}));
}

TEST(Fusion, SizeMismatchIsAnError) {
  const std::vector<SaliencyMap> maps = {make_map(1, 2, {1, 0}, 0), make_map(2, 1, {1, 0}, 1)};
  EXPECT_THROW(fuse_multilabel(maps, 0.25), Error);
  EXPECT_THROW(fuse_multilabel(std::vector<SaliencyMap>{}, 0.25), Error);
}

TEST(Fusion, WinnerHasMaximalValueAmongPassingClasses) {
  FixtureRng rng(23);
  for (int it = 0; it < 100; ++it) {
    std::vector<SaliencyMap> maps;
    const std::size_t n = 1 + rng.index(4);
    for (std::size_t i = 0; i < n; ++i)
      maps.push_back(normalize_minmax(random_map(rng, 6, 6, i)));
    const double tau = rng.uniform(0.1, 0.9);
    const SegMap seg = fuse_multilabel(maps, tau);
    for (std::size_t j = 0; j < 36; ++j) {
      bool any = false;
      double best = 0.0;
      for (const auto& m : maps) {
        if (m.values[j] > tau) {
          any = true;
          best = std::max(best, m.values[j]);
        }
      }
      if (!any) {
        EXPECT_EQ(seg.labels[j], 0u);
        continue;
      }
      ASSERT_GT(seg.labels[j], 0u);
      const SaliencyMap& win = maps[seg.labels[j] - 1];
      EXPECT_GT(win.values[j], tau);
      EXPECT_EQ(win.values[j], best);
    }
  }
}
