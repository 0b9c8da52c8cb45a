// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "centerlens/interventions.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace centerlens;
using namespace centerlens::intervene;
using testutil::changed_pixels;
using testutil::noise;
using testutil::oracle_member;
using testutil::random_box;

TEST(Overlay, EmptyBoxListIsIdentity) {
  Rng rng(1);
  const Image img = noise(20, 30, rng);
  EXPECT_EQ(overlay_prompts(img, {}), img);
}

TEST(Overlay, ChangedPixelsEqualBruteForceStrokeBand) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 16 + static_cast<int>(rng.uniform_index(40));
    const int h = 16 + static_cast<int>(rng.uniform_index(40));
    const Image img = noise(h, w, rng);
    PromptStyle st;
    st.shape = rng.uniform01() < 0.5 ? PromptShape::kBox : PromptShape::kCircle;
    st.stroke_px = 1 + static_cast<int>(rng.uniform_index(4));
    st.pad_px = static_cast<int>(rng.uniform_index(4));
    st.color = {1.0f, 0.0f, static_cast<float>(rng.uniform_index(2))};
    const DetectionBox box = random_box(w, h, rng);
    const std::vector<DetectionBox> boxes{box};
    const Image out = overlay_prompts(img, boxes, st);
    std::set<std::pair<int, int>> expected;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (oracle_member(box, st, x, y)) expected.emplace(x, y);
    ASSERT_EQ(changed_pixels(img, out), expected) << "trial " << trial;
    for (const auto& [x, y] : expected) {
      ASSERT_TRUE(in_stroke(box, st, x, y));
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(y, x, c), st.color[c]);
    }
  }
}

TEST(Overlay, IntegerBoxDrawsExpectedRing) {
  Rng rng(3);
  const Image img = noise(12, 12, rng);
  DetectionBox b{4, 4, 8, 8, "", 1.0};
  PromptStyle st;
  st.stroke_px = 1;
  st.pad_px = 1;
  const std::vector<DetectionBox> boxes{b};
  const auto changed = changed_pixels(img, overlay_prompts(img, boxes, st));
  // Ring of side 8 from (2,2) to (9,9) minus the 6x6 interior: 64 - 36 = 28.
  EXPECT_EQ(changed.size(), 28u);
  EXPECT_TRUE(changed.count({2, 2}));
  EXPECT_TRUE(changed.count({9, 5}));
  EXPECT_FALSE(changed.count({3, 3}));
  EXPECT_FALSE(changed.count({10, 10}));
}

TEST(Overlay, DisjointBoxesGiveUnionOfChanges) {
  Rng rng(4);
  const Image img = noise(40, 40, rng);
  const DetectionBox a{2, 2, 10, 10, "a", 1.0}, b{24, 20, 36, 34, "b", 1.0};
  for (auto shape : {PromptShape::kBox, PromptShape::kCircle}) {
    PromptStyle st;
    st.shape = shape;
    const std::vector<DetectionBox> va{a}, vb{b}, both{a, b};
    auto ca = changed_pixels(img, overlay_prompts(img, va, st));
    const auto cb = changed_pixels(img, overlay_prompts(img, vb, st));
    ca.insert(cb.begin(), cb.end());
    EXPECT_EQ(changed_pixels(img, overlay_prompts(img, both, st)), ca);
  }
}

TEST(Overlay, OutputStaysInUnitRangeAndStyleIsValidated) {
  Rng rng(5);
  const Image img = noise(10, 10, rng);
  const std::vector<DetectionBox> boxes{{1, 1, 9, 9, "", 1.0}};
  const Image out = overlay_prompts(img, boxes);
  for (float v : out.pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  PromptStyle bad;
  bad.stroke_px = 0;
  EXPECT_THROW(overlay_prompts(img, boxes, bad), InvalidArgument);
  bad = {};
  bad.color = {1.5f, 0.0f, 0.0f};
  EXPECT_THROW(overlay_prompts(img, boxes, bad), InvalidArgument);
}

TEST(Detections, ParseValidateAndClamp) {
  EXPECT_TRUE(parse_detections("[]").empty());
  const auto d = parse_detections(
      R"([{"image_id":"a","boxes":[{"x0":-5,"y0":1,"x1":50,"y1":9,"label":"dog","score":0.8}]}])",
      ImageSize{40, 30});
  ASSERT_EQ(d.size(), 1u);
  ASSERT_EQ(d[0].boxes.size(), 1u);
  EXPECT_EQ(d[0].boxes[0].x0, 0.0);
  EXPECT_EQ(d[0].boxes[0].x1, 40.0);
  EXPECT_EQ(d[0].boxes[0].label, "dog");
  EXPECT_DOUBLE_EQ(d[0].boxes[0].score, 0.8);

  auto error_of = [](const std::string& text) -> std::string {
    try {
      parse_detections(text);
    } catch (const DataError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(error_of(R"([{"image_id":"img7","boxes":[{"x0":3,"y0":1,"x1":3,"y1":9}]}])").find("img7"),
            std::string::npos);
  EXPECT_NE(error_of(R"([{"image_id":"q","boxes":[{"x0":1,"y0":9,"x1":3,"y1":2}]}])").find("q"), std::string::npos);
  EXPECT_NE(error_of(R"([{"image_id":"s","boxes":[{"x0":1,"y0":1,"x1":3,"y1":2,"score":1.5}]}])").find("score"),
            std::string::npos);
  EXPECT_FALSE(error_of("{}").empty());
  EXPECT_FALSE(error_of("not json").empty());
  EXPECT_FALSE(error_of(R"([{"boxes":[]}])").empty());
}

TEST(Detections, LoadFromFile) {
  testutil::TempDir dir("det");
  {
    std::ofstream out(dir / "d.json");
    out << R"([{"image_id":"a","boxes":[{"x0":1,"y0":1,"x1":3,"y1":2}]}])";
  }
  EXPECT_EQ(load_detections(dir / "d.json").size(), 1u);
  EXPECT_THROW(load_detections(dir / "none.json"), IoError);
}

TEST(Detections, GridBoxTightlyBoundsTheBlock) {
  const auto b = grid_object_box(2, 5, 3, 8);
  EXPECT_EQ(b.x0, 40.0);
  EXPECT_EQ(b.y0, 16.0);
  EXPECT_EQ(b.x1, 64.0);
  EXPECT_EQ(b.y1, 40.0);
}
