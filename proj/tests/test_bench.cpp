// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "centerlens/bench.hpp"
#include "centerlens/image.hpp"
#include "test_util.hpp"

using namespace centerlens;
using namespace centerlens::bench;

namespace {

ManifestEntry entry(const std::string& id, const std::string& label, Placement p, int row = -1, int col = -1) {
  ManifestEntry e;
  e.sample_id = id;
  e.image_path = "images/" + id + ".png";
  e.class_label = label;
  e.placement = p;
  e.cell_row = row;
  e.cell_col = col;
  e.source_set = "test";
  e.object_size_s = 1;
  return e;
}

// n_center + n_offcenter samples of class "a"; the first `center_ok` center
// and first `off_ok` off-center samples are predicted correctly.
struct Scored {
  std::vector<ManifestEntry> manifest;
  std::map<std::string, int> predictions;
};

Scored scored(int n_center, int center_ok, int n_off, int off_ok) {
  Scored s;
  for (int i = 0; i < n_center; ++i) {
    const auto id = "c" + std::to_string(i);
    s.manifest.push_back(entry(id, "a", Placement::kCenter));
    s.predictions[id] = i < center_ok ? 0 : 1;
  }
  for (int i = 0; i < n_off; ++i) {
    const auto id = "o" + std::to_string(i);
    s.manifest.push_back(entry(id, "a", Placement::kOffCenter));
    s.predictions[id] = i < off_ok ? 0 : 1;
  }
  return s;
}

const std::map<std::string, int> kLabels{{"a", 0}, {"b", 1}};

}  // namespace

TEST(Metrics, CenterBiasSpotChecks) {
  {
    const auto s = scored(1000, 629, 1000, 319);
    const auto r = evaluate(s.manifest, s.predictions, kLabels);
    EXPECT_DOUBLE_EQ(display_round(r.center_acc), 62.9);
    EXPECT_DOUBLE_EQ(display_round(r.offcenter_acc), 31.9);
    EXPECT_DOUBLE_EQ(display_round(r.center_bias), 31.0);
  }
  {
    const auto s = scored(1000, 971, 1000, 696);
    const auto r = evaluate(s.manifest, s.predictions, kLabels);
    EXPECT_DOUBLE_EQ(display_round(r.center_bias), 27.5);
  }
}

TEST(Metrics, ImprovementSpotChecks) {
  const auto base = scored(1000, 629, 1000, 319);
  const auto ar = scored(1000, 762, 1000, 492);
  const auto rb = evaluate(base.manifest, base.predictions, kLabels, "m", Variant::kBaseline);
  const auto ra = evaluate(ar.manifest, ar.predictions, kLabels, "m", Variant::kAr);
  EXPECT_DOUBLE_EQ(display_round(improvement(ra, rb)), 17.3);
  EXPECT_DOUBLE_EQ(display_round(ra.center_bias), 27.0);

  const auto vb = scored(1000, 657, 1000, 105);
  const auto vp = scored(1000, 590, 1000, 233);
  EXPECT_DOUBLE_EQ(display_round(improvement(evaluate(vp.manifest, vp.predictions, kLabels, "m", Variant::kVp),
                                             evaluate(vb.manifest, vb.predictions, kLabels))),
                   12.8);
}

TEST(Metrics, CountsAndPermutationInvariance) {
  auto s = scored(7, 5, 11, 2);
  const auto r = evaluate(s.manifest, s.predictions, kLabels);
  EXPECT_EQ(r.n_center, 7);
  EXPECT_EQ(r.n_offcenter, 11);
  EXPECT_EQ(r.correct_center, 5);
  EXPECT_EQ(r.correct_offcenter, 2);
  EXPECT_DOUBLE_EQ(r.center_acc, 100.0 * 5 / 7);
  EXPECT_DOUBLE_EQ(r.offcenter_acc, 100.0 * 2 / 11);
  EXPECT_DOUBLE_EQ(r.center_bias, r.center_acc - r.offcenter_acc);
  std::reverse(s.manifest.begin(), s.manifest.end());
  const auto p = evaluate(s.manifest, s.predictions, kLabels);
  EXPECT_EQ(p.center_acc, r.center_acc);
  EXPECT_EQ(p.offcenter_acc, r.offcenter_acc);
}

TEST(Metrics, MissingPredictionsAndDigestMismatch) {
  auto s = scored(2, 1, 2, 1);
  s.predictions.erase("o1");
  try {
    evaluate(s.manifest, s.predictions, kLabels);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("o1"), std::string::npos);
  }
  const auto a = scored(2, 1, 2, 1);
  const auto b = scored(3, 1, 2, 1);
  EXPECT_THROW(improvement(evaluate(a.manifest, a.predictions, kLabels), evaluate(b.manifest, b.predictions, kLabels)),
               DataError);
  auto bad = scored(1, 1, 0, 0);
  bad.manifest[0].class_label = "zebra";
  EXPECT_THROW(evaluate(bad.manifest, bad.predictions, kLabels), DataError);
}

TEST(Metrics, PerCellAccuracyMatchesGroupBy) {
  Rng rng(3);
  const int k = 5;
  std::vector<ManifestEntry> manifest;
  std::map<std::string, bool> correct;
  std::map<std::pair<int, int>, std::pair<int, int>> oracle;
  for (int i = 0; i < 300; ++i) {
    const int r = static_cast<int>(rng.uniform_index(k)), c = static_cast<int>(rng.uniform_index(k));
    const auto id = "s" + std::to_string(i);
    manifest.push_back(entry(id, "a", r == 2 && c == 2 ? Placement::kCenter : Placement::kOffCenter, r, c));
    const bool ok = rng.uniform01() < 0.4;
    correct[id] = ok;
    oracle[{r, c}].first += ok;
    oracle[{r, c}].second += 1;
  }
  const auto map = per_cell_accuracy(manifest, correct, k);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) {
      const auto it = oracle.find({r, c});
      if (it == oracle.end()) {
        EXPECT_EQ(map.at(r, c).total, 0);
        EXPECT_FALSE(map.accuracy(r, c));
      } else {
        EXPECT_EQ(map.at(r, c).correct, it->second.first);
        EXPECT_EQ(map.at(r, c).total, it->second.second);
        EXPECT_DOUBLE_EQ(*map.accuracy(r, c), 100.0 * it->second.first / it->second.second);
      }
    }
  const auto csv = cells_csv(map);
  EXPECT_EQ(csv.rfind("row,col,correct,total,accuracy\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), k * k + 1);
  manifest.push_back(entry("far", "a", Placement::kOffCenter, 9, 0));
  correct["far"] = true;
  EXPECT_THROW(per_cell_accuracy(manifest, correct, k), DataError);
}

TEST(ZeroShot, MatchesBruteForceCosineArgmax) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + static_cast<int>(rng.uniform_index(10)), d = 3 + static_cast<int>(rng.uniform_index(8));
    std::vector<std::string> names;
    for (int i = 0; i < m; ++i) names.push_back("c" + std::to_string(i));
    const auto raw = testutil::random_matrix(m, d, 1.0, rng);
    const auto cs = ClassSet::make(names, raw);
    const auto x = testutil::random_vector(d, 1.0, rng);
    int best = 0;
    double best_cos = -2;
    for (int r = 0; r < m; ++r) {
      const double c = cosine(x, raw.row(r));
      if (c > best_cos) {
        best_cos = c;
        best = r;
      }
    }
    EXPECT_EQ(zero_shot_classify(x, cs.embeddings), best);
  }
}

TEST(ZeroShot, TiesGoToLowestIndex) {
  vit::Matrix m(3, 2);
  m.data = {0, 1, 1, 0, 1, 0};
  const auto cs = ClassSet::make({"a", "b", "c"}, m);
  EXPECT_EQ(zero_shot_classify(std::vector<float>{2.0f, 0.0f}, cs.embeddings), 1);
  vit::Matrix z(1, 2);
  EXPECT_THROW(ClassSet::make({"a"}, z), DataError);
  EXPECT_THROW(ClassSet::make({"a", "b"}, m), DataError);
}

TEST(WhatsUp, PartitionByRelation) {
  std::vector<std::pair<std::string, std::string>> rel;
  const char* off[] = {"left_of", "right_of", "under"};
  for (int i = 0; i < 105; ++i) rel.emplace_back("on" + std::to_string(i), "on");
  for (int i = 0; i < 313; ++i) rel.emplace_back("x" + std::to_string(i), off[i % 3]);
  const auto parts = partition_whatsup(rel);
  ASSERT_EQ(parts.size(), 418u);
  EXPECT_EQ(std::count(parts.begin(), parts.end(), Placement::kCenter), 105);
  EXPECT_EQ(std::count(parts.begin(), parts.end(), Placement::kOffCenter), 313);
  rel.emplace_back("bad7", "above");
  try {
    partition_whatsup(rel);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad7"), std::string::npos);
  }
}

TEST(Report, DisplayRoundHalfAwayFromZero) {
  EXPECT_DOUBLE_EQ(display_round(31.25), 31.3);
  EXPECT_DOUBLE_EQ(display_round(-17.25), -17.3);
  EXPECT_DOUBLE_EQ(display_round(100.0), 100.0);
  EXPECT_DOUBLE_EQ(display_round(0.04), 0.0);
}

TEST(Report, JsonRoundTripAndTable) {
  const auto s = scored(3, 2, 3, 1);
  auto r = evaluate(s.manifest, s.predictions, kLabels, "vit-b", Variant::kAr);
  r.improv_offcenter = 12.345;
  r.improv_baseline = "vit-b/baseline";
  const auto back = parse_report_json(report_json(r));
  EXPECT_EQ(back.model_id, "vit-b");
  EXPECT_EQ(back.variant, Variant::kAr);
  EXPECT_EQ(back.center_acc, r.center_acc);
  EXPECT_EQ(back.offcenter_acc, r.offcenter_acc);
  EXPECT_EQ(back.improv_offcenter, r.improv_offcenter);
  EXPECT_EQ(back.improv_baseline, r.improv_baseline);
  EXPECT_EQ(back.manifest_digest, r.manifest_digest);
  EXPECT_EQ(back.correct_offcenter, 1);

  auto base = r;
  base.variant = Variant::kBaseline;
  base.improv_offcenter.reset();
  EXPECT_NE(report_json(base).find("\"improv_offcenter\": null"), std::string::npos);
  const std::vector<BiasReport> rows{base, r};
  const auto table = report_table(rows);
  EXPECT_NE(table.find("center bias"), std::string::npos);
  EXPECT_NE(table.find("66.7"), std::string::npos);
  EXPECT_NE(table.find("+12.3"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);

  EXPECT_THROW(parse_report_json("{}"), DataError);
  EXPECT_THROW(parse_report_json("nope"), DataError);
  testutil::TempDir dir("report");
  write_report(r, dir / "r.json");
  EXPECT_EQ(read_report(dir / "r.json").center_bias, r.center_bias);
  EXPECT_THROW(read_report(dir / "none.json"), IoError);
  EXPECT_THROW(parse_variant("nope"), InvalidArgument);
}

TEST(Runner, PerSampleCandidatesAndGlobalSetAgree) {
  testutil::RandomModel m;
  const auto w = testutil::random_weights(m, 21);
  testutil::TempDir dir("runner");
  std::filesystem::create_directories(dir / "images");
  Rng rng(22);
  std::vector<ManifestEntry> manifest;
  std::vector<std::string> names;
  vit::Matrix emb(6, w.out_dim());
  for (int i = 0; i < 6; ++i) {
    const auto id = "s" + std::to_string(i);
    const Image img = testutil::random_image(w.image_side(), w.image_side(), rng);
    write_png(img, dir / ("images/" + id + ".png"));
    const auto e = vit::forward(read_png(dir / ("images/" + id + ".png")), w).embedding;
    std::copy(e.values.begin(), e.values.end(), emb.data.begin() + static_cast<std::ptrdiff_t>(i) * w.out_dim());
    names.push_back("class" + std::to_string(i));
    manifest.push_back(entry(id, names.back(), i < 2 ? Placement::kCenter : Placement::kOffCenter, i % 3, i % 3));
  }
  Candidates global;
  global.global = ClassSet::make(names, emb);
  BenchConfig cfg;
  cfg.grid_k = 3;
  const auto g = run_bench(w, manifest, dir.path(), global, cfg);
  EXPECT_EQ(g.report.center_acc, 100.0);
  EXPECT_EQ(g.report.offcenter_acc, 100.0);
  ASSERT_TRUE(g.cells);
  EXPECT_EQ(g.cells->at(1, 1).total, 2);
  for (const auto& s : g.samples) EXPECT_NEAR(s.true_class_cosine, 1.0, 1e-6);

  // Per-sample candidates: sample i chooses between its own class and a
  // decoy; odd samples carry the decoy's label and so are wrong.
  Candidates per;
  for (int i = 0; i < 6; ++i) {
    vit::Matrix two(2, w.out_dim());
    for (int c = 0; c < w.out_dim(); ++c) {
      two.at(0, c) = emb.at(i, c);
      two.at(1, c) = emb.at((i + 1) % 6, c);
    }
    per.per_sample.emplace(manifest[i].sample_id,
                           ClassSet::make({names[i], names[(i + 1) % 6]}, two));
  }
  auto odd = manifest;
  for (int i = 1; i < 6; i += 2) odd[i].class_label = names[(i + 1) % 6];
  const auto p = run_bench(w, odd, dir.path(), per, cfg);
  EXPECT_EQ(p.report.correct_center, 1);
  EXPECT_EQ(p.report.correct_offcenter, 2);
  EXPECT_EQ(p.report.manifest_digest, tensorio::manifest_digest(odd));

  BenchConfig vp;
  vp.variant = Variant::kVp;
  EXPECT_THROW(run_bench(w, manifest, dir.path(), global, vp), InvalidArgument);
  cfg.jobs = 3;
  EXPECT_EQ(run_bench(w, manifest, dir.path(), global, cfg).report.center_acc, 100.0);
  const auto csv = samples_csv(g.samples);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Candidates, SaveLoadAndMissingSidecar) {
  testutil::TempDir dir("classes");
  vit::Matrix m(2, 3);
  m.data = {1, 0, 0, 0, 3, 4};
  save_classes(ClassSet::make({"cat", "dog"}, m), dir / "c.cblt");
  const auto c = load_candidates(dir / "c.cblt");
  ASSERT_TRUE(c.global);
  EXPECT_EQ(c.global->names, (std::vector<std::string>{"cat", "dog"}));
  EXPECT_NEAR(c.global->embeddings.at(1, 2), 0.8, 1e-7);
  EXPECT_EQ(&c.for_sample("anything"), &*c.global);
  std::filesystem::remove(tensorio::names_sidecar_path(dir / "c.cblt"));
  EXPECT_THROW(load_candidates(dir / "c.cblt"), IoError);
}
