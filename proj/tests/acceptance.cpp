// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "centerlens/bench.hpp"
#include "centerlens/decomp.hpp"
#include "centerlens/encoder.hpp"
#include "centerlens/fixture.hpp"
#include "centerlens/gridgen.hpp"
#include "centerlens/interventions.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace centerlens;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond && pass) detail << what << "; ";
    pass = pass && cond;
  }
};

bool report(const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "exception: " << e.what() << "; ";
  }
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << seconds_since(t0) << " s)";
  if (!o.pass) std::cout << ": " << o.detail.str();
  std::cout << std::endl;
  return o.pass;
}

void redistribution(Outcome& o) {
  Rng rng(101);
  const std::array<int, 3> sizes{4, 49, 196};
  std::vector<std::vector<float>> rows;
  for (int t = 0; t < 10000; ++t) {
    std::vector<float> row(static_cast<std::size_t>(sizes[t % 3]));
    double s = 0;
    for (float& v : row) s += (v = static_cast<float>(rng.uniform01() + 1e-3));
    for (float& v : row) v = static_cast<float>(v / s);
    rows.push_back(std::move(row));
  }
  const auto t0 = Clock::now();
  std::vector<std::vector<float>> once, twice;
  once.reserve(rows.size());
  twice.reserve(rows.size());
  for (const auto& r : rows) {
    once.push_back(intervene::redistribute_cls_row(r));
    twice.push_back(intervene::redistribute_cls_row(once.back()));
  }
  const double elapsed = seconds_since(t0);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const auto& r = rows[t];
    const auto& a = once[t];
    o.require(a[0] == 0.0f, "index 0 not zero");
    double sum = 0;
    for (float v : a) sum += v;
    o.require(std::abs(sum - 1.0) <= 1e-6, "row sum off");
    for (std::size_t j = 1; j < a.size(); ++j) {
      o.require(std::abs(twice[t][j] - a[j]) <= 1e-6, "not idempotent");
      const double want = static_cast<double>(r[j]) / r[1];
      o.require(std::abs(static_cast<double>(a[j]) / a[1] - want) <= 1e-6 * std::max(1.0, want), "ratio changed");
    }
  }
  o.require(elapsed < 1.0, "runtime >= 1 s");
}

void lasso(Outcome& o) {
  Rng rng(202);
  const auto t0 = Clock::now();
  for (int t = 0; t < 500; ++t) {
    const int n = 1 + static_cast<int>(rng.uniform_index(6));
    const int d = 1 + static_cast<int>(rng.uniform_index(4));
    const double lambda = std::array<double, 3>{0.05, 0.2, 0.5}[rng.uniform_index(3)];
    const auto dict = decomp::synthetic_dictionary(n, d, rng.next());
    std::vector<float> x(static_cast<std::size_t>(d));
    for (float& v : x) v = static_cast<float>(rng.normal());
    const auto res = decomp::splice_decompose(x, dict, lambda);
    const double gap = std::abs(res.objective - testutil::oracle_objective(dict, testutil::unit(x), lambda));
    o.require(gap <= 1e-6, "objective gap " + std::to_string(gap) + " on instance " + std::to_string(t));
    o.require(res.certified && res.kkt_residual <= 1e-5, "KKT " + std::to_string(res.kkt_residual));
  }
  o.require(seconds_since(t0) < 30.0, "runtime >= 30 s");
}

std::vector<grid::SourceImage> synthetic_sources(int sets, int classes, int per_class, int side) {
  std::vector<grid::SourceImage> out;
  Rng rng(303);
  for (int s = 0; s < sets; ++s)
    for (int c = 0; c < classes; ++c)
      for (int i = 0; i < per_class; ++i)
        out.push_back({testutil::random_image(side, side, rng), "class" + std::to_string(c), "set" + std::to_string(s)});
  return out;
}

void grid_generator(Outcome& o) {
  const auto full = synthetic_sources(3, 10, 100, 4);
  testutil::TempDir dir("accept-grid");
  for (int s : {1, 3, 5}) {
    grid::GridSpec spec;
    spec.s = s;
    spec.patch_px = 2;
    const auto entries = grid::generate_dataset(full, spec, dir / ("full" + std::to_string(s)), {1, false});
    o.require(entries.size() == 6000, "s=" + std::to_string(s) + " gave " + std::to_string(entries.size()));
    o.require(grid::check_placements(entries, spec.k).empty(), "placement violation at s=" + std::to_string(s));
    for (const auto& e : entries) {
      if (e.placement != tensorio::Placement::kOffCenter) continue;
      const bool ring = e.cell_row == 0 || e.cell_col == 0 || e.cell_row + s == spec.k || e.cell_col + s == spec.k;
      o.require(ring, "off-center block off the ring: " + e.sample_id);
    }
  }

  const auto desk = synthetic_sources(1, 10, 2, 64);
  grid::GridSpec spec;
  spec.seed = 9;
  const auto t0 = Clock::now();
  const auto a = grid::generate_dataset(desk, spec, dir / "desk-a");
  o.require(seconds_since(t0) < 5.0, "desk run >= 5 s");
  const auto b = grid::generate_dataset(desk, spec, dir / "desk-b", {2, true});
  o.require(a == b, "manifests differ");
  o.require(testutil::slurp(dir / "desk-a/manifest.jsonl") == testutil::slurp(dir / "desk-b/manifest.jsonl"),
            "manifest bytes differ");
  for (const auto& e : a) {
    o.require(testutil::slurp(dir / "desk-a" / e.image_path) == testutil::slurp(dir / "desk-b" / e.image_path),
              "image bytes differ: " + e.sample_id);
  }
  o.require(a.size() == 40, "desk run entry count");
}

void encoder(Outcome& o) {
  const auto t0 = Clock::now();
  testutil::RandomModel m;
  m.dim = 64;
  m.layers = 4;
  m.heads = 4;
  m.grid = 7;
  m.patch = 4;
  m.out_dim = 32;
  Rng rng(404);
  std::vector<vit::WeightBundle> models;
  std::vector<Image> images;
  for (int t = 0; t < 100; ++t) {
    models.push_back(testutil::random_weights(m, 1000 + static_cast<std::uint64_t>(t)));
    images.push_back(testutil::random_image(models.back().image_side(), models.back().image_side(), rng));
  }
  vit::ForwardOptions capture;
  capture.capture_attention = true;
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const auto res = vit::forward(images[t], models[t], capture);
    const auto& A = *res.attention;
    for (int l = 0; l < A.layers; ++l)
      for (int h = 0; h < A.heads; ++h)
        for (int i = 0; i < A.tokens; ++i) {
          double s = 0;
          for (int j = 0; j < A.tokens; ++j) s += A.at(l, h, i, j);
          worst = std::max(worst, std::abs(s - 1.0));
        }
  }
  o.require(worst <= 1e-5, "row sum deviation " + std::to_string(worst));

  m.zero_pos = true;
  std::vector<int> perm(49);
  std::iota(perm.begin(), perm.end(), 0);
  double perm_err = 0;
  for (int t = 0; t < 100; ++t) {
    const auto w = testutil::random_weights(m, 5000 + static_cast<std::uint64_t>(t));
    for (int i = 48; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
    const auto patches = vit::patchify(images[t], w.patch_size);
    vit::Matrix shuffled = patches;
    for (int i = 0; i < 49; ++i) std::copy(patches.row(perm[i]).begin(), patches.row(perm[i]).end(), shuffled.row(i).begin());
    const auto a = vit::forward(images[t], w).embedding.values;
    const auto b = vit::forward(vit::unpatchify(shuffled, w.patch_size, w.image_side()), w).embedding.values;
    for (std::size_t i = 0; i < a.size(); ++i) perm_err = std::max(perm_err, static_cast<double>(std::abs(a[i] - b[i])));
  }
  o.require(perm_err <= 1e-5, "permutation deviation " + std::to_string(perm_err));

  const auto batch = vit::forward_batch(images, models[0], {}, 4);
  for (std::size_t i = 0; i < images.size(); ++i) {
    o.require(batch[i].embedding.values == vit::forward(images[i], models[0]).embedding.values, "batch != serial");
  }
  o.require(seconds_since(t0) < 60.0, "runtime >= 60 s");
}

void fixture_experiment(Outcome& o) {
  const auto t0 = Clock::now();
  testutil::TempDir dir("accept-fixture");
  const auto fx = fixture::build_fixture();
  fixture::write_fixture(fx, dir / "fx");
  const auto sources = grid::load_sources(dir / "fx/sources");
  grid::GridSpec spec;
  spec.k = 7;
  spec.s = 1;
  spec.patch_px = fx.config.patch_px;
  spec.seed = 11;
  const auto manifest = grid::generate_dataset(sources, spec, dir / "grid");
  o.require(manifest.size() == 200, "expected 2x100 samples");
  const auto weights = vit::WeightBundle::from_bundle(tensorio::read_bundle_file(dir / "fx/weights.cblt"));
  const auto cands = bench::load_candidates(dir / "fx/classes.cblt");
  bench::BenchConfig cfg;
  cfg.model_id = "fixture";
  const auto base = bench::run_bench(weights, manifest, dir / "grid", cands, cfg);
  cfg.variant = bench::Variant::kAr;
  const auto ar = bench::run_bench(weights, manifest, dir / "grid", cands, cfg);
  const auto& b = base.report;
  const auto& a = ar.report;
  std::cout << "  baseline center " << b.center_acc << " off-center " << b.offcenter_acc << " bias " << b.center_bias
            << "; ar off-center " << a.offcenter_acc << std::endl;
  o.require(b.center_bias > 10.0, "baseline bias not above 10");
  o.require(a.offcenter_acc > b.offcenter_acc, "ar did not raise off-center accuracy");
  int off = 0, up = 0;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (manifest[i].placement != tensorio::Placement::kOffCenter) continue;
    ++off;
    up += ar.samples[i].true_class_cosine > base.samples[i].true_class_cosine;
  }
  o.require(off > 0 && up * 100 >= off * 95, std::to_string(up) + "/" + std::to_string(off) + " cosines increased");
  for (const auto* r : {&b, &a}) {
    o.require(r->center_bias == r->center_acc - r->offcenter_acc, "gap arithmetic");
    const auto back = bench::parse_report_json(bench::report_json(*r));
    o.require(back.center_bias == back.center_acc - back.offcenter_acc, "gap arithmetic after round trip");
  }
  o.require(seconds_since(t0) < 120.0, "runtime >= 2 min");
}

bench::BiasReport from_counts(int n, int center_ok, int off_ok, bench::Variant v) {
  std::vector<tensorio::ManifestEntry> manifest;
  std::map<std::string, int> predictions;
  for (int i = 0; i < 2 * n; ++i) {
    tensorio::ManifestEntry e;
    e.sample_id = "s" + std::to_string(i);
    e.image_path = e.sample_id + ".png";
    e.class_label = "a";
    const bool center = i < n;
    e.placement = center ? tensorio::Placement::kCenter : tensorio::Placement::kOffCenter;
    predictions[e.sample_id] = (center ? i < center_ok : i - n < off_ok) ? 0 : 1;
    manifest.push_back(e);
  }
  return bench::evaluate(manifest, predictions, {{"a", 0}, {"b", 1}}, "m", v);
}

void metric_spot_checks(Outcome& o) {
  using bench::display_round;
  const auto t1a = from_counts(1000, 629, 319, bench::Variant::kBaseline);
  o.require(display_round(t1a.center_acc) == 62.9 && display_round(t1a.offcenter_acc) == 31.9, "accuracy inputs");
  o.require(display_round(t1a.center_bias) == 31.0, "(62.9, 31.9) -> 31.0");
  const auto t1b = from_counts(1000, 971, 696, bench::Variant::kBaseline);
  o.require(display_round(t1b.center_bias) == 27.5, "(97.1, 69.6) -> 27.5");
  const auto ar = from_counts(1000, 762, 492, bench::Variant::kAr);
  o.require(display_round(bench::improvement(ar, t1a)) == 17.3, "49.2 vs 31.9 -> +17.3");
}

void overlay(Outcome& o) {
  Rng rng(707);
  for (int t = 0; t < 50; ++t) {
    const int w = 16 + static_cast<int>(rng.uniform_index(48));
    const int h = 16 + static_cast<int>(rng.uniform_index(48));
    const Image img = testutil::noise(h, w, rng);
    intervene::PromptStyle st;
    st.shape = rng.uniform01() < 0.5 ? intervene::PromptShape::kBox : intervene::PromptShape::kCircle;
    st.stroke_px = 1 + static_cast<int>(rng.uniform_index(4));
    st.pad_px = static_cast<int>(rng.uniform_index(4));
    st.color = {1.0f, 0.0f, 0.0f};
    const auto box = testutil::random_box(w, h, rng);
    const std::vector<intervene::DetectionBox> boxes{box};
    const auto changed = testutil::changed_pixels(img, intervene::overlay_prompts(img, boxes, st));
    std::set<std::pair<int, int>> expected;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (testutil::oracle_member(box, st, x, y)) expected.emplace(x, y);
    o.require(changed == expected, "changed set differs from oracle in case " + std::to_string(t));
    for (const auto& p : changed) o.require(expected.count(p) == 1, "pixel changed outside the stroke");
  }
}

}  // namespace

int main() {
  bool ok = true;
  ok &= report("redistribution algebra", redistribution);
  ok &= report("lasso oracle equivalence", lasso);
  ok &= report("grid generator", grid_generator);
  ok &= report("encoder invariants", encoder);
  ok &= report("center-biased fixture experiment", fixture_experiment);
  ok &= report("metric spot-checks", metric_spot_checks);
  ok &= report("overlay correctness", overlay);
  return ok ? 0 : 1;
}
