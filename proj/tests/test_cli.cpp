// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "centerlens/bench.hpp"
#include "centerlens/cli.hpp"
#include "test_util.hpp"

using namespace centerlens;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Fixture -> GRID -> baseline and ar benches -> report, all through the CLI.
struct Pipeline {
  testutil::TempDir dir{"cli-pipeline"};

  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  void fixture() { ASSERT_EQ(run({"fixture", "--out", p("fx"), "--images-per-class", "2"}).code, 0); }

  Run generate(const std::string& out, const std::string& jobs = "1") {
    return run({"generate", "--sources", p("fx/sources"), "--out", p(out), "--k", "7", "--patch-px", "8", "--s", "1",
                "--seed", "5", "--jobs", jobs});
  }

  Run bench(const std::string& data, const std::string& variant, const std::string& out) {
    return run({"bench", "--weights", p("fx/weights.cblt"), "--manifest", p(data + "/manifest.jsonl"), "--classes",
                p("fx/classes.cblt"), "--variant", variant, "--model-id", "fixture", "--grid-k", "7", "--out",
                p(out)});
  }
};

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, cli::kExitOk);
  EXPECT_NE(help.out.find("generate"), std::string::npos);
  EXPECT_EQ(run({"bench", "--help"}).code, cli::kExitOk);
  EXPECT_EQ(run({"generate", "--k", "4", "--sources", "x", "--out", "y"}).code, cli::kExitUsage);
  const auto bogus = run({"bogus"});
  EXPECT_EQ(bogus.code, cli::kExitUsage);
  EXPECT_NE(bogus.err.find("bogus"), std::string::npos);
  EXPECT_EQ(run({"generate", "--sources", "x"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"intervene", "--mode", "sideways"}).code, cli::kExitUsage);
}

TEST(Cli, MissingInputsAreDataErrors) {
  testutil::TempDir dir("cli-missing");
  const auto r = run({"generate", "--sources", (dir / "nope").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
  EXPECT_EQ(run({"encode", "--weights", (dir / "w.cblt").string(), "--image", (dir / "i.png").string(), "--out",
                 (dir / "e.cblt").string()})
                .code,
            cli::kExitData);
}

TEST(Cli, SmokePipelineFillsImprovement) {
  Pipeline pl;
  pl.fixture();
  const auto gen = pl.generate("grid");
  ASSERT_EQ(gen.code, 0) << gen.err;
  EXPECT_NE(gen.err.find("\"subcommand\":\"generate\""), std::string::npos) << gen.err;
  const auto base = pl.bench("grid", "baseline", "base.json");
  ASSERT_EQ(base.code, 0) << base.err;
  EXPECT_NE(base.out.find("center bias"), std::string::npos);
  const auto ar = pl.bench("grid", "ar", "ar.json");
  ASSERT_EQ(ar.code, 0) << ar.err;

  const auto rep = run({"report", pl.p("base.json"), pl.p("ar.json"), "--json-out", pl.p("reports.json")});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("fixture"), std::string::npos);
  const auto b = bench::read_report(pl.p("base.json"));
  const auto a = bench::read_report(pl.p("ar.json"));
  EXPECT_EQ(b.n_center, 20);
  EXPECT_EQ(b.n_offcenter, 20);
  EXPECT_GT(a.offcenter_acc, b.offcenter_acc);
  const auto joined = testutil::slurp(pl.p("reports.json"));
  EXPECT_NE(joined.find("\"improv_baseline\": \"fixture/baseline\""), std::string::npos) << joined;
}

TEST(Cli, VisualPromptBenchNamesItsShape) {
  Pipeline pl;
  pl.fixture();
  ASSERT_EQ(pl.generate("grid").code, 0);
  const auto vp = run({"bench", "--weights", pl.p("fx/weights.cblt"), "--manifest", pl.p("grid/manifest.jsonl"),
                       "--classes", pl.p("fx/classes.cblt"), "--variant", "vp", "--grid-k", "7", "--shape", "circle",
                       "--stroke", "1", "--pad", "0", "--out", pl.p("vp.json")});
  ASSERT_EQ(vp.code, 0) << vp.err;
  EXPECT_NE(vp.out.find("prompt: circle, stroke 1 px, pad 0 px, boxes from grid anchors"), std::string::npos) << vp.out;
  EXPECT_EQ(bench::read_report(pl.p("vp.json")).variant, bench::Variant::kVp);
  const auto bad = run({"bench", "--weights", pl.p("fx/weights.cblt"), "--manifest", pl.p("grid/manifest.jsonl"),
                        "--classes", pl.p("fx/classes.cblt"), "--variant", "vp", "--out", pl.p("vp2.json")});
  EXPECT_EQ(bad.code, cli::kExitUsage);
}

TEST(Cli, GenerateIsIdempotentAndJobIndependent) {
  Pipeline pl;
  pl.fixture();
  ASSERT_EQ(pl.generate("a", "1").code, 0);
  ASSERT_EQ(pl.generate("b", "3").code, 0);
  ASSERT_EQ(pl.generate("a", "2").code, 0);
  const auto ma = testutil::slurp(pl.p("a/manifest.jsonl"));
  EXPECT_EQ(ma, testutil::slurp(pl.p("b/manifest.jsonl")));
  std::size_t images = 0;
  for (const auto& f : std::filesystem::directory_iterator(pl.dir / "a/images")) {
    ++images;
    EXPECT_EQ(testutil::slurp(f.path()), testutil::slurp(pl.dir / "b/images" / f.path().filename()));
  }
  EXPECT_EQ(images, 40u);
}

TEST(Cli, EncodeAttnMapAndDecompose) {
  Pipeline pl;
  pl.fixture();
  ASSERT_EQ(pl.generate("grid").code, 0);
  const auto img = pl.p("grid/images/sources-00000-c.png");
  const auto map = run({"attn-map", "--weights", pl.p("fx/weights.cblt"), "--image", img, "--out", pl.p("map.png")});
  ASSERT_EQ(map.code, 0) << map.err;
  EXPECT_NE(map.out.find("center_mass"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(pl.dir / "map.png"));

  const auto enc = run({"encode", "--weights", pl.p("fx/weights.cblt"), "--manifest", pl.p("grid/manifest.jsonl"),
                        "--out", pl.p("emb.cblt")});
  ASSERT_EQ(enc.code, 0) << enc.err;
  const auto emb = tensorio::read_bundle_file(pl.dir / "emb.cblt");
  ASSERT_NE(emb.find("embeddings"), nullptr);
  EXPECT_EQ(emb.find("embeddings")->shape[0], 40u);

  const auto dec = run({"decompose", "--concepts", pl.p("fx/concepts.cblt"), "--embeddings", pl.p("emb.cblt"),
                        "--sample", "sources-00000-c", "--out", pl.p("dec.json")});
  ASSERT_EQ(dec.code, 0) << dec.err;
  EXPECT_NE(testutil::slurp(pl.dir / "dec.json").find("sources-00000-c"), std::string::npos);
  EXPECT_EQ(run({"decompose", "--concepts", pl.p("fx/concepts.cblt"), "--embeddings", pl.p("emb.cblt"), "--sample",
                 "sources-00000-c", "--lambda", "-1"})
                .code,
            cli::kExitUsage);
}
