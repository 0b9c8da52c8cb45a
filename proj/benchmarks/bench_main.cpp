// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cmath>
#include <filesystem>

#include "centerlens/decomp.hpp"
#include "centerlens/encoder.hpp"
#include "centerlens/gridgen.hpp"
#include "centerlens/interventions.hpp"
#include "centerlens/rng.hpp"

using namespace centerlens;

namespace {

vit::WeightBundle random_model(int dim, int layers, int grid, std::uint64_t seed) {
  Rng rng(seed);
  auto mat = [&](int r, int c, double scale) {
    vit::Matrix m(r, c);
    for (float& v : m.data) v = static_cast<float>(scale * rng.normal());
    return m;
  };
  auto vec = [&](int n, double scale, float offset = 0.0f) {
    std::vector<float> v(static_cast<std::size_t>(n));
    for (float& x : v) x = offset + static_cast<float>(scale * rng.normal());
    return v;
  };
  auto lin = [&](int in, int out) { return vit::Linear{mat(in, out, 1.0 / std::sqrt(in)), vec(out, 0.1)}; };
  const int patch = 8;
  vit::WeightBundle w;
  w.num_heads = dim / 16;
  w.patch_size = patch;
  w.preproc.size = grid * patch;
  w.patch_embed = lin(patch * patch * 3, dim);
  w.cls_token = vec(dim, 1.0);
  w.pos_embed = mat(grid * grid + 1, dim, 0.5);
  for (int l = 0; l < layers; ++l) {
    vit::Layer L;
    L.norm1 = {vec(dim, 0.1, 1.0f), vec(dim, 0.1)};
    L.q = lin(dim, dim);
    L.k = lin(dim, dim);
    L.v = lin(dim, dim);
    L.o = lin(dim, dim);
    L.norm2 = {vec(dim, 0.1, 1.0f), vec(dim, 0.1)};
    L.fc1 = lin(dim, 4 * dim);
    L.fc2 = lin(4 * dim, dim);
    w.layers.push_back(std::move(L));
  }
  w.final_norm = {vec(dim, 0.1, 1.0f), vec(dim, 0.1)};
  w.proj = mat(dim, dim / 2, 1.0 / std::sqrt(dim));
  return w;
}

Image random_image(int side, Rng& rng) {
  Image img(side, side);
  for (float& v : img.pixels()) v = static_cast<float>(rng.uniform01());
  return img;
}

void BM_Forward(benchmark::State& state) {
  const auto w = random_model(static_cast<int>(state.range(0)), 4, 7, 1);
  Rng rng(2);
  const Image img = random_image(w.image_side(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(vit::forward(img, w).embedding.values.data());
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ForwardRedistributed(benchmark::State& state) {
  const auto w = random_model(64, 4, 7, 3);
  Rng rng(4);
  const Image img = random_image(w.image_side(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(intervene::forward_with_redistribution(img, w).values.data());
}
BENCHMARK(BM_ForwardRedistributed)->Unit(benchmark::kMillisecond);

void BM_RedistributeRow(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::vector<float> row(n);
  double s = 0;
  for (float& v : row) s += (v = static_cast<float>(rng.uniform01()));
  for (float& v : row) v = static_cast<float>(v / s);
  std::vector<float> work(n);
  for (auto _ : state) {
    work = row;
    intervene::redistribute_cls_row_inplace(work);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_RedistributeRow)->Arg(50)->Arg(197)->Arg(577);

void BM_SpliceDecompose(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto dict = decomp::synthetic_dictionary(n, 512, 6);
  Rng rng(7);
  std::vector<float> x(512);
  for (float& v : x) v = static_cast<float>(rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(decomp::splice_decompose(x, dict, decomp::kDefaultLambda).objective);
}
BENCHMARK(BM_SpliceDecompose)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_GenerateDesk(benchmark::State& state) {
  Rng rng(8);
  std::vector<grid::SourceImage> sources;
  for (int i = 0; i < 20; ++i) sources.push_back({random_image(64, rng), "class" + std::to_string(i % 10), "bench"});
  grid::GridSpec spec;
  const auto out = std::filesystem::temp_directory_path() / "centerlens-bench-generate";
  grid::GenerateOptions opts;
  opts.write_images = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(grid::generate_dataset(sources, spec, out, opts).size());
  std::filesystem::remove_all(out);
}
BENCHMARK(BM_GenerateDesk)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
