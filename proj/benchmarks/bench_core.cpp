#include <benchmark/benchmark.h>

#include "vlws/experiments.hpp"
#include "vlws/losses.hpp"
#include "vlws/metrics.hpp"
#include "vlws/model.hpp"
#include "vlws/rng.hpp"

using namespace vlws;

namespace {

Tensor random_tensor(const std::vector<int>& shape, uint64_t seed) {
  Tensor t(shape);
  Rng rng(seed);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

ImageU8 random_image(int h, int w, uint64_t seed) {
  ImageU8 img = ImageU8::blank(h, w);
  Rng rng(seed);
  for (auto& v : img.pix) v = static_cast<uint8_t>(rng.below(256));
  return img;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Var x = make_const(random_tensor({1, c, 32, 32}, 1));
  const Var w = make_const(random_tensor({c, c, 3, 3}, 2));
  const Var b = make_const(Tensor::zeros({c}));
  for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, w, b, 1, 1, 1)->value.data());
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.width_multiplier = 0.125;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  VLWSModel model(cfg, 1);
  auto enc = make_encoder(EncoderConfig{});
  const int extent = static_cast<int>(state.range(0));
  const ImageU8 img = random_image(extent, extent, 3);
  const Var x = make_const(VLWSModel::images_to_tensor({&img}));
  const std::vector<std::string> captions = {"Crop field tile with scattered weeds."};
  for (auto _ : state)
    benchmark::DoNotOptimize(model.forward(x, captions, *enc).logits->value.data());
}
BENCHMARK(BM_ModelForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_DiceAccumulate(benchmark::State& state) {
  Rng rng(7);
  IndexMask pred = IndexMask::blank(512, 512), gt = IndexMask::blank(512, 512);
  for (auto& v : pred.idx) v = static_cast<uint8_t>(rng.below(3));
  for (auto& v : gt.idx) v = static_cast<uint8_t>(rng.below(3));
  for (auto _ : state) {
    DiceAccumulator acc(3);
    acc = accumulate(std::move(acc), pred, gt);
    benchmark::DoNotOptimize(dice_of(acc, 2));
  }
}
BENCHMARK(BM_DiceAccumulate);

void BM_LossForward(benchmark::State& state) {
  Rng rng(9);
  Tensor p({4, 3, 64, 64}), y = Tensor::zeros({4, 3, 64, 64});
  for (int n = 0; n < 4; ++n)
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        double z = 0.0;
        double e[3];
        for (int k = 0; k < 3; ++k) {
          e[k] = std::exp(rng.normal());
          z += e[k];
        }
        for (int k = 0; k < 3; ++k) p.at4(n, k, r, c) = e[k] / z;
        y.at4(n, static_cast<int>(rng.below(3)), r, c) = 1.0;
      }
  const LossConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(dice_loss(p, y, cfg.epsilon));
    benchmark::DoNotOptimize(weighted_ce(p, y, {1.0, 1.0, 1.0}));
  }
}
BENCHMARK(BM_LossForward);

void BM_StitchMap(benchmark::State& state) {
  Rng rng(11);
  std::vector<TilePrediction> tiles;
  for (int r : {0, 384})
    for (int c : {0, 384}) {
      TilePrediction t;
      t.row = r;
      t.col = c;
      t.probs = Tensor({3, 512, 512});
      for (int64_t i = 0; i < t.probs.size(); ++i) t.probs[i] = 1.0 / 3.0;
      tiles.push_back(std::move(t));
    }
  const StitchLayout layout{896, 896, BlendMode::mean_prob};
  for (auto _ : state)
    benchmark::DoNotOptimize(stitch_map(tiles, layout).class_map.idx.data());
}
BENCHMARK(BM_StitchMap)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
