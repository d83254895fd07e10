#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vlws/checkpoint.hpp"
#include "vlws/config.hpp"

using namespace vlws;
namespace fs = std::filesystem;

TEST_CASE("key=value config parsing") {
  const auto kv = KvConfig::from_string(
      "# comment\n"
      "train.epochs=5\n"
      "  train.lr_visual=1e-4\r\n"
      "loss.class_weights=1.5,0.75,0.75\n"
      "model.disable_fusion=true\n"
      "\n");
  CHECK(kv.get_int("train.epochs", 0) == 5);
  CHECK(kv.get_double("train.lr_visual", 0.0) == doctest::Approx(1e-4));
  CHECK(kv.get_bool("model.disable_fusion", false));
  CHECK(kv.get_list("loss.class_weights").size() == 3);
  CHECK(kv.get("missing", "dflt") == "dflt");
  CHECK_THROWS_WITH_AS(KvConfig::from_string("no equals sign"),
                       doctest::Contains("malformed"), std::runtime_error);
}

TEST_CASE("config builders apply defaults and validate") {
  const auto kv = KvConfig::from_string(
      "train.epochs=10\ntrain.patience=3\ntrain.batch_size=2\n"
      "loss.lambda_vl=0.05\nmodel.width_multiplier=0.25\n"
      "model.blocks_per_stage=1,1,1,1\nencoder.backend=stub\n");
  const TrainConfig t = train_config_from(kv);
  CHECK(t.epochs == 10);
  CHECK(t.lr_visual == doctest::Approx(3e-5));
  CHECK(t.lr_text == doctest::Approx(3e-6));
  const LossConfig l = loss_config_from(kv);
  CHECK(l.lambda_dice == doctest::Approx(0.6));
  CHECK(l.lambda_vl == doctest::Approx(0.05));
  const ModelConfig m = model_config_from(kv);
  CHECK(m.width_multiplier == doctest::Approx(0.25));
  CHECK(m.blocks_per_stage == std::array<int, 4>{1, 1, 1, 1});
  CHECK(model_config_from(KvConfig{}).blocks_per_stage == std::array<int, 4>{3, 4, 23, 3});

  CHECK_THROWS(train_config_from(KvConfig::from_string("train.patience=300\n")));
  CHECK_THROWS(train_config_from(KvConfig::from_string("train.lr_text=1e-3\n")));
  CHECK_THROWS(model_config_from(KvConfig::from_string("model.width_multiplier=1.5\n")));
  CHECK_THROWS(encoder_config_from(KvConfig::from_string("encoder.backend=magic\n")));
}

TEST_CASE("cosine schedule anchors") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg.lr_visual, cfg) == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(lr_at(cfg.epochs, cfg.lr_visual, cfg) == doctest::Approx(1e-7).epsilon(1e-12));
  CHECK(lr_at(cfg.epochs / 2, cfg.lr_visual, cfg) == doctest::Approx(1.505e-5).epsilon(1e-12));
  CHECK_THROWS(lr_at(-1, cfg.lr_visual, cfg));
  CHECK_THROWS(lr_at(cfg.epochs + 1, cfg.lr_visual, cfg));
  // monotone decreasing
  double prev = 1.0;
  for (int e = 0; e <= cfg.epochs; ++e) {
    const double lr = lr_at(e, cfg.lr_visual, cfg);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("config meta round-trip") {
  TrainConfig t;
  LossConfig l;
  ModelConfig m;
  m.width_multiplier = 0.5;
  m.disable_film = true;
  m.blocks_per_stage = {1, 2, 3, 1};
  EncoderConfig e;
  e.trainable_text_layers = 3;
  const auto meta = to_meta(t, l, m, e);
  const ModelConfig m2 = model_config_from_meta(meta);
  CHECK(m2.width_multiplier == doctest::Approx(0.5));
  CHECK(m2.disable_film);
  CHECK_FALSE(m2.disable_fusion);
  CHECK(m2.blocks_per_stage == m.blocks_per_stage);
  const EncoderConfig e2 = encoder_config_from_meta(meta);
  CHECK(e2.trainable_text_layers == 3);
  CHECK(e2.backend == EncoderConfig::Backend::stub);
}

TEST_CASE("checkpoint round-trip preserves parameters and metadata") {
  const fs::path dir = fs::temp_directory_path() / "vlws_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "m.bin").string();

  ParamStore ps;
  Rng rng(31);
  Tensor a({2, 3});
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
  Tensor b({4});
  for (int64_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
  ps.add("layer.w", a, ParamGroup::visual);
  ps.add("layer.b", b, ParamGroup::text, false);

  save_checkpoint(path, {{"model.width_multiplier", "1"}, {"train.seed", "7"}}, ps);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.meta.at("train.seed") == "7");
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.tensors[0].first == "layer.w");
  CHECK(ck.tensors[0].second.shape() == std::vector<int>{2, 3});
  for (int64_t i = 0; i < a.size(); ++i) CHECK(ck.tensors[0].second[i] == a[i]);

  ParamStore fresh;
  fresh.add("layer.w", Tensor::zeros({2, 3}), ParamGroup::visual);
  fresh.add("layer.b", Tensor::zeros({4}), ParamGroup::text, false);
  restore_params(fresh, ck);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(fresh.find("layer.w")->value[i] == a[i]);

  SUBCASE("shape mismatch is rejected") {
    ParamStore wrong;
    wrong.add("layer.w", Tensor::zeros({3, 2}), ParamGroup::visual);
    wrong.add("layer.b", Tensor::zeros({4}), ParamGroup::visual);
    CHECK_THROWS_WITH_AS(restore_params(wrong, ck), doctest::Contains("shape mismatch"),
                         std::runtime_error);
  }
  SUBCASE("unknown parameter is rejected") {
    ParamStore wrong;
    wrong.add("other", Tensor::zeros({4}), ParamGroup::visual);
    CHECK_THROWS(restore_params(wrong, ck));
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader fails loudly on bad files") {
  const fs::path dir = fs::temp_directory_path() / "vlws_ckpt_bad";
  fs::create_directories(dir);

  {
    std::ofstream f(dir / "not_ckpt.bin", std::ios::binary);
    f << "PNGJUNKDATA....";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint((dir / "not_ckpt.bin").string()),
                       doctest::Contains("not a checkpoint"), std::runtime_error);

  // valid magic, wrong version
  ParamStore ps;
  ps.add("p", Tensor::zeros({1}), ParamGroup::visual);
  const std::string path = (dir / "v.bin").string();
  save_checkpoint(path, {}, ps);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const uint32_t bad = 99;
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version mismatch"),
                       std::runtime_error);
  CHECK_THROWS(load_checkpoint((dir / "missing.bin").string()));
  fs::remove_all(dir);
}
