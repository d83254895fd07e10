#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "vlws/vlencoder.hpp"

using namespace vlws;

namespace {

Var sum_all(const Var& x) {
  Var out = std::make_shared<Node>();
  out->value = Tensor({1});
  double s = 0.0;
  for (int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  out->value[0] = s;
  out->requires_grad = x->requires_grad;
  out->parents = {x};
  out->backward_op = [](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
  };
  return out;
}

std::string repeat_tokens(const std::string& tok, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out += " ";
    out += tok + std::to_string(i);
  }
  return out;
}

}  // namespace

TEST_CASE("stub embedding stream is deterministic and standardized") {
  const Tensor a = stub_embedding(7, 1234);
  const Tensor b = stub_embedding(7, 1234);
  REQUIRE(a.shape() == std::vector<int>{1, 512});
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  double mean = 0.0, var = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) mean += a[i];
  mean /= double(a.size());
  for (int64_t i = 0; i < a.size(); ++i) var += (a[i] - mean) * (a[i] - mean);
  var /= double(a.size());
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::abs(var - 1.0) < 1e-9);

  // distinct keys give distinct streams
  const Tensor c = stub_embedding(7, 1235);
  const Tensor d = stub_embedding(8, 1234);
  double diff_c = 0.0, diff_d = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    diff_c += std::abs(a[i] - c[i]);
    diff_d += std::abs(a[i] - d[i]);
  }
  CHECK(diff_c > 1.0);
  CHECK(diff_d > 1.0);
}

TEST_CASE("normalize_pair produces unit vectors") {
  Tensor v({1, 2}), t({1, 2});
  v[0] = 3.0;
  v[1] = 4.0;
  t[0] = 0.0;
  t[1] = 2.0;
  const EmbeddingPair p = normalize_pair(v, t);
  CHECK(p.v_hat[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(p.v_hat[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(p.t_hat[1] == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x({1, 16}), y({1, 16});
    for (int i = 0; i < 16; ++i) {
      x[i] = rng.normal() * 3.0;
      y[i] = rng.normal() * 0.5 + 1.0;
    }
    const EmbeddingPair q = normalize_pair(x, y);
    double nx = 0.0, ny = 0.0;
    for (int i = 0; i < 16; ++i) {
      nx += q.v_hat[i] * q.v_hat[i];
      ny += q.t_hat[i] * q.t_hat[i];
    }
    CHECK(std::abs(std::sqrt(nx) - 1.0) < 1e-12);
    CHECK(std::abs(std::sqrt(ny) - 1.0) < 1e-12);
  }

  Tensor zero = Tensor::zeros({1, 4});
  CHECK_THROWS_WITH_AS(normalize_pair(zero, t), doctest::Contains("degenerate"),
                       std::invalid_argument);
}

TEST_CASE("stub encoder is deterministic per content") {
  EncoderConfig cfg;
  auto enc1 = make_encoder(cfg);
  auto enc2 = make_encoder(cfg);
  const SampleRecord s = testing::make_sample(16, 16, 3, "d");

  const Var a = enc1->encode_image_global(s.image);
  const Var b = enc2->encode_image_global(s.image);
  REQUIRE(a->value.shape() == std::vector<int>{1, 512});
  for (int64_t i = 0; i < a->value.size(); ++i) CHECK(a->value[i] == b->value[i]);

  const Var ta = enc1->encode_text(s.caption);
  const Var tb = enc2->encode_text(s.caption);
  REQUIRE(ta->value.shape() == std::vector<int>{1, 512});
  for (int64_t i = 0; i < ta->value.size(); ++i) CHECK(ta->value[i] == tb->value[i]);

  // different content moves the embedding
  const SampleRecord s2 = testing::make_sample(16, 16, 4, "d");
  const Var c = enc1->encode_image_global(s2.image);
  double diff = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) diff += std::abs(a->value[i] - c->value[i]);
  CHECK(diff > 1.0);

  const Var tc = enc1->encode_text("A very different field description.");
  diff = 0.0;
  for (int64_t i = 0; i < ta->value.size(); ++i) diff += std::abs(ta->value[i] - tc->value[i]);
  CHECK(diff > 1.0);
}

TEST_CASE("text tail trainability census") {
  SUBCASE("default: last two blocks plus final norm") {
    EncoderConfig cfg;  // trainable_text_layers = 2
    auto enc = make_encoder(cfg);
    const auto text_params = enc->params().trainable(ParamGroup::text);
    // 2 blocks x (w,b) + final norm (g,b)
    CHECK(text_params.size() == 6);
    for (const auto& p : text_params) {
      CHECK(p->name.rfind("clip.txt.", 0) == 0);
      const bool late_block = p->name.find("block2") != std::string::npos ||
                              p->name.find("block3") != std::string::npos ||
                              p->name.find("final_norm") != std::string::npos;
      CHECK(late_block);
    }
  }
  SUBCASE("zero trainable layers freezes the whole tail") {
    EncoderConfig cfg;
    cfg.trainable_text_layers = 0;
    auto enc = make_encoder(cfg);
    CHECK(enc->params().trainable(ParamGroup::text).empty());
    CHECK(enc->params().trainable().empty());
  }
}

TEST_CASE("image tower freeze") {
  const SampleRecord s = testing::make_sample(16, 16, 5, "d");
  SUBCASE("frozen by default: no trainable visual params, no grads") {
    EncoderConfig cfg;
    auto enc = make_encoder(cfg);
    CHECK(enc->params().trainable(ParamGroup::visual).empty());
    Var root = sum_all(enc->encode_image_global(s.image));
    if (root->requires_grad) backward(root);
    const Var w = enc->params().find("clip.img.tower.w");
    REQUIRE(w != nullptr);
    CHECK(w->grad.empty());
  }
  SUBCASE("unfreezing exposes the tower in the visual group") {
    EncoderConfig cfg;
    cfg.freeze_image_encoder = false;
    auto enc = make_encoder(cfg);
    const auto vis = enc->params().trainable(ParamGroup::visual);
    CHECK(vis.size() == 2);
    Var root = sum_all(enc->encode_image_global(s.image));
    backward(root);
    const Var w = enc->params().find("clip.img.tower.w");
    REQUIRE(w != nullptr);
    REQUIRE_FALSE(w->grad.empty());
    double gsum = 0.0;
    for (int64_t i = 0; i < w->grad.size(); ++i) gsum += std::abs(w->grad[i]);
    CHECK(gsum > 0.0);
  }
}

TEST_CASE("text gradients flow into the trainable tail") {
  EncoderConfig cfg;
  auto enc = make_encoder(cfg);
  Var root = sum_all(enc->encode_text("Soybean moderate with scattered weeds, row-structured."));
  REQUIRE(root->requires_grad);
  backward(root);
  double gsum = 0.0;
  const Var w3 = enc->params().find("clip.txt.block3.w");
  REQUIRE(w3 != nullptr);
  REQUIRE_FALSE(w3->grad.empty());
  for (int64_t i = 0; i < w3->grad.size(); ++i) gsum += std::abs(w3->grad[i]);
  CHECK(gsum > 0.0);
  // frozen early block receives nothing
  const Var w0 = enc->params().find("clip.txt.block0.w");
  REQUIRE(w0 != nullptr);
  CHECK(w0->grad.empty());
}

TEST_CASE("caption truncation at the context limit") {
  EncoderConfig cfg;  // context_tokens = 77
  auto enc = make_encoder(cfg);
  const std::string base = repeat_tokens("tok", 77);
  const std::string longer = base + " " + repeat_tokens("extra", 23);

  const Var a = enc->encode_text(base);
  const Var b = enc->encode_text(longer);
  for (int64_t i = 0; i < a->value.size(); ++i) CHECK(a->value[i] == b->value[i]);

  // the 77th token still matters
  const Var c = enc->encode_text(repeat_tokens("tok", 76) + " different");
  double diff = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) diff += std::abs(a->value[i] - c->value[i]);
  CHECK(diff > 1.0);
}

TEST_CASE("empty caption is rejected") {
  auto enc = make_encoder(EncoderConfig{});
  CHECK_THROWS_WITH_AS(enc->encode_text(""), doctest::Contains("empty caption"),
                       std::invalid_argument);
}

TEST_CASE("pretrained backend without exported weights") {
  EncoderConfig cfg;
  cfg.backend = EncoderConfig::Backend::pretrained;
  cfg.weights_dir = (std::filesystem::temp_directory_path() / "vlws_no_such_dir").string();
  CHECK_THROWS_WITH_AS(make_encoder(cfg), doctest::Contains("encoder weights not found"),
                       std::runtime_error);
}

TEST_CASE("encoder config validation") {
  EncoderConfig cfg;
  cfg.trainable_text_layers = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = EncoderConfig{};
  cfg.context_tokens = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(EncoderConfig::backend_from_string("stub") == EncoderConfig::Backend::stub);
  CHECK(EncoderConfig::backend_from_string("pretrained") == EncoderConfig::Backend::pretrained);
  CHECK_THROWS_AS(EncoderConfig::backend_from_string("resnet"), std::invalid_argument);
}
