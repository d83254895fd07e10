#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vlws/core.hpp"
#include "vlws/nn.hpp"
#include "vlws/vlencoder.hpp"

namespace vlws {

struct ModelConfig {
  int output_stride = 8;
  std::array<int, 3> aspp_rates = {12, 24, 36};
  int lowlevel_channels = 48;
  int decoder_channels = 256;
  int num_classes = 3;
  // Scales every channel count (ceil, min 8) for desk-scale tests.
  double width_multiplier = 1.0;
  // Residual blocks per stage; the full-scale network uses the deep
  // {3,4,23,3} configuration, tests shrink it.
  std::array<int, 4> blocks_per_stage = {3, 4, 23, 3};
  bool disable_fusion = false;
  bool disable_film = false;

  int scaled(int c) const {
    return std::max(8, static_cast<int>(std::ceil(c * width_multiplier)));
  }
  int embed_dim() const { return scaled(256); }
  bool baseline_mode() const { return disable_fusion && disable_film; }
  void validate() const {
    if (output_stride != 8) throw std::invalid_argument("output stride must be 8");
    if (width_multiplier <= 0.0 || width_multiplier > 1.0)
      throw std::invalid_argument("width_multiplier must be in (0,1]");
    if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  }
};

// Intermediate feature maps with their channel/stride contracts.
struct FeatureBundle {
  Var low;        // F_L:     scaled(256) x H/4 x W/4
  Var deep;       // F_D:     scaled(2048) x H/8 x W/8
  Var aspp;       // F_ASPP:  scaled(256) x H/8 x W/8
  Var fused;      // F_fused: scaled(256)+embed x H/8 x W/8
  Var modulated;  // F~:      same channels as fused
  int decoder_concat_channels = 0;  // 304 at full width
};

struct ForwardResult {
  Var logits;  // {N, num_classes, H, W}
  Var v_hat;   // {N, embed}; null in baseline mode
  Var t_hat;   // {N, embed}; null in baseline mode
  FeatureBundle features;
};

// The VL-WS network: dilated residual backbone, ASPP, global-embedding
// fusion, caption-conditioned FiLM, and boundary-refinement decoder.
class VLWSModel {
 public:
  VLWSModel(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // x: {N,3,H,W} with H, W multiples of 8 (rejected otherwise).
  std::pair<Var, Var> extract_features(const Var& x) const;    // (F_L, F_D)
  Var aspp(const Var& deep) const;
  Var fuse(const Var& aspp_map, const Var& e_vis) const;       // e_vis {N,embed}
  Var film(const Var& fused, const Var& e_txt) const;          // e_txt {N,embed}
  Var decode(const Var& modulated, const Var& low, int* concat_channels = nullptr) const;

  // Full composition; encoder supplies the frozen global embeddings.
  ForwardResult forward(const Var& images, const std::vector<std::string>& captions,
                        VLEncoder& encoder) const;

  // {N,3,H,W} in [0,1] from 8-bit tiles.
  static Tensor images_to_tensor(const std::vector<const ImageU8*>& images);

 private:
  struct Bottleneck {
    Conv2d c1, c2, c3, cskip;
    GroupNorm n1, n2, n3, nskip;
    bool has_skip = false;
    Var operator()(const Var& x) const;
  };

  ModelConfig cfg_;
  ParamStore params_;

  Conv2d stem_;
  GroupNorm stem_norm_;
  std::vector<std::vector<Bottleneck>> stages_;

  Conv2d aspp_1x1_;
  GroupNorm aspp_1x1_n_;
  std::array<Conv2d, 3> aspp_atrous_;
  std::array<GroupNorm, 3> aspp_atrous_n_;
  Linear aspp_pool_;
  Conv2d aspp_proj_;
  GroupNorm aspp_proj_n_;

  Linear proj_vis_, proj_txt_;        // 512 -> embed
  Var fusion_placeholder_;            // learned zero-init path when fusion disabled
  Linear film_gamma_, film_beta_;     // embed -> fused channels
  Linear contrastive_head_;           // fused channels -> embed

  Conv2d dec_proj_;
  GroupNorm dec_proj_n_;
  Conv2d dec_low_;
  GroupNorm dec_low_n_;
  Conv2d dec_conv1_, dec_conv2_, dec_cls_;
  GroupNorm dec_n1_, dec_n2_;

  int fused_channels_ = 0;
};

}  // namespace vlws
