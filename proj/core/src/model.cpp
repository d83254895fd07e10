#include "vlws/model.hpp"

namespace vlws {

// Recovers the 8-bit tile from a [0,1] batch row; exact because
// images_to_tensor divides by 255 without further transforms.
static ImageU8 tensor_row_to_image(const Tensor& t, int n) {
  const int h = t.dim(2), w = t.dim(3);
  ImageU8 img = ImageU8::blank(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img.at(r, c, ch) = static_cast<uint8_t>(std::lround(t.at4(n, ch, r, c) * 255.0));
  return img;
}

Var VLWSModel::Bottleneck::operator()(const Var& x) const {
  Var y = ag::relu(n1(c1(x)));
  y = ag::relu(n2(c2(y)));
  y = n3(c3(y));
  Var skip = has_skip ? nskip(cskip(x)) : x;
  return ag::relu(ag::add(y, skip));
}

VLWSModel::VLWSModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix64(seed, 0x9a0de1));
  const int embed = cfg_.embed_dim();
  const int aspp_ch = cfg_.scaled(256);
  fused_channels_ = aspp_ch + embed;

  // Stem: stride-4 entry (7x7/2 conv + 3x3/2 maxpool).
  const int stem_ch = cfg_.scaled(64);
  stem_ = Conv2d(params_, "backbone.stem", 3, stem_ch, 7, 2, 3, 1, rng);
  stem_norm_ = GroupNorm(params_, "backbone.stem_n", stem_ch);

  // Four bottleneck stages; stage 3 and 4 trade stride for dilation 2 and 4.
  const std::array<int, 4> out_ch = {cfg_.scaled(256), cfg_.scaled(512), cfg_.scaled(1024),
                                     cfg_.scaled(2048)};
  const std::array<int, 4> strides = {1, 2, 1, 1};
  const std::array<int, 4> dils = {1, 1, 2, 4};
  int cin = stem_ch;
  for (int s = 0; s < 4; ++s) {
    std::vector<Bottleneck> stage;
    const int mid = std::max(8, out_ch[size_t(s)] / 4);
    for (int b = 0; b < cfg_.blocks_per_stage[size_t(s)]; ++b) {
      const std::string nm =
          "backbone.s" + std::to_string(s + 1) + ".b" + std::to_string(b);
      Bottleneck blk;
      const int stride = b == 0 ? strides[size_t(s)] : 1;
      const int dil = dils[size_t(s)];
      blk.c1 = Conv2d(params_, nm + ".c1", cin, mid, 1, 1, 0, 1, rng);
      blk.n1 = GroupNorm(params_, nm + ".n1", mid);
      blk.c2 = Conv2d(params_, nm + ".c2", mid, mid, 3, stride, dil, dil, rng);
      blk.n2 = GroupNorm(params_, nm + ".n2", mid);
      blk.c3 = Conv2d(params_, nm + ".c3", mid, out_ch[size_t(s)], 1, 1, 0, 1, rng);
      blk.n3 = GroupNorm(params_, nm + ".n3", out_ch[size_t(s)]);
      if (cin != out_ch[size_t(s)] || stride != 1) {
        blk.has_skip = true;
        blk.cskip = Conv2d(params_, nm + ".skip", cin, out_ch[size_t(s)], 1, stride, 0, 1, rng);
        blk.nskip = GroupNorm(params_, nm + ".skip_n", out_ch[size_t(s)]);
      }
      cin = out_ch[size_t(s)];
      stage.push_back(std::move(blk));
    }
    stages_.push_back(std::move(stage));
  }

  // ASPP: 1x1 + three atrous 3x3 + image pooling, concat, 1x1 projection.
  const int deep_ch = out_ch[3];
  aspp_1x1_ = Conv2d(params_, "aspp.b0", deep_ch, aspp_ch, 1, 1, 0, 1, rng);
  aspp_1x1_n_ = GroupNorm(params_, "aspp.b0_n", aspp_ch);
  for (int i = 0; i < 3; ++i) {
    const int r = cfg_.aspp_rates[size_t(i)];
    aspp_atrous_[size_t(i)] =
        Conv2d(params_, "aspp.b" + std::to_string(i + 1), deep_ch, aspp_ch, 3, 1, r, r, rng);
    aspp_atrous_n_[size_t(i)] = GroupNorm(params_, "aspp.b" + std::to_string(i + 1) + "_n", aspp_ch);
  }
  aspp_pool_ = Linear(params_, "aspp.pool", deep_ch, aspp_ch, rng);
  aspp_proj_ = Conv2d(params_, "aspp.proj", 5 * aspp_ch, aspp_ch, 1, 1, 0, 1, rng);
  aspp_proj_n_ = GroupNorm(params_, "aspp.proj_n", aspp_ch);

  if (!cfg_.baseline_mode()) {
    proj_vis_ = Linear(params_, "proj.vis", VLEncoder::kGlobalDim, embed, rng);
    proj_txt_ = Linear(params_, "proj.txt", VLEncoder::kGlobalDim, embed, rng);
    fusion_placeholder_ =
        params_.add("fusion.placeholder", Tensor::zeros({1, embed}), ParamGroup::visual);
    // FiLM maps start at the identity modulation: gamma = 1, beta = 0.
    film_gamma_ = Linear(params_, "film.gamma", embed, fused_channels_, rng, ParamGroup::visual,
                         true, 0.0);
    film_gamma_.b->value.fill(1.0);
    film_beta_ = Linear(params_, "film.beta", embed, fused_channels_, rng, ParamGroup::visual,
                        true, 0.0);
    contrastive_head_ = Linear(params_, "contrastive.head", fused_channels_, embed, rng);
  }

  const int dec_ch = cfg_.scaled(cfg_.decoder_channels);
  const int low_ch = cfg_.scaled(cfg_.lowlevel_channels);
  const int dec_in = cfg_.baseline_mode() ? aspp_ch : fused_channels_;
  dec_proj_ = Conv2d(params_, "decoder.proj", dec_in, dec_ch, 1, 1, 0, 1, rng);
  dec_proj_n_ = GroupNorm(params_, "decoder.proj_n", dec_ch);
  dec_low_ = Conv2d(params_, "decoder.low", out_ch[0], low_ch, 1, 1, 0, 1, rng);
  dec_low_n_ = GroupNorm(params_, "decoder.low_n", low_ch);
  dec_conv1_ = Conv2d(params_, "decoder.c1", dec_ch + low_ch, dec_ch, 3, 1, 1, 1, rng);
  dec_n1_ = GroupNorm(params_, "decoder.c1_n", dec_ch);
  dec_conv2_ = Conv2d(params_, "decoder.c2", dec_ch, dec_ch, 3, 1, 1, 1, rng);
  dec_n2_ = GroupNorm(params_, "decoder.c2_n", dec_ch);
  dec_cls_ = Conv2d(params_, "decoder.cls", dec_ch, cfg_.num_classes, 1, 1, 0, 1, rng);
}

std::pair<Var, Var> VLWSModel::extract_features(const Var& x) const {
  const Tensor& t = x->value;
  if (t.ndim() != 4 || t.dim(1) != 3)
    throw std::invalid_argument("extract_features: input must be {N,3,H,W}");
  if (t.dim(2) % 8 != 0 || t.dim(3) % 8 != 0)
    throw std::invalid_argument("invalid input extent: H and W must be multiples of 8, got " +
                                t.shape_str());
  Var y = ag::relu(stem_norm_(stem_(x)));
  y = ag::max_pool2d(y, 3, 2, 1);
  for (const auto& blk : stages_[0]) y = blk(y);
  Var low = y;
  for (size_t s = 1; s < stages_.size(); ++s)
    for (const auto& blk : stages_[s]) y = blk(y);
  return {low, y};
}

Var VLWSModel::aspp(const Var& deep) const {
  const int h = deep->value.dim(2), w = deep->value.dim(3);
  std::vector<Var> branches;
  branches.push_back(ag::relu(aspp_1x1_n_(aspp_1x1_(deep))));
  for (int i = 0; i < 3; ++i)
    branches.push_back(ag::relu(aspp_atrous_n_[size_t(i)](aspp_atrous_[size_t(i)](deep))));
  Var pooled = ag::relu(aspp_pool_(ag::global_avg_pool(deep)));
  branches.push_back(ag::broadcast_to_map(pooled, h, w));
  return ag::relu(aspp_proj_n_(aspp_proj_(ag::concat_channels(branches))));
}

Var VLWSModel::fuse(const Var& aspp_map, const Var& e_vis) const {
  const int n = aspp_map->value.dim(0);
  const int h = aspp_map->value.dim(2), w = aspp_map->value.dim(3);
  if (e_vis->value.shape() != std::vector<int>{n, cfg_.embed_dim()})
    throw std::invalid_argument("fuse: embedding shape mismatch, got " + e_vis->value.shape_str());
  return ag::concat_channels({aspp_map, ag::broadcast_to_map(e_vis, h, w)});
}

Var VLWSModel::film(const Var& fused, const Var& e_txt) const {
  return ag::film_modulate(fused, film_gamma_(e_txt), film_beta_(e_txt));
}

Var VLWSModel::decode(const Var& modulated, const Var& low, int* concat_channels) const {
  Var y = ag::relu(dec_proj_n_(dec_proj_(modulated)));
  y = ag::upsample_bilinear(y, low->value.dim(2), low->value.dim(3));
  Var lo = ag::relu(dec_low_n_(dec_low_(low)));
  Var cat = ag::concat_channels({y, lo});
  if (concat_channels) *concat_channels = cat->value.dim(1);
  y = ag::relu(dec_n1_(dec_conv1_(cat)));
  y = ag::relu(dec_n2_(dec_conv2_(y)));
  y = dec_cls_(y);
  return ag::upsample_bilinear(y, low->value.dim(2) * 4, low->value.dim(3) * 4);
}

ForwardResult VLWSModel::forward(const Var& images, const std::vector<std::string>& captions,
                                 VLEncoder& encoder) const {
  const int n = images->value.dim(0);
  if (!cfg_.baseline_mode() && static_cast<int>(captions.size()) != n)
    throw std::invalid_argument("forward: caption count must match batch size");

  ForwardResult out;
  auto [low, deep] = extract_features(images);
  out.features.low = low;
  out.features.deep = deep;
  Var aspp_map = aspp(deep);
  out.features.aspp = aspp_map;

  if (cfg_.baseline_mode()) {
    // Plain encoder-decoder path: captions and the encoder are never touched.
    out.logits = decode(aspp_map, low, &out.features.decoder_concat_channels);
    return out;
  }

  Var e_vis;
  if (cfg_.disable_fusion) {
    std::vector<Var> rows(static_cast<size_t>(n), fusion_placeholder_);
    e_vis = n == 1 ? fusion_placeholder_ : ag::concat_rows(rows);
  } else {
    std::vector<Var> rows;
    rows.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      ImageU8 img = tensor_row_to_image(images->value, i);
      rows.push_back(proj_vis_(encoder.encode_image_global(img)));
    }
    e_vis = n == 1 ? rows[0] : ag::concat_rows(rows);
  }
  Var fused = fuse(aspp_map, e_vis);
  out.features.fused = fused;

  std::vector<Var> txt_rows;
  txt_rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    txt_rows.push_back(proj_txt_(encoder.encode_text(captions[size_t(i)])));
  Var e_txt = n == 1 ? txt_rows[0] : ag::concat_rows(txt_rows);

  Var modulated = cfg_.disable_film ? fused : film(fused, e_txt);
  out.features.modulated = modulated;
  out.logits = decode(modulated, low, &out.features.decoder_concat_channels);

  out.v_hat = ag::l2_normalize_rows(contrastive_head_(ag::global_avg_pool(modulated)));
  out.t_hat = ag::l2_normalize_rows(e_txt);
  return out;
}

Tensor VLWSModel::images_to_tensor(const std::vector<const ImageU8*>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const int h = images[0]->h, w = images[0]->w;
  Tensor t({static_cast<int>(images.size()), 3, h, w});
  for (size_t i = 0; i < images.size(); ++i) {
    const ImageU8& img = *images[i];
    if (img.h != h || img.w != w)
      throw std::invalid_argument("images_to_tensor: mixed extents in batch");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int ch = 0; ch < 3; ++ch)
          t.at4(static_cast<int>(i), ch, r, c) = img.at(r, c, ch) / 255.0;
  }
  return t;
}

}  // namespace vlws
