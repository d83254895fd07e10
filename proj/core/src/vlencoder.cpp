#include "vlws/vlencoder.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace vlws {

Tensor stub_embedding(uint64_t seed, uint64_t content_hash, int dim) {
  Tensor e({1, dim});
  const uint64_t key = mix64(seed, content_hash);
  // Box-Muller over counter-based uniforms.
  for (int i = 0; i < dim; i += 2) {
    const double u1 =
        std::max(1e-16, double(splitmix64(key + uint64_t(i)) >> 11) * 0x1.0p-53);
    const double u2 = double(splitmix64(key + uint64_t(i) + 0x10000000ull) >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    e[i] = r * std::cos(6.283185307179586 * u2);
    if (i + 1 < dim) e[i + 1] = r * std::sin(6.283185307179586 * u2);
  }
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < dim; ++i) mean += e[i];
  mean /= dim;
  for (int i = 0; i < dim; ++i) var += (e[i] - mean) * (e[i] - mean);
  var /= dim;
  const double is = 1.0 / std::sqrt(var + 1e-12);
  for (int i = 0; i < dim; ++i) e[i] = (e[i] - mean) * is;
  return e;
}

EmbeddingPair normalize_pair(const Tensor& e_v, const Tensor& e_t) {
  auto norm_one = [](const Tensor& x) {
    double s = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
    const double n = std::sqrt(s);
    if (n < 1e-12) throw std::invalid_argument("normalize_pair: degenerate embedding (zero norm)");
    Tensor out = x;
    for (int64_t i = 0; i < out.size(); ++i) out[i] /= n;
    return out;
  };
  return EmbeddingPair{norm_one(e_v), norm_one(e_t)};
}

static std::string truncate_tokens(const std::string& caption, int limit) {
  std::istringstream ss(caption);
  std::string tok, out;
  int n = 0;
  while (n < limit && (ss >> tok)) {
    if (n) out += " ";
    out += tok;
    ++n;
  }
  return out;
}

namespace {

constexpr int kTextBlocks = 4;

// Shared trainable text tail: residual affine blocks over the frozen 512-dim
// base embedding, with only the last `trainable_text_layers` blocks and the
// final layer norm exposed as trainable. Models the fine-tuned last
// transformer layers of the text tower.
class TextTail {
 public:
  TextTail(ParamStore& ps, const EncoderConfig& cfg, Rng& rng) {
    for (int i = 0; i < kTextBlocks; ++i) {
      const bool trainable = i >= kTextBlocks - cfg.trainable_text_layers;
      blocks_.emplace_back(ps, "clip.txt.block" + std::to_string(i), VLEncoder::kGlobalDim,
                           VLEncoder::kGlobalDim, rng, ParamGroup::text, trainable, 0.05);
    }
    const bool norm_trainable = cfg.trainable_text_layers > 0;
    norm_gamma_ = ps.add("clip.txt.final_norm.g", Tensor::full({VLEncoder::kGlobalDim}, 1.0),
                         ParamGroup::text, norm_trainable);
    norm_beta_ = ps.add("clip.txt.final_norm.b", Tensor::zeros({VLEncoder::kGlobalDim}),
                        ParamGroup::text, norm_trainable);
  }

  Var operator()(Var x) const {
    for (const auto& b : blocks_) x = ag::add(x, ag::tanh_op(b(x)));
    return ag::layer_norm_rows(x, norm_gamma_, norm_beta_);
  }

 private:
  std::vector<Linear> blocks_;
  Var norm_gamma_, norm_beta_;
};

class StubEncoder : public VLEncoder {
 public:
  explicit StubEncoder(EncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix64(cfg_.stub_seed, 0x5f0b));
    img_tower_ = Linear(params_, "clip.img.tower", kGlobalDim, kGlobalDim, rng, ParamGroup::visual,
                        !cfg_.freeze_image_encoder, 0.05);
    tail_ = std::make_unique<TextTail>(params_, cfg_, rng);
  }

  Var encode_image_global(const ImageU8& image) override {
    uint64_t h = fnv1a64(image.pix.data(), image.pix.size());
    h = mix64(h, mix64(uint64_t(image.h), uint64_t(image.w)));
    Var base = make_const(stub_embedding(cfg_.stub_seed, h));
    return ag::add(base, ag::tanh_op(img_tower_(base)));
  }

  Var encode_text(const std::string& caption) override {
    if (caption.empty()) throw std::invalid_argument("encode_text: empty caption");
    const std::string trunc = truncate_tokens(caption, cfg_.context_tokens);
    const uint64_t h = mix64(fnv1a64(trunc.data(), trunc.size()), 0x7e47);
    return (*tail_)(make_const(stub_embedding(cfg_.stub_seed, h)));
  }

  ParamStore& params() override { return params_; }
  const EncoderConfig& config() const override { return cfg_; }

 private:
  EncoderConfig cfg_;
  ParamStore params_;
  Linear img_tower_;
  std::unique_ptr<TextTail> tail_;
};

// Pretrained binding. Weights are consumed as exported embedding tables
// (content hash -> 512 floats) produced offline from a 512-dim CLIP-style
// checkpoint; the trainable text tail then runs on top of the frozen base
// embedding exactly as in the stub.
class CachedClipEncoder : public VLEncoder {
 public:
  explicit CachedClipEncoder(EncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::string dir = cfg_.weights_dir;
    if (dir.empty())
      if (const char* env = std::getenv("VLWS_ENCODER_DIR")) dir = env;
    namespace fs = std::filesystem;
    if (dir.empty() || !fs::exists(fs::path(dir) / "image_embeddings.tsv") ||
        !fs::exists(fs::path(dir) / "text_embeddings.tsv"))
      throw std::runtime_error(
          "encoder weights not found: expected image_embeddings.tsv and text_embeddings.tsv "
          "under the encoder directory (set VLWS_ENCODER_DIR or encoder_dir in the run config, "
          "or use backend=stub for offline runs)");
    load_table(fs::path(dir) / "image_embeddings.tsv", image_table_);
    load_table(fs::path(dir) / "text_embeddings.tsv", text_table_);
    Rng rng(mix64(0x9c1f, 0));
    tail_ = std::make_unique<TextTail>(params_, cfg_, rng);
  }

  Var encode_image_global(const ImageU8& image) override {
    uint64_t h = fnv1a64(image.pix.data(), image.pix.size());
    h = mix64(h, mix64(uint64_t(image.h), uint64_t(image.w)));
    return make_const(lookup(image_table_, h, "image"));
  }

  Var encode_text(const std::string& caption) override {
    if (caption.empty()) throw std::invalid_argument("encode_text: empty caption");
    const std::string trunc = truncate_tokens(caption, cfg_.context_tokens);
    const uint64_t h = mix64(fnv1a64(trunc.data(), trunc.size()), 0x7e47);
    return (*tail_)(make_const(lookup(text_table_, h, "text")));
  }

  ParamStore& params() override { return params_; }
  const EncoderConfig& config() const override { return cfg_; }

 private:
  static void load_table(const std::filesystem::path& path, std::map<uint64_t, Tensor>& table) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string key;
      ss >> key;
      Tensor e({1, kGlobalDim});
      for (int i = 0; i < kGlobalDim; ++i)
        if (!(ss >> e[i])) throw std::runtime_error("malformed embedding table: " + path.string());
      table.emplace(std::stoull(key, nullptr, 16), std::move(e));
    }
  }
  static Tensor lookup(const std::map<uint64_t, Tensor>& table, uint64_t h, const char* what) {
    auto it = table.find(h);
    if (it == table.end()) {
      std::ostringstream os;
      os << "no cached " << what << " embedding for content hash " << std::hex << h
         << "; re-run the exporter over this dataset or use backend=stub";
      throw std::runtime_error(os.str());
    }
    return it->second;
  }

  EncoderConfig cfg_;
  ParamStore params_;
  std::map<uint64_t, Tensor> image_table_, text_table_;
  std::unique_ptr<TextTail> tail_;
};

}  // namespace

std::unique_ptr<VLEncoder> make_encoder(const EncoderConfig& cfg) {
  if (cfg.backend == EncoderConfig::Backend::stub)
    return std::make_unique<StubEncoder>(cfg);
  return std::make_unique<CachedClipEncoder>(cfg);
}

}  // namespace vlws
