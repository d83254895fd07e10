#pragma once

#include <memory>
#include <string>

#include "vlws/core.hpp"
#include "vlws/nn.hpp"

namespace vlws {

struct EncoderConfig {
  enum class Backend { pretrained, stub };
  Backend backend = Backend::stub;
  int image_input_size = 224;
  int trainable_text_layers = 2;
  bool freeze_image_encoder = true;
  int context_tokens = 77;      // caption truncation limit (whitespace tokens)
  std::string weights_dir;      // falls back to $VLWS_ENCODER_DIR
  uint64_t stub_seed = 0;

  void validate() const {
    if (trainable_text_layers < 0) throw std::invalid_argument("trainable_text_layers < 0");
    if (image_input_size <= 0 || context_tokens <= 0)
      throw std::invalid_argument("encoder sizes must be positive");
  }
  static Backend backend_from_string(const std::string& s) {
    if (s == "stub") return Backend::stub;
    if (s == "pretrained") return Backend::pretrained;
    throw std::invalid_argument("unknown encoder backend: " + s);
  }
};

// Contrastive vision-language encoder: aligned 512-dim global image and text
// embeddings. The image tower is frozen; the tail of the text tower (the last
// `trainable_text_layers` blocks plus the final norm) is trainable.
class VLEncoder {
 public:
  static constexpr int kGlobalDim = 512;

  virtual ~VLEncoder() = default;
  virtual Var encode_image_global(const ImageU8& image) = 0;      // {1,512}
  virtual Var encode_text(const std::string& caption) = 0;        // {1,512}
  virtual ParamStore& params() = 0;
  virtual const EncoderConfig& config() const = 0;
};

std::unique_ptr<VLEncoder> make_encoder(const EncoderConfig& cfg);

// Deterministic 512-dim stream keyed by (seed, content hash), standardized to
// zero mean / unit variance. Shared by the stub backend and test fixtures.
Tensor stub_embedding(uint64_t seed, uint64_t content_hash, int dim = VLEncoder::kGlobalDim);

// Unit-norm visual/text pair.
struct EmbeddingPair {
  Tensor v_hat;
  Tensor t_hat;
};

// Plain-tensor L2 normalization of a projected pair; throws "degenerate
// embedding" on a (near-)zero-norm vector.
EmbeddingPair normalize_pair(const Tensor& e_v, const Tensor& e_t);

}  // namespace vlws
