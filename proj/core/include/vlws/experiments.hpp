#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "vlws/trainer.hpp"

namespace vlws {

// Shared per-run setup for the protocol drivers; every cell of a sweep or
// ablation trains a fresh model from the same setup.
struct RunSetup {
  TrainConfig train;
  LossConfig loss;
  ModelConfig model;
  EncoderConfig encoder;
};

// ---------------------------------------------------------------------------
// Domain-adaptation fraction sweep: full source train splits plus a nested
// seeded fraction of the target train split; fixed target validation split.

struct SweepCell {
  double fraction = 0.0;
  std::vector<std::string> target_train_keys;  // kept target samples, sorted
  std::vector<std::string> target_val_keys;    // evaluation list, sorted
  EvalReport eval;
};

struct SweepReport {
  std::string target;
  std::vector<SweepCell> cells;
  std::string table() const;  // rows Weed/Crop/Background/Mean x fraction columns
};

SweepReport run_adaptation_sweep(const Catalog& catalog, const std::string& target,
                                 const std::vector<double>& fractions, const RunSetup& setup,
                                 uint64_t seed, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Contrastive-weight ablation: one training run per lambda value.

struct AblationRow {
  double lambda_vl = 0.0;
  EvalReport eval;
  std::vector<std::string> history;  // per-step "step epoch dice ce vl total"
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string table() const;  // one row per lambda: per-class + average Dice
};

AblationReport run_lambda_ablation(const Catalog& catalog, const std::vector<double>& values,
                                   const RunSetup& setup, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Field-map stitching of overlapping tile predictions.

enum class BlendMode { mean_prob, majority };

struct StitchLayout {
  int h = 0, w = 0;  // scene extent
  BlendMode blend = BlendMode::mean_prob;
};

struct TilePrediction {
  int row = 0, col = 0;  // origin in the scene
  Tensor probs;          // {C,h,w}
};

struct StitchResult {
  IndexMask class_map;
  Tensor prob_map;  // {C,H,W}: blended probabilities (mean) or vote fractions
  std::vector<double> area_fractions;
};

// Tiles are folded pixel-wise via per-pixel sum + count in the given list
// order, so the result is independent of that order. A pixel no tile covers
// is an error ("coverage gap at (r,c)"). Argmax ties go to the lower class.
StitchResult stitch_map(const std::vector<TilePrediction>& tiles, const StitchLayout& layout);

// ---------------------------------------------------------------------------
// Cross-dataset embedding similarity.

struct SimilarityReport {
  std::vector<std::string> dataset_ids;  // K, sorted
  std::vector<int> tile_dataset;         // per sampled tile: index into dataset_ids
  Tensor per_tile;                       // {M,M} cosines, symmetric, unit diagonal
  Tensor block_means;                    // {K,K} dataset-block means
  std::string table() const;
};

// backend "vl": frozen image-encoder global embeddings. backend
// "baseline-visual": the model's residual backbone, globally average-pooled.
// Samples up to `budget` tiles per dataset with a per-dataset seeded draw.
SimilarityReport embedding_similarity_matrix(const Catalog& catalog, const std::string& backend,
                                             VLEncoder& encoder, VLWSModel& model, int budget = 50,
                                             uint64_t seed = 0);

// Alpha-blends class tints over the image: crop green, weed red, background
// untouched. alpha=0 returns the input.
ImageU8 render_overlay(const ImageU8& image, const IndexMask& class_map, double alpha,
                       const ClassPalette& palette);

}  // namespace vlws
