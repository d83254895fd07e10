#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "vlws/config.hpp"
#include "vlws/ingest.hpp"
#include "vlws/metrics.hpp"
#include "vlws/model.hpp"

namespace vlws {

// Epoch batching: stable order by sample key, one seeded shuffle per epoch,
// fixed-size chunks with the trailing partial batch kept.
std::vector<std::vector<size_t>> make_batches(const std::vector<CatalogEntry>& entries,
                                              int batch_size, uint64_t seed, int epoch);

struct EvalReport {
  std::map<std::string, DiceAccumulator> per_dataset;
  DiceAccumulator pooled{3};

  double metric(const std::string& stop_metric) const;  // mean_dice | weed_dice, pooled
  std::string table() const;  // per-dataset and pooled Bg/Crop/Weed/Avg rows
};

struct TrainResult {
  std::vector<std::string> history;  // "step epoch dice ce vl total"
  int best_epoch = -1;
  double best_metric = 0.0;
  int epochs_run = 0;
  int steps_run = 0;
  EvalReport final_eval;
};

// Loads the entries of one batch and stacks them into model inputs.
struct BatchData {
  Tensor images;   // {N,3,H,W}
  Tensor onehot;   // {N,C,H,W}
  std::vector<IndexMask> masks;
  std::vector<std::string> captions;
  std::vector<std::string> dataset_ids;
};
BatchData load_batch(const std::vector<CatalogEntry>& entries, const std::vector<size_t>& idx,
                     int num_classes);

IndexMask logits_argmax(const Tensor& logits, int item);

// Pixel-frequency class weights over every training mask.
std::vector<double> compute_class_weights(const std::vector<CatalogEntry>& train_set,
                                          int num_classes);

// Full loop: per-epoch cosine learning rates on two AdamW groups (visual and
// text), validation after every epoch, early stopping on the chosen metric,
// best-epoch weights restored at the end. Throws on non-finite loss.
TrainResult train(VLWSModel& model, VLEncoder& encoder,
                  const std::vector<CatalogEntry>& train_set,
                  const std::vector<CatalogEntry>& val_set, const TrainConfig& tcfg,
                  const LossConfig& lcfg, std::ostream* log = nullptr);

// Batch-1 forward passes; caption source per tcfg.eval_caption_mode:
//   file     - the caption stored with the sample
//   template - synthesized from a vegetation pseudo-mask (no label access)
//   fixed    - tcfg.fixed_caption for every tile
EvalReport evaluate(VLWSModel& model, VLEncoder& encoder,
                    const std::vector<CatalogEntry>& entries, const TrainConfig& tcfg);

// Excess-green vegetation heuristic used by template-mode eval captions.
IndexMask vegetation_pseudo_mask(const ImageU8& image, int threshold = 20);

}  // namespace vlws
