#pragma once

#include <map>
#include <string>
#include <vector>

#include "vlws/losses.hpp"
#include "vlws/model.hpp"
#include "vlws/vlencoder.hpp"

namespace vlws {

struct TrainConfig {
  double lr_visual = 3e-5;
  double lr_text = 3e-6;
  double lr_min = 1e-7;
  int epochs = 200;
  int batch_size = 8;
  int patience = 30;
  double weight_decay = 1e-2;
  uint64_t seed = 0;
  std::string stop_metric = "mean_dice";  // mean_dice | weed_dice
  int max_steps = 0;                      // 0 = no cap; desk fixtures cap steps
  std::string eval_caption_mode = "file";  // file | template | fixed
  std::string fixed_caption = "Crop field tile with unknown weed pressure.";
  bool augment = false;

  void validate() const {
    if (!(lr_min < lr_text && lr_text <= lr_visual))
      throw std::invalid_argument("require lr_min < lr_text <= lr_visual");
    if (patience >= epochs) throw std::invalid_argument("require patience < epochs");
    if (batch_size < 1 || epochs < 1) throw std::invalid_argument("bad batch/epoch count");
    if (stop_metric != "mean_dice" && stop_metric != "weed_dice")
      throw std::invalid_argument("stop_metric must be mean_dice or weed_dice");
    if (eval_caption_mode != "file" && eval_caption_mode != "template" &&
        eval_caption_mode != "fixed")
      throw std::invalid_argument("eval_caption_mode must be file, template or fixed");
  }
};

// Cosine annealing from lr_max at epoch 0 to lr_min at `epochs`.
double lr_at(int epoch, double lr_max, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Flat key=value run-config file. Lines: `key=value`, `#` comments. Keys are
// namespaced: train.*, loss.*, model.*, encoder.*, data.*.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key, double dflt) const;
  int get_int(const std::string& key, int dflt) const;
  uint64_t get_u64(const std::string& key, uint64_t dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma-separated

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  const std::map<std::string, std::string>& all() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

TrainConfig train_config_from(const KvConfig& c);
LossConfig loss_config_from(const KvConfig& c);
ModelConfig model_config_from(const KvConfig& c);
EncoderConfig encoder_config_from(const KvConfig& c);

std::map<std::string, std::string> to_meta(const TrainConfig& t, const LossConfig& l,
                                           const ModelConfig& m, const EncoderConfig& e);
ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta);
EncoderConfig encoder_config_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace vlws
