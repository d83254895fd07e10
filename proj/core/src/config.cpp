#include "vlws/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace vlws {

double lr_at(int epoch, double lr_max, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs)
    throw std::out_of_range("lr_at: epoch outside [0, epochs]");
  return cfg.lr_min +
         0.5 * (lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * double(epoch) / double(cfg.epochs)));
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    const size_t eq = line.find('=', start);
    if (eq == std::string::npos) throw std::runtime_error("config: malformed line: " + line);
    c.kv_[line.substr(start, eq - start)] = line.substr(eq + 1);
  }
  return c;
}

std::string KvConfig::get(const std::string& key, const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}
double KvConfig::get_double(const std::string& key, double dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : std::stod(it->second);
}
int KvConfig::get_int(const std::string& key, int dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : std::stoi(it->second);
}
uint64_t KvConfig::get_u64(const std::string& key, uint64_t dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : std::stoull(it->second);
}
bool KvConfig::get_bool(const std::string& key, bool dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  return it->second == "1" || it->second == "true" || it->second == "yes";
}
std::vector<std::string> KvConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  auto it = kv_.find(key);
  if (it == kv_.end()) return out;
  std::istringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

TrainConfig train_config_from(const KvConfig& c) {
  TrainConfig t;
  t.lr_visual = c.get_double("train.lr_visual", t.lr_visual);
  t.lr_text = c.get_double("train.lr_text", t.lr_text);
  t.lr_min = c.get_double("train.lr_min", t.lr_min);
  t.epochs = c.get_int("train.epochs", t.epochs);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.patience = c.get_int("train.patience", t.patience);
  t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
  t.seed = c.get_u64("train.seed", t.seed);
  t.stop_metric = c.get("train.stop_metric", t.stop_metric);
  t.max_steps = c.get_int("train.max_steps", t.max_steps);
  t.eval_caption_mode = c.get("train.eval_caption", t.eval_caption_mode);
  t.fixed_caption = c.get("train.fixed_caption", t.fixed_caption);
  t.augment = c.get_bool("train.augment", t.augment);
  t.validate();
  return t;
}

LossConfig loss_config_from(const KvConfig& c) {
  LossConfig l;
  l.lambda_dice = c.get_double("loss.lambda_dice", l.lambda_dice);
  l.lambda_ce = c.get_double("loss.lambda_ce", l.lambda_ce);
  l.lambda_vl = c.get_double("loss.lambda_vl", l.lambda_vl);
  l.tau = c.get_double("loss.tau", l.tau);
  l.epsilon = c.get_double("loss.epsilon", l.epsilon);
  for (const auto& w : c.get_list("loss.class_weights")) l.class_weights.push_back(std::stod(w));
  l.validate();
  return l;
}

ModelConfig model_config_from(const KvConfig& c) {
  ModelConfig m;
  m.width_multiplier = c.get_double("model.width_multiplier", m.width_multiplier);
  m.num_classes = c.get_int("model.num_classes", m.num_classes);
  m.disable_fusion = c.get_bool("model.disable_fusion", m.disable_fusion);
  m.disable_film = c.get_bool("model.disable_film", m.disable_film);
  const auto blocks = c.get_list("model.blocks_per_stage");
  if (!blocks.empty()) {
    if (blocks.size() != 4) throw std::invalid_argument("model.blocks_per_stage needs 4 entries");
    for (int i = 0; i < 4; ++i) m.blocks_per_stage[size_t(i)] = std::stoi(blocks[size_t(i)]);
  }
  m.validate();
  return m;
}

EncoderConfig encoder_config_from(const KvConfig& c) {
  EncoderConfig e;
  e.backend = EncoderConfig::backend_from_string(c.get("encoder.backend", "stub"));
  e.trainable_text_layers = c.get_int("encoder.trainable_text_layers", e.trainable_text_layers);
  e.freeze_image_encoder = c.get_bool("encoder.freeze_image_encoder", e.freeze_image_encoder);
  e.context_tokens = c.get_int("encoder.context_tokens", e.context_tokens);
  e.weights_dir = c.get("encoder.dir", e.weights_dir);
  e.stub_seed = c.get_u64("encoder.stub_seed", e.stub_seed);
  e.validate();
  return e;
}

std::map<std::string, std::string> to_meta(const TrainConfig& t, const LossConfig& l,
                                           const ModelConfig& m, const EncoderConfig& e) {
  std::map<std::string, std::string> meta;
  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  meta["train.lr_visual"] = fmt(t.lr_visual);
  meta["train.lr_text"] = fmt(t.lr_text);
  meta["train.epochs"] = std::to_string(t.epochs);
  meta["train.seed"] = std::to_string(t.seed);
  meta["loss.lambda_dice"] = fmt(l.lambda_dice);
  meta["loss.lambda_ce"] = fmt(l.lambda_ce);
  meta["loss.lambda_vl"] = fmt(l.lambda_vl);
  meta["loss.tau"] = fmt(l.tau);
  meta["model.width_multiplier"] = fmt(m.width_multiplier);
  meta["model.num_classes"] = std::to_string(m.num_classes);
  meta["model.disable_fusion"] = m.disable_fusion ? "1" : "0";
  meta["model.disable_film"] = m.disable_film ? "1" : "0";
  {
    std::ostringstream os;
    for (int i = 0; i < 4; ++i) os << (i ? "," : "") << m.blocks_per_stage[size_t(i)];
    meta["model.blocks_per_stage"] = os.str();
  }
  meta["encoder.backend"] = e.backend == EncoderConfig::Backend::stub ? "stub" : "pretrained";
  meta["encoder.trainable_text_layers"] = std::to_string(e.trainable_text_layers);
  meta["encoder.freeze_image_encoder"] = e.freeze_image_encoder ? "1" : "0";
  meta["encoder.stub_seed"] = std::to_string(e.stub_seed);
  return meta;
}

static KvConfig meta_to_kv(const std::map<std::string, std::string>& meta) {
  KvConfig c;
  for (const auto& [k, v] : meta) c.set(k, v);
  return c;
}

ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta) {
  return model_config_from(meta_to_kv(meta));
}
EncoderConfig encoder_config_from_meta(const std::map<std::string, std::string>& meta) {
  return encoder_config_from(meta_to_kv(meta));
}

}  // namespace vlws
