#include "vlws/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vlws/rng.hpp"

namespace vlws {

std::vector<std::vector<size_t>> make_batches(const std::vector<CatalogEntry>& entries,
                                              int batch_size, uint64_t seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<size_t> order(entries.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return entries[a].key() < entries[b].key(); });
  Rng rng(mix64(seed, static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  return batches;
}

BatchData load_batch(const std::vector<CatalogEntry>& entries, const std::vector<size_t>& idx,
                     int num_classes) {
  if (idx.empty()) throw std::invalid_argument("load_batch: empty batch");
  const auto palette = ClassPalette::canonical();
  BatchData b;
  std::vector<SampleRecord> samples;
  for (size_t i : idx) samples.push_back(load_sample(entries[i], palette));
  const int h = samples[0].image.h, w = samples[0].image.w;
  const int n = static_cast<int>(samples.size());
  std::vector<const ImageU8*> imgs;
  for (const auto& s : samples) {
    if (s.image.h != h || s.image.w != w)
      throw std::invalid_argument("load_batch: mixed tile extents in one batch");
    imgs.push_back(&s.image);
  }
  b.images = VLWSModel::images_to_tensor(imgs);
  b.onehot = Tensor::zeros({n, num_classes, h, w});
  for (int i = 0; i < n; ++i) {
    const OneHotMask oh = mask_to_onehot(samples[size_t(i)].mask, num_classes);
    std::copy_n(oh.y.data(), oh.y.size(),
                b.onehot.data() + int64_t(i) * num_classes * h * w);
    b.masks.push_back(samples[size_t(i)].mask);
    b.captions.push_back(samples[size_t(i)].caption);
    b.dataset_ids.push_back(samples[size_t(i)].dataset_id);
  }
  return b;
}

IndexMask logits_argmax(const Tensor& logits, int item) {
  const int c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  IndexMask m = IndexMask::blank(h, w);
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col) {
      int best = 0;
      double bv = logits.at4(item, 0, r, col);
      for (int k = 1; k < c; ++k) {
        const double v = logits.at4(item, k, r, col);
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      m.at(r, col) = static_cast<uint8_t>(best);
    }
  return m;
}

std::vector<double> compute_class_weights(const std::vector<CatalogEntry>& train_set,
                                          int num_classes) {
  const auto palette = ClassPalette::canonical();
  std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
  for (const auto& e : train_set) {
    const SampleRecord s = load_sample(e, palette);
    for (uint8_t v : s.mask.idx) {
      if (v >= num_classes) throw std::runtime_error("class out of range in " + e.key());
      ++counts[v];
    }
  }
  return inverse_frequency_weights(counts);
}

IndexMask vegetation_pseudo_mask(const ImageU8& image, int threshold) {
  IndexMask m = IndexMask::blank(image.h, image.w);
  for (int r = 0; r < image.h; ++r)
    for (int c = 0; c < image.w; ++c) {
      const int exg = 2 * image.at(r, c, 1) - image.at(r, c, 0) - image.at(r, c, 2);
      if (exg > threshold) m.at(r, c) = 1;
    }
  return m;
}

double EvalReport::metric(const std::string& stop_metric) const {
  if (stop_metric == "mean_dice") return mean_dice(pooled);
  if (stop_metric == "weed_dice") return dice_of(pooled, 2);
  throw std::invalid_argument("unknown stop metric: " + stop_metric);
}

static void table_row(std::ostringstream& os, const std::string& label,
                      const DiceAccumulator& acc) {
  os << std::left << std::setw(16) << label << std::right << std::fixed << std::setprecision(4);
  for (int c = acc.num_classes() - 1; c >= 0; --c) os << std::setw(9) << dice_of(acc, c);
  os << std::setw(9) << mean_dice(acc) << '\n';
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "dataset" << std::right << std::setw(9) << "Weed"
     << std::setw(9) << "Crop" << std::setw(9) << "Bg" << std::setw(9) << "Avg" << '\n';
  for (const auto& [id, acc] : per_dataset) table_row(os, id, acc);
  table_row(os, "pooled", pooled);
  return os.str();
}

static std::string caption_for_eval(const SampleRecord& s, const TrainConfig& tcfg) {
  if (tcfg.eval_caption_mode == "file") return s.caption;
  if (tcfg.eval_caption_mode == "fixed") return tcfg.fixed_caption;
  return synthesize_caption(vegetation_pseudo_mask(s.image), s.dataset_id);
}

EvalReport evaluate(VLWSModel& model, VLEncoder& encoder,
                    const std::vector<CatalogEntry>& entries, const TrainConfig& tcfg) {
  const auto palette = ClassPalette::canonical();
  const int nc = model.config().num_classes;
  EvalReport report;
  report.pooled = DiceAccumulator(nc);
  for (const auto& e : entries) {
    const SampleRecord s = load_sample(e, palette);
    const Var x = make_const(VLWSModel::images_to_tensor({&s.image}));
    const ForwardResult fr = model.forward(x, {caption_for_eval(s, tcfg)}, encoder);
    const IndexMask pred = logits_argmax(fr.logits->value, 0);
    auto it = report.per_dataset.find(e.dataset_id);
    if (it == report.per_dataset.end())
      it = report.per_dataset.emplace(e.dataset_id, DiceAccumulator(nc)).first;
    it->second = accumulate(std::move(it->second), pred, s.mask);
    report.pooled = accumulate(std::move(report.pooled), pred, s.mask);
  }
  return report;
}

static std::vector<Tensor> snapshot_values(const ParamStore& a, const ParamStore& b) {
  std::vector<Tensor> out;
  for (const auto& p : a.all()) out.push_back(p->value);
  for (const auto& p : b.all()) out.push_back(p->value);
  return out;
}

static void restore_values(ParamStore& a, ParamStore& b, const std::vector<Tensor>& snap) {
  size_t i = 0;
  for (const auto& p : a.all()) p->value = snap[i++];
  for (const auto& p : b.all()) p->value = snap[i++];
}

TrainResult train(VLWSModel& model, VLEncoder& encoder,
                  const std::vector<CatalogEntry>& train_set,
                  const std::vector<CatalogEntry>& val_set, const TrainConfig& tcfg,
                  const LossConfig& lcfg, std::ostream* log) {
  tcfg.validate();
  lcfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const int nc = model.config().num_classes;

  LossConfig loss = lcfg;
  if (loss.class_weights.empty()) loss.class_weights = compute_class_weights(train_set, nc);
  const auto weights = loss.weights_or_uniform(nc);

  auto gather = [&](ParamGroup g) {
    std::vector<Var> ps = model.params().trainable(g);
    for (const auto& p : encoder.params().trainable(g)) ps.push_back(p);
    return ps;
  };
  AdamW::Settings opt_cfg;
  opt_cfg.weight_decay = tcfg.weight_decay;
  AdamW opt_visual(gather(ParamGroup::visual), opt_cfg);
  AdamW opt_text(gather(ParamGroup::text), opt_cfg);

  TrainResult result;
  std::vector<Tensor> best_snapshot;
  bool stop = false;

  for (int epoch = 0; epoch < tcfg.epochs && !stop; ++epoch) {
    const double lr_v = lr_at(epoch, tcfg.lr_visual, tcfg);
    const double lr_t = lr_at(epoch, tcfg.lr_text, tcfg);

    for (const auto& batch_idx : make_batches(train_set, tcfg.batch_size, tcfg.seed, epoch)) {
      const BatchData batch = load_batch(train_set, batch_idx, nc);
      const Var x = make_const(batch.images);
      const ForwardResult fr = model.forward(x, batch.captions, encoder);

      const Var p = ag::softmax_channel(fr.logits);
      const Var dice = ag::dice_loss_op(p, batch.onehot, loss.epsilon);
      const Var ce = ag::weighted_ce_op(p, batch.onehot, weights);
      Var vl;
      if (fr.v_hat && fr.t_hat && loss.lambda_vl > 0.0)
        vl = ag::infonce_op(fr.v_hat, fr.t_hat, loss.tau);

      const Var total =
          vl ? ag::add_scaled({dice, ce, vl}, {loss.lambda_dice, loss.lambda_ce, loss.lambda_vl})
             : ag::add_scaled({dice, ce}, {loss.lambda_dice, loss.lambda_ce});

      const double dice_v = dice->value[0], ce_v = ce->value[0];
      const double vl_v = vl ? vl->value[0] : 0.0;
      const double total_v = total->value[0];
      if (!std::isfinite(total_v)) {
        std::ostringstream os;
        os << "non-finite loss at step " << result.steps_run << " epoch " << epoch << ": dice="
           << dice_v << " ce=" << ce_v << " vl=" << vl_v;
        throw std::runtime_error(os.str());
      }

      model.params().zero_grad();
      encoder.params().zero_grad();
      backward(total);
      opt_visual.step(lr_v);
      opt_text.step(lr_t);

      ++result.steps_run;
      {
        std::ostringstream os;
        os << result.steps_run << ' ' << epoch << ' ' << dice_v << ' ' << ce_v << ' ' << vl_v
           << ' ' << total_v;
        result.history.push_back(os.str());
        if (log) *log << result.history.back() << '\n';
      }
      if (tcfg.max_steps > 0 && result.steps_run >= tcfg.max_steps) {
        stop = true;
        break;
      }
    }
    result.epochs_run = epoch + 1;

    if (!val_set.empty()) {
      const EvalReport report = evaluate(model, encoder, val_set, tcfg);
      const double metric = report.metric(tcfg.stop_metric);
      if (log) *log << "epoch " << epoch << " val " << tcfg.stop_metric << " " << metric << '\n';
      if (result.best_epoch < 0 || metric > result.best_metric) {
        result.best_epoch = epoch;
        result.best_metric = metric;
        result.final_eval = report;
        best_snapshot = snapshot_values(model.params(), encoder.params());
      } else if (epoch - result.best_epoch >= tcfg.patience) {
        stop = true;
      }
    }
  }

  if (!best_snapshot.empty()) restore_values(model.params(), encoder.params(), best_snapshot);
  if (val_set.empty()) {
    result.best_epoch = result.epochs_run - 1;
  }
  return result;
}

}  // namespace vlws
