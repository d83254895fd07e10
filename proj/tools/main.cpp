#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "vlws/checkpoint.hpp"
#include "vlws/experiments.hpp"
#include "vlws/image_io.hpp"

namespace fs = std::filesystem;
using namespace vlws;

namespace {

RunSetup setup_from(const KvConfig& kv) {
  RunSetup s;
  s.train = train_config_from(kv);
  s.loss = loss_config_from(kv);
  s.model = model_config_from(kv);
  s.encoder = encoder_config_from(kv);
  return s;
}

Catalog catalog_from(const std::vector<std::string>& manifest_paths) {
  if (manifest_paths.empty()) throw std::runtime_error("no manifests given");
  std::vector<DatasetManifest> ms;
  for (const auto& p : manifest_paths) ms.push_back(parse_manifest(p));
  return build_catalog(ms);
}

Catalog catalog_from_config(const KvConfig& kv) {
  return catalog_from(kv.get_list("data.manifests"));
}

void save_run(const std::string& out_dir, const RunSetup& s, VLWSModel& model,
              VLEncoder& encoder) {
  fs::create_directories(out_dir);
  const auto meta = to_meta(s.train, s.loss, s.model, s.encoder);
  save_checkpoint(out_dir + "/ckpt.bin", meta, model.params());
  save_checkpoint(out_dir + "/ckpt.enc.bin", meta, encoder.params());
}

struct LoadedRun {
  RunSetup setup;
  std::unique_ptr<VLWSModel> model;
  std::unique_ptr<VLEncoder> encoder;
};

LoadedRun load_run(const std::string& ckpt_path) {
  LoadedRun run;
  const Checkpoint ck = load_checkpoint(ckpt_path);
  run.setup.model = model_config_from_meta(ck.meta);
  run.setup.encoder = encoder_config_from_meta(ck.meta);
  run.model = std::make_unique<VLWSModel>(run.setup.model, 0);
  run.encoder = make_encoder(run.setup.encoder);
  restore_params(run.model->params(), ck);
  const std::string enc_path = ckpt_path.substr(0, ckpt_path.rfind(".bin")) + ".enc.bin";
  if (fs::exists(enc_path)) restore_params(run.encoder->params(), load_checkpoint(enc_path));
  return run;
}

int cmd_tile(const std::string& in, const std::string& mask_path, const std::string& out,
             int tile, double overlap, double discard, const std::string& dataset,
             const std::string& split) {
  TilingConfig cfg{tile, overlap, discard};
  const ImageU8 scene = read_image(in);
  const auto palette = ClassPalette::canonical();
  std::optional<IndexMask> mask;
  if (!mask_path.empty()) mask = decode_mask(read_image(mask_path), palette);
  const auto tiles = tile_scene(scene, mask ? &*mask : nullptr, cfg);

  fs::create_directories(out);
  DatasetManifest m;
  m.dataset_id = dataset;
  m.split = split;
  for (const auto& t : tiles) {
    const std::string base = "tile_r" + std::to_string(t.row) + "_c" + std::to_string(t.col);
    const std::string img_path = out + "/" + base + ".png";
    write_image(t.image, img_path);
    ManifestEntry e;
    e.image_path = img_path;
    if (t.mask) {
      e.mask_path = out + "/" + base + "_mask.png";
      write_image(render_mask(*t.mask, palette), e.mask_path);
      e.caption_ref = "inline:" + synthesize_caption(*t.mask, dataset);
    }
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, out + "/manifest.txt");
  std::cout << tiles.size() << " tiles -> " << out << '\n';
  return 0;
}

int cmd_caption(const std::string& manifest_path, const std::string& mode) {
  const DatasetManifest m = parse_manifest(manifest_path);
  const Catalog cat = build_catalog({m});
  const auto palette = ClassPalette::canonical();
  for (const auto& e : cat.entries) {
    std::string caption;
    if (mode == "file") {
      const SampleRecord s = load_sample(e, palette);
      caption = s.caption;
    } else if (mode == "template") {
      if (e.mask_path.empty()) throw std::runtime_error("no mask for " + e.key());
      caption = synthesize_caption(decode_mask(read_image(e.mask_path), palette), e.dataset_id);
    } else {
      throw std::runtime_error("caption mode must be template or file");
    }
    std::cout << e.key() << '\t' << caption << '\n';
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const KvConfig kv = KvConfig::from_file(config_path);
  const RunSetup s = setup_from(kv);
  const Catalog cat = catalog_from_config(kv);
  VLWSModel model(s.model, s.train.seed);
  auto encoder = make_encoder(s.encoder);

  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/history.log");
  const TrainResult tr =
      train(model, *encoder, cat.split("train"), cat.split("val"), s.train, s.loss, &log);
  save_run(out_dir, s, model, *encoder);
  std::cout << "steps " << tr.steps_run << " epochs " << tr.epochs_run << " best_epoch "
            << tr.best_epoch << " best_" << s.train.stop_metric << " " << tr.best_metric << '\n';
  if (!tr.final_eval.per_dataset.empty()) std::cout << tr.final_eval.table();
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::vector<std::string>& manifests,
             const std::string& split, const std::string& caption_mode) {
  LoadedRun run = load_run(ckpt);
  TrainConfig tcfg;
  tcfg.eval_caption_mode = caption_mode;
  const Catalog cat = catalog_from(manifests);
  const EvalReport report = evaluate(*run.model, *run.encoder, cat.split(split), tcfg);
  std::cout << report.table();
  return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& target,
              const std::vector<double>& fractions, uint64_t seed) {
  const KvConfig kv = KvConfig::from_file(config_path);
  const SweepReport report =
      run_adaptation_sweep(catalog_from_config(kv), target, fractions, setup_from(kv), seed);
  std::cout << "target " << report.target << '\n' << report.table();
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<double>& values) {
  const KvConfig kv = KvConfig::from_file(config_path);
  const AblationReport report = run_lambda_ablation(catalog_from_config(kv), values, setup_from(kv));
  std::cout << report.table();
  return 0;
}

int cmd_map(const std::string& ckpt, const std::string& scene_path, const std::string& out,
            const std::string& blend, int tile, double overlap, const std::string& caption) {
  LoadedRun run = load_run(ckpt);
  const ImageU8 scene = read_image(scene_path);
  TilingConfig tcfg{tile, overlap, 1.0};  // keep every tile: full coverage
  const auto tiles = tile_scene(scene, nullptr, tcfg);

  StitchLayout layout;
  layout.h = scene.h;
  layout.w = scene.w;
  layout.blend = blend == "majority" ? BlendMode::majority : BlendMode::mean_prob;

  std::vector<TilePrediction> preds;
  for (const auto& t : tiles) {
    const Var x = make_const(VLWSModel::images_to_tensor({&t.image}));
    const std::string cap =
        caption.empty() ? synthesize_caption(vegetation_pseudo_mask(t.image), "field") : caption;
    const ForwardResult fr = run.model->forward(x, {cap}, *run.encoder);
    const Tensor p = ag::softmax_channel(fr.logits)->value;  // {1,C,h,w}
    TilePrediction tp;
    tp.row = t.row;
    tp.col = t.col;
    tp.probs = Tensor({p.dim(1), p.dim(2), p.dim(3)});
    std::copy_n(p.data(), p.size(), tp.probs.data());
    preds.push_back(std::move(tp));
  }
  const StitchResult res = stitch_map(preds, layout);

  fs::create_directories(out);
  const auto palette = ClassPalette::canonical();
  write_image(render_mask(res.class_map, palette), out + "/map.png");
  write_image(render_overlay(scene, res.class_map, 0.5, palette), out + "/overlay.png");
  for (size_t i = 0; i < res.area_fractions.size(); ++i)
    std::cout << palette.classes[i].name << '\t' << res.area_fractions[i] << '\n';
  return 0;
}

int cmd_analyze(const std::string& config_path, const std::string& backend, int budget,
                uint64_t seed, const std::string& out) {
  const KvConfig kv = KvConfig::from_file(config_path);
  const RunSetup s = setup_from(kv);
  VLWSModel model(s.model, s.train.seed);
  auto encoder = make_encoder(s.encoder);
  const SimilarityReport report =
      embedding_similarity_matrix(catalog_from_config(kv), backend, *encoder, model, budget, seed);
  std::cout << report.table();
  if (!out.empty()) {
    std::ofstream f(out);
    const int m = report.per_tile.dim(0);
    f.precision(8);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        f << report.per_tile[int64_t(i) * m + j] << (j + 1 == m ? '\n' : '\t');
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain crop-weed segmentation toolkit"};
  app.require_subcommand(1);

  std::string in, mask, out = "out", dataset = "dataset", split = "train";
  int tile = 512;
  double overlap = 0.25, discard = 0.5;
  auto* c_tile = app.add_subcommand("tile", "Tile a scene into overlapping training tiles");
  c_tile->add_option("--in", in)->required();
  c_tile->add_option("--mask", mask);
  c_tile->add_option("--out", out);
  c_tile->add_option("--tile", tile);
  c_tile->add_option("--overlap", overlap);
  c_tile->add_option("--discard", discard);
  c_tile->add_option("--dataset", dataset);
  c_tile->add_option("--split", split);

  std::string manifest, cap_mode = "file";
  auto* c_cap = app.add_subcommand("caption", "Resolve or synthesize captions for a manifest");
  c_cap->add_option("--manifest", manifest)->required();
  c_cap->add_option("--mode", cap_mode)->check(CLI::IsMember({"template", "file"}));

  std::string config, train_out = "run";
  auto* c_train = app.add_subcommand("train", "Train from a run config");
  c_train->add_option("--config", config)->required();
  c_train->add_option("--out", train_out);

  std::string ckpt, eval_split = "val", eval_cap = "file";
  std::vector<std::string> manifests;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_eval->add_option("--ckpt", ckpt)->required();
  c_eval->add_option("--manifest", manifests)->required();
  c_eval->add_option("--split", eval_split);
  c_eval->add_option("--captions", eval_cap)->check(CLI::IsMember({"file", "template", "fixed"}));

  std::string target;
  std::vector<double> fractions = {0.1, 0.2, 0.5, 1.0};
  uint64_t seed = 0;
  auto* c_adapt = app.add_subcommand("adapt", "Domain-adaptation fraction sweep");
  c_adapt->add_option("--config", config)->required();
  c_adapt->add_option("--target", target)->required();
  c_adapt->add_option("--fractions", fractions)->delimiter(',');
  c_adapt->add_option("--seed", seed);

  std::vector<double> lambdas = {0.01, 0.02, 0.03, 0.05, 0.10};
  auto* c_abl = app.add_subcommand("ablate", "Contrastive-weight ablation");
  c_abl->add_option("--config", config)->required();
  c_abl->add_option("--lambda-vl", lambdas)->delimiter(',');

  std::string scene, blend = "mean", map_caption;
  auto* c_map = app.add_subcommand("map", "Stitch a field-scale weed map");
  c_map->add_option("--ckpt", ckpt)->required();
  c_map->add_option("--scene", scene)->required();
  c_map->add_option("--out", out);
  c_map->add_option("--blend", blend)->check(CLI::IsMember({"mean", "majority"}));
  c_map->add_option("--tile", tile);
  c_map->add_option("--overlap", overlap);
  c_map->add_option("--caption", map_caption);

  std::string backend = "vl", sim_out;
  int budget = 50;
  auto* c_ana = app.add_subcommand("analyze-embeddings", "Cross-dataset embedding similarity");
  c_ana->add_option("--config", config)->required();
  c_ana->add_option("--backend", backend)->check(CLI::IsMember({"vl", "baseline-visual"}));
  c_ana->add_option("--budget", budget);
  c_ana->add_option("--seed", seed);
  c_ana->add_option("--out", sim_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_tile->parsed()) return cmd_tile(in, mask, out, tile, overlap, discard, dataset, split);
    if (c_cap->parsed()) return cmd_caption(manifest, cap_mode);
    if (c_train->parsed()) return cmd_train(config, train_out);
    if (c_eval->parsed()) return cmd_eval(ckpt, manifests, eval_split, eval_cap);
    if (c_adapt->parsed()) return cmd_adapt(config, target, fractions, seed);
    if (c_abl->parsed()) return cmd_ablate(config, lambdas);
    if (c_map->parsed()) return cmd_map(ckpt, scene, out, blend, tile, overlap, map_caption);
    if (c_ana->parsed()) return cmd_analyze(config, backend, budget, seed, sim_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
