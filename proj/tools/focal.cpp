#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "focal/focal.hpp"

namespace fs = std::filesystem;
using namespace focal;

namespace {

struct ConfigInput {
  std::string file;
  std::vector<std::string> sets;
  KeyValueFile flags;
};

// Defaults, then the config file, then --set entries, then dedicated flags.
PipelineConfig resolve_config(const ConfigInput& in) {
  PipelineConfig cfg;
  cfg.sync();
  if (!in.file.empty()) apply_config(cfg, KeyValueFile::load(in.file));
  KeyValueFile sets;
  for (const auto& s : in.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    sets.set(s.substr(0, eq), s.substr(eq + 1));
  }
  apply_config(cfg, sets);
  apply_config(cfg, in.flags);
  cfg.validate();
  return cfg;
}

void add_config_options(CLI::App* cmd, ConfigInput& in, const std::vector<std::string>& flag_keys) {
  cmd->add_option("--config", in.file, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", in.sets, "override one config key (key=value), repeatable");
  for (const auto& key : flag_keys) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    cmd->add_option_function<std::string>(
        flag, [&in, key](const std::string& v) { in.flags.set(key, v); }, "config key '" + key + "'");
  }
}

std::string require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("missing required '") + key + "' (flag or config key)");
  return value;
}

void prepare_output_dir(const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
  fs::create_directories(dir);
}

void prepare_output_file(const fs::path& file) {
  if (fs::is_directory(file)) throw IoError(file.string() + " is a directory");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::vector<fs::path> collect_files(const std::vector<std::string>& inputs, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ext) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      out.push_back(p);
    } else {
      throw IoError("no such file or directory: " + in);
    }
  }
  if (out.empty()) throw IoError("no " + ext + " inputs found");
  return out;
}

KeyValueFile run_manifest(const PipelineConfig& cfg) {
  KeyValueFile kv;
  kv.set("seed", std::to_string(cfg.seed));
  kv.set("loss", loss_name(cfg.train.variant));
  kv.set("steps", std::to_string(cfg.train.steps));
  kv.set("batch_size", std::to_string(cfg.train.batch_size));
  kv.set("lr", format_number(cfg.train.lr));
  kv.set("tau", format_number(cfg.train.loss.tau));
  return kv;
}

void log(const std::string& msg) { std::cerr << "focal: " << msg << "\n"; }

// ---------------------------------------------------------------------------

int cmd_gen(const PipelineConfig& cfg) {
  const fs::path out = require_path(cfg.out, "out");
  prepare_output_dir(out);
  const auto samples = gen_synthetic(cfg.synth);
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < samples.size(); ++i) items.push_back({sample_id(i), samples[i]});
  save_dataset(out, items);
  write_text(out / "config.txt", config_to_kv(cfg).to_string());
  log("wrote " + std::to_string(items.size()) + " samples to " + out.string());
  return 0;
}

int cmd_train(const PipelineConfig& cfg) {
  const fs::path data = require_path(cfg.data, "data");
  const fs::path out = require_path(cfg.out, "out");
  const auto items = load_dataset(data);
  for (const auto& it : items) detail::check_extract_input(it.sample.image.dims(), cfg.train.shape.patch);
  prepare_output_dir(out);
  const auto result = train(cfg.train, samples_of(items));
  save_params(result.params, out, run_manifest(cfg));
  write_text(out / "curve.csv", curve_to_csv(result.curve));
  log("trained " + std::to_string(cfg.train.steps) + " steps (" + loss_name(cfg.train.variant) + ") into " +
      out.string());
  return 0;
}

int cmd_extract(const PipelineConfig& cfg, const std::vector<std::string>& images) {
  const fs::path params_dir = require_path(cfg.params, "params");
  const fs::path out = require_path(cfg.out, "out");
  const auto params = load_params(params_dir);
  std::vector<std::string> stems;
  std::vector<SyntheticSample> inputs;
  if (!cfg.data.empty()) {
    for (auto& it : load_dataset(cfg.data)) {
      stems.push_back(it.id);
      inputs.push_back(std::move(it.sample));
    }
  }
  if (!images.empty()) {
    for (const auto& path : collect_files(images, ".ppm")) {
      stems.push_back(path.stem().string());
      SyntheticSample s;
      s.image = load_image(path);
      inputs.push_back(std::move(s));
    }
  }
  if (inputs.empty()) throw ConfigError("extract needs --data or image paths");
  for (const auto& s : inputs) detail::check_extract_input(s.image.dims(), params.shape().patch);
  prepare_output_dir(out);
  const auto features = extract_all(params, inputs);
  for (std::size_t i = 0; i < features.size(); ++i) save_feature_map(features[i], out / (stems[i] + ".ftz"));
  log("extracted " + std::to_string(features.size()) + " feature maps into " + out.string());
  return 0;
}

int cmd_cluster(const PipelineConfig& cfg, const std::vector<std::string>& inputs) {
  const fs::path out = require_path(cfg.out, "out");
  std::vector<std::string> sources = inputs;
  if (sources.empty() && !cfg.data.empty()) sources.push_back(cfg.data);
  if (sources.empty()) throw ConfigError("cluster needs feature paths or --data");
  const auto files = collect_files(sources, ".ftz");
  std::vector<FeatureMap> features;
  for (const auto& f : files) features.push_back(load_feature_map(f));
  prepare_output_dir(out);
  const auto masks = predict_all(features, cfg.cluster, cfg.algo);
  for (std::size_t i = 0; i < masks.size(); ++i) save_mask(masks[i], out / (files[i].stem().string() + ".pgm"));
  log("clustered " + std::to_string(masks.size()) + " feature maps (" + algo_name(cfg.algo) + ") into " +
      out.string());
  return 0;
}

struct FuseOptions {
  std::vector<std::string> inputs;
  std::string mask_op = "or";
  bool no_normalize = false;
};

ForgeryMask combine_masks(const ForgeryMask& a, const ForgeryMask& b, bool use_and) {
  require_same_extents(a, b);
  ForgeryMask out(a.height(), a.width());
  for (std::size_t y = 0; y < a.height(); ++y)
    for (std::size_t x = 0; x < a.width(); ++x) {
      const bool fa = a.at(y, x) != 0, fb = b.at(y, x) != 0;
      out.set(y, x, use_and ? (fa && fb) : (fa || fb));
    }
  return out;
}

int cmd_fuse(const PipelineConfig& cfg, const FuseOptions& opt) {
  const fs::path out = require_path(cfg.out, "out");
  if (opt.inputs.size() < 2) throw ConfigError("fuse needs at least two inputs");
  const bool masks = std::all_of(opt.inputs.begin(), opt.inputs.end(),
                                 [](const std::string& p) { return fs::path(p).extension() == ".pgm"; });
  if (masks) {
    if (opt.mask_op != "or" && opt.mask_op != "and") throw ConfigError("--mask-op must be or / and");
    std::vector<ForgeryMask> ms;
    for (const auto& p : opt.inputs) ms.push_back(load_mask(p));
    auto acc = ms[0];
    for (std::size_t i = 1; i < ms.size(); ++i) acc = combine_masks(acc, ms[i], opt.mask_op == "and");
    prepare_output_file(out);
    save_mask(acc, out);
    log("combined " + std::to_string(ms.size()) + " masks (" + opt.mask_op + ") into " + out.string());
    return 0;
  }
  std::vector<FeatureMap> maps;
  for (const auto& p : opt.inputs) maps.push_back(load_feature_map(p));
  const auto fused = fuse_all(maps, FusionSpec{!opt.no_normalize});
  prepare_output_file(out);
  save_feature_map(fused, out);
  log("fused " + std::to_string(maps.size()) + " feature maps into " + out.string() + " [" +
      std::to_string(fused.height()) + "x" + std::to_string(fused.width()) + "x" + std::to_string(fused.channels()) +
      "]");
  return 0;
}

struct EvalOptions {
  std::string pred;
  std::string truth;
  bool resize_pred = false;
};

std::vector<std::pair<std::string, fs::path>> mask_files(const fs::path& p) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::is_regular_file(p)) {
    out.emplace_back(p.stem().string(), p);
    return out;
  }
  if (!fs::is_directory(p)) throw IoError("no such file or directory: " + p.string());
  for (const auto& e : fs::directory_iterator(p)) {
    const auto ext = e.path().extension();
    if (!e.is_regular_file() || (ext != ".pgm" && ext != ".ftz")) continue;
    std::string stem = e.path().stem().string();
    if (stem.size() > 5 && stem.ends_with("_mask")) stem.resize(stem.size() - 5);
    out.emplace_back(stem, e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_eval(const PipelineConfig& cfg, const EvalOptions& opt) {
  const auto preds = mask_files(require_path(opt.pred, "pred"));
  const auto truths = mask_files(require_path(opt.truth, "truth"));
  if (preds.empty()) throw IoError("no prediction masks found in " + opt.pred);
  std::map<std::string, fs::path> truth_by_stem(truths.begin(), truths.end());
  const bool single = preds.size() == 1 && truths.size() == 1;
  std::vector<EvaluationPair> pairs;
  for (const auto& [stem, path] : preds) {
    fs::path truth_path;
    if (single) {
      truth_path = truths.front().second;
    } else {
      auto it = truth_by_stem.find(stem);
      if (it == truth_by_stem.end()) throw IoError("no ground-truth mask for prediction '" + stem + "'");
      truth_path = it->second;
    }
    EvaluationPair pair{stem, load_any_mask(path), load_any_mask(truth_path)};
    if (opt.resize_pred)
      pair.prediction = resize_mask_nearest(pair.prediction, pair.truth.height(), pair.truth.width());
    pairs.push_back(std::move(pair));
  }
  const auto report = evaluate_dataset(pairs);
  if (cfg.out.empty()) {
    std::cout << report.to_csv();
  } else {
    prepare_output_file(cfg.out);
    write_text(cfg.out, report.to_csv());
    log("mean f1 " + format_number(report.mean_f1) + ", mean iou " + format_number(report.mean_iou));
  }
  return 0;
}

int cmd_ablate(const PipelineConfig& cfg) {
  const fs::path out = require_path(cfg.out, "out");
  if (cfg.eval_count == 0 || cfg.pristine_count == 0) throw ConfigError("eval_count and pristine_count must be >= 1");
  prepare_output_dir(out);

  const auto train_set = gen_synthetic(cfg.synth);
  SynthConfig eval_cfg = cfg.synth;
  eval_cfg.seed = derive_seed(cfg.seed, 1);
  eval_cfg.count = cfg.eval_count;
  const auto eval_set = gen_synthetic(eval_cfg);
  SynthConfig pristine_cfg = cfg.synth;
  pristine_cfg.seed = derive_seed(cfg.seed, 2);
  pristine_cfg.count = cfg.pristine_count;
  pristine_cfg.pristine = true;
  pristine_cfg.conflict_pair = false;
  const auto pristine_set = gen_synthetic(pristine_cfg);

  std::string csv = "section,loss,algo,step,loss_image_by_image,loss_batch_merged,mean_f1,mean_iou,false_alarm_rate\n";
  std::string grid;
  for (auto variant : {LossVariant::kImageByImage, LossVariant::kBatchMerged, LossVariant::kVanilla}) {
    TrainConfig tc = cfg.train;
    tc.variant = variant;
    log(std::string("training ") + loss_name(variant));
    const auto result = train(tc, train_set);
    for (const auto& p : result.curve)
      csv += std::string("curve,") + loss_name(variant) + ",," + std::to_string(p.step) + "," +
             format_number(p.loss_image_by_image) + "," + format_number(p.loss_batch_merged) + ",,,\n";
    const auto eval_features = extract_all(result.params, eval_set);
    const auto pristine_features = extract_all(result.params, pristine_set);
    for (auto algo : {ClusterAlgo::kHdbscan, ClusterAlgo::kKmeans}) {
      const auto forged = score_masks(predict_all(eval_features, cfg.cluster, algo), eval_set);
      const auto pristine = score_masks(predict_all(pristine_features, cfg.cluster, algo), pristine_set);
      grid += std::string("grid,") + loss_name(variant) + "," + algo_name(algo) + ",,,," +
              format_number(forged.report.mean_f1) + "," + format_number(forged.report.mean_iou) + "," +
              format_number(pristine.false_alarm_rate) + "\n";
    }
  }
  write_text(out / "ablation.csv", csv + grid);
  write_text(out / "config.txt", config_to_kv(cfg).to_string());
  std::cout << grid;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"focal: contrastive forgery localization at desk scale"};
  app.require_subcommand(1);

  ConfigInput gen_in, train_in, extract_in, cluster_in, fuse_in, eval_in, ablate_in;
  std::vector<std::string> extract_images, cluster_inputs;
  FuseOptions fuse_opt;
  EvalOptions eval_opt;

  auto* gen = app.add_subcommand("gen", "synthesize a dataset directory");
  add_config_options(gen, gen_in, {"out", "seed", "count", "conflict_pair", "pristine", "height", "width", "patch"});

  auto* train_cmd = app.add_subcommand("train", "train the patch embedder on a dataset");
  add_config_options(train_cmd, train_in, {"data", "out", "seed", "steps", "loss", "lr", "batch_size", "tau"});

  auto* extract_cmd = app.add_subcommand("extract", "write one feature map per image");
  add_config_options(extract_cmd, extract_in, {"params", "data", "out"});
  extract_cmd->add_option("images", extract_images, "PPM images or directories of them");

  auto* cluster = app.add_subcommand("cluster", "cluster feature maps into forgery masks");
  add_config_options(cluster, cluster_in, {"data", "out", "seed", "algo", "min_cluster_size", "min_samples", "stride"});
  cluster->add_option("features", cluster_inputs, "FTZ feature maps or directories of them");

  auto* fuse_cmd = app.add_subcommand("fuse", "concatenate feature maps, or combine masks");
  add_config_options(fuse_cmd, fuse_in, {"out"});
  fuse_cmd->add_option("inputs", fuse_opt.inputs, "two or more FTZ feature maps, or PGM masks")->required();
  fuse_cmd->add_option("--mask-op", fuse_opt.mask_op, "or / and, for PGM mask inputs");
  fuse_cmd->add_flag("--no-normalize", fuse_opt.no_normalize, "skip per-source row normalization");

  auto* eval = app.add_subcommand("eval", "score predicted masks against ground truth");
  add_config_options(eval, eval_in, {"out"});
  eval->add_option("--pred", eval_opt.pred, "predicted mask file or directory")->required();
  eval->add_option("--truth", eval_opt.truth, "ground-truth mask file or dataset directory")->required();
  eval->add_flag("--resize-pred", eval_opt.resize_pred, "nearest-neighbour resize predictions to truth extents");

  auto* ablate = app.add_subcommand("ablate", "loss curves and loss x clustering score grid");
  add_config_options(ablate, ablate_in, {"out", "seed", "steps", "min_cluster_size", "min_samples", "count", "eval_count", "pristine_count"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(resolve_config(gen_in));
    if (train_cmd->parsed()) return cmd_train(resolve_config(train_in));
    if (extract_cmd->parsed()) return cmd_extract(resolve_config(extract_in), extract_images);
    if (cluster->parsed()) return cmd_cluster(resolve_config(cluster_in), cluster_inputs);
    if (fuse_cmd->parsed()) return cmd_fuse(resolve_config(fuse_in), fuse_opt);
    if (eval->parsed()) return cmd_eval(resolve_config(eval_in), eval_opt);
    if (ablate->parsed()) return cmd_ablate(resolve_config(ablate_in));
  } catch (const ConfigError& e) {
    std::cerr << "focal: config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "focal: numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "focal: data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "focal: data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
