// PointABM command line: train, eval, pretrain, inspect, gen.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pabm/pabm.hpp"

namespace fs = std::filesystem;
using pabm::json;
using pabm::RunConfig;

namespace {

struct Cli {
  RunConfig cfg;
  std::set<std::string> file_keys;
  std::string fusion_str;
  std::string serialize_str;
  std::string checkpoint_path;
  std::string split = "test";
  bool as_json = false;
  bool num_classes_explicit = false;
};

std::optional<std::string> scan_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

void add_model_options(CLI::App* cmd, Cli& c) {
  cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  cmd->add_option("--config", "JSON config file (parsed before flags)");
  cmd->add_option("--points-per-cloud", c.cfg.model.points_per_cloud,
                  "Points per synthetic cloud");
  cmd->add_option("--n-patches", c.cfg.model.n_patches, "Number of patches (tokens)");
  cmd->add_option("--patch-size", c.cfg.model.patch_size, "Points per patch");
  cmd->add_option("--width", c.cfg.model.width, "Token width C");
  cmd->add_option("--transformer-layers", c.cfg.model.transformer_layers,
                  "Transformer blocks before the bi-SSM stack");
  cmd->add_option("--heads", c.cfg.model.heads, "Attention heads");
  cmd->add_option("--bissm-layers", c.cfg.model.bissm_layers, "Bi-SSM blocks");
  cmd->add_option("--fusion", c.fusion_str, "Fusion mode: residual|concat");
  cmd->add_option("--ffn-ratio", c.cfg.model.ffn_ratio, "FFN hidden ratio");
  cmd->add_option("--d-state", c.cfg.model.d_state, "SSM state width");
  cmd->add_option("--num-classes", c.cfg.model.num_classes, "Output classes");
  cmd->add_option("--mask-ratio", c.cfg.model.mask_ratio, "MAE mask ratio");
  cmd->add_option("--decoder-layers", c.cfg.model.decoder_layers, "MAE decoder blocks");
  cmd->add_option("--conv-width", c.cfg.model.conv_width, "SSM conv kernel width");
  cmd->add_option("--pos-hidden", c.cfg.model.pos_hidden, "Positional MLP hidden width");
  cmd->add_option("--head-hidden", c.cfg.model.head_hidden, "Classifier hidden width");
  cmd->add_option("--head-dropout", c.cfg.model.head_dropout, "Classifier dropout");
  cmd->add_option("--pre-norm", c.cfg.model.pre_norm,
                  "Transformer norm placement (1 pre, 0 post)");
  cmd->add_option("--serialize-order", c.serialize_str, "Token order: lex|fps");
}

void add_run_options(CLI::App* cmd, Cli& c) {
  cmd->add_option("--epochs", c.cfg.epochs, "Training epochs");
  cmd->add_option("--batch-size", c.cfg.batch_size, "Mini-batch size");
  cmd->add_option("--lr-max", c.cfg.lr_max, "Cosine schedule peak LR");
  cmd->add_option("--lr-min", c.cfg.lr_min, "Cosine schedule final LR");
  cmd->add_option("--weight-decay", c.cfg.weight_decay, "AdamW weight decay");
  cmd->add_option("--seed", c.cfg.seed, "Run seed (PABM_SEED env as fallback)");
  cmd->add_option("--augment-rotate", c.cfg.augment_rotate, "Rotate about z in training");
  cmd->add_option("--augment-scale", c.cfg.augment_scale, "Random scaling in training");
  cmd->add_option("--augment-translate", c.cfg.augment_translate,
                  "Random translation in training");
  cmd->add_option("--dataset", c.cfg.dataset, "'synthetic' or a labels-manifest path");
  cmd->add_option("--eval-dataset", c.cfg.eval_dataset, "Optional test manifest");
  cmd->add_option("--kinds", c.cfg.kinds, "Synthetic shape kinds (comma list)");
  cmd->add_option("--samples-per-class", c.cfg.samples_per_class,
                  "Synthetic samples per class");
  cmd->add_option("--noise-sigma", c.cfg.noise_sigma, "Synthetic noise sigma");
  cmd->add_option("--data-seed", c.cfg.data_seed, "Synthetic data seed");
  cmd->add_option("--out", c.cfg.out_dir, "Output directory");
  cmd->add_option("--save-every", c.cfg.save_every, "Checkpoint every k epochs");
  cmd->add_option("--init", c.cfg.init, "Checkpoint to initialize weights from");
}

void finalize_config(Cli& c, CLI::App* cmd) {
  if (cmd->count("--fusion")) c.cfg.model.fusion = pabm::parse_fusion(c.fusion_str);
  if (cmd->count("--serialize-order")) {
    pabm::parse_serialize_strategy(c.serialize_str);
    c.cfg.model.serialize_strategy = c.serialize_str;
  }
  if (!cmd->count("--seed") && !c.file_keys.count("seed")) {
    if (const char* env = std::getenv("PABM_SEED")) c.cfg.seed = std::strtoull(env, nullptr, 10);
  }
  c.num_classes_explicit =
      cmd->count("--num-classes") > 0 || c.file_keys.count("num_classes") > 0;
}

struct LoadedData {
  pabm::Dataset train;
  std::optional<pabm::Dataset> test;
};

LoadedData load_datasets(Cli& c) {
  LoadedData d;
  if (c.cfg.dataset == "synthetic") {
    std::vector<std::string> kinds = c.cfg.kind_list();
    c.cfg.model.num_classes = kinds.size();
    auto [train, test] = pabm::make_synthetic_dataset(
        c.cfg.samples_per_class, kinds, c.cfg.model.points_per_cloud, c.cfg.noise_sigma,
        c.cfg.data_seed);
    d.train = std::move(train);
    d.test = std::move(test);
  } else {
    d.train = pabm::load_manifest(c.cfg.dataset, "train");
    c.cfg.model.num_classes = d.train.class_names.size();
    if (!c.cfg.eval_dataset.empty())
      d.test = pabm::load_manifest(c.cfg.eval_dataset, "test");
  }
  return d;
}

json snapshot_metadata(const Cli& c, const pabm::Dataset& ds, size_t epoch,
                       const std::vector<pabm::EpochMetrics>& metrics) {
  json meta;
  meta["seed"] = c.cfg.seed;
  meta["epoch"] = epoch;
  meta["class_names"] = ds.class_names;
  json snap = json::object();
  if (!metrics.empty()) {
    const auto& m = metrics.back();
    snap["loss"] = m.loss;
    if (!std::isnan(m.train_acc)) snap["train_acc"] = m.train_acc;
    if (!std::isnan(m.val_acc)) snap["val_acc"] = m.val_acc;
  }
  meta["metrics"] = snap;
  return meta;
}

int cmd_train(Cli& c) {
  LoadedData data = load_datasets(c);
  c.cfg.model.validate();
  pabm::ClassifierModel model = pabm::ClassifierModel::make(c.cfg.model, c.cfg.seed);
  if (!c.cfg.init.empty()) {
    pabm::Checkpoint init = pabm::load_checkpoint(c.cfg.init);
    pabm::apply_checkpoint(init, model.params, /*strict=*/false);
    std::cout << "initialized " << init.tensors.size() << " tensors from " << c.cfg.init
              << "\n";
  }
  fs::create_directories(c.cfg.out_dir);
  pabm::MetricsWriter metrics_out((fs::path(c.cfg.out_dir) / "metrics.csv").string());
  std::vector<pabm::EpochMetrics> history;
  auto save_at = [&](const std::string& name, size_t epoch) {
    pabm::Checkpoint ckpt = pabm::checkpoint_from_registry(
        model.cfg, model.params, snapshot_metadata(c, data.train, epoch, history));
    pabm::save_checkpoint(ckpt, (fs::path(c.cfg.out_dir) / name).string());
  };
  pabm::TrainOptions opts = c.cfg.train_options();
  auto on_epoch = [&](size_t epoch, const pabm::EpochMetrics& m) {
    history.push_back(m);
    metrics_out.append(m);
    std::cout << pabm::strformat("epoch %zu: loss %.5f train_acc %.4f", epoch, m.loss,
                                 m.train_acc);
    if (!std::isnan(m.val_acc)) std::cout << pabm::strformat(" val_acc %.4f", m.val_acc);
    std::cout << "\n";
    if (c.cfg.save_every > 0 && epoch % c.cfg.save_every == 0)
      save_at(pabm::strformat("checkpoint_epoch%zu.pabm", epoch), epoch);
  };
  pabm::train_classifier(model, data.train, data.test ? &*data.test : nullptr, opts,
                         on_epoch);
  save_at("checkpoint.pabm", c.cfg.epochs);
  std::cout << "saved " << (fs::path(c.cfg.out_dir) / "checkpoint.pabm").string() << "\n";
  return 0;
}

int cmd_pretrain(Cli& c) {
  LoadedData data = load_datasets(c);
  c.cfg.model.validate();
  pabm::MaeModel model = pabm::MaeModel::make(c.cfg.model, c.cfg.seed);
  fs::create_directories(c.cfg.out_dir);
  pabm::MetricsWriter metrics_out((fs::path(c.cfg.out_dir) / "metrics.csv").string());
  std::vector<pabm::EpochMetrics> history;
  pabm::TrainOptions opts = c.cfg.train_options();
  auto on_epoch = [&](size_t epoch, const pabm::EpochMetrics& m) {
    history.push_back(m);
    metrics_out.append(m);
    std::cout << pabm::strformat("epoch %zu: chamfer %.6f\n", epoch, m.loss);
  };
  pabm::train_mae(model, data.train, opts, on_epoch);
  pabm::Checkpoint enc = pabm::encoder_checkpoint(
      model, snapshot_metadata(c, data.train, c.cfg.epochs, history));
  pabm::save_checkpoint(enc, (fs::path(c.cfg.out_dir) / "encoder.pabm").string());
  std::cout << "saved " << (fs::path(c.cfg.out_dir) / "encoder.pabm").string() << "\n";
  return 0;
}

int cmd_eval(Cli& c) {
  pabm::check_usage(!c.checkpoint_path.empty(), "eval: --checkpoint is required");
  pabm::Checkpoint ckpt = pabm::load_checkpoint(c.checkpoint_path);
  c.cfg.model = ckpt.config;
  pabm::ClassifierModel model = pabm::ClassifierModel::make(ckpt.config, 0);
  pabm::apply_checkpoint(ckpt, model.params, /*strict=*/true);

  LoadedData data = load_datasets(c);
  const pabm::Dataset& ds =
      (c.split == "train" || !data.test) ? data.train : *data.test;
  pabm::check_usage(ds.class_names.size() == model.cfg.num_classes,
                    "eval: dataset classes do not match checkpoint");
  if (ckpt.metadata.contains("class_names")) {
    auto names = ckpt.metadata["class_names"].get<std::vector<std::string>>();
    pabm::check_usage(names == ds.class_names,
                      "eval: dataset class names do not match checkpoint");
  }
  pabm::EvalResult res = pabm::evaluate(model, ds, c.cfg.seed);
  std::cout << pabm::strformat("overall_accuracy %.6f\n", res.accuracy);
  std::cout << pabm::strformat("mean_loss %.6f\n", res.mean_loss);
  for (size_t k = 0; k < ds.class_names.size(); ++k) {
    if (res.per_class_total[k] == 0) {
      std::cout << "class " << ds.class_names[k] << " -\n";
    } else {
      double acc = static_cast<double>(res.per_class_correct[k]) /
                   static_cast<double>(res.per_class_total[k]);
      std::cout << pabm::strformat("class %s %.6f\n", ds.class_names[k].c_str(), acc);
    }
  }
  return 0;
}

std::string module_group(const std::string& name) {
  size_t dot = name.find('.');
  if (dot == std::string::npos) return name;
  std::string first = name.substr(0, dot);
  if (first != "encoder" && first != "decoder") return first;
  size_t dot2 = name.find('.', dot + 1);
  return dot2 == std::string::npos ? name : name.substr(0, dot2);
}

int cmd_inspect(Cli& c) {
  if (c.cfg.dataset == "synthetic" && !c.num_classes_explicit)
    c.cfg.model.num_classes = std::max<size_t>(2, c.cfg.kind_list().size());
  c.cfg.model.validate();
  pabm::ClassifierModel model = pabm::ClassifierModel::make(c.cfg.model, 0);
  std::map<std::string, size_t> groups;
  for (const auto& [name, t] : model.params.items()) groups[module_group(name)] += t.size();
  size_t total = model.params.total_scalars();
  if (c.as_json) {
    json j;
    j["total"] = total;
    j["modules"] = groups;
    j["config"] = pabm::model_config_to_json(model.cfg);
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& [g, n] : groups)
      std::cout << pabm::strformat("%-24s %12zu\n", g.c_str(), n);
    std::cout << pabm::strformat("%-24s %12zu (%.2f M)\n", "total", total,
                                 static_cast<double>(total) / 1e6);
  }
  return 0;
}

int cmd_gen(Cli& c) {
  std::vector<std::string> kinds = c.cfg.kind_list();
  auto [train, test] = pabm::make_synthetic_dataset(c.cfg.samples_per_class, kinds,
                                                    c.cfg.model.points_per_cloud,
                                                    c.cfg.noise_sigma, c.cfg.data_seed);
  fs::path out(c.cfg.out_dir);
  fs::create_directories(out / "clouds");
  auto emit = [&](const pabm::Dataset& ds, const std::string& split) {
    std::ofstream manifest(out / (split + ".tsv"), std::ios::binary);
    pabm::check(manifest.good(), "gen: cannot open manifest");
    std::map<int, size_t> counters;
    for (const pabm::PointCloud& cloud : ds.samples) {
      size_t i = counters[cloud.label]++;
      std::string rel = pabm::strformat("clouds/%s_%s_%03zu.xyz", split.c_str(),
                                        ds.class_names[cloud.label].c_str(), i);
      pabm::save_xyz(cloud, (out / rel).string());
      manifest << rel << '\t' << ds.class_names[cloud.label] << '\n';
    }
  };
  emit(train, "train");
  emit(test, "test");
  std::cout << "wrote " << train.size() << " train / " << test.size() << " test clouds to "
            << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Cli c;
  try {
    if (auto path = scan_config_path(argc, argv)) {
      std::ifstream in(*path);
      pabm::check_usage(in.good(), "cannot open config file: " + *path);
      json j = json::parse(in, nullptr, false);
      pabm::check_usage(!j.is_discarded(), "config file is not valid JSON: " + *path);
      c.cfg = pabm::run_config_from_json(j, &c.file_keys);
    }
    c.fusion_str = pabm::fusion_name(c.cfg.model.fusion);
    c.serialize_str = c.cfg.model.serialize_strategy;

    CLI::App app{"PointABM: hybrid Transformer + bidirectional selective-SSM point cloud "
                 "classifier"};
    app.require_subcommand(1);

    CLI::App* train = app.add_subcommand("train", "Train a classifier");
    add_model_options(train, c);
    add_run_options(train, c);

    CLI::App* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_model_options(evalc, c);
    add_run_options(evalc, c);
    evalc->add_option("--checkpoint", c.checkpoint_path, "Checkpoint file")->required();
    evalc->add_option("--split", c.split, "Synthetic split to evaluate: train|test");

    CLI::App* pre = app.add_subcommand("pretrain", "MAE pretraining");
    add_model_options(pre, c);
    add_run_options(pre, c);

    CLI::App* inspect = app.add_subcommand("inspect", "Parameter count table");
    add_model_options(inspect, c);
    add_run_options(inspect, c);
    inspect->add_flag("--json", c.as_json, "JSON output");

    CLI::App* gen = app.add_subcommand("gen", "Emit a synthetic dataset as .xyz + manifest");
    add_model_options(gen, c);
    add_run_options(gen, c);

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 2;
    }

    CLI::App* cmd = app.get_subcommands().front();
    finalize_config(c, cmd);
    if (cmd == train) return cmd_train(c);
    if (cmd == evalc) return cmd_eval(c);
    if (cmd == pre) return cmd_pretrain(c);
    if (cmd == inspect) return cmd_inspect(c);
    if (cmd == gen) return cmd_gen(c);
    return 2;
  } catch (const pabm::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
