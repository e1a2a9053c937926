// Command-line driver: train / sweep / diagnose / timing / export.

#include "tprop/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

namespace {

using tprop::RunConfig;

// Flags are collected as (key, value) strings and replayed through the config
// parser after the file is read, so the CLI always overrides the file.
struct ConfigFlags {
  std::optional<std::string> config_file;
  std::vector<std::pair<std::string, std::string>> overrides;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "flat key = value config file");
    auto opt = [this, cmd](const std::string& flag, const std::string& key,
                           const std::string& help) {
      cmd->add_option_function<std::string>(
          flag,
          [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
    };
    opt("--algorithm", "algorithm", "bp | fa | tp | dtp | drl | ldrl | fwdtp");
    opt("--dataset", "dataset", "mnist | fmnist | cifar10 | cifar100 | blobs");
    opt("--data-dir", "data-dir", "directory with the dataset files");
    opt("--preset", "preset", "mnist-6x256 | cifar-4x1024 | mnist-6x164 | cifar-4x632");
    opt("--depth", "depth", "number of layers");
    opt("--width", "width", "hidden-layer width");
    opt("--activation", "activation", "tanh | linear");
    opt("--batchnorm", "batchnorm", "fixed batch normalization on/off");
    opt("--lr-forward", "lr-forward", "forward learning rate");
    opt("--lr-feedback", "lr-feedback", "feedback learning rate");
    opt("--beta", "beta", "output-target stepsize");
    opt("--nb", "nb", "feedback updates per batch");
    opt("--sigma", "sigma", "reconstruction noise stddev");
    opt("--lambda", "lambda", "Tikhonov weight (difference reconstruction loss)");
    opt("--batch-size", "batch-size", "minibatch size");
    opt("--epochs", "epochs", "training epochs");
    opt("--seed", "seed", "run seed");
    opt("--diagnostics", "diagnostics", "log per-layer Jacobian conditions");
    opt("--diag-layers", "diag-layers", "comma-separated layer indices");
    opt("--train-limit", "train-limit", "cap on training samples (0 = all)");
    opt("--val-size", "val-size", "validation split size");
    opt("--out", "out", "output directory");
    opt("--blob-classes", "blob-classes", "synthetic blob classes");
    opt("--blob-per-class", "blob-per-class", "synthetic samples per class");
    opt("--blob-dim", "blob-dim", "synthetic input dimension");
    opt("--blob-separation", "blob-separation", "synthetic cluster separation");
  }

  RunConfig build() const {
    RunConfig config;
    if (const char* env = std::getenv("TPROP_DATA_DIR")) config.data_dir = env;
    if (config_file) tprop::apply_config_file(config, *config_file);
    for (const auto& [key, value] : overrides)
      tprop::apply_config_line(config, key, value);
    config.validate();
    return config;
  }
};

void export_checkpoint(const std::string& checkpoint, const std::string& out_path) {
  tprop::Network net = tprop::load_checkpoint(checkpoint);
  std::ofstream out(out_path);
  if (!out) throw tprop::IoError("io-error: cannot write " + out_path);
  out << "kind,layer,row,col,value\n";
  auto dump = [&out](const char* kind, int layer, const tprop::Matrix& m) {
    for (tprop::Index i = 0; i < m.rows(); ++i)
      for (tprop::Index j = 0; j < m.cols(); ++j)
        out << kind << "," << layer << "," << i << "," << j << ","
            << tprop::format_double(m(i, j)) << "\n";
  };
  for (std::size_t l = 0; l < net.encoders.size(); ++l)
    dump("encoder", static_cast<int>(l + 1), net.encoders[l].W);
  for (std::size_t l = 0; l < net.decoders.size(); ++l)
    dump("decoder", static_cast<int>(l + 1), net.decoders[l].B);
}

std::vector<std::string> split_names(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"target-propagation training toolkit"};
  app.require_subcommand(1);

  ConfigFlags train_flags, sweep_flags, diag_flags, timing_flags;

  auto* train_cmd = app.add_subcommand("train", "train one model, write metrics + checkpoint");
  train_flags.add_to(train_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "log-uniform hyperparameter sweep");
  sweep_flags.add_to(sweep_cmd);
  int trials = 100;
  double range_lo = 0.2, range_hi = 5.0;
  sweep_cmd->add_option("--trials", trials, "number of sweep trials");
  sweep_cmd->add_option("--range-lo", range_lo, "lower range factor");
  sweep_cmd->add_option("--range-hi", range_hi, "upper range factor");

  auto* diag_cmd = app.add_subcommand("diagnose", "Jacobian conditions of a checkpoint");
  diag_flags.add_to(diag_cmd);
  std::string diag_checkpoint;
  diag_cmd->add_option("--checkpoint", diag_checkpoint, "checkpoint to inspect")
      ->required();

  auto* timing_cmd = app.add_subcommand("timing", "epoch wall-time comparison");
  timing_flags.add_to(timing_cmd);
  std::string timing_algorithms = "fwdtp,dtp";
  int repetitions = 3;
  timing_cmd->add_option("--algorithms", timing_algorithms,
                         "comma-separated algorithms to time");
  timing_cmd->add_option("--repetitions", repetitions, "measured epochs per algorithm");

  auto* export_cmd = app.add_subcommand("export", "dump checkpoint weights to CSV");
  std::string export_checkpoint_path, export_out = "weights.csv";
  export_cmd->add_option("--checkpoint", export_checkpoint_path, "checkpoint to dump")
      ->required();
  export_cmd->add_option("--out", export_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      RunConfig config = train_flags.build();
      tprop::TrainResult result = tprop::run_train(config);
      std::cout << "algorithm=" << tprop::algorithm_name(config.algorithm)
                << " epochs=" << config.hp.epochs
                << " best_epoch=" << result.best_epoch
                << " best_val_error=" << tprop::format_double(result.best_val_error)
                << " best_val_test_error="
                << tprop::format_double(result.best_val_test_error)
                << " final_test_error="
                << tprop::format_double(result.final_test_error) << "\n";
    } else if (sweep_cmd->parsed()) {
      tprop::SweepConfig config;
      config.base = sweep_flags.build();
      config.trials = trials;
      config.range_lo = range_lo;
      config.range_hi = range_hi;
      tprop::SweepResult result = tprop::run_sweep(config);
      int failed = 0;
      for (const auto& t : result.trials) failed += t.failed ? 1 : 0;
      std::cout << "trials=" << result.trials.size() << " failed=" << failed << "\n";
    } else if (diag_cmd->parsed()) {
      RunConfig config = diag_flags.build();
      auto conds = tprop::run_diagnose(diag_checkpoint, config, config.diag_layers);
      std::cout << "layer,trace,psd_proportion\n";
      for (const auto& c : conds)
        std::cout << c.layer << "," << tprop::format_double(c.trace) << ","
                  << tprop::format_double(c.psd_proportion) << "\n";
    } else if (timing_cmd->parsed()) {
      std::vector<RunConfig> configs;
      for (const auto& name : split_names(timing_algorithms)) {
        RunConfig config = timing_flags.build();
        config.algorithm = tprop::parse_algorithm(name);
        configs.push_back(std::move(config));
      }
      auto entries = tprop::run_timing(configs, repetitions);
      std::cout << "algorithm,mean_seconds,std_seconds,ratio_to_fwdtp,"
                   "feedback_grad_evals_per_batch\n";
      for (const auto& e : entries)
        std::cout << tprop::algorithm_name(e.algorithm) << ","
                  << tprop::format_double(e.mean_seconds) << ","
                  << tprop::format_double(e.std_seconds) << ","
                  << tprop::format_double(e.ratio_to_fwdtp) << ","
                  << e.feedback_grad_evals_per_batch << "\n";
    } else if (export_cmd->parsed()) {
      export_checkpoint(export_checkpoint_path, export_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
