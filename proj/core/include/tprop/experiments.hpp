#pragma once

#include "tprop/algorithms.hpp"
#include "tprop/data.hpp"
#include "tprop/diagnostics.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tprop {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  AlgorithmKind algorithm = AlgorithmKind::FWDTP;
  std::string dataset = "blobs";  // mnist | fmnist | cifar10 | cifar100 | blobs
  std::string data_dir;
  std::string preset;  // mnist-6x256 | cifar-4x1024 | mnist-6x164 | cifar-4x632
  int depth = 6;
  int width = 256;
  std::string activation = "tanh";  // hidden nonlinearity; output layer stays linear
  bool batchnorm = true;
  Hyperparams hp;
  std::uint64_t seed = 1;
  bool diagnostics = false;
  std::vector<int> diag_layers;  // empty = all layers
  Index train_limit = 0;         // 0 = full training set
  Index val_size = 5000;
  std::string out_dir = ".";
  // synthetic-blob shape, used when dataset == "blobs"
  int blob_classes = 4;
  int blob_per_class = 256;
  int blob_dim = 16;
  double blob_separation = 4.0;

  void apply_preset();
  void validate() const;
};

struct SweepConfig {
  RunConfig base;
  int trials = 100;
  double range_lo = 0.2;
  double range_hi = 5.0;
  // centers default to the base hyperparameters
  std::optional<double> center_lr_forward;
  std::optional<double> center_beta;
  std::optional<double> center_lr_feedback;
};

struct MetricsRow {
  int epoch = 0;
  double train_ce = 0.0;
  double val_error = 0.0;   // percent; NaN when no validation split
  double test_error = 0.0;  // percent
  std::vector<double> local_losses;
  std::vector<double> traces;       // empty unless diagnostics
  std::vector<double> psd;          // empty unless diagnostics
  double wall_seconds = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<MetricsRow> rows;
  int best_epoch = 0;          // by validation error (test error when no split)
  double best_val_error = 0.0;
  double best_val_test_error = 0.0;
  double final_test_error = 0.0;
  OpCounters counters;
};

/// Flat `key = value` text; '#' starts a comment; unknown keys are errors.
void apply_config_file(RunConfig& config, const std::string& path);
void apply_config_line(RunConfig& config, const std::string& key,
                       const std::string& value);

Split load_split(const RunConfig& config);
Network build_network(const RunConfig& config, Index input_dim, Index output_dim,
                      RngStreams& rngs);

/// Misclassification percentage, evaluated in training-sized batches so the
/// fixed batch norm sees full batch statistics.
double classification_error(const Network& net, const Dataset& ds, Index batch_size);

/// In-memory training loop shared by the train/sweep/timing drivers.
TrainResult train_model(const RunConfig& config, const Split& split);

std::string metrics_header(const RunConfig& config);
std::string metrics_line(const MetricsRow& row, const RunConfig& config);

/// Trains per the config and writes metrics.csv + checkpoint.bin in out_dir.
TrainResult run_train(const RunConfig& config);

struct SweepTrial {
  int trial = 0;
  std::vector<double> values;  // sampled hyperparameters, alpha_f beta [alpha_b]
  double final_test_error = 0.0;
  double best_val_test_error = 0.0;
  bool failed = false;
};

struct SweepResult {
  std::vector<SweepTrial> trials;
  std::vector<int> histogram;  // final test accuracy, 20 fixed 5%-wide bins
};

SweepResult run_sweep(const SweepConfig& config);

std::vector<JacobianCondition> run_diagnose(const std::string& checkpoint_path,
                                            const RunConfig& config,
                                            const std::vector<int>& layers);

struct TimingEntry {
  AlgorithmKind algorithm;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
  double ratio_to_fwdtp = 0.0;
  long long feedback_grad_evals_per_batch = 0;
};

std::vector<TimingEntry> run_timing(const std::vector<RunConfig>& configs,
                                    int repetitions);

double sample_log_uniform(double center, double lo_factor, double hi_factor,
                          RngStream& rng);

/// Disjoint per-trial seed derived from the run seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t trial);

std::string format_double(double v);  // shortest round-trip-exact decimal

}  // namespace tprop
