#include "tprop/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace tprop {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kSplitTag = 0x73706c6974ULL;  // "split"

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config-error: bad boolean '" + v + "' for key " + key);
}

long long parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    long long out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config-error: bad integer '" + v + "' for key " + key);
  }
}

double parse_real(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config-error: bad number '" + v + "' for key " + key);
  }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<int>(parse_int(item, key)));
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Accepts a path or the same path with ".gz" appended.
std::string resolve_data_file(const std::string& dir, const std::string& name) {
  fs::path plain = fs::path(dir) / name;
  if (fs::exists(plain)) return plain.string();
  fs::path gz = fs::path(dir) / (name + ".gz");
  if (fs::exists(gz)) return gz.string();
  throw IoError("io-error: missing data file " + plain.string() + "[.gz]");
}

bool uses_batchnorm(const Network& net) {
  for (const auto& enc : net.encoders)
    if (enc.activation == ActivationKind::TanhBN) return true;
  return false;
}

// Batch boundaries for evaluation: full batch_size chunks, the remainder kept,
// never leaving a single-sample chunk when batch norm is active.
std::vector<std::pair<Index, Index>> eval_chunks(Index total, Index batch_size,
                                                 bool bn) {
  std::vector<std::pair<Index, Index>> chunks;
  Index i = 0;
  while (i < total) {
    Index n = std::min(batch_size, total - i);
    if (bn && total - i - n == 1 && n > 1) --n;
    chunks.emplace_back(i, n);
    i += n;
  }
  return chunks;
}

Matrix gather_rows(const Matrix& src, const std::vector<Index>& order, Index begin,
                   Index count) {
  Matrix out(count, src.cols());
  for (Index i = 0; i < count; ++i) out.row(i) = src.row(order[begin + i]);
  return out;
}

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t trial) {
  if (trial == 0) return seed;  // trial 0 reproduces the base run exactly
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * trial;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double sample_log_uniform(double center, double lo_factor, double hi_factor,
                          RngStream& rng) {
  if (!(center > 0.0) || !(lo_factor > 0.0) || lo_factor > hi_factor)
    throw ConfigError("config-error: log-uniform range needs 0 < lo <= hi, center > 0");
  if (lo_factor == hi_factor) return center * lo_factor;
  double u = rng.uniform(std::log(lo_factor * center), std::log(hi_factor * center));
  return std::exp(u);
}

void RunConfig::apply_preset() {
  if (preset.empty()) return;
  if (preset == "mnist-6x256") {
    depth = 6;
    width = 256;
  } else if (preset == "mnist-6x164") {
    depth = 6;
    width = 164;
  } else if (preset == "cifar-4x1024") {
    depth = 4;
    width = 1024;
  } else if (preset == "cifar-4x632") {
    depth = 4;
    width = 632;
  } else {
    throw ConfigError("config-error: unknown preset '" + preset + "'");
  }
}

void RunConfig::validate() const {
  if (depth < 2) throw ConfigError("config-error: depth must be >= 2");
  if (width < 1) throw ConfigError("config-error: width must be >= 1");
  if (activation != "tanh" && activation != "linear")
    throw ConfigError("config-error: unknown activation '" + activation + "'");
  if (dataset != "mnist" && dataset != "fmnist" && dataset != "cifar10" &&
      dataset != "cifar100" && dataset != "blobs")
    throw ConfigError("config-error: unknown dataset '" + dataset + "'");
  if (val_size < 0) throw ConfigError("config-error: val-size must be >= 0");
  if (train_limit < 0) throw ConfigError("config-error: train-limit must be >= 0");
  hp.validate(batchnorm);
  for (int l : diag_layers)
    if (l < 1 || l > depth)
      throw ConfigError("config-error: diagnostic layer " + std::to_string(l) +
                        " outside [1, " + std::to_string(depth) + "]");
}

void apply_config_line(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "algorithm") c.algorithm = parse_algorithm(value);
  else if (key == "dataset") c.dataset = value;
  else if (key == "data-dir") c.data_dir = value;
  else if (key == "preset") { c.preset = value; c.apply_preset(); }
  else if (key == "depth") c.depth = static_cast<int>(parse_int(value, key));
  else if (key == "width") c.width = static_cast<int>(parse_int(value, key));
  else if (key == "activation") c.activation = value;
  else if (key == "batchnorm") c.batchnorm = parse_bool(value, key);
  else if (key == "lr-forward") c.hp.lr_forward = parse_real(value, key);
  else if (key == "lr-feedback") c.hp.lr_feedback = parse_real(value, key);
  else if (key == "beta") c.hp.beta = parse_real(value, key);
  else if (key == "nb") c.hp.feedback_reps = static_cast<int>(parse_int(value, key));
  else if (key == "sigma") c.hp.noise_sigma = parse_real(value, key);
  else if (key == "lambda") c.hp.tikhonov = parse_real(value, key);
  else if (key == "batch-size") c.hp.batch_size = static_cast<int>(parse_int(value, key));
  else if (key == "epochs") c.hp.epochs = static_cast<int>(parse_int(value, key));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "diagnostics") c.diagnostics = parse_bool(value, key);
  else if (key == "diag-layers") c.diag_layers = parse_int_list(value, key);
  else if (key == "train-limit") c.train_limit = parse_int(value, key);
  else if (key == "val-size") c.val_size = parse_int(value, key);
  else if (key == "out") c.out_dir = value;
  else if (key == "blob-classes") c.blob_classes = static_cast<int>(parse_int(value, key));
  else if (key == "blob-per-class") c.blob_per_class = static_cast<int>(parse_int(value, key));
  else if (key == "blob-dim") c.blob_dim = static_cast<int>(parse_int(value, key));
  else if (key == "blob-separation") c.blob_separation = parse_real(value, key);
  else throw ConfigError("config-error: unknown key '" + key + "'");
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("io-error: cannot open config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config-error: line " + std::to_string(lineno) +
                        " is not 'key = value'");
    apply_config_line(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

Split load_split(const RunConfig& config) {
  Dataset train, test;
  if (config.dataset == "blobs") {
    train = synthetic_blobs(config.blob_classes, config.blob_per_class, config.blob_dim,
                            config.blob_separation, config.seed);
    test = synthetic_blobs(config.blob_classes,
                           std::max(1, config.blob_per_class / 4), config.blob_dim,
                           config.blob_separation, config.seed + 0x7e57ULL);
  } else if (config.dataset == "mnist" || config.dataset == "fmnist") {
    train = load_idx(resolve_data_file(config.data_dir, "train-images-idx3-ubyte"),
                     resolve_data_file(config.data_dir, "train-labels-idx1-ubyte"));
    test = load_idx(resolve_data_file(config.data_dir, "t10k-images-idx3-ubyte"),
                    resolve_data_file(config.data_dir, "t10k-labels-idx1-ubyte"));
  } else if (config.dataset == "cifar10") {
    std::vector<std::string> paths;
    for (int i = 1; i <= 5; ++i)
      paths.push_back(
          resolve_data_file(config.data_dir, "data_batch_" + std::to_string(i) + ".bin"));
    train = load_cifar(paths, 10);
    test = load_cifar({resolve_data_file(config.data_dir, "test_batch.bin")}, 10);
  } else if (config.dataset == "cifar100") {
    train = load_cifar({resolve_data_file(config.data_dir, "train.bin")}, 100);
    test = load_cifar({resolve_data_file(config.data_dir, "test.bin")}, 100);
  } else {
    throw ConfigError("config-error: unknown dataset '" + config.dataset + "'");
  }

  if (config.train_limit > 0) train = train.head(config.train_limit);
  // Keep the class count consistent across splits even after truncation.
  int classes = std::max(train.num_classes, test.num_classes);
  train.num_classes = classes;
  test.num_classes = classes;

  Split split;
  if (config.val_size > 0) {
    RngStream split_rng(config.seed, kSplitTag);
    // Never let the validation split swallow a small training set.
    split = split_train_val(train, std::min(config.val_size, train.size() / 2),
                            split_rng);
  } else {
    split.train = std::move(train);
    split.validation.num_classes = classes;
    split.validation.inputs.resize(0, split.train.dim());
  }
  split.test = std::move(test);
  return split;
}

Network build_network(const RunConfig& config, Index input_dim, Index output_dim,
                      RngStreams& rngs) {
  ActivationKind hidden = config.activation == "linear"
                              ? ActivationKind::Linear
                              : (config.batchnorm ? ActivationKind::TanhBN
                                                  : ActivationKind::Tanh);
  std::vector<Index> dims(static_cast<std::size_t>(config.depth) + 1);
  dims[0] = input_dim;
  for (int l = 1; l < config.depth; ++l) dims[static_cast<std::size_t>(l)] = config.width;
  dims[static_cast<std::size_t>(config.depth)] = output_dim;

  Network net;
  for (int l = 1; l <= config.depth; ++l) {
    EncoderLayer enc;
    enc.W = orthogonal_init(dims[static_cast<std::size_t>(l)],
                            dims[static_cast<std::size_t>(l - 1)],
                            rngs.weights_forward);
    enc.activation = (l == config.depth) ? ActivationKind::Linear : hidden;
    net.encoders.push_back(std::move(enc));
  }
  for (int l = 1; l <= config.depth; ++l) {
    DecoderLayer dec;
    dec.B = uniform_init(dims[static_cast<std::size_t>(l - 1)],
                         dims[static_cast<std::size_t>(l)], -0.01, 0.01,
                         rngs.weights_feedback);
    dec.activation = (l == 1) ? ActivationKind::Linear : hidden;
    dec.trainable = trains_feedback(config.algorithm) && l >= 2;
    net.decoders.push_back(std::move(dec));
  }
  net.validate();
  return net;
}

double classification_error(const Network& net, const Dataset& ds, Index batch_size) {
  if (ds.size() == 0) return nan_value();
  const bool bn = uses_batchnorm(net);
  Index wrong = 0;
  for (auto [begin, count] : eval_chunks(ds.size(), batch_size, bn)) {
    Matrix batch = ds.inputs.middleRows(begin, count);
    BatchActivations acts = forward_pass(net, batch);
    const Matrix& logits = acts.h(net.depth());
    for (Index i = 0; i < count; ++i) {
      Index pred = 0;
      logits.row(i).maxCoeff(&pred);
      if (pred != ds.labels[static_cast<std::size_t>(begin + i)]) ++wrong;
    }
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(ds.size());
}

TrainResult train_model(const RunConfig& config, const Split& split) {
  config.validate();
  split.train.validate();
  const Hyperparams& hp = config.hp;

  RngStreams rngs(config.seed);
  TrainResult result{build_network(config, split.train.dim(),
                                   split.train.num_classes, rngs),
                     {}, 0, nan_value(), nan_value(), nan_value(), {}};
  Network& net = result.net;

  if (hp.epochs == 0) return result;

  pretrain_feedback(config.algorithm, net, split.train.inputs, hp, rngs,
                    &result.counters);

  std::vector<int> diag_layers = config.diag_layers;
  if (config.diagnostics && diag_layers.empty())
    for (int l = 2; l <= net.depth(); ++l) diag_layers.push_back(l);

  const Index n = split.train.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rngs.data_shuffle.engine());

    double ce_sum = 0.0;
    Index seen = 0;
    std::vector<double> local_sums(static_cast<std::size_t>(net.depth()), 0.0);
    bool have_locals = false;

    Index i = 0;
    while (i < n) {
      Index m = std::min<Index>(hp.batch_size, n - i);
      if (m < hp.batch_size && config.batchnorm) break;  // drop the remainder
      Matrix batch = gather_rows(split.train.inputs, order, i, m);
      std::vector<int> labels(static_cast<std::size_t>(m));
      for (Index j = 0; j < m; ++j)
        labels[static_cast<std::size_t>(j)] =
            split.train.labels[static_cast<std::size_t>(order[i + j])];

      StepMetrics sm = train_step(config.algorithm, net, batch, labels, hp, rngs,
                                  &result.counters);
      if (!net.weights_finite())
        throw std::runtime_error("nan-error: non-finite weights at epoch " +
                                 std::to_string(epoch));
      ce_sum += sm.ce_loss * static_cast<double>(m);
      if (!sm.local_losses.empty()) {
        have_locals = true;
        for (std::size_t l = 0; l < sm.local_losses.size(); ++l)
          local_sums[l] += sm.local_losses[l] * static_cast<double>(m);
      }
      seen += m;
      i += m;
    }
    if (seen == 0)
      throw std::runtime_error("nan-error: no full batch fits the training set");

    MetricsRow row;
    row.epoch = epoch;
    row.train_ce = ce_sum / static_cast<double>(seen);
    row.local_losses.assign(local_sums.size(), nan_value());
    if (have_locals)
      for (std::size_t l = 0; l < local_sums.size(); ++l)
        row.local_losses[l] = local_sums[l] / static_cast<double>(seen);
    row.val_error = classification_error(net, split.validation, hp.batch_size);
    row.test_error = classification_error(net, split.test, hp.batch_size);

    if (config.diagnostics) {
      Index probe = std::min<Index>(256, n);
      Matrix batch = split.train.inputs.topRows(probe);
      auto conds = measure_jacobian_conditions(net, batch, diag_layers);
      for (const auto& c : conds) {
        row.traces.push_back(c.trace);
        row.psd.push_back(c.psd_proportion);
      }
    }

    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.rows.push_back(row);

    double selector = std::isnan(row.val_error) ? row.test_error : row.val_error;
    if (selector < best) {
      best = selector;
      result.best_epoch = epoch;
      result.best_val_error = row.val_error;
      result.best_val_test_error = row.test_error;
    }
    result.final_test_error = row.test_error;
  }
  return result;
}

std::string metrics_header(const RunConfig& config) {
  std::string h = "epoch,train_ce,val_error,test_error";
  for (int l = 1; l <= config.depth; ++l) h += ",local_loss_" + std::to_string(l);
  if (config.diagnostics) {
    std::vector<int> layers = config.diag_layers;
    if (layers.empty())
      for (int l = 2; l <= config.depth; ++l) layers.push_back(l);
    for (int l : layers) h += ",trace_" + std::to_string(l);
    for (int l : layers) h += ",psd_" + std::to_string(l);
  }
  h += ",wall_seconds";
  return h;
}

std::string metrics_line(const MetricsRow& row, const RunConfig& config) {
  std::string s = std::to_string(row.epoch);
  s += "," + format_double(row.train_ce);
  s += "," + format_double(row.val_error);
  s += "," + format_double(row.test_error);
  for (double v : row.local_losses) s += "," + format_double(v);
  if (config.diagnostics) {
    for (double v : row.traces) s += "," + format_double(v);
    for (double v : row.psd) s += "," + format_double(v);
  }
  s += "," + format_double(row.wall_seconds);
  return s;
}

TrainResult run_train(const RunConfig& config) {
  config.validate();
  Split split = load_split(config);
  TrainResult result = train_model(config, split);

  fs::create_directories(config.out_dir);
  fs::path csv = fs::path(config.out_dir) / "metrics.csv";
  std::ofstream out(csv);
  if (!out) throw IoError("io-error: cannot write " + csv.string());
  out << metrics_header(config) << "\n";
  for (const auto& row : result.rows) out << metrics_line(row, config) << "\n";
  out.close();

  save_checkpoint((fs::path(config.out_dir) / "checkpoint.bin").string(), result.net);
  return result;
}

SweepResult run_sweep(const SweepConfig& config) {
  config.base.validate();
  const bool sweep_feedback = trains_feedback(config.base.algorithm);
  const double c_lrf = config.center_lr_forward.value_or(config.base.hp.lr_forward);
  const double c_beta = config.center_beta.value_or(config.base.hp.beta);
  const double c_lrb = config.center_lr_feedback.value_or(config.base.hp.lr_feedback);

  RngStreams rngs(config.base.seed);
  SweepResult result;
  result.histogram.assign(20, 0);

  for (int t = 0; t < config.trials; ++t) {
    SweepTrial trial;
    trial.trial = t;
    trial.values.push_back(
        sample_log_uniform(c_lrf, config.range_lo, config.range_hi, rngs.sweep));
    trial.values.push_back(
        sample_log_uniform(c_beta, config.range_lo, config.range_hi, rngs.sweep));
    if (sweep_feedback)
      trial.values.push_back(
          sample_log_uniform(c_lrb, config.range_lo, config.range_hi, rngs.sweep));

    RunConfig rc = config.base;
    rc.hp.lr_forward = trial.values[0];
    rc.hp.beta = trial.values[1];
    if (sweep_feedback) rc.hp.lr_feedback = trial.values[2];
    rc.seed = derive_seed(config.base.seed, static_cast<std::uint64_t>(t));

    try {
      Split split = load_split(rc);
      TrainResult tr = train_model(rc, split);
      trial.final_test_error = tr.final_test_error;
      trial.best_val_test_error = tr.best_val_test_error;
      double acc = 100.0 - trial.final_test_error;
      int bin = std::clamp(static_cast<int>(acc / 5.0), 0, 19);
      ++result.histogram[static_cast<std::size_t>(bin)];
    } catch (const std::exception&) {
      trial.failed = true;
      trial.final_test_error = nan_value();
      trial.best_val_test_error = nan_value();
    }
    result.trials.push_back(std::move(trial));
  }

  fs::create_directories(config.base.out_dir);
  fs::path csv = fs::path(config.base.out_dir) / "sweep.csv";
  std::ofstream out(csv);
  if (!out) throw IoError("io-error: cannot write " + csv.string());
  out << "trial,lr_forward,beta";
  if (sweep_feedback) out << ",lr_feedback";
  out << ",final_test_error,best_val_test_error,failed\n";
  for (const auto& tr : result.trials) {
    out << tr.trial;
    for (double v : tr.values) out << "," << format_double(v);
    out << "," << format_double(tr.final_test_error) << ","
        << format_double(tr.best_val_test_error) << "," << (tr.failed ? 1 : 0) << "\n";
  }
  out.close();

  fs::path hist = fs::path(config.base.out_dir) / "sweep_hist.csv";
  std::ofstream hout(hist);
  hout << "accuracy_lo,accuracy_hi,count\n";
  for (std::size_t b = 0; b < result.histogram.size(); ++b)
    hout << b * 5 << "," << (b + 1) * 5 << "," << result.histogram[b] << "\n";
  return result;
}

std::vector<JacobianCondition> run_diagnose(const std::string& checkpoint_path,
                                            const RunConfig& config,
                                            const std::vector<int>& layers) {
  Network net = load_checkpoint(checkpoint_path);
  Split split = load_split(config);
  Index probe = std::min<Index>(256, split.train.size());
  Matrix batch = split.train.inputs.topRows(probe);
  std::vector<int> use = layers;
  if (use.empty())
    for (int l = 1; l <= net.depth(); ++l) use.push_back(l);
  return measure_jacobian_conditions(net, batch, use);
}

std::vector<TimingEntry> run_timing(const std::vector<RunConfig>& configs,
                                    int repetitions) {
  if (repetitions < 1)
    throw ConfigError("config-error: timing needs >= 1 measured repetition");
  std::vector<TimingEntry> entries;
  double fwdtp_mean = nan_value();

  for (const auto& config : configs) {
    config.validate();
    Split split = load_split(config);
    RngStreams rngs(config.seed);
    Network net = build_network(config, split.train.dim(), split.train.num_classes, rngs);
    pretrain_feedback(config.algorithm, net, split.train.inputs, config.hp, rngs,
                      nullptr);

    const Index n = split.train.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    TimingEntry entry;
    entry.algorithm = config.algorithm;

    std::vector<double> secs;
    long long batches = 0;
    OpCounters counters;
    // One warmup epoch, then `repetitions` measured epochs.
    for (int epoch = 0; epoch <= repetitions; ++epoch) {
      auto t0 = std::chrono::steady_clock::now();
      std::iota(order.begin(), order.end(), Index{0});
      std::shuffle(order.begin(), order.end(), rngs.data_shuffle.engine());
      Index i = 0;
      while (i < n) {
        Index m = std::min<Index>(config.hp.batch_size, n - i);
        if (m < config.hp.batch_size && config.batchnorm) break;
        Matrix batch = gather_rows(split.train.inputs, order, i, m);
        std::vector<int> labels(static_cast<std::size_t>(m));
        for (Index j = 0; j < m; ++j)
          labels[static_cast<std::size_t>(j)] =
              split.train.labels[static_cast<std::size_t>(order[i + j])];
        train_step(config.algorithm, net, batch, labels, config.hp, rngs,
                   epoch == 0 ? &counters : nullptr);
        if (epoch == 0) ++batches;
        i += m;
      }
      if (epoch > 0)
        secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                     t0)
                           .count());
    }

    double mean = std::accumulate(secs.begin(), secs.end(), 0.0) /
                  static_cast<double>(secs.size());
    double var = 0.0;
    for (double s : secs) var += (s - mean) * (s - mean);
    entry.mean_seconds = mean;
    entry.std_seconds = secs.size() > 1
                            ? std::sqrt(var / static_cast<double>(secs.size() - 1))
                            : 0.0;
    entry.feedback_grad_evals_per_batch =
        batches > 0 ? counters.feedback_grad_evals / batches : 0;
    if (config.algorithm == AlgorithmKind::FWDTP) fwdtp_mean = mean;
    entries.push_back(entry);
  }

  for (auto& entry : entries)
    entry.ratio_to_fwdtp = entry.mean_seconds / fwdtp_mean;
  return entries;
}

}  // namespace tprop
