#include "tprop/algorithms.hpp"
#include "tprop/experiments.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace tprop;

RunConfig small_config(AlgorithmKind kind) {
  RunConfig config;
  config.algorithm = kind;
  config.depth = 4;
  config.width = 64;
  config.batchnorm = true;
  config.hp.batch_size = 64;
  config.hp.lr_forward = 0.01;
  config.hp.lr_feedback = trains_feedback(kind) ? 0.001 : 0.0;
  config.blob_dim = 32;
  config.blob_per_class = 64;
  return config;
}

void bench_train_step(benchmark::State& state, AlgorithmKind kind) {
  RunConfig config = small_config(kind);
  Dataset ds = synthetic_blobs(config.blob_classes, config.blob_per_class,
                               config.blob_dim, config.blob_separation, 7);
  RngStreams rngs(7);
  Network net = build_network(config, ds.dim(), ds.num_classes, rngs);
  Matrix batch = ds.inputs.topRows(config.hp.batch_size);
  std::vector<int> labels(ds.labels.begin(), ds.labels.begin() + config.hp.batch_size);
  for (auto _ : state) {
    StepMetrics m = train_step(kind, net, batch, labels, config.hp, rngs);
    benchmark::DoNotOptimize(m.ce_loss);
  }
}

}  // namespace

BENCHMARK_CAPTURE(bench_train_step, bp, tprop::AlgorithmKind::BP);
BENCHMARK_CAPTURE(bench_train_step, fa, tprop::AlgorithmKind::FA);
BENCHMARK_CAPTURE(bench_train_step, dtp, tprop::AlgorithmKind::DTP);
BENCHMARK_CAPTURE(bench_train_step, drl, tprop::AlgorithmKind::DRL);
BENCHMARK_CAPTURE(bench_train_step, ldrl, tprop::AlgorithmKind::LDRL);
BENCHMARK_CAPTURE(bench_train_step, fwdtp, tprop::AlgorithmKind::FWDTP);

BENCHMARK_MAIN();
