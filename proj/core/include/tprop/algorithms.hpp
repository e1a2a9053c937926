#pragma once

#include "tprop/network.hpp"

#include <string>
#include <vector>

namespace tprop {

enum class AlgorithmKind { BP, FA, TP, DTP, DRL, LDRL, FWDTP };

AlgorithmKind parse_algorithm(const std::string& name);
std::string algorithm_name(AlgorithmKind kind);

/// True for the kinds whose decoders are trained with a reconstruction-style
/// loss (TP uses the plain reconstruction loss of DTP).
bool trains_feedback(AlgorithmKind kind);
bool uses_targets(AlgorithmKind kind);

struct Hyperparams {
  double lr_forward = 0.1;   // alpha_f
  double lr_feedback = 0.0;  // alpha_b
  double beta = 0.01;        // output-target stepsize
  int feedback_reps = 5;     // N_b
  double noise_sigma = 0.01; // sigma
  double tikhonov = 0.0;     // lambda, DRL only
  int batch_size = 256;      // M
  int epochs = 100;

  void validate(bool batchnorm_active) const;
};

/// Per-batch activations plus the per-layer targets T_1..T_L.
struct PropagationState {
  BatchActivations acts;
  std::vector<Matrix> targets;  // targets[l-1] is T_l

  const Matrix& target(int l) const { return targets[l - 1]; }
};

struct StepMetrics {
  double ce_loss = 0.0;
  std::vector<double> local_losses;  // per layer, empty for BP/FA
};

/// Cheap exact operation counters for the efficiency comparison.
struct OpCounters {
  long long feedback_grad_evals = 0;  // decoder-gradient evaluations
  long long forward_grad_evals = 0;
};

/// tau_L = h_L - beta * (softmax(h_L) - onehot), row-wise (per-sample CE
/// gradient, so the target does not depend on the batch size).
Matrix output_target(const Matrix& h_out, const std::vector<int>& labels, double beta);

/// DTP: T_l = g_{l+1}(T_{l+1}) + H_l - g_{l+1}(H_{l+1}), descending from T_L.
void propagate_targets_dtp(PropagationState& state, const Network& net);

/// Vanilla TP: T_l = g_{l+1}(T_{l+1}).
void propagate_targets_tp(PropagationState& state, const Network& net);

/// Mean over the batch of ||tau_l - h_l||^2 (targets treated as constants).
double local_loss(const Matrix& h, const Matrix& t);

/// One SGD step on every encoder: W_l -= lr * grad of local_loss, analytic
/// through the activation (frozen batch-norm statistics when active).
void forward_update(Network& net, const PropagationState& state, double lr,
                    OpCounters* counters = nullptr);

/// Original reconstruction loss (TP/DTP): per trainable decoder l = 2..L,
/// noise the input activation, reconstruct through g_l(f_l(.)), step Omega_l.
void feedback_update_dtp(Network& net, const BatchActivations& acts, double lr,
                         double sigma, RngStream& noise, OpCounters* counters = nullptr);

/// Difference reconstruction loss: noise at l-1 is propagated to the top and
/// reconstructed through difference-corrected decoders; Tikhonov term on
/// Omega_l.
void feedback_update_drl(Network& net, const BatchActivations& acts, double lr,
                         double sigma, double lambda, RngStream& noise,
                         OpCounters* counters = nullptr);

/// Local difference reconstruction loss.
void feedback_update_ldrl(Network& net, const BatchActivations& acts, double lr,
                          double sigma, RngStream& noise, OpCounters* counters = nullptr);

/// One full training step on a batch (forward pass, feedback updates, target
/// computation, forward update; or plain BP/FA).
StepMetrics train_step(AlgorithmKind kind, Network& net, const Matrix& batch,
                       const std::vector<int>& labels, const Hyperparams& hp,
                       RngStreams& rngs, OpCounters* counters = nullptr);

/// One epoch of feedback-only updates over the data, in natural order
/// (consumes only the noise stream). No-op for kinds without feedback training.
void pretrain_feedback(AlgorithmKind kind, Network& net, const Matrix& inputs,
                       const Hyperparams& hp, RngStreams& rngs,
                       OpCounters* counters = nullptr);

}  // namespace tprop
