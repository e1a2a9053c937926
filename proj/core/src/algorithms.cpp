#include "tprop/algorithms.hpp"

#include <algorithm>
#include <stdexcept>

namespace tprop {

AlgorithmKind parse_algorithm(const std::string& name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "bp") return AlgorithmKind::BP;
  if (s == "fa") return AlgorithmKind::FA;
  if (s == "tp") return AlgorithmKind::TP;
  if (s == "dtp") return AlgorithmKind::DTP;
  if (s == "drl") return AlgorithmKind::DRL;
  if (s == "ldrl" || s == "l-drl") return AlgorithmKind::LDRL;
  if (s == "fwdtp" || s == "fw-dtp") return AlgorithmKind::FWDTP;
  throw std::invalid_argument("unknown algorithm: " + name);
}

std::string algorithm_name(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::BP: return "bp";
    case AlgorithmKind::FA: return "fa";
    case AlgorithmKind::TP: return "tp";
    case AlgorithmKind::DTP: return "dtp";
    case AlgorithmKind::DRL: return "drl";
    case AlgorithmKind::LDRL: return "ldrl";
    case AlgorithmKind::FWDTP: return "fwdtp";
  }
  return "?";
}

bool trains_feedback(AlgorithmKind kind) {
  return kind == AlgorithmKind::TP || kind == AlgorithmKind::DTP ||
         kind == AlgorithmKind::DRL || kind == AlgorithmKind::LDRL;
}

bool uses_targets(AlgorithmKind kind) {
  return kind != AlgorithmKind::BP && kind != AlgorithmKind::FA;
}

void Hyperparams::validate(bool batchnorm_active) const {
  if (!(lr_forward > 0)) throw std::invalid_argument("lr_forward must be > 0");
  if (lr_feedback < 0) throw std::invalid_argument("lr_feedback must be >= 0");
  if (!(beta > 0)) throw std::invalid_argument("beta must be > 0");
  if (feedback_reps < 0) throw std::invalid_argument("feedback_reps must be >= 0");
  if (noise_sigma < 0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (tikhonov < 0) throw std::invalid_argument("tikhonov must be >= 0");
  if (batch_size < 1 || (batchnorm_active && batch_size < 2))
    throw std::invalid_argument("batch_size too small");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

Matrix output_target(const Matrix& h_out, const std::vector<int>& labels, double beta) {
  Matrix p = softmax_rows(h_out);
  for (Index i = 0; i < p.rows(); ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= p.cols()) throw InvalidLabelError("output_target: label out of range");
    p(i, y) -= 1.0;
  }
  return h_out - beta * p;
}

void propagate_targets_dtp(PropagationState& state, const Network& net) {
  const int depth = net.depth();
  for (int l = depth - 1; l >= 1; --l) {
    const DecoderLayer& dec = net.decoders[static_cast<size_t>(l)];  // g_{l+1}
    Matrix g_tau = layer_forward(dec, state.target(l + 1));
    Matrix g_h = layer_forward(dec, state.acts.h(l + 1));
    // grouped so T_{l+1} == H_{l+1} cancels exactly and the fixed point
    // T_l == H_l holds at the bit level
    state.targets[static_cast<size_t>(l - 1)] = state.acts.h(l) + (g_tau - g_h);
  }
}

void propagate_targets_tp(PropagationState& state, const Network& net) {
  const int depth = net.depth();
  for (int l = depth - 1; l >= 1; --l) {
    const DecoderLayer& dec = net.decoders[static_cast<size_t>(l)];
    state.targets[static_cast<size_t>(l - 1)] = layer_forward(dec, state.target(l + 1));
  }
}

double local_loss(const Matrix& h, const Matrix& t) {
  if (h.rows() != t.rows() || h.cols() != t.cols())
    throw DimensionError("local_loss: shape mismatch");
  return (t - h).squaredNorm() / static_cast<double>(h.rows());
}

void forward_update(Network& net, const PropagationState& state, double lr,
                    OpCounters* counters) {
  const int depth = net.depth();
  const double m = static_cast<double>(state.acts.batch_size());
  for (int l = 1; l <= depth; ++l) {
    EncoderLayer& enc = net.encoders[static_cast<size_t>(l - 1)];
    const LayerEval& ev = state.acts.evals[static_cast<size_t>(l - 1)];
    Matrix dpre = (2.0 / m) * (ev.out - state.target(l)).cwiseProduct(
                                  activation_derivative(ev, enc.activation));
    if (counters) counters->forward_grad_evals++;
    if (lr != 0.0) enc.W.noalias() -= lr * (dpre.transpose() * state.acts.h(l - 1));
  }
}

void feedback_update_dtp(Network& net, const BatchActivations& acts, double lr,
                         double sigma, RngStream& noise, OpCounters* counters) {
  const int depth = net.depth();
  const double m = static_cast<double>(acts.batch_size());
  for (int l = 2; l <= depth; ++l) {
    DecoderLayer& dec = net.decoders[static_cast<size_t>(l - 1)];
    if (!dec.trainable) continue;
    const EncoderLayer& enc = net.encoders[static_cast<size_t>(l - 1)];
    Matrix r = acts.h(l - 1) + sigma * noise.gaussian_matrix(acts.batch_size(),
                                                            acts.h(l - 1).cols());
    LayerEval fe = eval_encoder(enc, r);
    LayerEval ge = eval_decoder(dec, fe.out);
    if (counters) counters->feedback_grad_evals++;
    Matrix dpre = (2.0 / m) * (ge.out - r).cwiseProduct(
                                  activation_derivative(ge, dec.activation));
    if (lr != 0.0) dec.B.noalias() -= lr * (dpre.transpose() * fe.out);
  }
}

void feedback_update_drl(Network& net, const BatchActivations& acts, double lr,
                         double sigma, double lambda, RngStream& noise,
                         OpCounters* counters) {
  const int depth = net.depth();
  const double m = static_cast<double>(acts.batch_size());
  for (int l = 2; l <= depth; ++l) {
    DecoderLayer& dec = net.decoders[static_cast<size_t>(l - 1)];
    if (!dec.trainable) continue;
    Matrix r = acts.h(l - 1) + sigma * noise.gaussian_matrix(acts.batch_size(),
                                                            acts.h(l - 1).cols());
    const Matrix r_in = r;
    for (int k = l; k <= depth; ++k)
      r = layer_forward(net.encoders[static_cast<size_t>(k - 1)], r);

    // reconstruct r_L back down to level l-1 through difference-corrected
    // decoders; only the last step (k = l-1) applies g_l, so only it carries
    // gradient w.r.t. Omega_l
    Matrix rec = r;
    for (int k = depth - 1; k >= l; --k) {
      const DecoderLayer& d_up = net.decoders[static_cast<size_t>(k)];  // g_{k+1}
      rec = layer_forward(d_up, rec) + acts.h(k) - layer_forward(d_up, acts.h(k + 1));
    }
    LayerEval ge_rec = eval_decoder(dec, rec);
    LayerEval ge_h = eval_decoder(dec, acts.h(l));
    if (counters) counters->feedback_grad_evals++;
    Matrix diff = ge_rec.out + acts.h(l - 1) - ge_h.out - r_in;
    Matrix d1 = (2.0 / m) * diff.cwiseProduct(activation_derivative(ge_rec, dec.activation));
    Matrix d2 = (2.0 / m) * diff.cwiseProduct(activation_derivative(ge_h, dec.activation));
    if (lr != 0.0) {
      Matrix grad = d1.transpose() * rec - d2.transpose() * acts.h(l);
      grad += 2.0 * lambda * dec.B;
      dec.B -= lr * grad;
    }
  }
}

void feedback_update_ldrl(Network& net, const BatchActivations& acts, double lr,
                          double sigma, RngStream& noise, OpCounters* counters) {
  const int depth = net.depth();
  const double m = static_cast<double>(acts.batch_size());
  for (int l = 2; l <= depth; ++l) {
    DecoderLayer& dec = net.decoders[static_cast<size_t>(l - 1)];
    if (!dec.trainable) continue;
    const EncoderLayer& enc = net.encoders[static_cast<size_t>(l - 1)];
    const Matrix& h_lo = acts.h(l - 1);
    const Matrix& h_hi = acts.h(l);
    Matrix eps = sigma * noise.gaussian_matrix(h_lo.rows(), h_lo.cols());
    Matrix eta = sigma * noise.gaussian_matrix(h_hi.rows(), h_hi.cols());

    Matrix r_hi = layer_forward(enc, h_lo + eps);
    Matrix s_hi = h_hi + eta;
    LayerEval ge_r = eval_decoder(dec, r_hi);
    LayerEval ge_s = eval_decoder(dec, s_hi);
    LayerEval ge_h = eval_decoder(dec, h_hi);
    if (counters) counters->feedback_grad_evals++;

    // loss = mean_i [ -(eps_i)^T (rrec_i - h_lo,i) + 1/2 ||srec_i - h_lo,i||^2 ]
    // with rrec = g(r_hi) + h_lo - g(h_hi), srec = g(s_hi) + h_lo - g(h_hi)
    Matrix d_rrec = (-1.0 / m) * eps;
    Matrix d_srec = (1.0 / m) * (ge_s.out - ge_h.out);
    Matrix p_r = d_rrec.cwiseProduct(activation_derivative(ge_r, dec.activation));
    Matrix p_s = d_srec.cwiseProduct(activation_derivative(ge_s, dec.activation));
    Matrix p_h = (-(d_rrec + d_srec)).cwiseProduct(activation_derivative(ge_h, dec.activation));
    if (lr != 0.0) {
      Matrix grad = p_r.transpose() * r_hi + p_s.transpose() * s_hi + p_h.transpose() * h_hi;
      dec.B -= lr * grad;
    }
  }
}

namespace {

/// Standard backprop step; with feedback_alignment the transposed forward
/// weights are replaced by the fixed decoder matrices on the backward path.
StepMetrics bp_step(Network& net, const Matrix& batch, const std::vector<int>& labels,
                    double lr, bool feedback_alignment, OpCounters* counters) {
  BatchActivations acts = forward_pass(net, batch);
  const int depth = net.depth();
  auto [ce, delta] = softmax_cross_entropy(acts.h(depth), labels);

  std::vector<Matrix> grads(static_cast<size_t>(depth));
  for (int l = depth; l >= 1; --l) {
    const EncoderLayer& enc = net.encoders[static_cast<size_t>(l - 1)];
    const LayerEval& ev = acts.evals[static_cast<size_t>(l - 1)];
    Matrix dpre = delta.cwiseProduct(activation_derivative(ev, enc.activation));
    grads[static_cast<size_t>(l - 1)] = dpre.transpose() * acts.h(l - 1);
    if (counters) counters->forward_grad_evals++;
    if (l > 1) {
      if (feedback_alignment)
        delta = dpre * net.decoders[static_cast<size_t>(l - 1)].B.transpose();
      else
        delta = dpre * enc.W;
    }
  }
  for (int l = 1; l <= depth; ++l)
    net.encoders[static_cast<size_t>(l - 1)].W -= lr * grads[static_cast<size_t>(l - 1)];

  StepMetrics metrics;
  metrics.ce_loss = ce;
  return metrics;
}

}  // namespace

StepMetrics train_step(AlgorithmKind kind, Network& net, const Matrix& batch,
                       const std::vector<int>& labels, const Hyperparams& hp,
                       RngStreams& rngs, OpCounters* counters) {
  if (kind == AlgorithmKind::BP || kind == AlgorithmKind::FA)
    return bp_step(net, batch, labels, hp.lr_forward, kind == AlgorithmKind::FA, counters);

  if (kind == AlgorithmKind::FWDTP) {
    for (const auto& d : net.decoders)
      if (d.trainable)
        throw std::invalid_argument("FW-DTP requires all decoders to be non-trainable");
  }

  PropagationState state;
  state.acts = forward_pass(net, batch);
  const int depth = net.depth();
  auto [ce, grad] = softmax_cross_entropy(state.acts.h(depth), labels);
  (void)grad;

  if (trains_feedback(kind)) {
    for (int j = 0; j < hp.feedback_reps; ++j) {
      switch (kind) {
        case AlgorithmKind::TP:
        case AlgorithmKind::DTP:
          feedback_update_dtp(net, state.acts, hp.lr_feedback, hp.noise_sigma, rngs.noise,
                              counters);
          break;
        case AlgorithmKind::DRL:
          feedback_update_drl(net, state.acts, hp.lr_feedback, hp.noise_sigma, hp.tikhonov,
                              rngs.noise, counters);
          break;
        case AlgorithmKind::LDRL:
          feedback_update_ldrl(net, state.acts, hp.lr_feedback, hp.noise_sigma, rngs.noise,
                               counters);
          break;
        default:
          break;
      }
    }
  }

  state.targets.resize(static_cast<size_t>(depth));
  state.targets.back() = output_target(state.acts.h(depth), labels, hp.beta);
  if (kind == AlgorithmKind::TP)
    propagate_targets_tp(state, net);
  else
    propagate_targets_dtp(state, net);

  StepMetrics metrics;
  metrics.ce_loss = ce;
  metrics.local_losses.reserve(static_cast<size_t>(depth));
  for (int l = 1; l <= depth; ++l)
    metrics.local_losses.push_back(local_loss(state.acts.h(l), state.target(l)));

  forward_update(net, state, hp.lr_forward, counters);
  return metrics;
}

void pretrain_feedback(AlgorithmKind kind, Network& net, const Matrix& inputs,
                       const Hyperparams& hp, RngStreams& rngs, OpCounters* counters) {
  if (kind != AlgorithmKind::DTP && kind != AlgorithmKind::DRL && kind != AlgorithmKind::LDRL)
    return;
  bool bn = false;
  for (const auto& e : net.encoders) bn |= e.activation == ActivationKind::TanhBN;
  for (const auto& d : net.decoders) bn |= d.activation == ActivationKind::TanhBN;

  const Index n = inputs.rows();
  const Index m = hp.batch_size;
  for (Index start = 0; start < n; start += m) {
    const Index size = std::min(m, n - start);
    if (bn && size < m) break;  // drop partial batch under batch norm
    BatchActivations acts = forward_pass(net, inputs.middleRows(start, size));
    for (int j = 0; j < hp.feedback_reps; ++j) {
      switch (kind) {
        case AlgorithmKind::DTP:
          feedback_update_dtp(net, acts, hp.lr_feedback, hp.noise_sigma, rngs.noise, counters);
          break;
        case AlgorithmKind::DRL:
          feedback_update_drl(net, acts, hp.lr_feedback, hp.noise_sigma, hp.tikhonov,
                              rngs.noise, counters);
          break;
        case AlgorithmKind::LDRL:
          feedback_update_ldrl(net, acts, hp.lr_feedback, hp.noise_sigma, rngs.noise, counters);
          break;
        default:
          break;
      }
    }
  }
}

}  // namespace tprop
