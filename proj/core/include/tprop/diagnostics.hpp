#pragma once

#include "tprop/network.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace tprop {

struct JacobianCondition {
  int layer = 0;
  double trace = 0.0;
  double psd_proportion = 0.0;  // in [0, 1]
  int samples = 0;
};

/// Shared per-batch context for Jacobian measurements: one forward pass plus
/// the decoder evaluations g_l(H_l) whose batch statistics the Jacobians need.
struct JacobianContext {
  BatchActivations acts;
  std::vector<LayerEval> decoder_evals;  // decoder_evals[l-1] = g_l evaluated at H_l

  JacobianContext(const Network& net, const Matrix& batch);
};

/// J_{f_l} J_{g_l} for one sample, encoder Jacobian at h_{l-1}, decoder at h_l.
Matrix jacobian_product(const Network& net, int l, const JacobianContext& ctx, int sample);

/// Mean over the batch of tr(J_{f_l} J_{g_l}), product never materialized.
double trace_condition(const Network& net, int l, const JacobianContext& ctx);

/// Per sample the proportion of eigenvalues of (M + M^T)/2 that are
/// >= -1e-10, M = J_{f_l} J_{g_l}; averaged over the batch.
double psd_proportion(const Network& net, int l, const JacobianContext& ctx);

std::vector<JacobianCondition> measure_jacobian_conditions(const Network& net,
                                                           const Matrix& batch,
                                                           const std::vector<int>& layers);

/// Monte-Carlo estimate of E[eps^T M eps] over n standard-Gaussian draws,
/// returned with its standard error. The identity says the mean equals tr(M).
std::pair<double, double> monte_carlo_trace_check(const Matrix& m, int n, RngStream& rng);

/// On a linear invertible chain with exact-inverse decoders, compares the DTP
/// target displacement tau_l - h_l against -beta * (W_L ... W_{l+1})^{-1} grad
/// for every l, returning the max absolute elementwise deviation.
double gn_direction_check(const std::vector<Matrix>& weights, const Vector& x, int label,
                          double beta);

/// Strictly monotone scalar map on [lo, hi], invertible by bisection.
class ScalarBijection {
 public:
  ScalarBijection(std::function<double(double)> f, double lo, double hi);

  double operator()(double x) const { return f_(x); }
  double inverse(double y) const;  // bisection to 1e-12
  double lo() const { return lo_; }
  double hi() const { return hi_; }

 private:
  std::function<double(double)> f_;
  double lo_, hi_;
  bool increasing_;
};

/// Verifies the closed form of the difference-correction decoder on 1-D
/// bijections: the exact feedback built from bisection inverses must agree
/// with the difference-corrected target g(tau) + h - g(f(h)) at every probe.
/// Returns the max absolute deviation.
double exact_feedback_form_check(const ScalarBijection& f_nu, const ScalarBijection& g_mu,
                                 const ScalarBijection& psi,
                                 const std::vector<double>& probes);

}  // namespace tprop
