#include "tprop/diagnostics.hpp"

#include <Eigen/LU>

#include <cmath>
#include <stdexcept>

namespace tprop {

namespace {
constexpr double kPsdTol = -1e-10;

struct SampleDerivs {
  Vector enc;  // sigma' at encoder pre-activation, incl. frozen BN scale
  Vector dec;
};

SampleDerivs sample_derivs(const Network& net, int l, const JacobianContext& ctx, int sample) {
  const auto& enc = net.encoders[static_cast<size_t>(l - 1)];
  const auto& dec = net.decoders[static_cast<size_t>(l - 1)];
  const LayerEval& fe = ctx.acts.evals[static_cast<size_t>(l - 1)];
  const LayerEval& ge = ctx.decoder_evals[static_cast<size_t>(l - 1)];
  SampleDerivs d;
  auto deriv_row = [](const LayerEval& ev, ActivationKind kind, int i) -> Vector {
    switch (kind) {
      case ActivationKind::Linear:
        return Vector::Ones(ev.pre.cols());
      case ActivationKind::Tanh:
        return (1.0 - ev.act.row(i).array().square()).matrix().transpose();
      case ActivationKind::TanhBN:
        return (1.0 - ev.act.row(i).array().square()).matrix().transpose().cwiseProduct(
            ev.bn_scale);
    }
    throw std::logic_error("unknown activation kind");
  };
  d.enc = deriv_row(fe, enc.activation, sample);
  d.dec = deriv_row(ge, dec.activation, sample);
  return d;
}

}  // namespace

JacobianContext::JacobianContext(const Network& net, const Matrix& batch)
    : acts(forward_pass(net, batch)) {
  decoder_evals.reserve(net.decoders.size());
  for (int l = 1; l <= net.depth(); ++l)
    decoder_evals.push_back(eval_decoder(net.decoders[static_cast<size_t>(l - 1)], acts.h(l)));
}

Matrix jacobian_product(const Network& net, int l, const JacobianContext& ctx, int sample) {
  if (l < 1 || l > net.depth()) throw std::invalid_argument("layer index out of range");
  const SampleDerivs d = sample_derivs(net, l, ctx, sample);
  const Matrix& w = net.encoders[static_cast<size_t>(l - 1)].W;
  const Matrix& b = net.decoders[static_cast<size_t>(l - 1)].B;
  // (D_e W)(D_d B), n_l x n_l
  return d.enc.asDiagonal() * (w * (d.dec.asDiagonal() * b));
}

double trace_condition(const Network& net, int l, const JacobianContext& ctx) {
  if (l < 1 || l > net.depth()) throw std::invalid_argument("layer index out of range");
  const Index m = ctx.acts.batch_size();
  if (m == 0) throw std::invalid_argument("empty batch");
  const Matrix& w = net.encoders[static_cast<size_t>(l - 1)].W;
  const Matrix& b = net.decoders[static_cast<size_t>(l - 1)].B;
  // tr(J_f J_g) = d_enc^T (W .* B^T) d_dec
  const Matrix c = w.cwiseProduct(b.transpose());
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const SampleDerivs d = sample_derivs(net, l, ctx, i);
    total += d.enc.dot(c * d.dec);
  }
  return total / static_cast<double>(m);
}

double psd_proportion(const Network& net, int l, const JacobianContext& ctx) {
  const Index m = ctx.acts.batch_size();
  if (m == 0) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    Matrix prod = jacobian_product(net, l, ctx, i);
    std::vector<double> ev = symmetric_eigenvalues(prod);
    int nonneg = 0;
    for (double v : ev)
      if (v >= kPsdTol) ++nonneg;
    total += static_cast<double>(nonneg) / static_cast<double>(ev.size());
  }
  return total / static_cast<double>(m);
}

std::vector<JacobianCondition> measure_jacobian_conditions(const Network& net,
                                                           const Matrix& batch,
                                                           const std::vector<int>& layers) {
  JacobianContext ctx(net, batch);
  std::vector<JacobianCondition> out;
  for (int l : layers) {
    JacobianCondition c;
    c.layer = l;
    c.trace = trace_condition(net, l, ctx);
    c.psd_proportion = psd_proportion(net, l, ctx);
    c.samples = static_cast<int>(batch.rows());
    out.push_back(c);
  }
  return out;
}

std::pair<double, double> monte_carlo_trace_check(const Matrix& m, int n, RngStream& rng) {
  if (m.rows() != m.cols()) throw DimensionError("monte_carlo_trace_check: matrix not square");
  if (n < 2) throw std::invalid_argument("need at least 2 draws");
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    Vector eps = rng.gaussian_matrix(m.rows(), 1);
    const double q = eps.dot(m * eps);
    sum += q;
    sumsq += q * q;
  }
  const double mean = sum / n;
  const double var = (sumsq - n * mean * mean) / (n - 1);
  return {mean, std::sqrt(var / n)};
}

double gn_direction_check(const std::vector<Matrix>& weights, const Vector& x, int label,
                          double beta) {
  const int depth = static_cast<int>(weights.size());
  std::vector<Matrix> inverses;
  for (const Matrix& w : weights) {
    if (w.rows() != w.cols()) throw DimensionError("gn_direction_check: weights must be square");
    Eigen::FullPivLU<Matrix> lu(w);
    if (!lu.isInvertible()) throw std::invalid_argument("gn_direction_check: singular weight");
    inverses.push_back(lu.inverse());
  }

  // forward chain
  std::vector<Vector> h(static_cast<size_t>(depth) + 1);
  h[0] = x;
  for (int l = 1; l <= depth; ++l)
    h[static_cast<size_t>(l)] = weights[static_cast<size_t>(l - 1)] * h[static_cast<size_t>(l - 1)];

  // per-sample CE gradient at the output
  Matrix logits = h.back().transpose();
  Matrix p = softmax_rows(logits);
  p(0, label) -= 1.0;
  Vector grad = p.row(0).transpose();

  // DTP targets with exact-inverse linear decoders
  std::vector<Vector> tau(static_cast<size_t>(depth) + 1);
  tau[static_cast<size_t>(depth)] = h.back() - beta * grad;
  for (int l = depth - 1; l >= 1; --l) {
    const Matrix& binv = inverses[static_cast<size_t>(l)];  // decoder for layer l+1
    tau[static_cast<size_t>(l)] =
        binv * tau[static_cast<size_t>(l + 1)] + h[static_cast<size_t>(l)] -
        binv * h[static_cast<size_t>(l + 1)];
  }

  double max_dev = 0.0;
  for (int l = 1; l <= depth; ++l) {
    Vector expected = -beta * grad;
    for (int k = depth; k > l; --k) expected = inverses[static_cast<size_t>(k - 1)] * expected;
    const Vector dev = (tau[static_cast<size_t>(l)] - h[static_cast<size_t>(l)]) - expected;
    max_dev = std::max(max_dev, dev.cwiseAbs().maxCoeff());
  }
  return max_dev;
}

ScalarBijection::ScalarBijection(std::function<double(double)> f, double lo, double hi)
    : f_(std::move(f)), lo_(lo), hi_(hi) {
  if (!(lo < hi)) throw std::invalid_argument("ScalarBijection: empty interval");
  increasing_ = f_(hi) > f_(lo);
  // monotonicity spot check on a coarse grid
  constexpr int kGrid = 64;
  double prev = f_(lo);
  for (int i = 1; i <= kGrid; ++i) {
    const double xi = lo + (hi - lo) * i / kGrid;
    const double fi = f_(xi);
    if (increasing_ ? fi <= prev : fi >= prev)
      throw std::invalid_argument("ScalarBijection: function not strictly monotone");
    prev = fi;
  }
}

double ScalarBijection::inverse(double y) const {
  double a = lo_, b = hi_;
  double fa = f_(a), fb = f_(b);
  const double ylo = increasing_ ? fa : fb;
  const double yhi = increasing_ ? fb : fa;
  if (y < ylo - 1e-9 || y > yhi + 1e-9)
    throw std::invalid_argument("ScalarBijection::inverse: value outside range");
  for (int i = 0; i < 200 && (b - a) > 1e-12; ++i) {
    const double mid = 0.5 * (a + b);
    const double fm = f_(mid);
    if ((fm < y) == increasing_)
      a = mid;
    else
      b = mid;
  }
  return 0.5 * (a + b);
}

double exact_feedback_form_check(const ScalarBijection& f_nu, const ScalarBijection& g_mu,
                                 const ScalarBijection& psi,
                                 const std::vector<double>& probes) {
  double max_dev = 0.0;
  for (double h_prev : probes) {
    const double h = f_nu(h_prev);
    const double tau = psi(h);
    const double w = g_mu(tau);
    // exact decoder tail: id + f_nu^{-1} o psi^{-1} o g_mu^{-1} - g_mu o psi^{-1} o g_mu^{-1}
    const double mid = psi.inverse(g_mu.inverse(w));
    const double exact = w + f_nu.inverse(mid) - g_mu(mid);
    // difference-corrected DTP target through g_mu alone
    const double reference = g_mu(tau) + h_prev - g_mu(h);
    max_dev = std::max(max_dev, std::abs(exact - reference));
  }
  return max_dev;
}

}  // namespace tprop
