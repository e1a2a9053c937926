#pragma once

#include "tprop/linalg.hpp"

#include <string>
#include <utility>
#include <vector>

namespace tprop {

enum class ActivationKind : std::uint8_t {
  Linear = 0,
  Tanh = 1,
  TanhBN = 2,  // tanh followed by fixed batch normalization (gamma=1, delta=0)
};

struct DegenerateBatchError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct MissingContextError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InvalidLabelError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Encoder f_l: h_l = sigma(W h_{l-1}), W is n_l x n_{l-1}.
struct EncoderLayer {
  Matrix W;
  ActivationKind activation = ActivationKind::Tanh;
};

/// Decoder g_l: maps layer-l space back to layer-(l-1) space, B is n_{l-1} x n_l.
/// When trainable is false the weights stay bit-identical for the whole run.
struct DecoderLayer {
  Matrix B;
  ActivationKind activation = ActivationKind::Tanh;
  bool trainable = false;
};

/// One batched layer evaluation with everything the analytic gradients need.
struct LayerEval {
  Matrix pre;      // M x n, W h per row
  Matrix act;      // sigma(pre) before batch norm (== pre for linear)
  Matrix out;      // after batch norm when active, else act
  Vector bn_scale; // per-dimension 1/sqrt(var + eps); size 0 unless TanhBN
};

struct Network {
  std::vector<EncoderLayer> encoders;
  std::vector<DecoderLayer> decoders;  // decoders[l-1] pairs with encoders[l-1]

  int depth() const { return static_cast<int>(encoders.size()); }
  Index input_dim() const { return encoders.front().W.cols(); }
  Index output_dim() const { return encoders.back().W.rows(); }
  void validate() const;  // width chaining, finite weights
  bool weights_finite() const;
};

/// Activations H_0..H_L for one batch; h(0) is the input batch.
struct BatchActivations {
  Matrix input;
  std::vector<LayerEval> evals;  // evals[l-1] is layer l

  const Matrix& h(int l) const { return l == 0 ? input : evals[l - 1].out; }
  Index batch_size() const { return input.rows(); }
};

/// Column-standardize a batch: mean 0, unit variance, gamma=1 delta=0.
/// Constant columns come out as exact zeros. Throws on single-row batches.
Matrix fixed_batch_norm(const Matrix& batch);

LayerEval eval_layer(const Matrix& w, ActivationKind kind, const Matrix& input);
LayerEval eval_encoder(const EncoderLayer& layer, const Matrix& input);
LayerEval eval_decoder(const DecoderLayer& layer, const Matrix& input);

inline Matrix layer_forward(const EncoderLayer& layer, const Matrix& input) {
  return eval_encoder(layer, input).out;
}
inline Matrix layer_forward(const DecoderLayer& layer, const Matrix& input) {
  return eval_decoder(layer, input).out;
}

BatchActivations forward_pass(const Network& net, const Matrix& input);

/// Elementwise d out / d pre, including the frozen 1/std column scaling when
/// batch norm is active. Shape matches ev.out.
Matrix activation_derivative(const LayerEval& ev, ActivationKind kind);

/// Jacobian of one layer at a single input point: diag(sigma'(W h)) * W, with
/// the frozen batch-norm scaling applied when the layer uses TanhBN. For a
/// TanhBN layer `bn_scale` must come from a batched evaluation at this layer.
Matrix layer_jacobian(const Matrix& w, ActivationKind kind, const Vector& input,
                      const Vector* bn_scale = nullptr);
Matrix layer_jacobian(const EncoderLayer& layer, const Vector& input,
                      const Vector* bn_scale = nullptr);
Matrix layer_jacobian(const DecoderLayer& layer, const Vector& input,
                      const Vector* bn_scale = nullptr);

/// Mean over the batch of -log softmax(logit)[label], with max-subtraction.
/// The gradient is (softmax - onehot) / M, i.e. d loss / d logits.
std::pair<double, Matrix> softmax_cross_entropy(const Matrix& logits,
                                                const std::vector<int>& labels);

/// Row-wise softmax probabilities (stable).
Matrix softmax_rows(const Matrix& logits);

// Checkpoint container: magic "TPROP1", u32 LE layer count, then per layer
// (u32 rows, u32 cols, activation tag byte, row-major f64 LE entries),
// encoders first, decoders second. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const Network& net);
Network load_checkpoint(const std::string& path);

}  // namespace tprop
