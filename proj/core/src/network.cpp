#include "tprop/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace tprop {

namespace {
constexpr double kBnEps = 1e-8;
constexpr char kMagic[6] = {'T', 'P', 'R', 'O', 'P', '1'};

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian host");
}  // namespace

void Network::validate() const {
  if (encoders.empty()) throw std::invalid_argument("network has no layers");
  if (decoders.size() != encoders.size())
    throw DimensionError("encoder/decoder counts differ");
  for (size_t i = 1; i < encoders.size(); ++i) {
    if (encoders[i].W.cols() != encoders[i - 1].W.rows())
      throw DimensionError("encoder widths do not chain at layer " + std::to_string(i + 1));
  }
  for (size_t i = 0; i < decoders.size(); ++i) {
    if (decoders[i].B.rows() != encoders[i].W.cols() ||
        decoders[i].B.cols() != encoders[i].W.rows())
      throw DimensionError("decoder shape mismatch at layer " + std::to_string(i + 1));
  }
  if (!weights_finite()) throw std::invalid_argument("network weights contain NaN/Inf");
}

bool Network::weights_finite() const {
  for (const auto& e : encoders)
    if (!e.W.allFinite()) return false;
  for (const auto& d : decoders)
    if (!d.B.allFinite()) return false;
  return true;
}

Matrix fixed_batch_norm(const Matrix& batch) {
  const Index m = batch.rows();
  if (m < 2) throw DegenerateBatchError("fixed_batch_norm needs a batch of >= 2 rows");
  Matrix out(m, batch.cols());
  for (Index j = 0; j < batch.cols(); ++j) {
    const double mean = batch.col(j).mean();
    const double var = (batch.col(j).array() - mean).square().sum() / static_cast<double>(m);
    out.col(j) = (batch.col(j).array() - mean) / std::sqrt(var + kBnEps);
  }
  return out;
}

LayerEval eval_layer(const Matrix& w, ActivationKind kind, const Matrix& input) {
  if (input.cols() != w.cols())
    throw DimensionError("layer input width mismatch");
  LayerEval ev;
  ev.pre = input * w.transpose();
  switch (kind) {
    case ActivationKind::Linear:
      ev.act = ev.pre;
      ev.out = ev.pre;
      break;
    case ActivationKind::Tanh:
      ev.act = ev.pre.array().tanh();
      ev.out = ev.act;
      break;
    case ActivationKind::TanhBN: {
      const Index m = input.rows();
      if (m < 2) throw DegenerateBatchError("TanhBN layer needs a batch of >= 2 rows");
      ev.act = ev.pre.array().tanh();
      ev.out.resize(m, ev.act.cols());
      ev.bn_scale.resize(ev.act.cols());
      for (Index j = 0; j < ev.act.cols(); ++j) {
        const double mean = ev.act.col(j).mean();
        const double var =
            (ev.act.col(j).array() - mean).square().sum() / static_cast<double>(m);
        const double scale = 1.0 / std::sqrt(var + kBnEps);
        ev.bn_scale(j) = scale;
        ev.out.col(j) = (ev.act.col(j).array() - mean) * scale;
      }
      break;
    }
  }
  return ev;
}

LayerEval eval_encoder(const EncoderLayer& layer, const Matrix& input) {
  return eval_layer(layer.W, layer.activation, input);
}

LayerEval eval_decoder(const DecoderLayer& layer, const Matrix& input) {
  return eval_layer(layer.B, layer.activation, input);
}

BatchActivations forward_pass(const Network& net, const Matrix& input) {
  BatchActivations acts;
  acts.input = input;
  acts.evals.reserve(net.encoders.size());
  const Matrix* cur = &acts.input;
  for (const auto& layer : net.encoders) {
    acts.evals.push_back(eval_encoder(layer, *cur));
    cur = &acts.evals.back().out;
  }
  return acts;
}

Matrix activation_derivative(const LayerEval& ev, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Linear:
      return Matrix::Ones(ev.pre.rows(), ev.pre.cols());
    case ActivationKind::Tanh:
      return (1.0 - ev.act.array().square()).matrix();
    case ActivationKind::TanhBN: {
      Matrix d = (1.0 - ev.act.array().square()).matrix();
      d.array().rowwise() *= ev.bn_scale.transpose().array();
      return d;
    }
  }
  throw std::logic_error("unknown activation kind");
}

Matrix layer_jacobian(const Matrix& w, ActivationKind kind, const Vector& input,
                      const Vector* bn_scale) {
  if (input.size() != w.cols()) throw DimensionError("layer_jacobian: input dim mismatch");
  Vector pre = w * input;
  Vector d;
  switch (kind) {
    case ActivationKind::Linear:
      return w;
    case ActivationKind::Tanh:
      d = (1.0 - pre.array().tanh().square()).matrix();
      break;
    case ActivationKind::TanhBN: {
      if (bn_scale == nullptr)
        throw MissingContextError("TanhBN jacobian needs batch statistics");
      d = (1.0 - pre.array().tanh().square()).matrix().cwiseProduct(*bn_scale);
      break;
    }
  }
  return d.asDiagonal() * w;
}

Matrix layer_jacobian(const EncoderLayer& layer, const Vector& input, const Vector* bn_scale) {
  return layer_jacobian(layer.W, layer.activation, input, bn_scale);
}

Matrix layer_jacobian(const DecoderLayer& layer, const Vector& input, const Vector* bn_scale) {
  return layer_jacobian(layer.B, layer.activation, input, bn_scale);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

std::pair<double, Matrix> softmax_cross_entropy(const Matrix& logits,
                                                const std::vector<int>& labels) {
  const Index m = logits.rows();
  const Index k = logits.cols();
  if (static_cast<Index>(labels.size()) != m)
    throw DimensionError("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw InvalidLabelError("label out of range");

  double loss = 0.0;
  Matrix grad(m, k);
  for (Index i = 0; i < m; ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd shifted = logits.row(i).array() - mx;
    const double lse = std::log(shifted.array().exp().sum());
    loss += lse - shifted(labels[i]);
    grad.row(i) = (shifted.array() - lse).exp();
    grad(i, labels[i]) -= 1.0;
  }
  loss /= static_cast<double>(m);
  grad /= static_cast<double>(m);
  return {loss, grad};
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_layer(std::ostream& os, const Matrix& w, ActivationKind kind) {
  write_u32(os, static_cast<std::uint32_t>(w.rows()));
  write_u32(os, static_cast<std::uint32_t>(w.cols()));
  const char tag = static_cast<char>(kind);
  os.write(&tag, 1);
  // row-major little-endian doubles; host is little-endian (asserted below)
  for (Index i = 0; i < w.rows(); ++i)
    os.write(reinterpret_cast<const char*>(w.row(i).eval().data()),
             static_cast<std::streamsize>(sizeof(double) * w.cols()));
}

std::pair<Matrix, ActivationKind> read_layer(std::istream& is) {
  const std::uint32_t rows = read_u32(is);
  const std::uint32_t cols = read_u32(is);
  char tag = 0;
  is.read(&tag, 1);
  if (tag < 0 || tag > 2) throw std::runtime_error("checkpoint: bad activation tag");
  Matrix w(rows, cols);
  std::vector<double> row(cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(double) * cols));
    for (std::uint32_t j = 0; j < cols; ++j) w(i, j) = row[j];
  }
  if (!is) throw std::runtime_error("checkpoint: truncated layer data");
  return {std::move(w), static_cast<ActivationKind>(tag)};
}

}  // namespace

void save_checkpoint(const std::string& path, const Network& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, static_cast<std::uint32_t>(net.encoders.size()));
  for (const auto& e : net.encoders) write_layer(os, e.W, e.activation);
  for (const auto& d : net.decoders) write_layer(os, d.B, d.activation);
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[6];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t count = read_u32(is);
  Network net;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [w, kind] = read_layer(is);
    net.encoders.push_back({std::move(w), kind});
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [b, kind] = read_layer(is);
    net.decoders.push_back({std::move(b), kind, false});
  }
  net.validate();
  return net;
}

}  // namespace tprop
