#include "tprop/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace tprop {

RngStream::RngStream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  engine_.seed(seq);
}

double RngStream::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

double RngStream::gaussian() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

Matrix RngStream::gaussian_matrix(Index rows, Index cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(engine_);
  return m;
}

Matrix RngStream::uniform_matrix(Index rows, Index cols, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("uniform_matrix: lo must be < hi");
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(engine_);
  return m;
}

namespace {
constexpr std::uint64_t kForwardTag = 0x666f7277;   // "forw"
constexpr std::uint64_t kFeedbackTag = 0x66656564;  // "feed"
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;     // "nois"
constexpr std::uint64_t kShuffleTag = 0x73687566;   // "shuf"
constexpr std::uint64_t kSweepTag = 0x73776565;     // "swee"
}  // namespace

RngStreams::RngStreams(std::uint64_t seed)
    : weights_forward(seed, kForwardTag),
      weights_feedback(seed, kFeedbackTag),
      noise(seed, kNoiseTag),
      data_shuffle(seed, kShuffleTag),
      sweep(seed, kSweepTag) {}

Matrix orthogonal_init(Index rows, Index cols, RngStream& rng) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("orthogonal_init: empty shape");
  const Index big = std::max(rows, cols);
  const Index small = std::min(rows, cols);
  Matrix g = rng.gaussian_matrix(big, small);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Index j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  if (rows <= cols) return q.transpose();
  return q;
}

Matrix uniform_init(Index rows, Index cols, double lo, double hi, RngStream& rng) {
  return rng.uniform_matrix(rows, cols, lo, hi);
}

std::vector<double> symmetric_eigenvalues(const Matrix& s) {
  if (s.rows() != s.cols()) throw DimensionError("symmetric_eigenvalues: matrix not square");
  Matrix sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::EigenvaluesOnly);
  const Vector& ev = solver.eigenvalues();
  return std::vector<double>(ev.data(), ev.data() + ev.size());
}

double trace_product(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows() || a.rows() != b.cols())
    throw DimensionError("trace_product: inner dimensions do not match");
  return a.cwiseProduct(b.transpose()).sum();
}

}  // namespace tprop
