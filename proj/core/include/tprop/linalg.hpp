#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace tprop {

// Dense double-precision matrices/vectors used throughout. Row h-vectors are
// stored as rows of an M x n batch matrix (M = batch size).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A named, independently seeded random stream. Drawing from one stream never
/// advances another, which is what makes run trajectories reproducible when an
/// algorithm consumes noise that another algorithm does not.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t tag);

  double uniform(double lo, double hi);
  double gaussian();

  Matrix gaussian_matrix(Index rows, Index cols);
  Matrix uniform_matrix(Index rows, Index cols, double lo, double hi);

  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// The five streams every experiment owns: forward-weight init, feedback-weight
/// init, reconstruction noise, data shuffling, and hyperparameter sampling.
struct RngStreams {
  RngStream weights_forward;
  RngStream weights_feedback;
  RngStream noise;
  RngStream data_shuffle;
  RngStream sweep;

  explicit RngStreams(std::uint64_t seed);
};

/// Haar-ish random orthogonal matrix via QR of a standard-normal draw with the
/// sign of R's diagonal folded into Q. When rows <= cols the rows are
/// orthonormal, otherwise the columns are.
Matrix orthogonal_init(Index rows, Index cols, RngStream& rng);

/// Entries iid uniform on [lo, hi). Throws std::invalid_argument if lo >= hi.
Matrix uniform_init(Index rows, Index cols, double lo, double hi, RngStream& rng);

/// Eigenvalues of the symmetric part (S + S^T)/2, ascending.
std::vector<double> symmetric_eigenvalues(const Matrix& s);

/// tr(A * B) as sum_ij A_ij * B_ji, without forming the product.
double trace_product(const Matrix& a, const Matrix& b);

}  // namespace tprop
