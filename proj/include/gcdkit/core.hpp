#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcdkit {

// Dense row-major storage, one item per row. Values are stored in 32-bit
// floats on disk; every reduction (dot products, norms, distances) runs in
// 64-bit.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using VecF = Vector<float>;
using VecD = Vector<double>;
using Index = Eigen::Index;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Squared Euclidean distance, accumulated serially in double over dims
// ascending. The accumulation order is part of the reproducibility contract:
// an independent reimplementation following it reproduces identical bits.
template <typename DerivedA, typename DerivedB>
double squared_distance(const Eigen::MatrixBase<DerivedA>& a,
                        const Eigen::MatrixBase<DerivedB>& b) {
  double acc = 0.0;
  for (Index d = 0; d < a.size(); ++d) {
    const double diff = static_cast<double>(a(d)) - static_cast<double>(b(d));
    acc += diff * diff;
  }
  return acc;
}

// Euclidean norm with serial double accumulation, dims ascending.
template <typename Derived>
double row_norm(const Eigen::MatrixBase<Derived>& v) {
  double acc = 0.0;
  for (Index d = 0; d < v.size(); ++d) {
    const double x = static_cast<double>(v(d));
    acc += x * x;
  }
  return std::sqrt(acc);
}

// Deterministic random stream. All randomness in the library flows through
// this class so that one seed pins every draw. Protocol: uniforms are the top
// 53 bits of mt19937_64 scaled to [0,1); gaussians come from basic Box-Muller
// over consecutive uniforms, second value cached.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  double next_uniform() { return static_cast<double>(gen_() >> 11) * kInv53; }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_uniform();  // (0,1], keeps log finite
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform index in [0, n). n must be positive.
  Index next_index(Index n) {
    const auto idx = static_cast<Index>(next_uniform() * static_cast<double>(n));
    return idx < n ? idx : n - 1;
  }

 private:
  static constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates shuffle driven by an RngStream, back-to-front.
template <typename T>
void shuffle(std::vector<T>& items, RngStream& rng) {
  for (Index i = static_cast<Index>(items.size()) - 1; i > 0; --i) {
    const Index j = rng.next_index(i + 1);
    std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(j)]);
  }
}

}  // namespace gcdkit
