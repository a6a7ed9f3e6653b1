#pragma once

// Shared numerical plumbing: compensated accumulation, a deterministic
// uniform RNG, and a power-iteration spectral norm for symmetric matrices.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace ciag {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Kahan-Babuska (Neumaier) compensated scalar sum.  Keeps the rounding error
// of a length-m sum at a few ulps of the result instead of growing with m.
class CompensatedScalar {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Element-wise compensated sum of fixed-size vectors.  Used for aggregate
// gradients, where the per-component terms are large and mostly cancel.
class CompensatedVector {
 public:
  explicit CompensatedVector(Eigen::Index n)
      : sum_(Vector::Zero(n)), comp_(Vector::Zero(n)) {}

  void add(const Eigen::Ref<const Vector>& x) {
    for (Eigen::Index j = 0; j < sum_.size(); ++j) {
      const double s = sum_[j];
      const double v = x[j];
      const double t = s + v;
      comp_[j] += (std::abs(s) >= std::abs(v)) ? (s - t) + v : (v - t) + s;
      sum_[j] = t;
    }
  }
  Vector value() const { return sum_ + comp_; }
  Eigen::Index size() const { return sum_.size(); }

 private:
  Vector sum_;
  Vector comp_;
};

// Compensated inner product: Kahan-Babuska over the term products.  The
// rounding of each product survives, but the summation error stays at a few
// ulps of the result instead of growing with the vector length -- worth it
// where a length-d dot feeds an exponential (logistic margins).
template <class DerivedA, class DerivedB>
double compensated_dot(const Eigen::MatrixBase<DerivedA>& a,
                       const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("compensated_dot: size mismatch");
  CompensatedScalar acc;
  for (Eigen::Index j = 0; j < a.size(); ++j)
    acc.add(a.derived()(j) * b.derived()(j));
  return acc.value();
}

// Uniform draws built directly on the mt19937_64 bit stream so that results
// do not depend on the standard library's distribution implementations.
class UniformRng {
 public:
  explicit UniformRng(std::uint64_t seed) : gen_(seed) {}

  // [0, 1)
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  // [-1, 1)
  double symmetric() { return 2.0 * unit() - 1.0; }
  // [lo, hi)
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }
  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Largest |eigenvalue| of a symmetric matrix by power iteration with a
// deterministic start vector.  Returns the last estimate if the relative
// tolerance is not met within max_iter iterations.
inline double spectral_norm(const Eigen::Ref<const Matrix>& a,
                            double rel_tol = 1e-9, int max_iter = 500) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("spectral_norm: matrix must be square");
  const Eigen::Index n = a.rows();
  if (n == 0) return 0.0;

  UniformRng rng(0x5eed1e5);
  Vector v(n);
  for (Eigen::Index j = 0; j < n; ++j) v[j] = rng.symmetric();
  const double vn = v.norm();
  if (vn == 0.0) v.setOnes();  // unreachable with this generator, but cheap
  v /= v.norm();

  double lambda = 0.0;
  Vector av(n);
  for (int it = 0; it < max_iter; ++it) {
    av.noalias() = a * v;
    const double norm = av.norm();
    if (norm == 0.0) return 0.0;  // start vector sits in the kernel
    const double prev = lambda;
    lambda = norm;
    v = av / norm;
    if (it > 0 && std::abs(lambda - prev) <= rel_tol * lambda) break;
  }
  return lambda;
}

}  // namespace ciag
