#pragma once

// Problem families: l2-regularized logistic regression over labeled data,
// quadratic sums (isotropic and diagonal), a synthetic linearly separable
// data generator, and a damped-Newton reference solver.

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "ciag/core.hpp"

namespace ciag {

// Dense labeled data: row i of `features` is x_i^T, labels are +-1.
struct LabeledDataset {
  Matrix features;  // m x d
  Vector labels;    // m entries in {-1, +1}

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index cols() const { return features.cols(); }

  void validate() const {
    if (features.rows() == 0 || features.cols() == 0)
      throw std::invalid_argument("LabeledDataset: empty feature matrix");
    if (labels.size() != features.rows())
      throw std::invalid_argument("LabeledDataset: label count != row count");
    if (!features.allFinite())
      throw std::invalid_argument("LabeledDataset: non-finite feature value");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
      if (labels[i] != 1.0 && labels[i] != -1.0)
        throw std::invalid_argument("LabeledDataset: label at row " +
                                    std::to_string(i) + " is not +-1");
  }
};

struct LogisticProblemConfig {
  double rho;  // loss scale; each component is (1/rho) log(1+e^{-y<x,theta>}) + ||theta||^2/2

  static LogisticProblemConfig defaults(Eigen::Index m) {
    return LogisticProblemConfig{1.0 / static_cast<double>(m)};
  }
};

namespace detail {

// sigma(-t) = 1/(1+e^t), evaluated without overflow on either tail.
inline double sigmoid_neg(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

// log(1 + e^{-t})
inline double log1p_exp_neg(double t) {
  if (t >= 0.0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

struct LogisticData {
  Matrix x;  // m x d
  Vector y;  // +-1
  double inv_rho;
};

class LogisticComponent final : public ComponentOracle {
 public:
  LogisticComponent(std::shared_ptr<const LogisticData> data, int row)
      : data_(std::move(data)), row_(row) {}

  Eigen::Index dim() const override { return data_->x.cols(); }

  // Margins go through the compensated dot: the plain length-d inner product
  // is the dominant noise source when gradient norms are driven toward 1e-10
  // on data where (1/rho) inflates every term by a factor of m.
  double value(const Eigen::Ref<const Vector>& theta) const override {
    const double t = data_->y[row_] * compensated_dot(data_->x.row(row_), theta);
    return data_->inv_rho * log1p_exp_neg(t) + 0.5 * theta.squaredNorm();
  }

  void gradient(const Eigen::Ref<const Vector>& theta,
                Eigen::Ref<Vector> out) const override {
    const double y = data_->y[row_];
    const double t = y * compensated_dot(data_->x.row(row_), theta);
    const double c = data_->inv_rho * y * sigmoid_neg(t);
    out = theta - c * data_->x.row(row_).transpose();
  }

  void hessian(const Eigen::Ref<const Vector>& theta,
               Eigen::Ref<Matrix> out) const override {
    const double t = data_->y[row_] * compensated_dot(data_->x.row(row_), theta);
    const double sn = sigmoid_neg(t);
    const double s = sn * (1.0 - sn);
    // Outer product first, scale second: keeps the matrix exactly symmetric.
    out.noalias() = data_->x.row(row_).transpose() * data_->x.row(row_);
    out *= data_->inv_rho * s;
    out.diagonal().array() += 1.0;
  }

 private:
  std::shared_ptr<const LogisticData> data_;
  int row_;
};

struct QuadraticData {
  Matrix centers;  // m x d
  Vector weights;  // positive
};

// f_i(theta) = (w_i/2) ||theta - c_i||^2
class QuadraticComponent final : public ComponentOracle {
 public:
  QuadraticComponent(std::shared_ptr<const QuadraticData> data, int row)
      : data_(std::move(data)), row_(row) {}

  Eigen::Index dim() const override { return data_->centers.cols(); }

  double value(const Eigen::Ref<const Vector>& theta) const override {
    return 0.5 * data_->weights[row_] *
           (theta - data_->centers.row(row_).transpose()).squaredNorm();
  }
  void gradient(const Eigen::Ref<const Vector>& theta,
                Eigen::Ref<Vector> out) const override {
    out = data_->weights[row_] *
          (theta - data_->centers.row(row_).transpose());
  }
  void hessian(const Eigen::Ref<const Vector>&,
               Eigen::Ref<Matrix> out) const override {
    out.setZero();
    out.diagonal().array() = data_->weights[row_];
  }

 private:
  std::shared_ptr<const QuadraticData> data_;
  int row_;
};

struct DiagQuadraticData {
  Matrix centers;  // m x d
  Matrix scales;   // m x d, positive entries
};

}  // namespace detail

// f(theta) = 1/2 (theta - c)^T diag(a) (theta - c).  Building block for
// quadratic sums with distinct mu and L.
class DiagonalQuadraticComponent final : public ComponentOracle {
 public:
  DiagonalQuadraticComponent(std::shared_ptr<const detail::DiagQuadraticData> data,
                             int row)
      : data_(std::move(data)), row_(row) {}

  Eigen::Index dim() const override { return data_->centers.cols(); }

  double value(const Eigen::Ref<const Vector>& theta) const override {
    const auto diff = theta - data_->centers.row(row_).transpose();
    return 0.5 * (data_->scales.row(row_).transpose().array() *
                  diff.array().square())
                     .sum();
  }
  void gradient(const Eigen::Ref<const Vector>& theta,
                Eigen::Ref<Vector> out) const override {
    out = data_->scales.row(row_).transpose().array() *
          (theta - data_->centers.row(row_).transpose()).array();
  }
  void hessian(const Eigen::Ref<const Vector>&,
               Eigen::Ref<Matrix> out) const override {
    out.setZero();
    out.diagonal() = data_->scales.row(row_).transpose();
  }

 private:
  std::shared_ptr<const detail::DiagQuadraticData> data_;
  int row_;
};

// Logistic regression as a finite sum.  Constants:
//   mu = m (each component carries its own ||theta||^2/2 term),
//   L  = (1/rho) ||sum_i x_i x_i^T||_2 + m   (spectral norm by power iteration),
//   L_{H,i} = (1/rho) ||x_i||^2.
inline FiniteSumProblem make_logistic_problem(const LabeledDataset& data,
                                              const LogisticProblemConfig& cfg) {
  data.validate();
  if (!(cfg.rho > 0.0) || !std::isfinite(cfg.rho))
    throw std::invalid_argument("make_logistic_problem: rho must be positive");

  const Eigen::Index m = data.rows();
  auto shared = std::make_shared<detail::LogisticData>();
  shared->x = data.features;
  shared->y = data.labels;
  shared->inv_rho = 1.0 / cfg.rho;

  Matrix gram = data.features.transpose() * data.features;
  const double gram_norm = spectral_norm(gram);
  const double mu = static_cast<double>(m);
  const double L = shared->inv_rho * gram_norm + mu;

  std::vector<std::shared_ptr<const ComponentOracle>> comps;
  std::vector<double> lh;
  comps.reserve(m);
  lh.reserve(m);
  for (int i = 0; i < m; ++i) {
    comps.push_back(std::make_shared<detail::LogisticComponent>(shared, i));
    lh.push_back(shared->inv_rho * data.features.row(i).squaredNorm());
  }
  return FiniteSumProblem(std::move(comps), mu, L, std::move(lh));
}

inline FiniteSumProblem make_logistic_problem(const LabeledDataset& data) {
  return make_logistic_problem(data, LogisticProblemConfig::defaults(data.rows()));
}

// Error of a Hessian-extrapolated gradient aggregate, in difference form:
//
//   sum_i [ g_i(p_i) + h_i(p_i)(theta - p_i) - g_i(theta) ],
//
// where p_i = expansion_points.row(i).  Computing this as
// (aggregate - full_gradient) subtracts two sums whose entries carry factors
// of 1/rho, so everything below roughly 1e-11 is rounding noise.  Here the
// per-component difference is reduced analytically first: the ||theta||^2/2
// terms cancel exactly, and the loss difference collapses (via
// sigma(a') - sigma(a) = sigma(a) sigma(-a') expm1(a'-a)) to
//
//   (1/rho) sigma(a) sigma(-a') [ -y (expm1(-y delta) + y delta)
//                                 - sigma(-a') delta expm1(-y delta) ] x_i,
//
// with a = -y x_i^T theta, a' = a - y delta, delta = x_i^T (p_i - theta).
// Both bracketed terms are O(delta^2) -- the Taylor remainder scale -- so the
// result keeps full relative accuracy however small the true error is.
inline Vector logistic_surrogate_residual(const LabeledDataset& data,
                                          const LogisticProblemConfig& cfg,
                                          const Matrix& expansion_points,
                                          const Eigen::Ref<const Vector>& theta) {
  data.validate();
  if (!(cfg.rho > 0.0) || !std::isfinite(cfg.rho))
    throw std::invalid_argument("logistic_surrogate_residual: rho must be positive");
  if (expansion_points.rows() != data.rows() ||
      expansion_points.cols() != data.cols() || theta.size() != data.cols())
    throw std::invalid_argument("logistic_surrogate_residual: shape mismatch");

  const double inv_rho = 1.0 / cfg.rho;
  CompensatedVector acc(theta.size());
  Vector diff(theta.size());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    diff = expansion_points.row(i).transpose() - theta;
    if (diff.isZero(0.0)) continue;  // expanded exactly here: zero by design
    const double y = data.labels[i];
    const double tc = compensated_dot(data.features.row(i), theta);
    const double delta = compensated_dot(data.features.row(i), diff);
    const double sig_a = detail::sigmoid_neg(y * tc);              // sigma(a)
    const double sig_na = detail::sigmoid_neg(-y * (tc + delta));  // sigma(-a')
    const double em = std::expm1(-y * delta);
    const double rem = em + y * delta;  // expm1(-y delta) - (-y delta)
    const double inner =
        sig_a * sig_na * (-y * rem - sig_na * delta * em);
    acc.add((inv_rho * inner) * data.features.row(i).transpose());
  }
  return acc.value();
}

// Sum of isotropic quadratics (w_i/2)||theta - c_i||^2.  Here mu = L = sum w_i
// and the minimizer is the weighted centroid of the rows of `centers`.
inline FiniteSumProblem make_quadratic_problem(const Matrix& centers,
                                               const Vector& weights = Vector()) {
  if (centers.rows() == 0 || centers.cols() == 0)
    throw std::invalid_argument("make_quadratic_problem: empty centers");
  auto shared = std::make_shared<detail::QuadraticData>();
  shared->centers = centers;
  shared->weights =
      weights.size() == 0 ? Vector::Ones(centers.rows()) : weights;
  if (shared->weights.size() != centers.rows())
    throw std::invalid_argument("make_quadratic_problem: weight count != row count");
  double total = 0.0;
  for (Eigen::Index i = 0; i < shared->weights.size(); ++i) {
    if (!(shared->weights[i] > 0.0))
      throw std::invalid_argument("make_quadratic_problem: weights must be positive");
    total += shared->weights[i];
  }
  std::vector<std::shared_ptr<const ComponentOracle>> comps;
  comps.reserve(centers.rows());
  for (int i = 0; i < centers.rows(); ++i)
    comps.push_back(std::make_shared<detail::QuadraticComponent>(shared, i));
  return FiniteSumProblem(std::move(comps), total, total,
                          std::vector<double>(centers.rows(), 0.0));
}

// Sum of diagonal quadratics with per-component scale rows.  With
// D = sum_i diag(a_i), mu = min_j D_jj and L = max_j D_jj exactly.
inline FiniteSumProblem make_diagonal_quadratic_problem(const Matrix& centers,
                                                        const Matrix& scales) {
  if (centers.rows() == 0 || centers.cols() == 0)
    throw std::invalid_argument("make_diagonal_quadratic_problem: empty centers");
  if (scales.rows() != centers.rows() || scales.cols() != centers.cols())
    throw std::invalid_argument(
        "make_diagonal_quadratic_problem: scales shape must match centers");
  if (!(scales.minCoeff() > 0.0))
    throw std::invalid_argument(
        "make_diagonal_quadratic_problem: scales must be positive");
  auto shared = std::make_shared<detail::DiagQuadraticData>();
  shared->centers = centers;
  shared->scales = scales;
  const Vector total = scales.colwise().sum().transpose();
  std::vector<std::shared_ptr<const ComponentOracle>> comps;
  comps.reserve(centers.rows());
  for (int i = 0; i < centers.rows(); ++i)
    comps.push_back(std::make_shared<DiagonalQuadraticComponent>(shared, i));
  return FiniteSumProblem(std::move(comps), total.minCoeff(), total.maxCoeff(),
                          std::vector<double>(centers.rows(), 0.0));
}

// Linearly separable classification data: theta_true ~ U[-1,1)^d, features
// x_i = [u_i; 1] with u_i ~ U[-1,1)^{d-1}, labels y_i = sign(<x_i, theta_true>)
// with sign(0) = +1.  Deterministic in (d, m, seed); draw order is theta_true
// first, then one feature row at a time.
inline LabeledDataset generate_synthetic_svm(int d, int m, std::uint64_t seed,
                                             Vector* theta_true_out = nullptr) {
  if (d < 1 || m < 1)
    throw std::invalid_argument("generate_synthetic_svm: need d >= 1 and m >= 1");
  UniformRng rng(seed);
  Vector theta_true(d);
  for (int j = 0; j < d; ++j) theta_true[j] = rng.symmetric();

  LabeledDataset data;
  data.features.resize(m, d);
  data.labels.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d - 1; ++j) data.features(i, j) = rng.symmetric();
    data.features(i, d - 1) = 1.0;
    const double margin = data.features.row(i).dot(theta_true);
    data.labels[i] = margin >= 0.0 ? 1.0 : -1.0;
  }
  if (theta_true_out) *theta_true_out = theta_true;
  return data;
}

// High-accuracy minimizer by damped Newton: full Newton step, halving the
// step on objective increase, until ||grad F|| <= tol.  Throws
// ConvergenceFailure (carrying the best iterate) if tol is not reached within
// max_iters iterations.
inline Vector solve_reference(const FiniteSumProblem& p, const Vector& theta0,
                              double tol = 1e-13, int max_iters = 200) {
  detail::check_dim(p, theta0, "solve_reference");
  if (!(tol >= 0.0))
    throw std::invalid_argument("solve_reference: tol must be >= 0");

  Vector theta = theta0;
  Vector grad = full_gradient(p, theta);
  double gn = grad.norm();
  Vector best = theta;
  double best_gn = gn;
  double f_cur = objective_value(p, theta);

  for (int it = 0; it < max_iters && gn > tol; ++it) {
    const Matrix hess = full_hessian(p, theta);
    const Vector step = hess.ldlt().solve(grad);
    double alpha = 1.0;
    bool moved = false;
    while (alpha > 1e-14) {
      const Vector trial = theta - alpha * step;
      const double f_trial = objective_value(p, trial);
      if (f_trial <= f_cur) {
        theta = trial;
        f_cur = f_trial;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;  // no descent direction left at this precision
    grad = full_gradient(p, theta);
    gn = grad.norm();
    if (gn < best_gn) {
      best = theta;
      best_gn = gn;
    }
  }
  if (gn > tol) {
    char msg[128];
    std::snprintf(msg, sizeof(msg),
                  "solve_reference: gradient norm %.3e after damped Newton did "
                  "not reach tolerance %.3e",
                  best_gn, tol);
    throw ConvergenceFailure(msg, best, best_gn);
  }
  return theta;
}

}  // namespace ciag
