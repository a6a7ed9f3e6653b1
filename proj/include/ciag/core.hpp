#pragma once

// Core abstractions for finite sums F(theta) = sum_{i=1..m} f_i(theta):
// per-component oracles, the assembled problem with its curvature constants,
// and exact full-batch evaluations used by baselines and diagnostics.

#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ciag/linalg.hpp"

namespace ciag {

// An iterate or update stopped being finite.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// An iterative solver exhausted its budget.  Carries the best iterate seen so
// callers can degrade gracefully.
class ConvergenceFailure : public std::runtime_error {
 public:
  ConvergenceFailure(const std::string& what, Vector best, double grad_norm)
      : std::runtime_error(what),
        best_iterate(std::move(best)),
        best_grad_norm(grad_norm) {}
  Vector best_iterate;
  double best_grad_norm;
};

// The aggregate curvature matrix handed to a linear solve was numerically
// singular.
class SingularSystemError : public std::runtime_error {
 public:
  explicit SingularSystemError(const std::string& what)
      : std::runtime_error(what) {}
};

// One term f_i of a finite sum.  Implementations must be deterministic pure
// functions of theta and must produce exactly symmetric Hessians.
class ComponentOracle {
 public:
  virtual ~ComponentOracle() = default;

  virtual Eigen::Index dim() const = 0;
  virtual double value(const Eigen::Ref<const Vector>& theta) const = 0;
  virtual void gradient(const Eigen::Ref<const Vector>& theta,
                        Eigen::Ref<Vector> out) const = 0;
  virtual void hessian(const Eigen::Ref<const Vector>& theta,
                       Eigen::Ref<Matrix> out) const = 0;

  Vector gradient(const Eigen::Ref<const Vector>& theta) const {
    Vector g(dim());
    gradient(theta, g);
    return g;
  }
  Matrix hessian(const Eigen::Ref<const Vector>& theta) const {
    Matrix h(dim(), dim());
    hessian(theta, h);
    return h;
  }
};

// Q = L/mu and Q_H = L/L_H.  Q_H is +infinity when every component has a
// constant Hessian (L_H = 0).
struct ConditionNumbers {
  double Q = 1.0;
  double Q_H = std::numeric_limits<double>::infinity();

  bool curvature_free() const { return !std::isfinite(Q_H); }
};

// A finite sum together with its strong convexity constant mu, smoothness
// constant L, and per-component Hessian Lipschitz constants.  Instances are
// immutable after construction and safe to share across threads.
class FiniteSumProblem {
 public:
  FiniteSumProblem(std::vector<std::shared_ptr<const ComponentOracle>> components,
                   double mu, double L, std::vector<double> hess_lipschitz)
      : components_(std::move(components)),
        mu_(mu),
        L_(L),
        lh_(std::move(hess_lipschitz)) {
    if (components_.empty())
      throw std::invalid_argument("FiniteSumProblem: no components");
    dim_ = components_.front()->dim();
    for (const auto& c : components_) {
      if (!c) throw std::invalid_argument("FiniteSumProblem: null component");
      if (c->dim() != dim_)
        throw std::invalid_argument("FiniteSumProblem: component dimensions differ");
    }
    if (!(mu_ > 0.0) || !std::isfinite(mu_))
      throw std::invalid_argument("FiniteSumProblem: mu must be positive");
    if (!(L_ >= mu_) || !std::isfinite(L_))
      throw std::invalid_argument("FiniteSumProblem: need mu <= L < inf");
    if (lh_.size() != components_.size())
      throw std::invalid_argument(
          "FiniteSumProblem: one Hessian Lipschitz constant per component required");
    lh_total_ = 0.0;
    for (double v : lh_) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw std::invalid_argument(
            "FiniteSumProblem: Hessian Lipschitz constants must be finite and >= 0");
      lh_total_ += v;
    }
  }

  Eigen::Index dim() const { return dim_; }
  int size() const { return static_cast<int>(components_.size()); }
  const ComponentOracle& component(int i) const { return *components_.at(i); }

  double mu() const { return mu_; }
  double L() const { return L_; }
  double hess_lipschitz(int i) const { return lh_.at(i); }
  double hess_lipschitz_total() const { return lh_total_; }

  ConditionNumbers condition_numbers() const {
    ConditionNumbers cn;
    cn.Q = L_ / mu_;
    cn.Q_H = lh_total_ > 0.0 ? L_ / lh_total_
                             : std::numeric_limits<double>::infinity();
    return cn;
  }

 private:
  std::vector<std::shared_ptr<const ComponentOracle>> components_;
  double mu_;
  double L_;
  std::vector<double> lh_;
  double lh_total_ = 0.0;
  Eigen::Index dim_ = 0;
};

// One measurement row of an optimizer run.  k counts component accesses, so
// effective_passes = k/m.  Optional fields are absent where the method does
// not define them (e.g. no surrogate for plain gradient descent).
struct TraceRecord {
  long k = 0;
  double effective_passes = 0.0;
  std::optional<double> objective_gap;
  double grad_norm = 0.0;
  std::optional<double> surrogate_error;
  std::optional<double> error_bound;
  double step_size = 0.0;
  double wall_time_s = 0.0;
};

namespace detail {
inline void check_dim(const FiniteSumProblem& p,
                      const Eigen::Ref<const Vector>& theta,
                      const char* where) {
  if (theta.size() != p.dim())
    throw std::invalid_argument(std::string(where) + ": theta has size " +
                                std::to_string(theta.size()) + ", expected " +
                                std::to_string(p.dim()));
}
}  // namespace detail

// F(theta), accumulated component by component in ascending index order with
// compensated summation; bit-reproducible across calls.
inline double objective_value(const FiniteSumProblem& p,
                              const Eigen::Ref<const Vector>& theta) {
  detail::check_dim(p, theta, "objective_value");
  CompensatedScalar acc;
  for (int i = 0; i < p.size(); ++i) acc.add(p.component(i).value(theta));
  return acc.value();
}

// grad F(theta): compensated sum of per-component gradients in ascending
// index order.  Throws DivergenceError if any component returns a non-finite
// gradient.
inline Vector full_gradient(const FiniteSumProblem& p,
                            const Eigen::Ref<const Vector>& theta) {
  detail::check_dim(p, theta, "full_gradient");
  CompensatedVector acc(p.dim());
  Vector g(p.dim());
  for (int i = 0; i < p.size(); ++i) {
    p.component(i).gradient(theta, g);
    if (!g.allFinite())
      throw DivergenceError("full_gradient: component " + std::to_string(i) +
                            " returned a non-finite gradient");
    acc.add(g);
  }
  return acc.value();
}

// grad^2 F(theta), plain ascending-order sum.  Symmetric because every
// component Hessian is.
inline Matrix full_hessian(const FiniteSumProblem& p,
                           const Eigen::Ref<const Vector>& theta) {
  detail::check_dim(p, theta, "full_hessian");
  Matrix acc = Matrix::Zero(p.dim(), p.dim());
  Matrix h(p.dim(), p.dim());
  for (int i = 0; i < p.size(); ++i) {
    p.component(i).hessian(theta, h);
    if (!h.allFinite())
      throw DivergenceError("full_hessian: component " + std::to_string(i) +
                            " returned a non-finite Hessian");
    acc += h;
  }
  return acc;
}

}  // namespace ciag
