#pragma once

// Incremental solvers for finite sums: CIAG (curvature-aided incremental
// aggregated gradient), IAG, IG, full-gradient descent, and an experimental
// aggregated-Newton variant, plus the run() driver that handles selection,
// step-size schedules, tracing, and stopping.

#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ciag/core.hpp"
#include "ciag/theory.hpp"

namespace ciag {

enum class Method { ciag, iag, ig, fg, newton_agg };
enum class InitMode { cold, warm };
enum class StopReason { grad_tol, max_iters, diverged };

// ---------------------------------------------------------------------------
// Step-size schedules and component selection
// ---------------------------------------------------------------------------

struct StepSizeSchedule {
  enum class Kind { constant, vanishing, adaptive_ramp };
  Kind kind = Kind::constant;
  double gamma = 0.0;  // constant value, or adaptive start
  double ramp = 2.0;   // adaptive growth factor, > 1

  static StepSizeSchedule constant(double g) {
    if (!(g > 0.0) || !std::isfinite(g))
      throw std::invalid_argument("StepSizeSchedule: constant gamma must be positive");
    StepSizeSchedule s;
    s.kind = Kind::constant;
    s.gamma = g;
    return s;
  }
  // gamma at access number k (1-based) is 1 / (ceil(k/m) * L)
  static StepSizeSchedule vanishing() {
    StepSizeSchedule s;
    s.kind = Kind::vanishing;
    return s;
  }
  static StepSizeSchedule adaptive_ramp(double gamma_start, double r = 2.0) {
    if (!(gamma_start > 0.0) || !std::isfinite(gamma_start))
      throw std::invalid_argument("StepSizeSchedule: adaptive start must be positive");
    if (!(r > 1.0))
      throw std::invalid_argument("StepSizeSchedule: ramp factor must exceed 1");
    StepSizeSchedule s;
    s.kind = Kind::adaptive_ramp;
    s.gamma = gamma_start;
    s.ramp = r;
    return s;
  }
};

// Deterministic cyclic selection: access number k (1-based) touches component
// k mod m (0-based).  A minibatch of size B consumes the next B entries of
// the same stream; every component recurs within a window of
// K = m (B = 1) or K = ceil(m/B)*B accesses.
struct SelectionRule {
  long batch = 1;

  static SelectionRule cyclic() { return SelectionRule{1}; }
  static SelectionRule cyclic_minibatch(long B) {
    if (B < 1) throw std::invalid_argument("SelectionRule: batch must be >= 1");
    return SelectionRule{B};
  }

  long delay_bound(long m) const {
    if (batch <= 1) return m;
    return ((m + batch - 1) / batch) * batch;
  }

  // Indices for the iteration that starts after `consumed` accesses.
  void next_indices(long consumed, long m, std::vector<long>& out) const {
    out.clear();
    for (long j = 1; j <= batch; ++j) out.push_back((consumed + j) % m);
  }
};

// ---------------------------------------------------------------------------
// CIAG state and steps
// ---------------------------------------------------------------------------

// Aggregates are kept in surrogate form: `surrogate` stores b + H*theta
// directly (the vector the update multiplies by gamma), and every event --
// component swap or iterate move -- touches it through small deltas.  This
// avoids the cancellation noise of reconstructing b + H*theta from separately
// drifting accumulators, which matters when driving gradients to 1e-10 and
// below.  The classical b is recoverable as surrogate - H*theta.
struct CiagState {
  Vector theta;
  Vector theta_comp;       // Kahan compensation for the iterate updates
  Vector surrogate;        // b + H*theta for the current theta
  Vector surrogate_comp;   // Kahan compensation for the surrogate deltas
  Matrix hessian_agg;      // H
  Matrix stored_iterates;  // row i = iterate at the last access of component i
  std::vector<char> visited;
  long visited_count = 0;
  long k = 0;  // component accesses consumed (warm init counts one pass)

  Vector aggregate_b() const { return surrogate - hessian_agg * theta; }
};

// Cold init mirrors the literal aggregates b = 0, H = m*I: each unvisited
// component contributes the placeholder pair (0, I), swapped out for the real
// gradient/Hessian on first access.  Warm init spends one full pass at theta1
// so that surrogate == full_gradient(theta1) bitwise from the start.
inline CiagState ciag_init(const FiniteSumProblem& p, const Vector& theta1,
                           InitMode mode) {
  detail::check_dim(p, theta1, "ciag_init");
  if (!theta1.allFinite())
    throw std::invalid_argument("ciag_init: theta1 must be finite");
  const Eigen::Index d = p.dim();
  const long m = static_cast<long>(p.size());

  CiagState s;
  s.theta = theta1;
  s.theta_comp = Vector::Zero(d);
  s.surrogate_comp = Vector::Zero(d);
  s.stored_iterates = theta1.transpose().replicate(m, 1);
  s.visited.assign(static_cast<std::size_t>(m), 0);
  if (mode == InitMode::cold) {
    s.hessian_agg = Matrix::Identity(d, d) * static_cast<double>(m);
    s.surrogate = static_cast<double>(m) * theta1;
  } else {
    s.hessian_agg = full_hessian(p, theta1);
    s.surrogate = full_gradient(p, theta1);
    for (auto& v : s.visited) v = 1;
    s.visited_count = m;
    s.k = m;
  }
  return s;
}

namespace detail {

// Kahan step: folds delta into the surrogate and carries the rounding
// residual, so corrections added while the surrogate was large cancel
// exactly once it has decayed toward the gradient noise floor.
inline void surrogate_add(CiagState& s, const Vector& delta) {
  for (Eigen::Index j = 0; j < delta.size(); ++j) {
    const double y = delta[j] - s.surrogate_comp[j];
    const double t = s.surrogate[j] + y;
    s.surrogate_comp[j] = (t - s.surrogate[j]) - y;
    s.surrogate[j] = t;
  }
}

// Replace component i's contribution, expanding it at the current iterate.
inline void ciag_swap(CiagState& s, const FiniteSumProblem& p, long i) {
  const Eigen::Index d = p.dim();
  const auto& comp = p.component(static_cast<int>(i));
  Vector g_new(d);
  Matrix h_new(d, d);
  comp.gradient(s.theta, g_new);
  comp.hessian(s.theta, h_new);

  if (s.visited[static_cast<std::size_t>(i)]) {
    const Vector old_point = s.stored_iterates.row(i).transpose();
    Vector g_old(d);
    Matrix h_old(d, d);
    comp.gradient(old_point, g_old);
    comp.hessian(old_point, h_old);
    Vector delta = g_new - g_old;
    delta.noalias() += h_old * (old_point - s.theta);
    surrogate_add(s, delta);
    s.hessian_agg += h_new - h_old;
  } else {
    // Placeholder contribution was (0, I): its surrogate share is theta.
    surrogate_add(s, g_new - s.theta);
    s.hessian_agg += h_new;
    s.hessian_agg.diagonal().array() -= 1.0;
    s.visited[static_cast<std::size_t>(i)] = 1;
    ++s.visited_count;
  }
  s.stored_iterates.row(i) = s.theta.transpose();
}

// Applies the displacement through the compensated iterate -- near a sharp
// minimum gamma times the surrogate drops below one ulp of theta, and without
// the carry the iterate would freeze with the gradient still around 1e-8 --
// then folds the realized value change into the surrogate.
inline void ciag_move(CiagState& s, const Vector& displacement) {
  Vector realized(displacement.size());
  for (Eigen::Index j = 0; j < displacement.size(); ++j) {
    const double before = s.theta[j];
    const double y = displacement[j] - s.theta_comp[j];
    const double t = before + y;
    s.theta_comp[j] = (t - before) - y;
    s.theta[j] = t;
    realized[j] = t - before;
  }
  surrogate_add(s, s.hessian_agg * realized);
}

inline void check_iterate(const Vector& theta, const char* who) {
  if (!theta.allFinite() || theta.squaredNorm() > 1e24)
    throw DivergenceError(std::string(who) + ": iterate diverged");
}

}  // namespace detail

inline void ciag_step(CiagState& s, const FiniteSumProblem& p,
                      const std::vector<long>& batch, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("ciag_step: gamma must be positive");
  for (long i : batch) {
    if (i < 0 || i >= static_cast<long>(p.size()))
      throw std::invalid_argument("ciag_step: component index out of range");
    detail::ciag_swap(s, p, i);
  }
  detail::ciag_move(s, -gamma * s.surrogate);
  s.k += static_cast<long>(batch.size());
  detail::check_iterate(s.theta, "ciag_step");
}

inline void ciag_step(CiagState& s, const FiniteSumProblem& p, long i,
                      double gamma) {
  const std::vector<long> batch{i};
  ciag_step(s, p, batch, gamma);
}

// Experimental: same aggregates as CIAG, but the move solves H x = b + H*theta
// and steps theta - gamma*x.  Kept behind the same state type on purpose.
inline void newton_agg_step(CiagState& s, const FiniteSumProblem& p,
                            const std::vector<long>& batch, double gamma) {
  if (!(gamma > 0.0))
    throw std::invalid_argument("newton_agg_step: gamma must be positive");
  for (long i : batch) {
    if (i < 0 || i >= static_cast<long>(p.size()))
      throw std::invalid_argument("newton_agg_step: component index out of range");
    detail::ciag_swap(s, p, i);
  }
  const auto ldlt = s.hessian_agg.ldlt();
  const Vector dvec = ldlt.vectorD();
  const double dmax = dvec.cwiseAbs().maxCoeff();
  const double dmin = dvec.cwiseAbs().minCoeff();
  if (!(dmin > 0.0) || dmax / dmin > 1e12)
    throw SingularSystemError("newton_agg_step: aggregated Hessian is numerically singular");
  detail::ciag_move(s, -gamma * ldlt.solve(s.surrogate));
  s.k += static_cast<long>(batch.size());
  detail::check_iterate(s.theta, "newton_agg_step");
}

inline void newton_agg_step(CiagState& s, const FiniteSumProblem& p, long i,
                            double gamma) {
  const std::vector<long> batch{i};
  newton_agg_step(s, p, batch, gamma);
}

// Rebuild the aggregates from the stored expansion points.  Incremental
// maintenance injects an absolute rounding error of order eps * |delta| at
// every swap; the contributions from early iterations, where the iterate
// moves by O(1), persist after the surrogate itself has decayed by many
// orders.  A periodic rebuild (run() does it at trace records) resets the
// aggregate error to that of a single compensated summation.  Costs one
// gradient and one Hessian evaluation per component; changes nothing
// mathematically.
inline void ciag_refresh(CiagState& s, const FiniteSumProblem& p) {
  const Eigen::Index d = p.dim();
  const long m = static_cast<long>(p.size());
  CompensatedVector acc(d);
  Matrix h_sum = Matrix::Zero(d, d);
  Vector g(d), corr(d);
  Matrix h(d, d);
  for (long i = 0; i < m; ++i) {
    const Vector pt = s.stored_iterates.row(i).transpose();
    if (s.visited[static_cast<std::size_t>(i)]) {
      const auto& comp = p.component(static_cast<int>(i));
      comp.gradient(pt, g);
      comp.hessian(pt, h);
      acc.add(g);
      corr.noalias() = h * (s.theta - pt);
      acc.add(corr);
      h_sum += h;
    } else {
      // Placeholder pair (0, I) expanded at the stored point.
      acc.add(s.theta - pt);
      h_sum.diagonal().array() += 1.0;
    }
  }
  s.surrogate = acc.value();
  s.surrogate_comp.setZero();
  s.hessian_agg = h_sum;
}

// ---------------------------------------------------------------------------
// IAG
// ---------------------------------------------------------------------------

struct IagState {
  Vector theta;
  Vector grad_sum;  // sum over components of the last-seen gradient
  Matrix stored_iterates;
  std::vector<char> visited;
  long visited_count = 0;
  long k = 0;
};

inline IagState iag_init(const FiniteSumProblem& p, const Vector& theta1,
                         InitMode mode) {
  detail::check_dim(p, theta1, "iag_init");
  if (!theta1.allFinite())
    throw std::invalid_argument("iag_init: theta1 must be finite");
  const long m = static_cast<long>(p.size());
  IagState s;
  s.theta = theta1;
  s.stored_iterates = theta1.transpose().replicate(m, 1);
  s.visited.assign(static_cast<std::size_t>(m), 0);
  if (mode == InitMode::cold) {
    s.grad_sum = Vector::Zero(p.dim());
  } else {
    s.grad_sum = full_gradient(p, theta1);
    for (auto& v : s.visited) v = 1;
    s.visited_count = m;
    s.k = m;
  }
  return s;
}

inline void iag_step(IagState& s, const FiniteSumProblem& p,
                     const std::vector<long>& batch, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("iag_step: gamma must be positive");
  const Eigen::Index d = p.dim();
  Vector g_new(d), g_old(d);
  for (long i : batch) {
    if (i < 0 || i >= static_cast<long>(p.size()))
      throw std::invalid_argument("iag_step: component index out of range");
    const auto& comp = p.component(static_cast<int>(i));
    comp.gradient(s.theta, g_new);
    if (s.visited[static_cast<std::size_t>(i)]) {
      const Vector old_point = s.stored_iterates.row(i).transpose();
      comp.gradient(old_point, g_old);
      s.grad_sum += g_new - g_old;
    } else {
      s.grad_sum += g_new;
      s.visited[static_cast<std::size_t>(i)] = 1;
      ++s.visited_count;
    }
    s.stored_iterates.row(i) = s.theta.transpose();
  }
  s.theta -= gamma * s.grad_sum;
  s.k += static_cast<long>(batch.size());
  detail::check_iterate(s.theta, "iag_step");
}

inline void iag_step(IagState& s, const FiniteSumProblem& p, long i,
                     double gamma) {
  const std::vector<long> batch{i};
  iag_step(s, p, batch, gamma);
}

// ---------------------------------------------------------------------------
// FG and IG
// ---------------------------------------------------------------------------

inline Vector fg_step(const Vector& theta, const FiniteSumProblem& p,
                      double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("fg_step: gamma must be positive");
  Vector next = theta - gamma * full_gradient(p, theta);
  detail::check_iterate(next, "fg_step");
  return next;
}

inline Vector ig_step(const Vector& theta, const FiniteSumProblem& p, long i,
                      double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("ig_step: gamma must be positive");
  if (i < 0 || i >= static_cast<long>(p.size()))
    throw std::invalid_argument("ig_step: component index out of range");
  Vector g(p.dim());
  p.component(static_cast<int>(i)).gradient(theta, g);
  Vector next = theta - gamma * g;
  detail::check_iterate(next, "ig_step");
  return next;
}

// ---------------------------------------------------------------------------
// Adaptive step size
// ---------------------------------------------------------------------------

// Ramp rule evaluated at trace points.  V_estimate is a conservative stand-in
// for the squared distance to the optimum (callers use (||grad F||/mu)^2).
// Returns 2/(mu+L) outright once the gap is small enough for the saturation
// inequality (or the problem has no curvature); otherwise grows the current
// step by the ramp factor but never past the certified bound.  Never shrinks.
inline double adaptive_gamma(double current, double ramp,
                             const FiniteSumProblem& p, long K,
                             double V_estimate) {
  const double gamma_max = 2.0 / (p.mu() + p.L());
  const double lh = p.hess_lipschitz_total();
  if (lh == 0.0) return std::max(current, gamma_max);
  const ConditionNumbers cn = p.condition_numbers();
  if (saturation_check(V_estimate, K, cn.Q, cn.Q_H))
    return std::max(current, gamma_max);
  RateConstants c;
  c.mu = p.mu();
  c.L = p.L();
  c.L_H = lh;
  c.K = K;
  c.V_s = V_estimate;
  c.epsilon = 0.0;
  double next = std::min(current * ramp, stepsize_bound(c));
  next = std::min(next, gamma_max);
  return std::max(next, current);
}

// ---------------------------------------------------------------------------
// Run driver
// ---------------------------------------------------------------------------

struct RunOptions {
  Method method = Method::ciag;
  StepSizeSchedule schedule = StepSizeSchedule::constant(1.0);
  SelectionRule selection = SelectionRule::cyclic();
  InitMode init = InitMode::warm;
  double grad_tol = 1e-10;
  long max_passes = 2000;
  // Accesses between trace records; 0 means m (one record per pass).  CIAG
  // and the aggregated-Newton variant are rebuilt (ciag_refresh) at every
  // record, costing one pass-equivalent of oracle work per record.
  long trace_every = 0;
  bool timing = true;    // false pins wall_time_s to 0 for reproducible output
  std::optional<Vector> reference;  // minimizer, enables objective_gap
};

struct RunResult {
  Vector final_theta;
  std::vector<TraceRecord> trace;
  bool converged = false;
  StopReason stop_reason = StopReason::max_iters;
};

namespace detail {

struct GammaSource {
  StepSizeSchedule::Kind kind;
  double current;  // constant value or adaptive current
  double ramp;
  double inv_L;
  long m;

  // Step size for the iteration whose first access is number k1 (1-based).
  double at(long k1) const {
    if (kind == StepSizeSchedule::Kind::vanishing)
      return inv_L / static_cast<double>((k1 + m - 1) / m);
    return current;
  }
};

}  // namespace detail

inline RunResult run(const FiniteSumProblem& p, const Vector& theta0,
                     const RunOptions& opt) {
  detail::check_dim(p, theta0, "run");
  if (opt.trace_every < 0) throw std::invalid_argument("run: trace_every must be >= 0");
  if (opt.max_passes < 1) throw std::invalid_argument("run: max_passes must be >= 1");
  if (!(opt.grad_tol >= 0.0)) throw std::invalid_argument("run: grad_tol must be >= 0");

  const long m = static_cast<long>(p.size());
  const long trace_every = opt.trace_every > 0 ? opt.trace_every : m;
  const long max_accesses = opt.max_passes * m;
  const long K = opt.selection.delay_bound(m);
  const double gamma_max = 2.0 / (p.mu() + p.L());

  detail::GammaSource gs;
  gs.kind = opt.schedule.kind;
  gs.ramp = opt.schedule.ramp;
  gs.inv_L = 1.0 / p.L();
  gs.m = m;
  gs.current = opt.schedule.gamma;
  if (gs.kind == StepSizeSchedule::Kind::adaptive_ramp)
    gs.current = std::min(gs.current, gamma_max);

  CiagState cs;
  IagState is;
  Vector theta = theta0;
  long theta_k = 0;  // access counter for the stateless methods (ig, fg)
  const bool aggregated =
      opt.method == Method::ciag || opt.method == Method::newton_agg;
  if (aggregated) {
    cs = ciag_init(p, theta0, opt.init);
  } else if (opt.method == Method::iag) {
    is = iag_init(p, theta0, opt.init);
  }

  auto current_theta = [&]() -> const Vector& {
    if (aggregated) return cs.theta;
    if (opt.method == Method::iag) return is.theta;
    return theta;
  };
  auto accesses = [&]() -> long {
    if (aggregated) return cs.k;
    if (opt.method == Method::iag) return is.k;
    return theta_k;
  };

  std::optional<double> f_star;
  if (opt.reference) {
    detail::check_dim(p, *opt.reference, "run (reference)");
    f_star = objective_value(p, *opt.reference);
  }

  RunResult result;
  double algo_seconds = 0.0;

  auto record = [&](const Vector& at, long k) -> double {
    TraceRecord r;
    r.k = k;
    r.effective_passes = static_cast<double>(k) / static_cast<double>(m);
    const Vector grad = full_gradient(p, at);
    r.grad_norm = grad.norm();
    if (f_star) r.objective_gap = objective_value(p, at) - *f_star;
    if (aggregated) {
      r.surrogate_error = (cs.surrogate - grad).norm();
      if (cs.visited_count == m) {
        double eb = 0.0;
        for (long i = 0; i < m; ++i)
          eb += p.hess_lipschitz(static_cast<int>(i)) *
                (cs.stored_iterates.row(i).transpose() - at).squaredNorm();
        r.error_bound = eb;
      }
    } else if (opt.method == Method::iag) {
      r.surrogate_error = (is.grad_sum - grad).norm();
    }
    if (gs.kind == StepSizeSchedule::Kind::adaptive_ramp) {
      const double v_est = (r.grad_norm / p.mu()) * (r.grad_norm / p.mu());
      gs.current = adaptive_gamma(gs.current, gs.ramp, p, K, v_est);
    }
    r.step_size = gs.at(k + 1);
    r.wall_time_s = opt.timing ? algo_seconds : 0.0;
    result.trace.push_back(r);
    return r.grad_norm;
  };

  long k = accesses();
  if (aggregated) ciag_refresh(cs, p);
  double gn = record(current_theta(), k);
  if (gn <= opt.grad_tol) {
    result.final_theta = current_theta();
    result.converged = true;
    result.stop_reason = StopReason::grad_tol;
    return result;
  }

  std::vector<long> batch;
  long next_trace_k = k + trace_every;
  Vector last_good = current_theta();

  while (k < max_accesses) {
    const double gamma = gs.at(k + 1);
    last_good = current_theta();
    bool diverged = false;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (opt.method) {
        case Method::ciag:
          opt.selection.next_indices(k, m, batch);
          ciag_step(cs, p, batch, gamma);
          break;
        case Method::newton_agg:
          opt.selection.next_indices(k, m, batch);
          newton_agg_step(cs, p, batch, gamma);
          break;
        case Method::iag:
          opt.selection.next_indices(k, m, batch);
          iag_step(is, p, batch, gamma);
          break;
        case Method::ig:
          opt.selection.next_indices(k, m, batch);
          theta = ig_step(theta, p, batch[0], gamma);
          theta_k += 1;
          break;
        case Method::fg:
          theta = fg_step(theta, p, gamma);
          theta_k += m;
          break;
      }
    } catch (const DivergenceError&) {
      diverged = true;
    } catch (const SingularSystemError&) {
      diverged = true;
    }
    const auto t1 = std::chrono::steady_clock::now();
    algo_seconds += std::chrono::duration<double>(t1 - t0).count();

    if (diverged) {
      k = accesses();
      record(last_good, k);
      result.final_theta = last_good;
      result.converged = false;
      result.stop_reason = StopReason::diverged;
      return result;
    }

    k = accesses();
    if (k >= next_trace_k || k >= max_accesses) {
      while (next_trace_k <= k) next_trace_k += trace_every;
      if (aggregated) ciag_refresh(cs, p);
      gn = record(current_theta(), k);
      if (gn <= opt.grad_tol) {
        result.final_theta = current_theta();
        result.converged = true;
        result.stop_reason = StopReason::grad_tol;
        return result;
      }
    }
  }

  result.final_theta = current_theta();
  result.converged = false;
  result.stop_reason = StopReason::max_iters;
  return result;
}

}  // namespace ciag
