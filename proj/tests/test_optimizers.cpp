#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ciag/optimizers.hpp"
#include "ciag/problems.hpp"

using namespace ciag;

namespace {

FiniteSumProblem tiny_logistic(int d, int m, std::uint64_t seed) {
  return make_logistic_problem(generate_synthetic_svm(d, m, seed));
}

Matrix random_centers(int m, int d, std::uint64_t seed) {
  UniformRng rng(seed);
  Matrix c(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) c(i, j) = rng.symmetric();
  return c;
}

Vector weighted_centroid(const Matrix& centers) {
  return centers.colwise().mean().transpose();
}

// Definitional aggregate: sum_i [ grad f_i(theta_i) + H_i(theta_i)(theta - theta_i) ].
Vector definitional_surrogate(const FiniteSumProblem& p, const CiagState& s) {
  Vector acc = Vector::Zero(p.dim());
  for (int i = 0; i < p.size(); ++i) {
    const Vector ti = s.stored_iterates.row(i).transpose();
    acc += p.component(i).gradient(ti);
    acc += p.component(i).hessian(ti) * (s.theta - ti);
  }
  return acc;
}

}  // namespace

TEST_CASE("cyclic selection touches component (k mod m) and recurs within m") {
  SelectionRule sel = SelectionRule::cyclic();
  CHECK(sel.delay_bound(7) == 7);
  std::vector<long> out;
  sel.next_indices(0, 5, out);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == 1);
  sel.next_indices(4, 5, out);
  CHECK(out[0] == 0);
  sel.next_indices(12, 5, out);
  CHECK(out[0] == 3);

  // Over 3m accesses every component recurs with gap exactly m.
  const long m = 6;
  std::vector<long> last(m, -1);
  long consumed = 0;
  for (int step = 0; step < 18; ++step) {
    sel.next_indices(consumed, m, out);
    for (long i : out) {
      if (last[i] >= 0) CHECK(consumed + 1 - last[i] == m);
      last[i] = consumed + 1;
      ++consumed;
    }
  }
}

TEST_CASE("minibatch selection covers the cycle within its delay bound") {
  SelectionRule sel = SelectionRule::cyclic_minibatch(3);
  CHECK(sel.delay_bound(10) == 12);
  CHECK(sel.delay_bound(9) == 9);
  CHECK_THROWS_AS(SelectionRule::cyclic_minibatch(0), std::invalid_argument);

  std::vector<long> out;
  sel.next_indices(7, 10, out);
  REQUIRE(out.size() == 3);
  CHECK(out[0] == 8);
  CHECK(out[1] == 9);
  CHECK(out[2] == 0);

  const long m = 10;
  std::vector<long> last(m, -1);
  long consumed = 0;
  while (consumed < 5 * m) {
    sel.next_indices(consumed, m, out);
    for (long i : out) {
      if (last[i] >= 0) CHECK(consumed + 1 - last[i] <= sel.delay_bound(m));
      last[i] = consumed + 1;
      ++consumed;
    }
  }
}

TEST_CASE("schedule factories validate their arguments") {
  CHECK_THROWS_AS(StepSizeSchedule::constant(0.0), std::invalid_argument);
  CHECK_THROWS_AS(StepSizeSchedule::constant(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(
      StepSizeSchedule::constant(std::numeric_limits<double>::infinity()),
      std::invalid_argument);
  CHECK_THROWS_AS(StepSizeSchedule::adaptive_ramp(0.0), std::invalid_argument);
  CHECK_THROWS_AS(StepSizeSchedule::adaptive_ramp(0.1, 1.0),
                  std::invalid_argument);
  CHECK(StepSizeSchedule::vanishing().kind ==
        StepSizeSchedule::Kind::vanishing);
}

TEST_CASE("vanishing schedule steps down once per pass") {
  detail::GammaSource gs;
  gs.kind = StepSizeSchedule::Kind::vanishing;
  gs.inv_L = 1.0 / 4.0;
  gs.m = 5;
  CHECK(gs.at(1) == 0.25);
  CHECK(gs.at(5) == 0.25);
  CHECK(gs.at(6) == 0.125);
  CHECK(gs.at(10) == 0.125);
  CHECK(gs.at(11) == 0.25 / 3.0);  // third pass
}

TEST_CASE("warm start reproduces the full-batch aggregates bit for bit") {
  const FiniteSumProblem p = tiny_logistic(4, 12, 3);
  Vector theta1(4);
  theta1 << 0.1, -0.3, 0.7, 0.2;
  const CiagState s = ciag_init(p, theta1, InitMode::warm);
  CHECK(s.k == 12);
  CHECK(s.visited_count == 12);
  CHECK((s.surrogate - full_gradient(p, theta1)).norm() == 0.0);
  CHECK((s.hessian_agg - full_hessian(p, theta1)).norm() == 0.0);
  CHECK((s.stored_iterates.row(5).transpose() - theta1).norm() == 0.0);
}

TEST_CASE("cold start realizes the placeholder aggregates") {
  const FiniteSumProblem p = tiny_logistic(4, 10, 9);
  Vector theta1(4);
  theta1 << 0.5, -0.1, 0.0, 1.0;
  CiagState s = ciag_init(p, theta1, InitMode::cold);
  CHECK(s.k == 0);
  CHECK(s.visited_count == 0);
  CHECK((s.surrogate - 10.0 * theta1).norm() == 0.0);
  CHECK(s.aggregate_b().norm() == 0.0);

  // One full pass replaces every placeholder; the surrogate then satisfies
  // its definition at the current iterate.
  SelectionRule sel = SelectionRule::cyclic();
  std::vector<long> idx;
  const double gamma = 0.3 / p.L();
  for (int step = 0; step < 10; ++step) {
    sel.next_indices(s.k, 10, idx);
    ciag_step(s, p, idx, gamma);
  }
  CHECK(s.visited_count == 10);
  CHECK(s.k == 10);
  const Vector want = definitional_surrogate(p, s);
  CHECK((s.surrogate - want).norm() <= 1e-8 * (1.0 + want.norm()));
}

TEST_CASE("single-component aggregation degenerates to gradient descent") {
  const FiniteSumProblem p = tiny_logistic(3, 1, 5);
  Vector theta(3);
  theta << 1.0, -2.0, 0.5;
  CiagState s = ciag_init(p, theta, InitMode::warm);
  Vector manual = theta;
  const double gamma = 0.5 / p.L();
  const double scale = 1.0 + full_gradient(p, theta).norm();
  for (int step = 0; step < 20; ++step) {
    ciag_step(s, p, 0L, gamma);
    manual = fg_step(manual, p, gamma);
    // With one component the stored linearization point is the pre-step
    // iterate, so the surrogate is the gradient there extrapolated by the
    // Hessian -- the definitional aggregate, not the fresh gradient.
    const Vector want = definitional_surrogate(p, s);
    CHECK((s.surrogate - want).norm() <= 1e-12 * scale);
  }
  CHECK((s.theta - manual).norm() <= 1e-10 * (1.0 + manual.norm()));
}

TEST_CASE("constant-curvature problems make the aggregated step exact") {
  // Diagonal quadratic: every component Hessian is constant, so the linear
  // model is exact and single-access steps track full gradient descent.
  const int d = 6, m = 10;
  const Matrix centers = random_centers(m, d, 31);
  Matrix scales(m, d);
  UniformRng rng(32);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) scales(i, j) = rng.range(0.1, 2.0);
  const FiniteSumProblem p = make_diagonal_quadratic_problem(centers, scales);

  const double gamma = 2.0 / (p.mu() + p.L());
  Vector start(d);
  for (int j = 0; j < d; ++j) start[j] = rng.symmetric();

  CiagState s = ciag_init(p, start, InitMode::warm);
  Vector manual = start;
  SelectionRule sel = SelectionRule::cyclic();
  std::vector<long> idx;
  for (int step = 0; step < 100; ++step) {
    sel.next_indices(s.k, m, idx);
    ciag_step(s, p, idx, gamma);
    manual = fg_step(manual, p, gamma);
  }
  CHECK((s.theta - manual).norm() <= 1e-10 * (1.0 + manual.norm()));
}

TEST_CASE("surrogate matches its definition along a logistic run") {
  const FiniteSumProblem p = tiny_logistic(8, 30, 7);
  Vector start = Vector::Zero(8);
  CiagState s = ciag_init(p, start, InitMode::warm);
  SelectionRule sel = SelectionRule::cyclic();
  std::vector<long> idx;
  const double gamma = 1.0 / p.L();
  for (int step = 0; step < 90; ++step) {
    sel.next_indices(s.k, 30, idx);
    ciag_step(s, p, idx, gamma);
  }
  const Vector want = definitional_surrogate(p, s);
  CHECK((s.surrogate - want).norm() <= 1e-8 * (1.0 + want.norm()));
  CHECK((s.hessian_agg - s.hessian_agg.transpose()).norm() == 0.0);

  Matrix h_want = Matrix::Zero(8, 8);
  for (int i = 0; i < 30; ++i)
    h_want += p.component(i).hessian(s.stored_iterates.row(i).transpose());
  CHECK((s.hessian_agg - h_want).norm() <= 1e-10 * (1.0 + h_want.norm()));
}

TEST_CASE("refresh rebuilds the aggregates from the stored points") {
  const FiniteSumProblem p = tiny_logistic(8, 30, 7);
  CiagState s = ciag_init(p, Vector::Zero(8), InitMode::warm);

  // Right after warm init every stored point equals theta, so the rebuild
  // reproduces the init aggregates bit for bit (the extrapolation terms are
  // exact zeros).
  const Vector u0 = s.surrogate;
  const Matrix h0 = s.hessian_agg;
  ciag_refresh(s, p);
  CHECK((s.surrogate - u0).norm() == 0.0);
  CHECK((s.hessian_agg - h0).norm() == 0.0);

  SelectionRule sel = SelectionRule::cyclic();
  std::vector<long> idx;
  const double gamma = 1.0 / p.L();
  for (int step = 0; step < 75; ++step) {
    sel.next_indices(s.k, 30, idx);
    ciag_step(s, p, idx, gamma);
  }
  ciag_refresh(s, p);
  const Vector want = definitional_surrogate(p, s);
  CHECK((s.surrogate - want).norm() <= 1e-13 * (1.0 + want.norm()));
  CHECK(s.surrogate_comp.norm() == 0.0);
  Matrix h_want = Matrix::Zero(8, 8);
  for (int i = 0; i < 30; ++i)
    h_want += p.component(i).hessian(s.stored_iterates.row(i).transpose());
  CHECK((s.hessian_agg - h_want).norm() == 0.0);

  // Rebuilding must not disturb the trajectory-defining fields.
  const Vector theta_before = s.theta;
  const long k_before = s.k;
  ciag_refresh(s, p);
  CHECK((s.theta - theta_before).norm() == 0.0);
  CHECK(s.k == k_before);
}

TEST_CASE("refresh keeps placeholder contributions for unvisited components") {
  const FiniteSumProblem p = tiny_logistic(4, 6, 13);
  Vector start(4);
  start << 0.3, -0.1, 0.2, 0.05;
  CiagState s = ciag_init(p, start, InitMode::cold);
  const double gamma = 1.0 / p.L();
  for (long i = 0; i < 3; ++i) ciag_step(s, p, i, gamma);  // visit half
  ciag_refresh(s, p);

  Vector want = Vector::Zero(4);
  Matrix h_want = Matrix::Zero(4, 4);
  for (int i = 0; i < 6; ++i) {
    const Vector pi = s.stored_iterates.row(i).transpose();
    if (i < 3) {
      want += p.component(i).gradient(pi) +
              p.component(i).hessian(pi) * (s.theta - pi);
      h_want += p.component(i).hessian(pi);
    } else {
      want += s.theta - pi;  // placeholder (0, I) share
      h_want += Matrix::Identity(4, 4);
    }
  }
  CHECK((s.surrogate - want).norm() <= 1e-13 * (1.0 + want.norm()));
  CHECK((s.hessian_agg - h_want).norm() <= 1e-13 * (1.0 + h_want.norm()));
  CHECK(s.visited_count == 3);
}

TEST_CASE("step arguments are validated") {
  const FiniteSumProblem p = tiny_logistic(3, 4, 1);
  Vector theta = Vector::Zero(3);
  CiagState s = ciag_init(p, theta, InitMode::warm);
  CHECK_THROWS_AS(ciag_step(s, p, 0L, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ciag_step(s, p, 4L, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(ciag_step(s, p, -1L, 0.1), std::invalid_argument);

  IagState is = iag_init(p, theta, InitMode::warm);
  CHECK_THROWS_AS(iag_step(is, p, 0L, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(iag_step(is, p, 4L, 0.1), std::invalid_argument);

  CHECK_THROWS_AS(fg_step(theta, p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ig_step(theta, p, 9L, 0.1), std::invalid_argument);

  Vector bad = Vector::Zero(5);
  CHECK_THROWS_AS(ciag_init(p, bad, InitMode::warm), std::invalid_argument);
  bad = Vector::Constant(3, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(ciag_init(p, bad, InitMode::cold), std::invalid_argument);
}

TEST_CASE("an oversized step is reported as divergence") {
  const Matrix centers = random_centers(4, 2, 8);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  Vector theta = Vector::Ones(2);
  CiagState s = ciag_init(p, theta, InitMode::warm);
  bool threw = false;
  try {
    for (int step = 0; step < 200; ++step) ciag_step(s, p, s.k % 4, 1e12);
  } catch (const DivergenceError&) {
    threw = true;
  }
  CHECK(threw);
}

TEST_CASE("delayed gradient aggregation with one component is plain descent") {
  const FiniteSumProblem p = tiny_logistic(3, 1, 6);
  Vector theta(3);
  theta << -0.4, 0.9, 0.1;
  IagState s = iag_init(p, theta, InitMode::warm);
  Vector manual = theta;
  const double gamma = 0.5 / p.L();
  for (int step = 0; step < 20; ++step) {
    iag_step(s, p, 0L, gamma);
    manual = fg_step(manual, p, gamma);
  }
  CHECK((s.theta - manual).norm() <= 1e-10 * (1.0 + manual.norm()));
}

TEST_CASE("delayed gradient aggregation converges on a quadratic") {
  Matrix centers(2, 2);
  centers << 1.0, 0.0, -1.0, 2.0;
  const FiniteSumProblem p = make_quadratic_problem(centers);
  const Vector target = weighted_centroid(centers);

  IagState s = iag_init(p, Vector::Zero(2), InitMode::warm);
  for (int step = 0; step < 3000; ++step) iag_step(s, p, s.k % 2, 0.1);
  CHECK((s.theta - target).norm() <= 1e-9);

  // The aggregate equals the sum of the last-seen component gradients.
  Vector want = Vector::Zero(2);
  for (int i = 0; i < 2; ++i)
    want += p.component(i).gradient(s.stored_iterates.row(i).transpose());
  CHECK((s.grad_sum - want).norm() <= 1e-8 * (1.0 + want.norm()));
}

TEST_CASE("full gradient step on an isotropic quadratic jumps to the centroid") {
  const Matrix centers = random_centers(3, 4, 13);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  const Vector target = weighted_centroid(centers);
  Vector theta = Vector::Ones(4);
  theta = fg_step(theta, p, 1.0 / p.L());  // gamma = 1/(sum of weights)
  CHECK((theta - target).norm() <= 1e-14 * (1.0 + target.norm()));
  const Vector stay = fg_step(theta, p, 1.0 / p.L());
  CHECK((stay - theta).norm() <= 1e-14);
}

TEST_CASE("incremental gradient step uses exactly one component") {
  const FiniteSumProblem p = tiny_logistic(3, 5, 2);
  Vector theta(3);
  theta << 0.2, -0.1, 0.4;
  const Vector next = ig_step(theta, p, 2L, 0.05);
  const Vector want = theta - 0.05 * p.component(2).gradient(theta);
  CHECK((next - want).norm() == 0.0);
}

TEST_CASE("full-gradient distance contraction respects the certified factor") {
  Matrix centers(2, 2);
  centers << 0.5, -1.0, 1.5, 2.0;
  Matrix scales(2, 2);
  scales << 0.5, 4.5, 0.5, 4.5;  // column sums 1 and 9: mu=1, L=9
  const FiniteSumProblem p = make_diagonal_quadratic_problem(centers, scales);
  REQUIRE(p.mu() == 1.0);
  REQUIRE(p.L() == 9.0);

  Vector theta_star(2);
  for (int j = 0; j < 2; ++j)
    theta_star[j] = (scales.col(j).array() * centers.col(j).array()).sum() /
                    scales.col(j).sum();
  REQUIRE(full_gradient(p, theta_star).norm() <= 1e-14);

  for (double gamma : {1.0 / 9.0, 0.2}) {
    const double factor = fg_rate(gamma, 1.0, 9.0).value;
    Vector theta(2);
    theta << 2.0, -3.0;
    double v = (theta - theta_star).squaredNorm();
    for (int step = 0; step < 40; ++step) {
      theta = fg_step(theta, p, gamma);
      const double v_next = (theta - theta_star).squaredNorm();
      CHECK(v_next <= factor * v + 1e-12);
      v = v_next;
    }
  }
}

TEST_CASE("aggregated newton from a warm start solves a quadratic in one move") {
  const Matrix centers = random_centers(4, 3, 21);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  const Vector target = weighted_centroid(centers);
  Vector start(3);
  start << 1.0, -1.0, 2.0;
  CiagState s = ciag_init(p, start, InitMode::warm);
  newton_agg_step(s, p, 0L, 1.0);
  CHECK((s.theta - target).norm() <= 1e-12 * (1.0 + target.norm()));
}

TEST_CASE("aggregated newton cold start scales the aggregate by 1/m") {
  // Unit-weight isotropic quadratics keep the placeholder total m*I intact
  // after the first swap, so the solve divides the aggregate by m exactly.
  const int m = 5, d = 3;
  const Matrix centers = random_centers(m, d, 22);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  Vector start(d);
  start << 0.3, -0.7, 0.4;

  CiagState s = ciag_init(p, start, InitMode::cold);
  const double gamma = 0.5;
  // Expected surrogate right after swapping component 1 in:
  Vector u = m * start;
  u += p.component(1).gradient(start) - start;
  const Vector want = start - (gamma / m) * u;

  SelectionRule sel = SelectionRule::cyclic();
  std::vector<long> idx;
  sel.next_indices(s.k, m, idx);
  REQUIRE(idx[0] == 1);
  newton_agg_step(s, p, idx, gamma);

  Matrix id = Matrix::Identity(d, d);
  CHECK((s.hessian_agg - static_cast<double>(m) * id).norm() == 0.0);
  CHECK((s.theta - want).norm() <= 1e-13 * (1.0 + want.norm()));
}

TEST_CASE("aggregated newton refuses a singular aggregate") {
  const Matrix centers = random_centers(3, 2, 23);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  CiagState s = ciag_init(p, Vector::Zero(2), InitMode::warm);
  s.hessian_agg.setZero();
  // Constant component Hessians mean the swap adds h - h = 0.
  CHECK_THROWS_AS(newton_agg_step(s, p, 0L, 1.0), SingularSystemError);
}

TEST_CASE("adaptive step rule saturates, ramps, and never shrinks") {
  const Matrix centers = random_centers(4, 2, 33);
  const FiniteSumProblem flat = make_quadratic_problem(centers);
  const double flat_max = 2.0 / (flat.mu() + flat.L());
  CHECK(adaptive_gamma(1e-6, 2.0, flat, 4, 100.0) == flat_max);

  const FiniteSumProblem p = tiny_logistic(4, 10, 12);
  const double gamma_max = 2.0 / (p.mu() + p.L());
  CHECK(adaptive_gamma(1e-9, 2.0, p, 10, 0.0) == gamma_max);

  // Far from the optimum the rule doubles but stays under the bound.
  const double far = adaptive_gamma(1e-12, 2.0, p, 10, 1e6);
  CHECK(far == 2e-12);

  // Never shrinks, even from above the cap.
  CHECK(adaptive_gamma(2.0 * gamma_max, 2.0, p, 10, 1e6) == 2.0 * gamma_max);

  double cur = 1e-12;
  for (int i = 0; i < 200; ++i) {
    const double next = adaptive_gamma(cur, 2.0, p, 10, 1e6);
    CHECK(next >= cur);
    CHECK(next <= std::max(cur, gamma_max));
    cur = next;
  }
}

TEST_CASE("run: full gradient descent reaches the tolerance") {
  const Matrix centers = random_centers(5, 3, 41);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  RunOptions opt;
  opt.method = Method::fg;
  opt.schedule = StepSizeSchedule::constant(0.5 / p.L());
  opt.grad_tol = 1e-11;
  const RunResult res = run(p, Vector::Ones(3), opt);
  CHECK(res.converged);
  CHECK(res.stop_reason == StopReason::grad_tol);
  CHECK(full_gradient(p, res.final_theta).norm() <= 1e-11);
  REQUIRE(res.trace.size() >= 2);
  CHECK(res.trace.front().k == 0);
  for (std::size_t i = 0; i + 1 < res.trace.size(); ++i)
    CHECK(res.trace[i].k < res.trace[i + 1].k);
  for (const TraceRecord& r : res.trace) {
    CHECK(r.effective_passes == static_cast<double>(r.k) / 5.0);
    CHECK(r.step_size == 0.5 / p.L());
    CHECK_FALSE(r.surrogate_error.has_value());
  }
}

TEST_CASE("run: pass budget exhaustion is reported") {
  const FiniteSumProblem p = tiny_logistic(4, 8, 19);
  RunOptions opt;
  opt.method = Method::ig;
  opt.schedule = StepSizeSchedule::vanishing();
  opt.grad_tol = 1e-12;
  opt.max_passes = 3;
  const RunResult res = run(p, Vector::Zero(4), opt);
  CHECK_FALSE(res.converged);
  CHECK(res.stop_reason == StopReason::max_iters);
  CHECK(res.trace.back().k == 24);
}

TEST_CASE("run: divergence ends the run with the last finite iterate") {
  Matrix centers(3, 2);
  centers << 1.0, 1.0, -1.0, 0.0, 0.0, -1.0;
  const FiniteSumProblem p = make_quadratic_problem(centers);
  RunOptions opt;
  opt.method = Method::fg;
  opt.schedule = StepSizeSchedule::constant(10.0 / p.L());
  const RunResult res = run(p, Vector::Ones(2), opt);
  CHECK_FALSE(res.converged);
  CHECK(res.stop_reason == StopReason::diverged);
  CHECK(res.final_theta.allFinite());
  CHECK(std::isfinite(res.trace.back().grad_norm));
}

TEST_CASE("run: aggregated trace fields are present and tight") {
  const Matrix centers = random_centers(6, 3, 47);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  RunOptions opt;
  opt.method = Method::ciag;
  opt.schedule = StepSizeSchedule::constant(0.3 / p.L());
  opt.grad_tol = 1e-11;
  opt.reference = weighted_centroid(centers);
  const RunResult res = run(p, Vector::Ones(3), opt);
  CHECK(res.converged);
  for (const TraceRecord& r : res.trace) {
    REQUIRE(r.surrogate_error.has_value());
    CHECK(*r.surrogate_error <= 1e-9 * (1.0 + r.grad_norm));
    REQUIRE(r.error_bound.has_value());  // warm start: all components seen
    CHECK(*r.error_bound >= 0.0);
    REQUIRE(r.objective_gap.has_value());
    CHECK(*r.objective_gap >= -1e-12);
  }
  CHECK(*res.trace.back().objective_gap <= *res.trace.front().objective_gap);
}

TEST_CASE("run: surrogate error sits under the curvature bound") {
  const FiniteSumProblem p = tiny_logistic(6, 20, 29);
  RunOptions opt;
  opt.method = Method::ciag;
  opt.schedule = StepSizeSchedule::constant(1.0 / p.L());
  opt.grad_tol = 1e-10;
  opt.max_passes = 300;
  const RunResult res = run(p, Vector::Zero(6), opt);
  CHECK(res.converged);
  for (const TraceRecord& r : res.trace) {
    REQUIRE(r.surrogate_error.has_value());
    REQUIRE(r.error_bound.has_value());
    CHECK(*r.surrogate_error <= *r.error_bound + 1e-12);
  }
}

TEST_CASE("run: cold start omits the error bound until every component is seen") {
  const FiniteSumProblem p = tiny_logistic(4, 10, 39);
  RunOptions opt;
  opt.method = Method::ciag;
  opt.schedule = StepSizeSchedule::constant(0.5 / p.L());
  opt.init = InitMode::cold;
  opt.trace_every = 5;  // first record mid-pass
  opt.max_passes = 50;
  const RunResult res = run(p, Vector::Ones(4), opt);
  REQUIRE(res.trace.size() >= 3);
  CHECK(res.trace[0].k == 0);
  CHECK_FALSE(res.trace[0].error_bound.has_value());
  CHECK(res.trace[1].k == 5);
  CHECK_FALSE(res.trace[1].error_bound.has_value());
  CHECK(res.trace[2].k == 10);
  CHECK(res.trace[2].error_bound.has_value());
}

TEST_CASE("run: delayed aggregation reports its own surrogate error") {
  const FiniteSumProblem p = tiny_logistic(4, 10, 40);
  RunOptions opt;
  opt.method = Method::iag;
  opt.schedule = StepSizeSchedule::constant(0.1 / p.L());
  opt.max_passes = 5;
  opt.grad_tol = 0.0;
  const RunResult res = run(p, Vector::Zero(4), opt);
  for (const TraceRecord& r : res.trace) {
    REQUIRE(r.surrogate_error.has_value());
    CHECK_FALSE(r.error_bound.has_value());
  }
}

TEST_CASE("run: warm aggregated runs start their access count at m") {
  const FiniteSumProblem p = tiny_logistic(3, 7, 44);
  RunOptions opt;
  opt.method = Method::ciag;
  opt.schedule = StepSizeSchedule::constant(0.5 / p.L());
  opt.max_passes = 50;
  const RunResult res = run(p, Vector::Zero(3), opt);
  CHECK(res.trace.front().k == 7);
  CHECK(res.trace.front().effective_passes == 1.0);
}

TEST_CASE("run: adaptive schedule ramps monotonically and wins on passes") {
  const FiniteSumProblem p = tiny_logistic(5, 15, 2);
  const double inv_L = 1.0 / p.L();
  const double gamma_max = 2.0 / (p.mu() + p.L());

  RunOptions fixed;
  fixed.method = Method::ciag;
  fixed.schedule = StepSizeSchedule::constant(inv_L);
  fixed.grad_tol = 1e-9;
  const RunResult res_fixed = run(p, Vector::Zero(5), fixed);
  REQUIRE(res_fixed.converged);

  RunOptions adaptive = fixed;
  adaptive.schedule = StepSizeSchedule::adaptive_ramp(inv_L);
  const RunResult res_adaptive = run(p, Vector::Zero(5), adaptive);
  REQUIRE(res_adaptive.converged);

  double prev = 0.0;
  for (const TraceRecord& r : res_adaptive.trace) {
    CHECK(r.step_size >= prev);
    CHECK(r.step_size <= gamma_max * (1.0 + 1e-15));
    prev = r.step_size;
  }
  CHECK(res_adaptive.trace.back().k <= res_fixed.trace.back().k);
}

TEST_CASE("run: trace cadence follows trace_every in accesses") {
  const Matrix centers = random_centers(4, 2, 53);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  RunOptions opt;
  opt.method = Method::fg;
  opt.schedule = StepSizeSchedule::constant(0.2 / p.L());
  opt.trace_every = 8;  // 2 passes of 4
  opt.grad_tol = 1e-11;
  const RunResult res = run(p, Vector::Ones(2), opt);
  for (std::size_t i = 0; i + 1 < res.trace.size(); ++i)
    CHECK(res.trace[i + 1].k - res.trace[i].k == 8);
}

TEST_CASE("run: timing off pins wall time to zero") {
  const FiniteSumProblem p = tiny_logistic(3, 6, 50);
  RunOptions opt;
  opt.method = Method::ciag;
  opt.schedule = StepSizeSchedule::constant(0.5 / p.L());
  opt.timing = false;
  opt.max_passes = 10;
  opt.grad_tol = 0.0;
  const RunResult res = run(p, Vector::Zero(3), opt);
  for (const TraceRecord& r : res.trace) CHECK(r.wall_time_s == 0.0);
}

TEST_CASE("run: option validation") {
  const FiniteSumProblem p = tiny_logistic(3, 4, 51);
  RunOptions opt;
  opt.trace_every = -1;
  CHECK_THROWS_AS(run(p, Vector::Zero(3), opt), std::invalid_argument);
  opt.trace_every = 0;
  opt.max_passes = 0;
  CHECK_THROWS_AS(run(p, Vector::Zero(3), opt), std::invalid_argument);
  opt.max_passes = 10;
  opt.grad_tol = -1.0;
  CHECK_THROWS_AS(run(p, Vector::Zero(3), opt), std::invalid_argument);
  opt.grad_tol = 1e-10;
  CHECK_THROWS_AS(run(p, Vector::Zero(5), opt), std::invalid_argument);
}

TEST_CASE("run: starting at the optimum returns immediately") {
  const Matrix centers = random_centers(4, 3, 57);
  const FiniteSumProblem p = make_quadratic_problem(centers);
  RunOptions opt;
  opt.method = Method::fg;
  opt.schedule = StepSizeSchedule::constant(0.1 / p.L());
  opt.grad_tol = 1e-8;
  const RunResult res = run(p, weighted_centroid(centers), opt);
  CHECK(res.converged);
  CHECK(res.trace.size() == 1);
  CHECK(res.trace.front().k == 0);
}

TEST_CASE("run: minibatch aggregation converges") {
  const FiniteSumProblem p = tiny_logistic(4, 10, 58);
  RunOptions opt;
  opt.method = Method::ciag;
  opt.schedule = StepSizeSchedule::constant(1.0 / p.L());
  opt.selection = SelectionRule::cyclic_minibatch(3);
  opt.grad_tol = 1e-9;
  opt.max_passes = 200;
  const RunResult res = run(p, Vector::Zero(4), opt);
  CHECK(res.converged);
  CHECK(full_gradient(p, res.final_theta).norm() <= 1e-9);
}
