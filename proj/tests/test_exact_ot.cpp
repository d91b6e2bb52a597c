#include <doctest.h>

#include <cmath>
#include <limits>

#include "stmtl/exact_ot.hpp"
#include "stmtl/rng.hpp"

using namespace stmtl;

namespace {

// Exhaustive vertex enumeration over the 3x3 transport polytope: every basis
// of 5 cells that triangular substitution can solve is a candidate vertex;
// feasible ones bound the optimum from above, and the best is the optimum.
double enumerate_3x3(const std::vector<double>& mu, const std::vector<double>& nu,
                     const std::vector<double>& cost) {
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < (1 << 9); ++mask) {
    if (__builtin_popcount(static_cast<unsigned>(mask)) != 5) continue;
    double x[9];
    bool known[9] = {false};
    double row_rem[3] = {mu[0], mu[1], mu[2]};
    double col_rem[3] = {nu[0], nu[1], nu[2]};
    int unknown = 0;
    for (int c = 0; c < 9; ++c)
      if (mask & (1 << c)) ++unknown;
    // zero out non-basis cells
    for (int c = 0; c < 9; ++c)
      if (!(mask & (1 << c))) {
        x[c] = 0.0;
        known[c] = true;
      }
    bool progress = true;
    while (unknown > 0 && progress) {
      progress = false;
      for (int r = 0; r < 3; ++r) {
        int cnt = 0, cell = -1;
        for (int c = 0; c < 3; ++c)
          if (!known[r * 3 + c]) {
            ++cnt;
            cell = r * 3 + c;
          }
        if (cnt == 1) {
          x[cell] = row_rem[r];
          known[cell] = true;
          row_rem[r] = 0.0;
          col_rem[cell % 3] -= x[cell];
          --unknown;
          progress = true;
        } else if (cnt > 0) {
          double used = 0.0;
          (void)used;
        }
      }
      for (int c = 0; c < 3; ++c) {
        int cnt = 0, cell = -1;
        for (int r = 0; r < 3; ++r)
          if (!known[r * 3 + c]) {
            ++cnt;
            cell = r * 3 + c;
          }
        if (cnt == 1) {
          x[cell] = col_rem[c];
          known[cell] = true;
          col_rem[c] = 0.0;
          row_rem[cell / 3] -= x[cell];
          --unknown;
          progress = true;
        }
      }
    }
    if (unknown > 0) continue;  // cyclic basis, not a vertex
    bool feasible = true;
    for (int c = 0; c < 9 && feasible; ++c)
      if (x[c] < -1e-9) feasible = false;
    for (int r = 0; r < 3 && feasible; ++r)
      if (std::abs(row_rem[r]) > 1e-9) feasible = false;
    for (int c = 0; c < 3 && feasible; ++c)
      if (std::abs(col_rem[c]) > 1e-9) feasible = false;
    if (!feasible) continue;
    double total = 0.0;
    for (int c = 0; c < 9; ++c) total += x[c] * cost[static_cast<size_t>(c)];
    best = std::min(best, total);
  }
  return best;
}

}  // namespace

TEST_CASE("identical distributions cost nothing") {
  std::vector<double> w = {0.25, 0.5, 0.25};
  std::vector<Point2> p = {{0, 0}, {1, 3}, {4, 2}};
  CHECK(exact_ot_cost(w, p, w, p) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("a point mass moved across distance d costs d") {
  std::vector<double> w = {1.0};
  std::vector<Point2> a = {{0, 0}};
  std::vector<Point2> b = {{0, 7}};
  CHECK(exact_ot_cost(w, a, w, b) == doctest::Approx(7.0).epsilon(1e-12));

  // an unbalanced swap moves only the excess
  std::vector<double> mu = {0.8, 0.2};
  std::vector<double> nu = {0.2, 0.8};
  std::vector<Point2> pts = {{0, 0}, {0, 5}};
  CHECK(exact_ot_cost(mu, pts, nu, pts) == doctest::Approx(0.6 * 5.0).epsilon(1e-12));
}

TEST_CASE("3x3 instances match exhaustive vertex enumeration") {
  Rng rng(31337);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> mu(3), nu(3), cost(9);
    double sm = 0, sn = 0;
    for (auto& v : mu) {
      v = 0.1 + rng.uniform();
      sm += v;
    }
    for (auto& v : nu) {
      v = 0.1 + rng.uniform();
      sn += v;
    }
    for (auto& v : mu) v /= sm;
    for (auto& v : nu) v /= sn;
    for (auto& v : cost) v = rng.uniform(0.0, 5.0);
    const double brute = enumerate_3x3(mu, nu, cost);
    const double flow = exact_ot_cost(mu, nu, cost);
    CHECK(flow == doctest::Approx(brute).epsilon(1e-9));
  }
}

TEST_CASE("hand-checked 3x3 instance") {
  std::vector<double> mu = {0.5, 0.3, 0.2};
  std::vector<double> nu = {0.2, 0.3, 0.5};
  // cost favors the diagonal, forcing mass 0.3 off mu[0]
  std::vector<double> cost = {0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0};
  const double brute = enumerate_3x3(mu, nu, cost);
  CHECK(exact_ot_cost(mu, nu, cost) == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("contract errors") {
  std::vector<double> w11(11, 1.0 / 11.0);
  std::vector<double> one = {1.0};
  std::vector<double> c11(11, 1.0);
  CHECK_THROWS_AS(exact_ot_cost(w11, one, c11), ContractError);
  CHECK_THROWS_AS(exact_ot_cost({0.5}, {0.7}, {1.0}), ContractError);  // mass mismatch
  CHECK_THROWS_AS(exact_ot_cost({-0.1, 1.1}, {0.5, 0.5}, std::vector<double>(4, 1.0)),
                  ContractError);
}
