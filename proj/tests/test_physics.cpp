// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "analytic_oracles.hpp"
#include "dapinn/analytic.hpp"
#include "dapinn/physics.hpp"
#include "dapinn/rng.hpp"
#include "dapinn/tape.hpp"

using dapinn::Rng;
namespace ad = dapinn::ad;
namespace ph = dapinn::physics;
using dapinn::analytic::AnalyticCase1D;
using dapinn::analytic::AnalyticCase2D;

TEST_CASE("material_at: piecewise lookup with tie to side 1") {
  const ph::MaterialParams lambda_1d{1.0, 1.0, 9.0, 1.0, 10.0};
  CHECK(ph::material_at(lambda_1d, 15.0) == std::pair{9.0, 1.0});
  CHECK(ph::material_at(lambda_1d, 10.0) == std::pair{1.0, 1.0});  // tie -> side 1
  CHECK(ph::material_at(lambda_1d, 3.0) == std::pair{1.0, 1.0});

  const ph::MaterialParams lambda_2d{1.0, 2.0, 1.0, 5.0, M_PI};
  CHECK(ph::material_at(lambda_2d, 1.0) == std::pair{1.0, 2.0});
  CHECK(ph::material_at(lambda_2d, 4.0) == std::pair{1.0, 5.0});
}

TEST_CASE("material_at: piecewise constant on each side") {
  Rng rng(3);
  const ph::MaterialParams lambda{2.0, 3.0, 4.0, 5.0, 7.0};
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(0.0, 7.0), b = rng.uniform(0.0, 7.0);
    CHECK(ph::material_at(lambda, a) == ph::material_at(lambda, b));
    const double c = rng.uniform(7.0 + 1e-12, 20.0), d = rng.uniform(7.0 + 1e-12, 20.0);
    CHECK(ph::material_at(lambda, c) == ph::material_at(lambda, d));
  }
}

TEST_CASE("residual_1d: plug-in values") {
  CHECK(ph::residual_1d<double>({0, 0, 0, 0}, 9.0, 1.0).faraday == 0.0);
  CHECK(ph::residual_1d<double>({0, 0, 0, 0}, 9.0, 1.0).ampere == 0.0);
  // dEy/dx = 1, everything else zero, mu = 9 -> (1, 0)
  const auto r = ph::residual_1d<double>({/*dey_dt=*/0, /*dey_dx=*/1, /*dhz_dt=*/0,
                                          /*dhz_dx=*/0},
                                         9.0, 1.0);
  CHECK(r.faraday == 1.0);
  CHECK(r.ampere == 0.0);
}

TEST_CASE("residual_2d: plug-in values") {
  const ph::Derivs2D<double> zero{0, 0, 0, 0, 0, 0, 0};
  const auto rz = ph::residual_2d<double>(zero, 1.0, 2.0);
  CHECK(rz.ampere_x == 0.0);
  CHECK(rz.ampere_y == 0.0);
  CHECK(rz.faraday == 0.0);
  // dHz/dy = 1, everything else zero -> (-1, 0, 0)
  ph::Derivs2D<double> g = zero;
  g.dhz_dy = 1.0;
  const auto r = ph::residual_2d<double>(g, 1.0, 2.0);
  CHECK(r.ampere_x == -1.0);
  CHECK(r.ampere_y == 0.0);
  CHECK(r.faraday == 0.0);
}

TEST_CASE("residuals vanish on the closed-form solutions (symbolic oracle)") {
  SECTION("1D at random points") {
    const AnalyticCase1D c;
    Rng rng(41);
    for (int i = 0; i < 1000; ++i) {
      const double t = rng.uniform(0.0, c.geometry.t_horizon);
      const double x = rng.uniform(0.0, c.geometry.x_bound);
      const auto [mu, eps] = ph::material_at(c.truth, x);
      const auto r = ph::residual_1d<double>(oracle::derivs_1d(c, t, x), mu, eps);
      REQUIRE(std::abs(r.faraday) <= 1e-12);
      REQUIRE(std::abs(r.ampere) <= 1e-12);
    }
  }
  SECTION("2D at random points") {
    const AnalyticCase2D c;
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
      const double t = rng.uniform(0.0, c.geometry.t_horizon);
      const double x = rng.uniform(0.0, c.geometry.x_bound);
      const double y = rng.uniform(0.0, c.geometry.y_bound);
      const auto [mu, eps] = ph::material_at(c.truth, x);
      const auto r = ph::residual_2d<double>(oracle::derivs_2d(c, t, x, y), mu, eps);
      REQUIRE(std::abs(r.ampere_x) <= 1e-12);
      REQUIRE(std::abs(r.ampere_y) <= 1e-12);
      REQUIRE(std::abs(r.faraday) <= 1e-12);
    }
  }
}

TEST_CASE("residual operators are linear in the derivatives") {
  Rng rng(17);
  const double mu = rng.uniform(0.5, 5.0), eps = rng.uniform(0.5, 5.0);
  const auto rand1 = [&] {
    return ph::Derivs1D<double>{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
  };
  const auto a = rand1(), b = rand1();
  const double ca = 1.3, cb = -2.1;
  const ph::Derivs1D<double> combo{ca * a.dey_dt + cb * b.dey_dt, ca * a.dey_dx + cb * b.dey_dx,
                                   ca * a.dhz_dt + cb * b.dhz_dt, ca * a.dhz_dx + cb * b.dhz_dx};
  const auto ra = ph::residual_1d(a, mu, eps);
  const auto rb = ph::residual_1d(b, mu, eps);
  const auto rc = ph::residual_1d(combo, mu, eps);
  CHECK(rc.faraday == Catch::Approx(ca * ra.faraday + cb * rb.faraday).margin(1e-12));
  CHECK(rc.ampere == Catch::Approx(ca * ra.ampere + cb * rb.ampere).margin(1e-12));
}

TEST_CASE("interface_residual: closed forms and properties") {
  const ph::CaseGeometry geo1{1, 20.0, 0.0, 10.0};
  const ph::CaseGeometry geo2{2, 2 * M_PI, 2 * M_PI, 2.0};

  SECTION("identical fields and equal eps give zero") {
    Eigen::VectorXd f(2);
    f << 0.4, -0.2;
    const ph::MaterialParams lambda{1, 3, 1, 3, 10};
    CHECK(ph::interface_residual(f, f, lambda, geo1) == 0.0);
  }
  SECTION("a delta in E_Y alone gives delta^2") {
    Eigen::VectorXd f1(2), f2(2);
    f1 << 0.7, 0.1;
    f2 << 0.7 + 0.25, 0.1;
    const ph::MaterialParams lambda{1, 1, 1, 1, 10};
    CHECK(ph::interface_residual(f1, f2, lambda, geo1) == Catch::Approx(0.0625).margin(1e-15));
  }
  SECTION("2D closed form is continuous at the interface (oracle)") {
    const AnalyticCase2D c;
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      const double t = rng.uniform(0.0, c.geometry.t_horizon);
      const double y = rng.uniform(0.0, c.geometry.y_bound);
      // Evaluate the side-2 closed form exactly at x = d in the test.
      const double C2 = 1.0 / (c.truth.eps2 * std::sqrt(c.truth.mu2) * c.omega);
      Eigen::VectorXd side2(3);
      side2 << c.ky * C2 * std::cos(c.omega * t) * std::cos(c.kx2 * c.truth.d) *
                   std::sin(c.ky * y),
          -c.kx2 * C2 * std::cos(c.omega * t) * std::sin(c.kx2 * c.truth.d) *
              std::cos(c.ky * y),
          std::sin(c.omega * t) * std::cos(c.kx2 * c.truth.d) * std::cos(c.ky * y) /
              std::sqrt(c.truth.mu2);
      const Eigen::VectorXd side1 = dapinn::analytic::eval_2d(c, t, c.truth.d, y);
      REQUIRE(ph::interface_residual(side1, side2, c.truth, geo2) <= 1e-12);
    }
  }
  SECTION("swapping sides (fields and materials) leaves s unchanged") {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      Eigen::VectorXd f1 = Eigen::VectorXd::NullaryExpr(3, [&](auto) { return rng.uniform(); });
      Eigen::VectorXd f2 = Eigen::VectorXd::NullaryExpr(3, [&](auto) { return rng.uniform(); });
      ph::MaterialParams lam{1, rng.uniform(0.5, 4.0), 1, rng.uniform(0.5, 4.0), 1.0};
      ph::MaterialParams swapped{lam.mu2, lam.eps2, lam.mu1, lam.eps1, lam.d};
      CHECK(ph::interface_residual(f1, f2, lam, geo2) ==
            Catch::Approx(ph::interface_residual(f2, f1, swapped, geo2)).margin(1e-15));
    }
  }
  SECTION("dimension mismatch is a shape error") {
    Eigen::VectorXd f2(2), f3(3);
    f2.setZero();
    f3.setZero();
    const ph::MaterialParams lambda{};
    CHECK_THROWS_AS(ph::interface_residual(f2, f3, lambda, geo1), dapinn::shape_error);
    CHECK_THROWS_AS(ph::interface_residual(f3, f3, lambda, geo1), dapinn::shape_error);
  }
}

TEST_CASE("interface penalty gradients w.r.t. lambda match finite differences") {
  // Tape route: s as recorded expression of (eps1, eps2) with fixed fields.
  Rng rng(77);
  ad::Tape tape;
  ad::Expr eps1 = tape.leaf("eps1", 2.2);
  ad::Expr eps2 = tape.leaf("eps2", 4.7);
  const auto cvec = [&](int n) {
    ad::Matrix m(n, 1);
    for (int i = 0; i < n; ++i) m(i, 0) = rng.uniform(-1.0, 1.0);
    return m;
  };
  ph::Fields2D<ad::Expr> f1{tape.constant(cvec(16)), tape.constant(cvec(16)),
                            tape.constant(cvec(16))};
  ph::Fields2D<ad::Expr> f2{tape.constant(cvec(16)), tape.constant(cvec(16)),
                            tape.constant(cvec(16))};
  ad::Expr s = ph::interface_residual_2d<ad::Expr>(f1, f2, eps1, eps2);
  ad::Expr loss = ad::sum(s);
  auto report = ad::check_gradient(tape, loss, 1e-5, 1e-6);
  INFO("max rel error " << report.max_rel_error);
  CHECK(report.passed);
}
