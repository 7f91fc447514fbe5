// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "dapinn/rng.hpp"
#include "dapinn/sampler.hpp"

using dapinn::Rng;
namespace sp = dapinn::sampler;
using dapinn::physics::CaseGeometry;

namespace {

sp::Dataset points_at(std::initializer_list<double> xs) {
  sp::Dataset data;
  for (double x : xs) {
    sp::DataPoint p;
    p.x = x;
    p.u = Eigen::VectorXd::Zero(2);
    data.push_back(p);
  }
  return data;
}

}  // namespace

TEST_CASE("split_data: partition by x <= d with order preserved") {
  auto data = points_at({5.0, 12.0, 10.0, 19.5, 1.0});
  auto split = sp::split_data(data, 10.0);
  CHECK(split.side1 == std::vector<int>{0, 2, 4});  // x = 10 ties to side 1
  CHECK(split.side2 == std::vector<int>{1, 3});
  CHECK_FALSE(split.side1_empty);
  CHECK_FALSE(split.side2_empty);
  CHECK(split.side1.size() + split.side2.size() == data.size());
}

TEST_CASE("split_data: degenerate split is flagged, not an error") {
  auto data = points_at({5.0, 12.0, 18.0});
  auto split = sp::split_data(data, 25.0);  // d beyond the data range
  CHECK(split.side2.empty());
  CHECK(split.side2_empty);
  CHECK_FALSE(split.side1_empty);
}

TEST_CASE("collocation coordinate maps") {
  CHECK(sp::collocation_x_side1(0.5, 10.0) == 5.0);
  CHECK(sp::collocation_x_side2(0.5, 10.0, 20.0) == 15.0);
  CHECK(sp::collocation_x_side1(0.0, 10.0) == 0.0);
  CHECK(sp::collocation_x_side2(0.0, 10.0, 20.0) == 10.0);
  CHECK(sp::collocation_x_side1(1.0, 10.0) == 10.0);
  CHECK(sp::collocation_x_side2(1.0, 10.0, 20.0) == 20.0);
}

TEST_CASE("sample_collocation: interface points sit exactly at d") {
  const CaseGeometry geo{1, 20.0, 0.0, 10.0};
  sp::SamplerConfig cfg;
  cfg.n_p1 = cfg.n_p2 = cfg.n_i = 64;
  Rng rng(17);
  auto c = sp::sample_collocation(13.25, geo, cfg, rng);
  for (long i = 0; i < c.interface_pts.size(); ++i)
    CHECK(c.interface_pts.x(i) == 13.25);
}

TEST_CASE("sample_collocation: range invariants over randomized trials") {
  Rng meta(2024);
  sp::SamplerConfig cfg;
  cfg.n_p1 = cfg.n_p2 = cfg.n_i = 4;
  for (int trial = 0; trial < 10000; ++trial) {
    const double b = meta.uniform(0.5, 50.0);
    const double d = meta.uniform(1e-3 * b, b * (1 - 1e-3));
    const bool is2d = (trial % 3) == 0;
    const CaseGeometry geo{is2d ? 2 : 1, b, is2d ? 3.0 : 0.0, 2.0};
    Rng rng(meta.next_u64());
    auto c = sp::sample_collocation(d, geo, cfg, rng);
    for (long i = 0; i < c.p1.size(); ++i) {
      REQUIRE(c.p1.x(i) >= 0.0);
      REQUIRE(c.p1.x(i) <= d);
      REQUIRE(c.p1.t(i) >= 0.0);
      REQUIRE(c.p1.t(i) <= geo.t_horizon);
    }
    for (long i = 0; i < c.p2.size(); ++i) {
      REQUIRE(c.p2.x(i) >= d);
      REQUIRE(c.p2.x(i) <= b);
    }
    for (long i = 0; i < c.interface_pts.size(); ++i) REQUIRE(c.interface_pts.x(i) == d);
    if (is2d)
      for (long i = 0; i < c.p1.size(); ++i) {
        REQUIRE(c.p1.y(i) >= 0.0);
        REQUIRE(c.p1.y(i) <= geo.y_bound);
      }
  }
}

TEST_CASE("sample_collocation: deterministic given the rng state") {
  const CaseGeometry geo{1, 20.0, 0.0, 10.0};
  sp::SamplerConfig cfg;
  cfg.n_p1 = cfg.n_p2 = cfg.n_i = 128;
  Rng r1(99), r2(99);
  auto a = sp::sample_collocation(7.5, geo, cfg, r1);
  auto b = sp::sample_collocation(7.5, geo, cfg, r2);
  CHECK(a.p1.x == b.p1.x);
  CHECK(a.p1.t == b.p1.t);
  CHECK(a.p2.nu == b.p2.nu);
  CHECK(a.interface_pts.t == b.interface_pts.t);
}

TEST_CASE("sample_collocation: empirical mean of side-1 x tends to d/2") {
  const CaseGeometry geo{1, 20.0, 0.0, 10.0};
  sp::SamplerConfig cfg;
  cfg.n_p1 = 20000;
  cfg.n_p2 = 1;
  cfg.n_i = 1;
  const double d = 10.0;
  Rng rng(7);
  auto c = sp::sample_collocation(d, geo, cfg, rng);
  const double mean = c.p1.x.mean();
  const double sigma_mean = d / std::sqrt(12.0) / std::sqrt(double(cfg.n_p1));
  CHECK(std::abs(mean - d / 2) <= 3.0 * sigma_mean);
}

TEST_CASE("sample_collocation: preconditions") {
  const CaseGeometry geo{1, 20.0, 0.0, 10.0};
  sp::SamplerConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(sp::sample_collocation(0.0, geo, cfg, rng), dapinn::range_error);
  CHECK_THROWS_AS(sp::sample_collocation(20.0, geo, cfg, rng), dapinn::range_error);
  CHECK_THROWS_AS(sp::sample_collocation(-3.0, geo, cfg, rng), dapinn::range_error);
  sp::SamplerConfig bad;
  bad.n_i = 0;
  CHECK_THROWS_AS(sp::sample_collocation(5.0, geo, bad, rng), dapinn::config_error);
}
