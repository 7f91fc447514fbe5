// SPDX-License-Identifier: Apache-2.0
//
// Domain-adaptive batch construction: the fixed dataset is resplit by the
// current interface estimate d, and collocation sets are redrawn with
// x-coordinates that are explicit functions of d (x = nu*d on side 1,
// x = nu*(B-d)+d on side 2, x = d on the interface). The nu draws are kept so
// the trainer can rebuild those coordinates as differentiable expressions.

#ifndef DAPINN_SAMPLER_HPP
#define DAPINN_SAMPLER_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "dapinn/errors.hpp"
#include "dapinn/physics.hpp"
#include "dapinn/rng.hpp"

namespace dapinn::sampler {

using physics::CaseGeometry;
using Vector = Eigen::VectorXd;

struct DataPoint {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;  // unused in 1D
  Eigen::VectorXd u;
};

using Dataset = std::vector<DataPoint>;

struct SamplerConfig {
  int n_data = 1;  // dataset size (used at generation time)
  int n_p1 = 1;
  int n_p2 = 1;
  int n_i = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_data < 1 || n_p1 < 1 || n_p2 < 1 || n_i < 1)
      throw config_error("sampler: all counts must be >= 1");
  }
};

struct CollocationSet {
  Vector t;
  Vector x;
  Vector y;   // empty in 1D
  Vector nu;  // empty for the interface set
  long size() const { return t.size(); }
};

struct DataSplit {
  std::vector<int> side1;  // indices with x <= d, original order
  std::vector<int> side2;  // indices with x > d, original order
  bool side1_empty = false;
  bool side2_empty = false;
};

// Partition by x <= d / x > d; order preserved. An empty side is flagged,
// not an error (d can sit outside the data range early in training).
inline DataSplit split_data(const Dataset& data, double d) {
  DataSplit split;
  split.side1.reserve(data.size());
  split.side2.reserve(data.size());
  for (int i = 0; i < static_cast<int>(data.size()); ++i) {
    if (data[i].x <= d)
      split.side1.push_back(i);
    else
      split.side2.push_back(i);
  }
  split.side1_empty = split.side1.empty();
  split.side2_empty = split.side2.empty();
  return split;
}

// x-coordinate maps for the collocation sets.
inline double collocation_x_side1(double nu, double d) { return nu * d; }
inline double collocation_x_side2(double nu, double d, double b) {
  return nu * (b - d) + d;
}

struct Collocation {
  CollocationSet p1, p2, interface_pts;
};

// Redraws the three collocation sets for the current interface estimate d.
// Draw order per point is pinned (nu, then t, then y) so streams are stable.
inline Collocation sample_collocation(double d, const CaseGeometry& geometry,
                                      const SamplerConfig& config, Rng& rng) {
  if (!(d > 0.0 && d < geometry.x_bound))
    throw range_error("sample_collocation: d must lie strictly inside (0, B)");
  config.validate();
  const bool is2d = geometry.dimension == 2;

  Collocation out;
  const auto fill = [&](CollocationSet& set, int n, int side) {
    set.t.resize(n);
    set.x.resize(n);
    set.y.resize(is2d ? n : 0);
    set.nu.resize(side == 0 ? 0 : n);
    for (int i = 0; i < n; ++i) {
      if (side != 0) {
        const double nu = rng.uniform();
        set.nu(i) = nu;
        set.x(i) = side == 1 ? collocation_x_side1(nu, d)
                             : collocation_x_side2(nu, d, geometry.x_bound);
      } else {
        set.x(i) = d;
      }
      set.t(i) = rng.uniform(0.0, geometry.t_horizon);
      if (is2d) set.y(i) = rng.uniform(0.0, geometry.y_bound);
    }
  };
  fill(out.p1, config.n_p1, 1);
  fill(out.p2, config.n_p2, 2);
  fill(out.interface_pts, config.n_i, 0);
  return out;
}

// Per-iteration view the trainer consumes: data split plus collocation sets.
struct SampleBatch {
  DataSplit split;
  Collocation collocation;
};

inline SampleBatch make_batch(const Dataset& data, double d, const CaseGeometry& geometry,
                              const SamplerConfig& config, Rng& rng) {
  return {split_data(data, d), sample_collocation(d, geometry, config, rng)};
}

}  // namespace dapinn::sampler

#endif  // DAPINN_SAMPLER_HPP
