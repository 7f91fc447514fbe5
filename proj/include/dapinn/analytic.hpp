// SPDX-License-Identifier: Apache-2.0
//
// Closed-form ground truth for the two benchmark cases, dataset synthesis,
// and the l2 relative-error metric.
//
// Two conventions here differ from naive transcriptions and are pinned by the
// residual/continuity oracles in the test suite:
//   * 1D reflected wave travels leftward: phase 0.1t + 0.1x - 1.
//   * 2D angular frequency obeys omega^2 = (kx^2 + ky^2)/(mu*eps), giving
//     omega = 2 in both sub-domains.

#ifndef DAPINN_ANALYTIC_HPP
#define DAPINN_ANALYTIC_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dapinn/errors.hpp"
#include "dapinn/physics.hpp"
#include "dapinn/rng.hpp"
#include "dapinn/sampler.hpp"

namespace dapinn::analytic {

using physics::CaseGeometry;
using physics::MaterialParams;
using sampler::DataPoint;
using sampler::Dataset;
using Vector = Eigen::VectorXd;

struct AnalyticCase1D {
  MaterialParams truth{1.0, 1.0, 9.0, 1.0, 10.0};
  CaseGeometry geometry{1, 20.0, 0.0, 10.0};
  double frequency = 0.1;
  double wavenumber1 = 0.1;  // incident/reflected, side 1
  double wavenumber2 = 0.3;  // transmitted, side 2
  double amp_incident = 1.0;
  double amp_reflected = 0.5;
  double amp_transmitted = 1.5;
};

struct AnalyticCase2D {
  MaterialParams truth{1.0, 2.0, 1.0, 5.0, M_PI};
  CaseGeometry geometry{2, 2.0 * M_PI, 2.0 * M_PI, 2.0};
  double kx1 = 2.0;
  double kx2 = 4.0;
  double ky = 2.0;
  double omega = 2.0;
};

// (E_Y, H_Z) of the 1D case; superposed incident+reflected wave left of the
// interface, transmitted wave right of it.
inline Eigen::Vector2d eval_1d(const AnalyticCase1D& c, double t, double x) {
  if (!c.geometry.contains(t, x))
    throw range_error("eval_1d: point outside the space-time domain");
  const double w = c.frequency;
  if (x <= c.truth.d) {
    const double inc = std::cos(w * t - c.wavenumber1 * x + 1.0);
    const double ref = std::cos(w * t + c.wavenumber1 * x - 1.0);
    return {c.amp_incident * inc + c.amp_reflected * ref,
            c.amp_incident * inc - c.amp_reflected * ref};
  }
  const double tr = std::cos(w * t - c.wavenumber2 * x + 3.0);
  return {c.amp_transmitted * tr, 0.5 * tr};
}

// (E_X, E_Y, H_Z) of the 2D case with per-side (eps, k_X).
inline Eigen::Vector3d eval_2d(const AnalyticCase2D& c, double t, double x, double y) {
  if (!c.geometry.contains(t, x, y))
    throw range_error("eval_2d: point outside the space-time domain");
  const bool side1 = x <= c.truth.d;
  const double eps = side1 ? c.truth.eps1 : c.truth.eps2;
  const double mu = side1 ? c.truth.mu1 : c.truth.mu2;
  const double kx = side1 ? c.kx1 : c.kx2;
  const double root_mu = std::sqrt(mu);
  const double ex = c.ky / (eps * root_mu * c.omega) * std::cos(c.omega * t) *
                    std::cos(kx * x) * std::sin(c.ky * y);
  const double ey = -kx / (eps * root_mu * c.omega) * std::cos(c.omega * t) *
                    std::sin(kx * x) * std::cos(c.ky * y);
  const double hz = 1.0 / root_mu * std::sin(c.omega * t) * std::cos(kx * x) *
                    std::cos(c.ky * y);
  return {ex, ey, hz};
}

// N points uniform over the space-time box, fields from the closed form,
// optional iid Gaussian noise per component. Deterministic per seed.
template <class Case, class Eval>
Dataset generate_dataset_impl(const Case& c, Eval eval, int n, std::uint64_t seed,
                              double noise_sd) {
  if (n < 1) throw config_error("generate_dataset: need at least one point");
  if (noise_sd < 0.0) throw config_error("generate_dataset: noise_sd must be >= 0");
  Rng rng = Rng::stream(seed, /*tag=*/0x0d);
  const bool is2d = c.geometry.dimension == 2;
  Dataset data;
  data.reserve(n);
  for (int i = 0; i < n; ++i) {
    DataPoint p;
    p.t = rng.uniform(0.0, c.geometry.t_horizon);
    p.x = rng.uniform(0.0, c.geometry.x_bound);
    p.y = is2d ? rng.uniform(0.0, c.geometry.y_bound) : 0.0;
    p.u = eval(p.t, p.x, p.y);
    if (noise_sd > 0.0)
      for (long k = 0; k < p.u.size(); ++k) p.u(k) += noise_sd * rng.gaussian();
    data.push_back(std::move(p));
  }
  return data;
}

inline Dataset generate_dataset(const AnalyticCase1D& c, int n, std::uint64_t seed,
                                double noise_sd = 0.0) {
  return generate_dataset_impl(
      c, [&](double t, double x, double) -> Vector { return eval_1d(c, t, x); }, n, seed,
      noise_sd);
}

inline Dataset generate_dataset(const AnalyticCase2D& c, int n, std::uint64_t seed,
                                double noise_sd = 0.0) {
  return generate_dataset_impl(
      c, [&](double t, double x, double y) -> Vector { return eval_2d(c, t, x, y); }, n,
      seed, noise_sd);
}

// ||u - uhat||_2 / ||u||_2.
inline double l2_relative_error(const Vector& u, const Vector& u_hat) {
  if (u.size() != u_hat.size())
    throw shape_error("l2_relative_error: length mismatch");
  const double denom = u.norm();
  if (denom == 0.0)
    throw range_error("l2_relative_error: undefined for a zero reference");
  return (u - u_hat).norm() / denom;
}

inline double scalar_relative_error(double truth, double estimate) {
  Vector u(1), v(1);
  u << truth;
  v << estimate;
  return l2_relative_error(u, v);
}

// --- dataset CSV export/import --------------------------------------------------

inline std::vector<std::string> field_names(int dimension) {
  return dimension == 1 ? std::vector<std::string>{"ey", "hz"}
                        : std::vector<std::string>{"ex", "ey", "hz"};
}

inline void write_dataset_csv(const Dataset& data, int dimension, std::ostream& os) {
  os << "t,x";
  if (dimension == 2) os << ",y";
  for (const auto& f : field_names(dimension)) os << ',' << f;
  os << '\n';
  char buf[32];
  const auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << sep;
  };
  for (const DataPoint& p : data) {
    put(p.t, ',');
    put(p.x, dimension == 2 ? ',' : ',');
    if (dimension == 2) put(p.y, ',');
    for (long k = 0; k < p.u.size(); ++k) put(p.u(k), k + 1 == p.u.size() ? '\n' : ',');
  }
}

inline void write_dataset_csv(const Dataset& data, int dimension, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw range_error("cannot open '" + path + "' for writing");
  write_dataset_csv(data, dimension, os);
}

inline Dataset read_dataset_csv(std::istream& is, int dimension) {
  std::string line;
  if (!std::getline(is, line)) throw config_error("dataset csv: empty file");
  std::string expected = dimension == 1 ? "t,x" : "t,x,y";
  for (const auto& f : field_names(dimension)) expected += "," + f;
  if (line != expected)
    throw config_error("dataset csv: unexpected header '" + line + "' (want '" + expected +
                       "')");
  Dataset data;
  const int ncoord = dimension == 1 ? 2 : 3;
  const int nfield = dimension == 1 ? 2 : 3;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<int>(vals.size()) != ncoord + nfield)
      throw config_error("dataset csv: wrong column count");
    DataPoint p;
    p.t = vals[0];
    p.x = vals[1];
    p.y = dimension == 2 ? vals[2] : 0.0;
    p.u = Eigen::Map<const Vector>(vals.data() + ncoord, nfield);
    data.push_back(std::move(p));
  }
  return data;
}

inline Dataset read_dataset_csv(const std::string& path, int dimension) {
  std::ifstream is(path);
  if (!is) throw range_error("cannot open '" + path + "' for reading");
  return read_dataset_csv(is, dimension);
}

}  // namespace dapinn::analytic

#endif  // DAPINN_ANALYTIC_HPP
