// SPDX-License-Identifier: Apache-2.0
//
// Maxwell residuals for two-piece media and the interface-condition penalty.
// Templated over the value type: plain doubles for oracles and prediction,
// tape expressions (per-point columns) for training losses.

#ifndef DAPINN_PHYSICS_HPP
#define DAPINN_PHYSICS_HPP

#include <Eigen/Dense>
#include <type_traits>
#include <utility>

#include "dapinn/errors.hpp"
#include "dapinn/tape.hpp"

namespace dapinn::physics {

// Trainable physical vector: material constants per sub-domain plus the
// interface location d. mu/eps may pass through nonphysical values while
// optimizing; only d is clamped (by the trainer).
struct MaterialParams {
  double mu1 = 1.0;
  double eps1 = 1.0;
  double mu2 = 1.0;
  double eps2 = 1.0;
  double d = 0.0;
};

struct CaseGeometry {
  int dimension = 1;      // 1 or 2 spatial dimensions
  double x_bound = 1.0;   // x in [0, x_bound]
  double y_bound = 0.0;   // y in [0, y_bound], 2D only
  double t_horizon = 1.0; // t in [0, t_horizon]

  void validate() const {
    if (dimension != 1 && dimension != 2)
      throw config_error("geometry: dimension must be 1 or 2");
    if (x_bound <= 0.0 || t_horizon <= 0.0 || (dimension == 2 && y_bound <= 0.0))
      throw config_error("geometry: bounds must be positive");
  }

  bool contains(double t, double x, double y = 0.0) const {
    if (t < 0.0 || t > t_horizon || x < 0.0 || x > x_bound) return false;
    if (dimension == 2 && (y < 0.0 || y > y_bound)) return false;
    return true;
  }
};

// Piecewise-constant material lookup; the tie x = d belongs to side 1.
inline std::pair<double, double> material_at(const MaterialParams& lambda, double x) {
  if (x <= lambda.d) return {lambda.mu1, lambda.eps1};
  return {lambda.mu2, lambda.eps2};
}

template <class T>
T sq(const T& v) {
  if constexpr (std::is_same_v<T, ad::Expr>)
    return ad::square(v);
  else
    return v * v;
}

template <class T>
struct Fields1D {
  T ey, hz;
};

template <class T>
struct Fields2D {
  T ex, ey, hz;
};

template <class T>
struct Derivs1D {
  T dey_dt, dey_dx, dhz_dt, dhz_dx;
};

template <class T>
struct Derivs2D {
  T dex_dt, dex_dy, dey_dt, dey_dx, dhz_dt, dhz_dx, dhz_dy;
};

// 1D residuals: f = dEy/dx + mu dHz/dt, h = dHz/dx + eps dEy/dt.
template <class T>
struct Residual1D {
  T faraday, ampere;  // (f, h)
};

// 2D residuals: Ampere r_ax = eps dEx/dt - dHz/dy, r_ay = eps dEy/dt + dHz/dx;
// Faraday r_far = dEy/dx - dEx/dy + mu dHz/dt.
template <class T>
struct Residual2D {
  T ampere_x, ampere_y, faraday;
};

template <class T>
Residual1D<T> residual_1d(const Derivs1D<T>& g, const T& mu, const T& eps) {
  return {g.dey_dx + mu * g.dhz_dt, g.dhz_dx + eps * g.dey_dt};
}

template <class T>
Residual2D<T> residual_2d(const Derivs2D<T>& g, const T& mu, const T& eps) {
  return {eps * g.dex_dt - g.dhz_dy,
          eps * g.dey_dt + g.dhz_dx,
          g.dey_dx - g.dex_dy + mu * g.dhz_dt};
}

// Interface jump penalty with the interface normal along x. Both 1D field
// components are tangential; in 2D only E_X is normal, so the mu-term of the
// general interface conditions vanishes identically and is dropped.
template <class T>
T interface_residual_1d(const Fields1D<T>& f1, const Fields1D<T>& f2) {
  return sq<T>(f1.ey - f2.ey) + sq<T>(f1.hz - f2.hz);
}

template <class T>
T interface_residual_2d(const Fields2D<T>& f1, const Fields2D<T>& f2, const T& eps1,
                        const T& eps2) {
  return sq<T>(f1.ey - f2.ey) + sq<T>(f1.hz - f2.hz) + sq<T>(eps1 * f1.ex - eps2 * f2.ex);
}

// Runtime-dimension variant on raw component vectors (1D: [E_Y, H_Z];
// 2D: [E_X, E_Y, H_Z]), both evaluated at the same interface point.
inline double interface_residual(const Eigen::VectorXd& fields1,
                                 const Eigen::VectorXd& fields2,
                                 const MaterialParams& lambda, const CaseGeometry& geometry) {
  if (fields1.size() != fields2.size())
    throw shape_error("interface_residual: field vectors disagree in size");
  const long want = geometry.dimension == 1 ? 2 : 3;
  if (fields1.size() != want)
    throw shape_error("interface_residual: field count does not match case dimension");
  if (geometry.dimension == 1) {
    return interface_residual_1d<double>({fields1(0), fields1(1)}, {fields2(0), fields2(1)});
  }
  return interface_residual_2d<double>({fields1(0), fields1(1), fields1(2)},
                                       {fields2(0), fields2(1), fields2(2)}, lambda.eps1,
                                       lambda.eps2);
}

}  // namespace dapinn::physics

#endif  // DAPINN_PHYSICS_HPP
