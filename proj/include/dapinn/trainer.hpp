// SPDX-License-Identifier: Apache-2.0
//
// Composite loss (data + physics + interface), joint Adam over (theta1,
// theta2, lambda), the domain-adaptive training loop, and the single-network
// baseline. Gradient flows into the interface estimate d through the
// interface evaluation points and the collocation x-coordinates nu*d and
// nu*(B-d)+d; the data split carries no d-gradient.

#ifndef DAPINN_TRAINER_HPP
#define DAPINN_TRAINER_HPP

#include <Eigen/Dense>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dapinn/analytic.hpp"
#include "dapinn/errors.hpp"
#include "dapinn/network.hpp"
#include "dapinn/physics.hpp"
#include "dapinn/rng.hpp"
#include "dapinn/sampler.hpp"
#include "dapinn/tape.hpp"
#include "dapinn/threading.hpp"

namespace dapinn::train {

using ad::Expr;
using ad::Matrix;
using physics::CaseGeometry;
using physics::MaterialParams;
using sampler::Dataset;
using sampler::SampleBatch;

enum class Mode { kDaPinn, kBaseline };

inline const char* mode_name(Mode m) { return m == Mode::kDaPinn ? "da-pinn" : "baseline"; }

inline Mode mode_from_name(const std::string& s) {
  if (s == "da-pinn") return Mode::kDaPinn;
  if (s == "baseline") return Mode::kBaseline;
  throw config_error("unknown mode '" + s + "' (expected da-pinn|baseline)");
}

enum class StopRule { kMaxIters, kPlateau };

struct LossWeights {
  double data = 1.0;
  double physics = 1.0;
  double interface_ = 1.0;
};

struct TrainConfig {
  Mode mode = Mode::kDaPinn;
  double learning_rate = 1e-3;
  int max_iters = 1000;
  int resample_period = 1;  // redraw collocation every k iterations
  LossWeights weights;
  double clamp_margin_frac = 0.02;  // delta = frac * B
  StopRule stop = StopRule::kMaxIters;
  int plateau_window = 500;
  double plateau_rel_tol = 1e-8;
  MaterialParams lambda0;
  std::vector<int> hidden_sizes{30, 30, 30, 30, 30};
  ad::Activation activation = ad::Activation::kRelu;
  bool input_scaling = true;
  std::uint64_t seed = 1;
  int threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double lambda_lr_scale = 1.0;  // per-block learning-rate factor for lambda

  void validate(const CaseGeometry& geometry) const {
    geometry.validate();
    if (learning_rate < 0.0) throw config_error("train: learning_rate must be >= 0");
    if (max_iters < 0) throw config_error("train: max_iters must be >= 0");
    if (resample_period < 1) throw config_error("train: resample_period must be >= 1");
    if (!(clamp_margin_frac > 0.0 && clamp_margin_frac < 0.5))
      throw config_error("train: clamp_margin_frac must lie in (0, 0.5)");
    if (hidden_sizes.empty()) throw config_error("train: need at least one hidden layer");
    if (threads < 1) throw config_error("train: threads must be >= 1");
    if (plateau_window < 1) throw config_error("train: plateau_window must be >= 1");
  }
};

struct LossParts {
  double data = 0.0;
  double physics = 0.0;
  double interface_ = 0.0;
  double total = 0.0;
};

struct TraceRecord {
  int iter = 0;
  LossParts loss;
  MaterialParams lambda;  // values the losses were computed with (post-clamp)
  bool side1_empty = false;
  bool side2_empty = false;
  double ms = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;

  static constexpr const char* kCsvHeader =
      "iter,loss_d,loss_p,loss_i,total,mu1,eps1,mu2,eps2,d,ms";

  int flagged_iterations() const {
    int n = 0;
    for (const auto& r : records) n += (r.side1_empty || r.side2_empty) ? 1 : 0;
    return n;
  }

  void write_csv(std::ostream& os) const {
    os << kCsvHeader << '\n';
    char buf[400];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf,
                    "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6g\n",
                    r.iter, r.loss.data, r.loss.physics, r.loss.interface_, r.loss.total,
                    r.lambda.mu1, r.lambda.eps1, r.lambda.mu2, r.lambda.eps2, r.lambda.d,
                    r.ms);
      os << buf;
    }
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw range_error("cannot open '" + path + "' for writing");
    write_csv(os);
  }

  static TrainTrace read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw range_error("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader)
      throw config_error("trace csv: unexpected header");
    TrainTrace trace;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      TraceRecord r;
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> v;
      while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
      if (v.size() != 11) throw config_error("trace csv: wrong column count");
      r.iter = static_cast<int>(v[0]);
      r.loss = {v[1], v[2], v[3], v[4]};
      r.lambda = {v[5], v[6], v[7], v[8], v[9]};
      r.ms = v[10];
      trace.records.push_back(r);
    }
    return trace;
  }

  // Bitwise equality of everything except the wall-time column.
  bool numerically_equal(const TrainTrace& other) const {
    if (records.size() != other.records.size()) return false;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& a = records[i];
      const auto& b = other.records[i];
      if (a.iter != b.iter || a.side1_empty != b.side1_empty ||
          a.side2_empty != b.side2_empty)
        return false;
      const double av[9] = {a.loss.data, a.loss.physics, a.loss.interface_, a.loss.total,
                            a.lambda.mu1, a.lambda.eps1, a.lambda.mu2, a.lambda.eps2,
                            a.lambda.d};
      const double bv[9] = {b.loss.data, b.loss.physics, b.loss.interface_, b.loss.total,
                            b.lambda.mu1, b.lambda.eps1, b.lambda.mu2, b.lambda.eps2,
                            b.lambda.d};
      for (int k = 0; k < 9; ++k)
        if (std::memcmp(&av[k], &bv[k], sizeof(double)) != 0) return false;
    }
    return true;
  }
};

// --- Adam ------------------------------------------------------------------------

struct ParamBlock {
  std::string name;
  Matrix value;
  double lr_scale = 1.0;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_blocks(const std::vector<ParamBlock>& blocks, double b1, double b2,
                              double e) {
    AdamState s;
    s.beta1 = b1;
    s.beta2 = b2;
    s.eps = e;
    for (const auto& blk : blocks) {
      s.m.push_back(Matrix::Zero(blk.value.rows(), blk.value.cols()));
      s.v.push_back(Matrix::Zero(blk.value.rows(), blk.value.cols()));
    }
    return s;
  }
};

// Standard Adam with bias correction, applied jointly to every block.
// Throws if any gradient is non-finite, naming the offending block.
inline void adam_step(AdamState& state, std::vector<ParamBlock>& blocks,
                      const std::vector<Matrix>& grads, double lr) {
  if (blocks.size() != grads.size() || blocks.size() != state.m.size())
    throw shape_error("adam_step: block/gradient counts disagree");
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (!grads[i].allFinite())
      throw numeric_error("adam_step: non-finite gradient for parameter block '" +
                          blocks[i].name + "'");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] =
        (state.beta2 * state.v[i].array() + (1.0 - state.beta2) * grads[i].array().square())
            .matrix();
    const double step_lr = lr * blocks[i].lr_scale;
    blocks[i].value.array() -= step_lr * (state.m[i].array() / bc1) /
                               ((state.v[i].array() / bc2).sqrt() + state.eps);
  }
}

// --- field providers ----------------------------------------------------------------

// Per-point field values (and, when requested, their t/x/y derivatives) as
// column expressions over a batch of coordinate columns.
struct BatchFields {
  std::vector<Expr> value;                      // one column per field component
  std::vector<std::array<Expr, 3>> deriv;       // [component][axis t,x,y]
};

class FieldProvider {
 public:
  virtual ~FieldProvider() = default;
  virtual BatchFields eval(ad::Tape& tape, const std::vector<Expr>& coords,
                           bool with_derivs) = 0;
};

// The real thing: a sub-network evaluated on the tape, derivatives via the
// recorded forward tangent transform (so they remain differentiable in theta
// and, through the coordinate columns, in d).
class MlpFieldProvider final : public FieldProvider {
 public:
  explicit MlpFieldProvider(nn::TapeNet net) : net_(std::move(net)) {}

  BatchFields eval(ad::Tape& tape, const std::vector<Expr>& coords,
                   bool with_derivs) override {
    Expr y = net_.forward_cols(tape, coords);
    const int ncomp = static_cast<int>(tape.value(y).cols());
    BatchFields out;
    for (int c = 0; c < ncomp; ++c) out.value.push_back(tape.col(y, c));
    if (with_derivs) {
      const long n = tape.value(coords[0]).rows();
      out.deriv.resize(ncomp);
      for (std::size_t axis = 0; axis < coords.size(); ++axis) {
        auto ty = ad::forward_tangent(tape, {{coords[axis], Matrix::Ones(n, 1)}}, {y})[0];
        for (int c = 0; c < ncomp; ++c) out.deriv[c][axis] = tape.col(ty, c);
      }
    }
    return out;
  }

 private:
  nn::TapeNet net_;
};

// --- composite loss graph -------------------------------------------------------------

struct LambdaLeaves {
  Expr mu1, eps1, mu2, eps2, d;
};

inline std::vector<std::string> lambda_leaf_names() {
  return {"lam/mu1", "lam/eps1", "lam/mu2", "lam/eps2", "lam/d"};
}

inline LambdaLeaves register_lambda(ad::Tape& tape, const MaterialParams& lambda) {
  return {tape.leaf("lam/mu1", lambda.mu1), tape.leaf("lam/eps1", lambda.eps1),
          tape.leaf("lam/mu2", lambda.mu2), tape.leaf("lam/eps2", lambda.eps2),
          tape.leaf("lam/d", lambda.d)};
}

inline void set_lambda(ad::Tape& tape, const LambdaLeaves& leaves,
                       const MaterialParams& lambda) {
  tape.set_input(leaves.mu1, ad::Tape::scalar(lambda.mu1));
  tape.set_input(leaves.eps1, ad::Tape::scalar(lambda.eps1));
  tape.set_input(leaves.mu2, ad::Tape::scalar(lambda.mu2));
  tape.set_input(leaves.eps2, ad::Tape::scalar(lambda.eps2));
  tape.set_input(leaves.d, ad::Tape::scalar(lambda.d));
}

struct LossExprs {
  Expr data, physics, interface_, total;
};

namespace detail {

// Side mask over the full dataset: 1/N_side for member rows, 0 elsewhere, one
// column per field component. Updating the mask re-splits the data without
// changing the graph shape; an empty side is an all-zero mask.
inline Matrix split_mask(const std::vector<int>& idx, long n_total, int ncomp) {
  Matrix mask = Matrix::Zero(n_total, ncomp);
  if (!idx.empty()) {
    const double w = 1.0 / static_cast<double>(idx.size());
    for (int i : idx) mask.row(i).setConstant(w);
  }
  return mask;
}

// Masked mean over the dataset of the squared misfit between provider output
// and the measured fields: sum(mask .* (u_hat - u)^2).
inline Expr data_term(ad::Tape& tape, FieldProvider& provider,
                      const std::vector<Expr>& coords, Expr u, Expr mask, int ncomp) {
  BatchFields fields = provider.eval(tape, coords, /*with_derivs=*/false);
  Expr acc{nullptr, -1};
  for (int c = 0; c < ncomp; ++c) {
    Expr diff = fields.value[c] - tape.col(u, c);
    Expr term = tape.sum(tape.hadamard(tape.col(mask, c), tape.square(diff)));
    acc = acc.valid() ? acc + term : term;
  }
  return acc;
}

// Shared constant columns (and field matrix) for the whole dataset.
struct DataConstants {
  std::vector<Expr> coords;
  Expr u;
};

inline DataConstants data_constants(ad::Tape& tape, const Dataset& data, int dimension) {
  const long n = static_cast<long>(data.size());
  const int ncomp = dimension == 1 ? 2 : 3;
  Matrix tcol(n, 1), xcol(n, 1), ycol(n, 1), u(n, ncomp);
  for (long i = 0; i < n; ++i) {
    tcol(i, 0) = data[i].t;
    xcol(i, 0) = data[i].x;
    ycol(i, 0) = data[i].y;
    u.row(i) = data[i].u.transpose();
  }
  DataConstants out;
  out.coords = {tape.constant(tcol), tape.constant(xcol)};
  if (dimension == 2) out.coords.push_back(tape.constant(ycol));
  out.u = tape.constant(u);
  return out;
}

// Sum of squared Maxwell residuals over one collocation set, normalized by
// the point count. x-coordinates are rebuilt from nu and d when side != 0 so
// the loss is differentiable in d.
inline Expr physics_term(ad::Tape& tape, FieldProvider& provider,
                         const sampler::CollocationSet& set, int side,
                         const LambdaLeaves& lam, Expr mu, Expr eps,
                         const CaseGeometry& geometry,
                         std::vector<Expr>* input_handles) {
  const long n = set.size();
  Expr tcol = tape.constant(Matrix(set.t));
  Expr x{nullptr, -1};
  Expr nu{nullptr, -1};
  if (side == 1) {
    nu = tape.constant(Matrix(set.nu));
    x = tape.scale(nu, lam.d);  // x = nu * d
  } else {
    nu = tape.constant(Matrix(set.nu));
    Expr span = tape.affine(lam.d, -1.0, geometry.x_bound);  // B - d
    Expr ones = tape.constant(Matrix::Ones(n, 1));
    x = tape.scale(nu, span) + tape.scale(ones, lam.d);  // nu*(B-d) + d
  }
  std::vector<Expr> coords{tcol, x};
  Expr ycol{nullptr, -1};
  if (geometry.dimension == 2) {
    ycol = tape.constant(Matrix(set.y));
    coords.push_back(ycol);
  }
  if (input_handles) {
    input_handles->push_back(tcol);
    input_handles->push_back(nu);
    if (ycol.valid()) input_handles->push_back(ycol);
  }
  BatchFields f = provider.eval(tape, coords, /*with_derivs=*/true);
  Expr acc{nullptr, -1};
  const auto add_sq = [&](Expr r) {
    Expr term = tape.sum(tape.square(r));
    acc = acc.valid() ? acc + term : term;
  };
  if (geometry.dimension == 1) {
    physics::Derivs1D<Expr> g{f.deriv[0][0], f.deriv[0][1], f.deriv[1][0], f.deriv[1][1]};
    auto r = physics::residual_1d<Expr>(g, mu, eps);
    add_sq(r.faraday);
    add_sq(r.ampere);
  } else {
    physics::Derivs2D<Expr> g{f.deriv[0][0], f.deriv[0][2], f.deriv[1][0], f.deriv[1][1],
                              f.deriv[2][0], f.deriv[2][1], f.deriv[2][2]};
    auto r = physics::residual_2d<Expr>(g, mu, eps);
    add_sq(r.ampere_x);
    add_sq(r.ampere_y);
    add_sq(r.faraday);
  }
  return tape.scale_const(acc, 1.0 / static_cast<double>(n));
}

// Mean of s^2 over the interface set; both sub-networks evaluated at
// (t, d[, y]), so d receives gradient through the evaluation points.
inline Expr interface_term(ad::Tape& tape, FieldProvider& side1, FieldProvider& side2,
                           const sampler::CollocationSet& set, const LambdaLeaves& lam,
                           const CaseGeometry& geometry,
                           std::vector<Expr>* input_handles) {
  const long n = set.size();
  Expr tcol = tape.constant(Matrix(set.t));
  Expr ones = tape.constant(Matrix::Ones(n, 1));
  Expr x = tape.scale(ones, lam.d);
  std::vector<Expr> coords{tcol, x};
  Expr ycol{nullptr, -1};
  if (geometry.dimension == 2) {
    ycol = tape.constant(Matrix(set.y));
    coords.push_back(ycol);
  }
  if (input_handles) {
    input_handles->push_back(tcol);
    if (ycol.valid()) input_handles->push_back(ycol);
  }
  BatchFields f1 = side1.eval(tape, coords, false);
  BatchFields f2 = side2.eval(tape, coords, false);
  Expr s{nullptr, -1};
  if (geometry.dimension == 1) {
    s = physics::interface_residual_1d<Expr>({f1.value[0], f1.value[1]},
                                             {f2.value[0], f2.value[1]});
  } else {
    s = physics::interface_residual_2d<Expr>({f1.value[0], f1.value[1], f1.value[2]},
                                             {f2.value[0], f2.value[1], f2.value[2]},
                                             lam.eps1, lam.eps2);
  }
  return tape.scale_const(tape.sum(tape.square(s)), 1.0 / static_cast<double>(n));
}

}  // namespace detail

// Full da-PINN loss over a batch. The graph shape depends only on the counts
// (dataset size and collocation sizes), never on the split membership: data
// terms are masked over the whole dataset, so re-splitting is an input
// update. Empty data sides contribute zero (flagged upstream in the trace);
// an empty interface set is a configuration error.
inline LossExprs composite_loss_graph(ad::Tape& tape, FieldProvider& side1,
                                      FieldProvider& side2, const LambdaLeaves& lam,
                                      const Dataset& data, const SampleBatch& batch,
                                      const CaseGeometry& geometry, const LossWeights& w,
                                      std::vector<Expr>* input_handles = nullptr) {
  if (batch.collocation.interface_pts.size() == 0)
    throw config_error("composite_loss: interface collocation set is empty");
  const int ncomp = geometry.dimension == 1 ? 2 : 3;
  const long n = static_cast<long>(data.size());

  const auto consts = detail::data_constants(tape, data, geometry.dimension);
  Expr mask1 = tape.constant(detail::split_mask(batch.split.side1, n, ncomp));
  Expr mask2 = tape.constant(detail::split_mask(batch.split.side2, n, ncomp));
  if (input_handles) {
    input_handles->push_back(mask1);
    input_handles->push_back(mask2);
  }
  Expr loss_d = detail::data_term(tape, side1, consts.coords, consts.u, mask1, ncomp) +
                detail::data_term(tape, side2, consts.coords, consts.u, mask2, ncomp);

  Expr p1 = detail::physics_term(tape, side1, batch.collocation.p1, 1, lam, lam.mu1,
                                 lam.eps1, geometry, input_handles);
  Expr p2 = detail::physics_term(tape, side2, batch.collocation.p2, 2, lam, lam.mu2,
                                 lam.eps2, geometry, input_handles);
  Expr loss_p = p1 + p2;

  Expr loss_i = detail::interface_term(tape, side1, side2, batch.collocation.interface_pts,
                                       lam, geometry, input_handles);

  Expr total = tape.scale_const(loss_d, w.data) + tape.scale_const(loss_p, w.physics) +
               tape.scale_const(loss_i, w.interface_);
  return {loss_d, loss_p, loss_i, total};
}

// Baseline loss: one network over the whole domain, piecewise materials
// selected per collocation point by material_at, no interface term.
inline LossExprs baseline_loss_graph(ad::Tape& tape, FieldProvider& net,
                                     const LambdaLeaves& lam, const Dataset& data,
                                     const sampler::CollocationSet& collocation,
                                     double interface_position,
                                     const CaseGeometry& geometry, const LossWeights& w,
                                     std::vector<Expr>* input_handles = nullptr) {
  std::vector<int> all(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) all[i] = static_cast<int>(i);
  Expr loss_d = detail::data_term(tape, net, data, all, geometry.dimension, input_handles);

  // Group collocation points by material side under the current d.
  sampler::CollocationSet g1, g2;
  std::vector<long> idx1, idx2;
  for (long i = 0; i < collocation.size(); ++i)
    (collocation.x(i) <= interface_position ? idx1 : idx2).push_back(i);
  const auto gather = [&](const std::vector<long>& idx, sampler::CollocationSet& out) {
    out.t.resize(idx.size());
    out.x.resize(idx.size());
    out.y.resize(geometry.dimension == 2 ? idx.size() : 0);
    out.nu.resize(0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.t(i) = collocation.t(idx[i]);
      out.x(i) = collocation.x(idx[i]);
      if (geometry.dimension == 2) out.y(i) = collocation.y(idx[i]);
    }
  };
  gather(idx1, g1);
  gather(idx2, g2);

  // Constant-x physics term (no nu/d dependence) over one group.
  const auto plain_physics = [&](const sampler::CollocationSet& set, Expr mu,
                                 Expr eps) -> Expr {
    Expr tcol = tape.constant(Matrix(set.t));
    Expr xcol = tape.constant(Matrix(set.x));
    std::vector<Expr> coords{tcol, xcol};
    if (geometry.dimension == 2) coords.push_back(tape.constant(Matrix(set.y)));
    if (input_handles)
      for (const auto& c : coords) input_handles->push_back(c);
    BatchFields f = net.eval(tape, coords, true);
    Expr acc{nullptr, -1};
    const auto add_sq = [&](Expr r) {
      Expr term = tape.sum(tape.square(r));
      acc = acc.valid() ? acc + term : term;
    };
    if (geometry.dimension == 1) {
      physics::Derivs1D<Expr> g{f.deriv[0][0], f.deriv[0][1], f.deriv[1][0],
                                f.deriv[1][1]};
      auto r = physics::residual_1d<Expr>(g, mu, eps);
      add_sq(r.faraday);
      add_sq(r.ampere);
    } else {
      physics::Derivs2D<Expr> g{f.deriv[0][0], f.deriv[0][2], f.deriv[1][0],
                                f.deriv[1][1], f.deriv[2][0], f.deriv[2][1],
                                f.deriv[2][2]};
      auto r = physics::residual_2d<Expr>(g, mu, eps);
      add_sq(r.ampere_x);
      add_sq(r.ampere_y);
      add_sq(r.faraday);
    }
    return acc;
  };

  Expr psum{nullptr, -1};
  if (g1.size() > 0) psum = plain_physics(g1, lam.mu1, lam.eps1);
  if (g2.size() > 0) {
    Expr term = plain_physics(g2, lam.mu2, lam.eps2);
    psum = psum.valid() ? psum + term : term;
  }
  Expr loss_p = psum.valid()
                    ? tape.scale_const(psum, 1.0 / static_cast<double>(collocation.size()))
                    : tape.constant(0.0);

  Expr loss_i = tape.constant(0.0);
  Expr total = tape.scale_const(loss_d, w.data) + tape.scale_const(loss_p, w.physics) +
               tape.scale_const(loss_i, w.interface_);
  return {loss_d, loss_p, loss_i, total};
}

// One-shot evaluation of the da-PINN composite loss for given parameters.
inline LossParts composite_loss(const nn::NetworkParams& net1, const nn::NetworkParams& net2,
                                const MaterialParams& lambda, const Dataset& data,
                                const SampleBatch& batch, const CaseGeometry& geometry,
                                const LossWeights& weights) {
  ad::Tape tape;
  auto lam = register_lambda(tape, lambda);
  MlpFieldProvider p1(nn::TapeNet::register_on(tape, net1, "net1"));
  MlpFieldProvider p2(nn::TapeNet::register_on(tape, net2, "net2"));
  auto parts = composite_loss_graph(tape, p1, p2, lam, data, batch, geometry, weights);
  return {tape.value(parts.data)(0, 0), tape.value(parts.physics)(0, 0),
          tape.value(parts.interface_)(0, 0), tape.value(parts.total)(0, 0)};
}

// --- model & prediction ----------------------------------------------------------------

struct Model {
  Mode mode = Mode::kDaPinn;
  nn::NetworkParams net1;
  nn::NetworkParams net2;  // unused in baseline mode
  MaterialParams lambda;
  CaseGeometry geometry;
};

// Routes x <= d to Net1 and x > d to Net2 (baseline: single network).
// Rows of `points` are (t, x[, y]).
inline Matrix predict(const Model& model, const Matrix& points) {
  const int dim = model.geometry.dimension;
  if (points.cols() != dim + 1)
    throw shape_error("predict: expected columns (t, x" +
                      std::string(dim == 2 ? ", y" : "") + ")");
  for (long i = 0; i < points.rows(); ++i) {
    if (!model.geometry.contains(points(i, 0), points(i, 1), dim == 2 ? points(i, 2) : 0.0))
      throw range_error("predict: point " + std::to_string(i) + " outside the domain");
  }
  const int ncomp = dim == 1 ? 2 : 3;
  Matrix out(points.rows(), ncomp);
  if (model.mode == Mode::kBaseline) {
    out = nn::forward_batch(model.net1, points);
    return out;
  }
  std::vector<long> side1, side2;
  for (long i = 0; i < points.rows(); ++i)
    (points(i, 1) <= model.lambda.d ? side1 : side2).push_back(i);
  const auto run = [&](const std::vector<long>& idx, const nn::NetworkParams& net) {
    if (idx.empty()) return;
    Matrix sub(idx.size(), points.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) sub.row(k) = points.row(idx[k]);
    Matrix y = nn::forward_batch(net, sub);
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(idx[k]) = y.row(k);
  };
  run(side1, model.net1);
  run(side2, model.net2);
  return out;
}

// --- checkpoints -------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json lambda_to_json(const MaterialParams& l) {
  return {{"mu1", l.mu1}, {"eps1", l.eps1}, {"mu2", l.mu2}, {"eps2", l.eps2}, {"d", l.d}};
}

inline MaterialParams lambda_from_json(const nlohmann::json& j) {
  return {j.at("mu1").get<double>(), j.at("eps1").get<double>(), j.at("mu2").get<double>(),
          j.at("eps2").get<double>(), j.at("d").get<double>()};
}

struct Checkpoint {
  Model model;
  std::optional<AdamState> adam;
  int iterations_done = 0;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["mode"] = mode_name(ckpt.model.mode);
  j["iterations_done"] = ckpt.iterations_done;
  j["geometry"] = {{"dimension", ckpt.model.geometry.dimension},
                   {"x_bound", ckpt.model.geometry.x_bound},
                   {"y_bound", ckpt.model.geometry.y_bound},
                   {"t_horizon", ckpt.model.geometry.t_horizon}};
  j["lambda"] = lambda_to_json(ckpt.model.lambda);
  j["net1"] = nn::to_json(ckpt.model.net1);
  if (ckpt.model.mode == Mode::kDaPinn) j["net2"] = nn::to_json(ckpt.model.net2);
  if (ckpt.adam) {
    nlohmann::json ja;
    ja["step"] = ckpt.adam->step;
    ja["beta1"] = ckpt.adam->beta1;
    ja["beta2"] = ckpt.adam->beta2;
    ja["eps"] = ckpt.adam->eps;
    const auto dump = [](const std::vector<Matrix>& ms) {
      nlohmann::json arr = nlohmann::json::array();
      for (const Matrix& m : ms) {
        nlohmann::json jm;
        jm["shape"] = {m.rows(), m.cols()};
        std::vector<double> vals;
        vals.reserve(m.size());
        for (long r = 0; r < m.rows(); ++r)
          for (long c = 0; c < m.cols(); ++c) vals.push_back(m(r, c));
        jm["values_row_major"] = std::move(vals);
        arr.push_back(std::move(jm));
      }
      return arr;
    };
    ja["m"] = dump(ckpt.adam->m);
    ja["v"] = dump(ckpt.adam->v);
    j["adam"] = std::move(ja);
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") ||
      j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw config_error("checkpoint: unsupported or missing format_version");
  Checkpoint ckpt;
  ckpt.model.mode = mode_from_name(j.at("mode").get<std::string>());
  ckpt.iterations_done = j.at("iterations_done").get<int>();
  const auto& g = j.at("geometry");
  ckpt.model.geometry = {g.at("dimension").get<int>(), g.at("x_bound").get<double>(),
                         g.at("y_bound").get<double>(), g.at("t_horizon").get<double>()};
  ckpt.model.lambda = lambda_from_json(j.at("lambda"));
  ckpt.model.net1 = nn::network_from_json(j.at("net1"));
  if (ckpt.model.mode == Mode::kDaPinn) ckpt.model.net2 = nn::network_from_json(j.at("net2"));
  if (j.contains("adam")) {
    AdamState adam;
    const auto& ja = j.at("adam");
    adam.step = ja.at("step").get<long>();
    adam.beta1 = ja.at("beta1").get<double>();
    adam.beta2 = ja.at("beta2").get<double>();
    adam.eps = ja.at("eps").get<double>();
    const auto load = [](const nlohmann::json& arr) {
      std::vector<Matrix> ms;
      for (const auto& jm : arr) {
        const long rows = jm.at("shape")[0].get<long>();
        const long cols = jm.at("shape")[1].get<long>();
        const auto vals = jm.at("values_row_major").get<std::vector<double>>();
        Matrix m(rows, cols);
        for (long r = 0; r < rows; ++r)
          for (long c = 0; c < cols; ++c) m(r, c) = vals[r * cols + c];
        ms.push_back(std::move(m));
      }
      return ms;
    };
    adam.m = load(ja.at("m"));
    adam.v = load(ja.at("v"));
    ckpt.adam = std::move(adam);
  }
  return ckpt;
}

// --- training loop ------------------------------------------------------------------------

struct TrainResult {
  Model model;
  TrainTrace trace;
  bool aborted = false;
  std::string abort_reason;
  Checkpoint last_good;  // populated when aborted
};

namespace detail {

inline double clamp_d(double d, const CaseGeometry& geometry, double margin_frac) {
  const double delta = margin_frac * geometry.x_bound;
  return std::min(std::max(d, delta), geometry.x_bound - delta);
}

inline std::vector<int> layer_sizes(const TrainConfig& config, const CaseGeometry& geometry) {
  std::vector<int> sizes;
  sizes.push_back(geometry.dimension == 1 ? 2 : 3);
  for (int h : config.hidden_sizes) sizes.push_back(h);
  sizes.push_back(geometry.dimension == 1 ? 2 : 3);
  return sizes;
}

inline nn::InputScaling scaling_for(const TrainConfig& config,
                                    const CaseGeometry& geometry) {
  if (!config.input_scaling) return {};
  const int dim = geometry.dimension;
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(dim + 1);
  Eigen::VectorXd hi(dim + 1);
  hi(0) = geometry.t_horizon;
  hi(1) = geometry.x_bound;
  if (dim == 2) hi(2) = geometry.y_bound;
  return nn::InputScaling::for_box(lo, hi);
}

// Canonical parameter blocks: net layers then the five lambda scalars.
inline std::vector<ParamBlock> make_blocks(const nn::NetworkParams& net1,
                                           const nn::NetworkParams* net2,
                                           const MaterialParams& lambda,
                                           double lambda_lr_scale) {
  std::vector<ParamBlock> blocks;
  const auto push_net = [&](const nn::NetworkParams& net, const std::string& prefix) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      blocks.push_back({prefix + "/L" + std::to_string(l) + "/W", net.layers[l].weights, 1.0});
      blocks.push_back(
          {prefix + "/L" + std::to_string(l) + "/b", Matrix(net.layers[l].bias), 1.0});
    }
  };
  push_net(net1, "net1");
  if (net2) push_net(*net2, "net2");
  blocks.push_back({"lam/mu1", ad::Tape::scalar(lambda.mu1), lambda_lr_scale});
  blocks.push_back({"lam/eps1", ad::Tape::scalar(lambda.eps1), lambda_lr_scale});
  blocks.push_back({"lam/mu2", ad::Tape::scalar(lambda.mu2), lambda_lr_scale});
  blocks.push_back({"lam/eps2", ad::Tape::scalar(lambda.eps2), lambda_lr_scale});
  blocks.push_back({"lam/d", ad::Tape::scalar(lambda.d), lambda_lr_scale});
  return blocks;
}

inline void blocks_to_model(const std::vector<ParamBlock>& blocks, Model& model) {
  std::size_t i = 0;
  const auto pull_net = [&](nn::NetworkParams& net) {
    for (auto& layer : net.layers) {
      layer.weights = blocks[i++].value;
      layer.bias = blocks[i++].value.row(0);
    }
  };
  pull_net(model.net1);
  if (model.mode == Mode::kDaPinn) pull_net(model.net2);
  model.lambda.mu1 = blocks[i++].value(0, 0);
  model.lambda.eps1 = blocks[i++].value(0, 0);
  model.lambda.mu2 = blocks[i++].value(0, 0);
  model.lambda.eps2 = blocks[i++].value(0, 0);
  model.lambda.d = blocks[i++].value(0, 0);
}

}  // namespace detail

// Full training entry point: collocation counts come from sampler_config.
inline TrainResult train(const TrainConfig& config, const sampler::SamplerConfig& sampler_config,
                         const Dataset& data, const CaseGeometry& geometry) {
  config.validate(geometry);
  sampler::SamplerConfig colloc_config = sampler_config;
  colloc_config.n_data = static_cast<int>(data.size());
  colloc_config.validate();
  if (data.empty()) throw config_error("train: dataset is empty");

  const bool da = config.mode == Mode::kDaPinn;
  const auto sizes = detail::layer_sizes(config, geometry);

  Model model;
  model.mode = config.mode;
  model.geometry = geometry;
  model.net1 = nn::init_network(sizes, config.activation, Rng::splitmix64(config.seed + 1));
  model.net1.scaling = detail::scaling_for(config, geometry);
  if (da) {
    model.net2 = nn::init_network(sizes, config.activation, Rng::splitmix64(config.seed + 2));
    model.net2.scaling = model.net1.scaling;
  }
  model.lambda = config.lambda0;

  std::vector<ParamBlock> blocks = detail::make_blocks(
      model.net1, da ? &model.net2 : nullptr, model.lambda, config.lambda_lr_scale);
  AdamState adam =
      AdamState::for_blocks(blocks, config.beta1, config.beta2, config.eps_adam);
  const std::size_t lambda_base = blocks.size() - 5;

  TrainResult result;
  result.model = model;
  result.model.lambda.d =
      detail::clamp_d(result.model.lambda.d, geometry, config.clamp_margin_frac);
  if (config.max_iters == 0) return result;

  std::unique_ptr<ThreadPool> pool;
  if (config.threads > 1) pool = std::make_unique<ThreadPool>(config.threads);

  Rng sample_rng = Rng::stream(config.seed, /*tag=*/0x5a);

  // Graph state, rebuilt when the data-split sizes change.
  struct GraphState {
    ad::Tape tape;
    LambdaLeaves lam;
    std::vector<nn::TapeNet> nets;
    std::unique_ptr<MlpFieldProvider> p1, p2;
    LossExprs parts;
    std::vector<Expr> inputs;  // constant handles, in build order
    std::vector<std::string> trainable;
    std::size_t n1 = 0, n2 = 0;  // data split sizes at build time
  };
  std::unique_ptr<GraphState> graph;

  sampler::DataSplit split;
  sampler::Collocation collocation;

  Checkpoint last_good;
  last_good.model = result.model;
  last_good.adam = adam;

  const auto rebuild = [&](const MaterialParams& lambda) {
    graph = std::make_unique<GraphState>();
    graph->tape.set_pool(pool.get());
    graph->lam = register_lambda(graph->tape, lambda);
    graph->nets.push_back(nn::TapeNet::register_on(graph->tape, result.model.net1, "net1"));
    graph->p1 = std::make_unique<MlpFieldProvider>(graph->nets[0]);
    if (da) {
      graph->nets.push_back(nn::TapeNet::register_on(graph->tape, result.model.net2, "net2"));
      graph->p2 = std::make_unique<MlpFieldProvider>(graph->nets[1]);
    }
    for (const auto& blk : blocks) graph->trainable.push_back(blk.name);
    if (da) {
      SampleBatch batch{split, collocation};
      graph->parts =
          composite_loss_graph(graph->tape, *graph->p1, *graph->p2, graph->lam, data, batch,
                               geometry, config.weights, &graph->inputs);
      graph->n1 = split.side1.size();
      graph->n2 = split.side2.size();
    } else {
      graph->parts = baseline_loss_graph(graph->tape, *graph->p1, graph->lam, data,
                                         collocation.p1, lambda.d, geometry, config.weights,
                                         &graph->inputs);
    }
  };

  // Refreshes the tape's input constants in the same order they were built.
  const auto refresh_inputs = [&](const MaterialParams& lambda) {
    set_lambda(graph->tape, graph->lam, lambda);
    for (std::size_t b = 0; b < blocks.size() - 5; ++b)
      graph->tape.set_leaf(blocks[b].name, blocks[b].value);
    std::size_t h = 0;
    const auto put = [&](const Matrix& m) { graph->tape.set_input(graph->inputs[h++], m); };
    const int dim = geometry.dimension;
    const int ncomp = dim == 1 ? 2 : 3;
    if (da) {
      const auto put_data = [&](const std::vector<int>& idx) {
        if (idx.empty()) return;
        const long n = static_cast<long>(idx.size());
        Matrix tcol(n, 1), xcol(n, 1), ycol(n, 1), u(n, ncomp);
        for (long i = 0; i < n; ++i) {
          const auto& p = data[idx[i]];
          tcol(i, 0) = p.t;
          xcol(i, 0) = p.x;
          ycol(i, 0) = p.y;
          u.row(i) = p.u.transpose();
        }
        put(tcol);
        put(xcol);
        if (dim == 2) put(ycol);
        put(u);
      };
      put_data(split.side1);
      put_data(split.side2);
      const auto put_colloc = [&](const sampler::CollocationSet& set) {
        put(Matrix(set.t));
        put(Matrix(set.nu));
        if (dim == 2) put(Matrix(set.y));
      };
      put_colloc(collocation.p1);
      put_colloc(collocation.p2);
      put(Matrix(collocation.interface_pts.t));
      if (dim == 2) put(Matrix(collocation.interface_pts.y));
    } else {
      // Baseline graphs are rebuilt whenever the collocation draw changes, so
      // nothing beyond parameters needs refreshing here.
    }
    graph->tape.recompute();
  };

  const auto lambda_of_blocks = [&]() {
    MaterialParams l;
    l.mu1 = blocks[lambda_base + 0].value(0, 0);
    l.eps1 = blocks[lambda_base + 1].value(0, 0);
    l.mu2 = blocks[lambda_base + 2].value(0, 0);
    l.eps2 = blocks[lambda_base + 3].value(0, 0);
    l.d = blocks[lambda_base + 4].value(0, 0);
    return l;
  };

  const auto snapshot = [&]() {
    detail::blocks_to_model(blocks, result.model);
  };

  std::vector<double> total_history;
  total_history.reserve(config.max_iters);

  for (int k = 0; k < config.max_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();

    // Clamp d, then derive this iteration's batch from it.
    MaterialParams lambda = lambda_of_blocks();
    lambda.d = detail::clamp_d(lambda.d, geometry, config.clamp_margin_frac);
    blocks[lambda_base + 4].value(0, 0) = lambda.d;

    bool resampled = false;
    if (k % config.resample_period == 0) {
      if (da) {
        collocation = sampler::sample_collocation(lambda.d, geometry, colloc_config,
                                                  sample_rng);
      } else {
        // Uniform collocation over the whole domain; stored in p1.
        const int n = colloc_config.n_p1 + colloc_config.n_p2;
        collocation.p1.t.resize(n);
        collocation.p1.x.resize(n);
        collocation.p1.y.resize(geometry.dimension == 2 ? n : 0);
        collocation.p1.nu.resize(0);
        for (int i = 0; i < n; ++i) {
          collocation.p1.x(i) = sample_rng.uniform(0.0, geometry.x_bound);
          collocation.p1.t(i) = sample_rng.uniform(0.0, geometry.t_horizon);
          if (geometry.dimension == 2)
            collocation.p1.y(i) = sample_rng.uniform(0.0, geometry.y_bound);
        }
      }
      resampled = true;
    }

    bool need_rebuild = !graph;
    if (da) {
      const auto new_split = sampler::split_data(data, lambda.d);
      if (!graph || new_split.side1.size() != graph->n1 ||
          new_split.side2.size() != graph->n2)
        need_rebuild = true;
      split = new_split;
    } else if (resampled) {
      // Material-side grouping may change with every redraw.
      need_rebuild = true;
    }

    snapshot();  // push current block values into result.model for rebuilds
    if (need_rebuild)
      rebuild(lambda);
    else
      refresh_inputs(lambda);

    const LossParts loss{graph->tape.value(graph->parts.data)(0, 0),
                         graph->tape.value(graph->parts.physics)(0, 0),
                         graph->tape.value(graph->parts.interface_)(0, 0),
                         graph->tape.value(graph->parts.total)(0, 0)};

    if (!std::isfinite(loss.total)) {
      result.aborted = true;
      result.abort_reason = "non-finite loss at iteration " + std::to_string(k);
      result.last_good = last_good;
      snapshot();
      return result;
    }

    ad::Gradient grads = graph->tape.backward(graph->parts.total, graph->trainable);

    std::vector<Matrix> grad_list;
    grad_list.reserve(blocks.size());
    for (const auto& blk : blocks) grad_list.push_back(grads.at(blk.name));

    last_good.model = result.model;
    last_good.adam = adam;
    last_good.iterations_done = k;

    try {
      adam_step(adam, blocks, grad_list, config.learning_rate);
    } catch (const numeric_error& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      result.last_good = last_good;
      snapshot();
      return result;
    }

    const auto t1 = std::chrono::steady_clock::now();
    TraceRecord rec;
    rec.iter = k;
    rec.loss = loss;
    rec.lambda = lambda;
    rec.side1_empty = split.side1_empty && da;
    rec.side2_empty = split.side2_empty && da;
    rec.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.trace.records.push_back(rec);
    total_history.push_back(loss.total);

    if (config.stop == StopRule::kPlateau &&
        static_cast<int>(total_history.size()) > config.plateau_window) {
      const double prev = total_history[total_history.size() - 1 - config.plateau_window];
      const double rel = std::abs(loss.total - prev) / std::max(std::abs(prev), 1e-300);
      if (rel < config.plateau_rel_tol) break;
    }
  }

  snapshot();
  result.model.lambda.d =
      detail::clamp_d(result.model.lambda.d, geometry, config.clamp_margin_frac);
  return result;
}

inline TrainResult train_da_pinn(const TrainConfig& config,
                                 const sampler::SamplerConfig& sampler_config,
                                 const Dataset& data, const CaseGeometry& geometry) {
  TrainConfig c = config;
  c.mode = Mode::kDaPinn;
  return train(c, sampler_config, data, geometry);
}

inline TrainResult train_baseline(const TrainConfig& config,
                                  const sampler::SamplerConfig& sampler_config,
                                  const Dataset& data, const CaseGeometry& geometry) {
  TrainConfig c = config;
  c.mode = Mode::kBaseline;
  return train(c, sampler_config, data, geometry);
}

}  // namespace dapinn::train

#endif  // DAPINN_TRAINER_HPP
