// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape over dense matrix ops, plus a forward tangent transform
// whose tangent computations are themselves recorded on the tape. Running
// backward() over a tangent output therefore differentiates an input
// derivative with respect to weights — the nesting PINN residual losses need.

#ifndef DAPINN_TAPE_HPP
#define DAPINN_TAPE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dapinn/errors.hpp"
#include "dapinn/threading.hpp"

namespace dapinn::ad {

using Matrix = Eigen::MatrixXd;

enum class Activation : std::uint8_t { kTanh, kRelu };

enum class OpKind : std::uint8_t {
  kConstant,
  kLeaf,
  kAdd,
  kSub,
  kNeg,
  kHadamard,    // elementwise product, equal shapes
  kScale,       // matrix * scalar node (1x1)
  kScaleConst,  // matrix * compile-time constant
  kAffineConst, // a*x + b elementwise, constants
  kMatMul,
  kAddRowVec,   // matrix + broadcast row vector
  kActivation,
  kActPrime,    // sigma'(z), recorded so tangents stay differentiable
  kSquare,
  kSin,
  kCos,
  kSum,         // total sum -> 1x1
  kCol,         // single column extraction
  kHCat,        // column-wise concatenation
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kConstant: return "constant";
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kNeg: return "neg";
    case OpKind::kHadamard: return "hadamard";
    case OpKind::kScale: return "scale";
    case OpKind::kScaleConst: return "scale_const";
    case OpKind::kAffineConst: return "affine_const";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddRowVec: return "add_rowvec";
    case OpKind::kActivation: return "activation";
    case OpKind::kActPrime: return "act_prime";
    case OpKind::kSquare: return "square";
    case OpKind::kSin: return "sin";
    case OpKind::kCos: return "cos";
    case OpKind::kSum: return "sum";
    case OpKind::kCol: return "col";
    case OpKind::kHCat: return "hcat";
  }
  return "?";
}

class Tape;

// Lightweight handle to a node on a tape.
struct Expr {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

struct Node {
  OpKind op;
  Activation act = Activation::kTanh;
  double c0 = 0.0;  // scale factor / affine slope
  double c1 = 0.0;  // affine intercept
  int col = 0;      // column index for kCol
  std::vector<int> parents;
  Matrix value;
};

// Result of backward(): one matrix of partials per requested leaf, in request
// order. Leaves the output does not depend on get zero entries.
class Gradient {
 public:
  void add(std::string name, Matrix g) {
    index_[name] = entries_.size();
    entries_.emplace_back(std::move(name), std::move(g));
  }
  const Matrix& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw range_error("gradient: no entry for leaf '" + name + "'");
    return entries_[it->second].second;
  }
  double scalar(const std::string& name) const {
    const Matrix& m = at(name);
    if (m.size() != 1) throw shape_error("gradient: leaf '" + name + "' is not scalar");
    return m(0, 0);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Matrix>>& entries() const { return entries_; }
  bool all_finite() const {
    for (const auto& [n, g] : entries_)
      if (!g.allFinite()) return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape {
 public:
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}

  void set_pool(ThreadPool* pool) { pool_ = pool; }
  void set_check_finite(bool on) { check_finite_ = on; }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& value(Expr e) const { return nodes_[e.id].value; }

  Expr leaf(const std::string& name, Matrix v) {
    if (leaf_index_.count(name))
      throw config_error("leaf '" + name + "' already registered");
    Node n;
    n.op = OpKind::kLeaf;
    n.value = std::move(v);
    const int id = push(std::move(n));
    leaf_index_[name] = id;
    leaves_.emplace_back(name, id);
    return {this, id};
  }

  Expr leaf(const std::string& name, double v) { return leaf(name, scalar(v)); }

  Expr constant(Matrix v) {
    Node n;
    n.op = OpKind::kConstant;
    n.value = std::move(v);
    return {this, push(std::move(n))};
  }

  Expr constant(double v) { return constant(scalar(v)); }

  const std::vector<std::pair<std::string, int>>& leaves() const { return leaves_; }

  Expr leaf_expr(const std::string& name) {
    auto it = leaf_index_.find(name);
    if (it == leaf_index_.end()) throw range_error("no leaf named '" + name + "'");
    return {this, it->second};
  }

  void set_leaf(const std::string& name, const Matrix& v) {
    set_input(leaf_expr(name), v);
  }

  // Updates a leaf or constant in place; shape must not change.
  void set_input(Expr e, const Matrix& v) {
    Node& n = nodes_[e.id];
    if (n.op != OpKind::kLeaf && n.op != OpKind::kConstant)
      throw config_error("set_input: node is not a leaf/constant");
    if (n.value.rows() != v.rows() || n.value.cols() != v.cols())
      throw shape_error("set_input: shape mismatch");
    n.value = v;
  }

  // Replays every op in tape order, refreshing cached primals from the
  // current leaf/constant values. Bit-exact for unchanged inputs.
  void recompute() {
    for (int i = 0; i < size(); ++i) {
      if (nodes_[i].op == OpKind::kLeaf || nodes_[i].op == OpKind::kConstant) continue;
      eval(i);
      if (check_finite_) check_node_finite(i);
    }
  }

  Gradient backward(Expr seed) {
    std::vector<std::string> all;
    all.reserve(leaves_.size());
    for (const auto& [name, id] : leaves_) all.push_back(name);
    return backward(seed, all);
  }

  // Reverse accumulation from a scalar seed; returns d(seed)/d(leaf) for each
  // requested leaf. Deterministic: fixed sweep order, fixed chunking.
  Gradient backward(Expr seed, const std::vector<std::string>& wanted) {
    if (value(seed).size() != 1)
      throw shape_error("backward: seed node is not scalar");

    const int n = size();
    // Nodes that can reach a requested leaf.
    std::vector<char> mask(n, 0);
    for (const auto& name : wanted) mask[leaf_expr(name).id] = 1;
    for (int i = 0; i < n; ++i) {
      if (mask[i]) continue;
      for (int p : nodes_[i].parents)
        if (mask[p]) { mask[i] = 1; break; }
    }

    if (adj_.size() < static_cast<std::size_t>(n)) adj_.resize(n);
    has_adj_.assign(n, 0);
    accum(seed.id, Matrix::Ones(1, 1));

    for (int i = seed.id; i >= 0; --i) {
      if (!has_adj_[i] || !mask[i]) continue;
      vjp(i, mask);
    }

    Gradient g;
    for (const auto& name : wanted) {
      const int id = leaf_expr(name).id;
      if (has_adj_[id])
        g.add(name, adj_[id]);
      else
        g.add(name, Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols()));
    }
    return g;
  }

  // --- op construction -----------------------------------------------------

  Expr add(Expr a, Expr b) {
    require_same_shape(a, b, "add");
    return emit(OpKind::kAdd, {a.id, b.id});
  }
  Expr sub(Expr a, Expr b) {
    require_same_shape(a, b, "sub");
    return emit(OpKind::kSub, {a.id, b.id});
  }
  Expr neg(Expr a) { return emit(OpKind::kNeg, {a.id}); }
  Expr hadamard(Expr a, Expr b) {
    require_same_shape(a, b, "hadamard");
    return emit(OpKind::kHadamard, {a.id, b.id});
  }
  Expr scale(Expr a, Expr s) {
    if (value(s).size() != 1) throw shape_error("scale: scale factor must be 1x1");
    return emit(OpKind::kScale, {a.id, s.id});
  }
  Expr scale_const(Expr a, double c) {
    Node n = make(OpKind::kScaleConst, {a.id});
    n.c0 = c;
    return {this, push_eval(std::move(n))};
  }
  Expr affine(Expr a, double c0, double c1) {
    Node n = make(OpKind::kAffineConst, {a.id});
    n.c0 = c0;
    n.c1 = c1;
    return {this, push_eval(std::move(n))};
  }
  Expr matmul(Expr a, Expr b) {
    if (value(a).cols() != value(b).rows())
      throw shape_error("matmul: inner dimensions disagree");
    return emit(OpKind::kMatMul, {a.id, b.id});
  }
  Expr add_rowvec(Expr a, Expr b) {
    if (value(b).rows() != 1 || value(b).cols() != value(a).cols())
      throw shape_error("add_rowvec: second operand must be a matching row vector");
    return emit(OpKind::kAddRowVec, {a.id, b.id});
  }
  Expr activation(Expr z, Activation kind) {
    Node n = make(OpKind::kActivation, {z.id});
    n.act = kind;
    return {this, push_eval(std::move(n))};
  }
  Expr act_prime(Expr z, Activation kind) {
    Node n = make(OpKind::kActPrime, {z.id});
    n.act = kind;
    return {this, push_eval(std::move(n))};
  }
  Expr square(Expr a) { return emit(OpKind::kSquare, {a.id}); }
  Expr sin(Expr a) { return emit(OpKind::kSin, {a.id}); }
  Expr cos(Expr a) { return emit(OpKind::kCos, {a.id}); }
  Expr sum(Expr a) { return emit(OpKind::kSum, {a.id}); }
  Expr col(Expr a, int j) {
    if (j < 0 || j >= value(a).cols()) throw shape_error("col: index out of range");
    Node n = make(OpKind::kCol, {a.id});
    n.col = j;
    return {this, push_eval(std::move(n))};
  }
  Expr hcat(const std::vector<Expr>& parts) {
    if (parts.empty()) throw shape_error("hcat: no operands");
    std::vector<int> ids;
    for (const Expr& p : parts) {
      if (value(p).rows() != value(parts[0]).rows())
        throw shape_error("hcat: row counts disagree");
      ids.push_back(p.id);
    }
    Node n = make(OpKind::kHCat, ids);
    return {this, push_eval(std::move(n))};
  }

  static Matrix scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return m;
  }

 private:
  Node make(OpKind op, std::vector<int> parents) {
    Node n;
    n.op = op;
    n.parents = std::move(parents);
    return n;
  }

  Expr emit(OpKind op, std::vector<int> parents) {
    return {this, push_eval(make(op, std::move(parents)))};
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int push_eval(Node n) {
    const int id = push(std::move(n));
    eval(id);
    if (check_finite_) check_node_finite(id);
    return id;
  }

  void check_node_finite(int id) {
    if (!nodes_[id].value.allFinite())
      throw numeric_error("non-finite value at node " + std::to_string(id) + " (op " +
                          op_name(nodes_[id].op) + ")");
  }

  void require_same_shape(Expr a, Expr b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw shape_error(std::string(op) + ": operand shapes disagree");
  }

  static double act_eval(Activation k, double z) {
    return k == Activation::kTanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
  }

  // --- forward evaluation ----------------------------------------------------

  void eval(int id) {
    Node& n = nodes_[id];
    const auto P = [&](int i) -> const Matrix& { return nodes_[n.parents[i]].value; };
    switch (n.op) {
      case OpKind::kConstant:
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd: n.value = P(0) + P(1); break;
      case OpKind::kSub: n.value = P(0) - P(1); break;
      case OpKind::kNeg: n.value = -P(0); break;
      case OpKind::kHadamard: n.value = P(0).cwiseProduct(P(1)); break;
      case OpKind::kScale: n.value = P(0) * P(1)(0, 0); break;
      case OpKind::kScaleConst: n.value = P(0) * n.c0; break;
      case OpKind::kAffineConst: n.value = (P(0).array() * n.c0 + n.c1).matrix(); break;
      case OpKind::kMatMul: {
        const Matrix& a = P(0);
        const Matrix& b = P(1);
        n.value.resize(a.rows(), b.cols());
        Matrix& out = n.value;
        parallel_rows(pool_, a.rows(), [&](long r0, long len) {
          out.middleRows(r0, len).noalias() = a.middleRows(r0, len) * b;
        });
        break;
      }
      case OpKind::kAddRowVec: n.value = P(0).rowwise() + P(1).row(0); break;
      case OpKind::kActivation: {
        const Matrix& z = P(0);
        n.value.resize(z.rows(), z.cols());
        Matrix& out = n.value;
        if (n.act == Activation::kTanh) {
          parallel_rows(pool_, z.rows(), [&](long r0, long len) {
            out.middleRows(r0, len) = z.middleRows(r0, len).array().tanh();
          });
        } else {
          parallel_rows(pool_, z.rows(), [&](long r0, long len) {
            out.middleRows(r0, len) = z.middleRows(r0, len).array().max(0.0);
          });
        }
        break;
      }
      case OpKind::kActPrime: {
        const Matrix& z = P(0);
        n.value.resize(z.rows(), z.cols());
        Matrix& out = n.value;
        if (n.act == Activation::kTanh) {
          parallel_rows(pool_, z.rows(), [&](long r0, long len) {
            out.middleRows(r0, len) = 1.0 - z.middleRows(r0, len).array().tanh().square();
          });
        } else {
          // ReLU'(0) := 0 by convention.
          parallel_rows(pool_, z.rows(), [&](long r0, long len) {
            out.middleRows(r0, len) =
                (z.middleRows(r0, len).array() > 0.0).cast<double>();
          });
        }
        break;
      }
      case OpKind::kSquare: n.value = P(0).cwiseProduct(P(0)); break;
      case OpKind::kSin: n.value = P(0).array().sin().matrix(); break;
      case OpKind::kCos: n.value = P(0).array().cos().matrix(); break;
      case OpKind::kSum: {
        // Fixed row-chunk partials summed in chunk order.
        const Matrix& a = P(0);
        double total = 0.0;
        for (long r0 = 0; r0 < a.rows(); r0 += ThreadPool::kChunkRows) {
          const long len = std::min<long>(ThreadPool::kChunkRows, a.rows() - r0);
          total += a.middleRows(r0, len).sum();
        }
        n.value = scalar(total);
        break;
      }
      case OpKind::kCol: n.value = P(0).col(n.col); break;
      case OpKind::kHCat: {
        long c = 0;
        for (int p : n.parents) c += nodes_[p].value.cols();
        n.value.resize(P(0).rows(), c);
        long at = 0;
        for (int p : n.parents) {
          const Matrix& v = nodes_[p].value;
          n.value.middleCols(at, v.cols()) = v;
          at += v.cols();
        }
        break;
      }
    }
  }

  // --- reverse accumulation ---------------------------------------------------

  // Evaluates the contribution directly into the adjoint buffer; the buffers
  // persist across backward() calls, so steady-state iterations allocate
  // nothing here.
  template <class Derived>
  void accum(int id, const Eigen::EigenBase<Derived>& g) {
    if (has_adj_[id]) {
      adj_[id] += g.derived();
    } else {
      adj_[id] = g.derived();
      has_adj_[id] = 1;
    }
  }

  // Claims the adjoint buffer for chunked direct writes. Returns true when
  // the buffer is fresh (callers assign instead of accumulate).
  bool claim_adj(int id, long rows, long cols) {
    Matrix& dst = adj_[id];
    if (has_adj_[id]) return false;
    dst.resize(rows, cols);
    has_adj_[id] = 1;
    return true;
  }

  // Chunk-partial reduction over rows, combined in fixed chunk order.
  template <class Fn>
  Matrix reduce_rows(long rows, long out_r, long out_c, Fn chunk_fn) {
    const long chunk = ThreadPool::kChunkRows;
    const int nchunks = std::max<int>(1, static_cast<int>((rows + chunk - 1) / chunk));
    std::vector<Matrix> partials(nchunks);
    auto body = [&](int c) {
      const long r0 = static_cast<long>(c) * chunk;
      partials[c] = chunk_fn(r0, std::min(chunk, rows - r0));
    };
    if (pool_ == nullptr || nchunks == 1) {
      for (int c = 0; c < nchunks; ++c) body(c);
    } else {
      pool_->run_chunks(nchunks, body);
    }
    Matrix total = Matrix::Zero(out_r, out_c);
    for (const Matrix& p : partials) total += p;
    return total;
  }

  void vjp(int id, const std::vector<char>& mask) {
    Node& n = nodes_[id];
    const Matrix& g = adj_[id];
    const auto want = [&](int i) { return mask[n.parents[i]] != 0; };
    const auto P = [&](int i) -> const Matrix& { return nodes_[n.parents[i]].value; };
    switch (n.op) {
      case OpKind::kConstant:
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd:
        if (want(0)) accum(n.parents[0], g);
        if (want(1)) accum(n.parents[1], g);
        break;
      case OpKind::kSub:
        if (want(0)) accum(n.parents[0], g);
        if (want(1)) accum(n.parents[1], -g);
        break;
      case OpKind::kNeg:
        if (want(0)) accum(n.parents[0], -g);
        break;
      case OpKind::kHadamard:
        if (want(0)) accum(n.parents[0], g.cwiseProduct(P(1)));
        if (want(1)) accum(n.parents[1], g.cwiseProduct(P(0)));
        break;
      case OpKind::kScale:
        if (want(0)) accum(n.parents[0], g * P(1)(0, 0));
        if (want(1)) {
          Matrix ds = reduce_rows(g.rows(), 1, 1, [&](long r0, long len) {
            return scalar(g.middleRows(r0, len).cwiseProduct(P(0).middleRows(r0, len)).sum());
          });
          accum(n.parents[1], ds);
        }
        break;
      case OpKind::kScaleConst:
        if (want(0)) accum(n.parents[0], g * n.c0);
        break;
      case OpKind::kAffineConst:
        if (want(0)) accum(n.parents[0], g * n.c0);
        break;
      case OpKind::kMatMul: {
        const Matrix& a = P(0);
        const Matrix& b = P(1);
        if (want(0)) {
          Matrix& dst = adj_[n.parents[0]];
          const bool fresh = claim_adj(n.parents[0], a.rows(), a.cols());
          parallel_rows(pool_, a.rows(), [&](long r0, long len) {
            if (fresh)
              dst.middleRows(r0, len).noalias() = g.middleRows(r0, len) * b.transpose();
            else
              dst.middleRows(r0, len).noalias() += g.middleRows(r0, len) * b.transpose();
          });
        }
        if (want(1)) {
          Matrix db = reduce_rows(a.rows(), b.rows(), b.cols(), [&](long r0, long len) {
            return Matrix(a.middleRows(r0, len).transpose() * g.middleRows(r0, len));
          });
          accum(n.parents[1], db);
        }
        break;
      }
      case OpKind::kAddRowVec:
        if (want(0)) accum(n.parents[0], g);
        if (want(1)) {
          Matrix db = reduce_rows(g.rows(), 1, g.cols(), [&](long r0, long len) {
            return Matrix(g.middleRows(r0, len).colwise().sum());
          });
          accum(n.parents[1], db);
        }
        break;
      case OpKind::kActivation: {
        if (!want(0)) break;
        const Matrix& v = n.value;
        Matrix& dst = adj_[n.parents[0]];
        const bool fresh = claim_adj(n.parents[0], v.rows(), v.cols());
        if (n.act == Activation::kTanh) {
          parallel_rows(pool_, v.rows(), [&](long r0, long len) {
            auto contrib = g.middleRows(r0, len).array() *
                           (1.0 - v.middleRows(r0, len).array().square());
            if (fresh)
              dst.middleRows(r0, len) = contrib;
            else
              dst.middleRows(r0, len).array() += contrib;
          });
        } else {
          parallel_rows(pool_, v.rows(), [&](long r0, long len) {
            auto contrib = g.middleRows(r0, len).array() *
                           (v.middleRows(r0, len).array() > 0.0).cast<double>();
            if (fresh)
              dst.middleRows(r0, len) = contrib;
            else
              dst.middleRows(r0, len).array() += contrib;
          });
        }
        break;
      }
      case OpKind::kActPrime: {
        if (!want(0)) break;
        if (n.act == Activation::kTanh) {
          const Matrix& z = P(0);
          Matrix& dst = adj_[n.parents[0]];
          const bool fresh = claim_adj(n.parents[0], z.rows(), z.cols());
          parallel_rows(pool_, z.rows(), [&](long r0, long len) {
            auto t = z.middleRows(r0, len).array().tanh();
            auto contrib = g.middleRows(r0, len).array() * (-2.0 * t * (1.0 - t.square()));
            if (fresh)
              dst.middleRows(r0, len) = contrib;
            else
              dst.middleRows(r0, len).array() += contrib;
          });
        }
        // ReLU: sigma'' == 0 almost everywhere; no contribution.
        break;
      }
      case OpKind::kSquare:
        if (want(0)) accum(n.parents[0], 2.0 * g.cwiseProduct(P(0)));
        break;
      case OpKind::kSin:
        if (want(0)) accum(n.parents[0], (g.array() * P(0).array().cos()).matrix());
        break;
      case OpKind::kCos:
        if (want(0)) accum(n.parents[0], (-g.array() * P(0).array().sin()).matrix());
        break;
      case OpKind::kSum:
        if (want(0))
          accum(n.parents[0], Matrix::Constant(P(0).rows(), P(0).cols(), g(0, 0)));
        break;
      case OpKind::kCol:
        if (want(0)) {
          const int p = n.parents[0];
          if (!has_adj_[p]) {
            adj_[p].setZero(P(0).rows(), P(0).cols());
            has_adj_[p] = 1;
          }
          adj_[p].col(n.col) += g;
          break;
        }
        break;
      case OpKind::kHCat: {
        long at = 0;
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
          const long w = nodes_[n.parents[i]].value.cols();
          if (mask[n.parents[i]]) accum(n.parents[i], g.middleCols(at, w));
          at += w;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> leaves_;
  std::unordered_map<std::string, int> leaf_index_;
  bool check_finite_ = false;
  ThreadPool* pool_ = nullptr;
  // backward scratch, reused across calls
  std::vector<Matrix> adj_;
  std::vector<char> has_adj_;
};

// --- operator sugar ----------------------------------------------------------

inline Expr operator+(Expr a, Expr b) { return a.tape->add(a, b); }
inline Expr operator-(Expr a, Expr b) { return a.tape->sub(a, b); }
inline Expr operator-(Expr a) { return a.tape->neg(a); }
inline Expr operator*(double c, Expr a) { return a.tape->scale_const(a, c); }
inline Expr operator*(Expr a, double c) { return a.tape->scale_const(a, c); }

// Elementwise product for equal shapes; broadcast when one side is scalar.
inline Expr operator*(Expr a, Expr b) {
  const bool a1 = a.tape->value(a).size() == 1;
  const bool b1 = b.tape->value(b).size() == 1;
  if (a1 && !b1) return a.tape->scale(b, a);
  if (b1 && !a1) return a.tape->scale(a, b);
  return a.tape->hadamard(a, b);
}

inline Expr matmul(Expr a, Expr b) { return a.tape->matmul(a, b); }
inline Expr add_rowvec(Expr a, Expr b) { return a.tape->add_rowvec(a, b); }
inline Expr activation(Expr z, Activation k) { return z.tape->activation(z, k); }
inline Expr act_prime(Expr z, Activation k) { return z.tape->act_prime(z, k); }
inline Expr square(Expr a) { return a.tape->square(a); }
inline Expr sin(Expr a) { return a.tape->sin(a); }
inline Expr cos(Expr a) { return a.tape->cos(a); }
inline Expr sum(Expr a) { return a.tape->sum(a); }
inline Expr col(Expr a, int j) { return a.tape->col(a, j); }
inline Expr hcat(const std::vector<Expr>& parts) { return parts.at(0).tape->hcat(parts); }
inline Expr affine(Expr a, double c0, double c1) { return a.tape->affine(a, c0, c1); }

// --- forward tangent transform -------------------------------------------------

// Emits, for every node between the seeds and the requested outputs, a node
// computing its directional derivative. Seeds may sit anywhere in the graph
// (a leaf, or e.g. a coordinate column derived from other nodes); the seed's
// own ancestors carry no tangent. Outputs with no path from a seed get a
// zero-constant tangent.
inline std::vector<Expr> forward_tangent(Tape& tape,
                                         const std::vector<std::pair<Expr, Matrix>>& seeds,
                                         const std::vector<Expr>& outputs) {
  const int n = tape.size();
  std::vector<char> reachable(n, 0);
  {
    std::vector<int> stack;
    for (const Expr& o : outputs) {
      if (o.id >= n) throw range_error("forward_tangent: output not on tape");
      stack.push_back(o.id);
    }
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      if (reachable[i]) continue;
      reachable[i] = 1;
      for (int p : tape.node(i).parents) stack.push_back(p);
    }
  }

  std::vector<int> tan(n, -1);
  for (const auto& [e, m] : seeds) {
    const Matrix& v = tape.value(e);
    if (m.rows() != v.rows() || m.cols() != v.cols())
      throw shape_error("forward_tangent: seed tangent shape disagrees with node");
    tan[e.id] = tape.constant(m).id;
  }

  const auto tx = [&](int id) -> Expr { return {&tape, tan[id]}; };

  for (int i = 0; i < n; ++i) {
    if (!reachable[i] || tan[i] >= 0) continue;
    const Node& nd = tape.node(i);
    if (nd.parents.empty()) continue;
    bool any = false;
    for (int p : nd.parents) any = any || tan[p] >= 0;
    if (!any) continue;

    Expr t{nullptr, -1};
    const Expr self{&tape, i};
    const auto par = [&](int k) -> Expr { return {&tape, nd.parents[k]}; };
    const auto has = [&](int k) { return tan[nd.parents[k]] >= 0; };
    switch (nd.op) {
      case OpKind::kAdd:
        t = has(0) ? (has(1) ? tx(nd.parents[0]) + tx(nd.parents[1]) : tx(nd.parents[0]))
                   : tx(nd.parents[1]);
        break;
      case OpKind::kSub:
        if (has(0) && has(1)) t = tx(nd.parents[0]) - tx(nd.parents[1]);
        else if (has(0)) t = tx(nd.parents[0]);
        else t = -tx(nd.parents[1]);
        break;
      case OpKind::kNeg: t = -tx(nd.parents[0]); break;
      case OpKind::kHadamard: {
        Expr acc{nullptr, -1};
        if (has(0)) acc = tape.hadamard(tx(nd.parents[0]), par(1));
        if (has(1)) {
          Expr term = tape.hadamard(par(0), tx(nd.parents[1]));
          acc = acc.valid() ? acc + term : term;
        }
        t = acc;
        break;
      }
      case OpKind::kScale: {
        Expr acc{nullptr, -1};
        if (has(0)) acc = tape.scale(tx(nd.parents[0]), par(1));
        if (has(1)) {
          Expr term = tape.scale(par(0), tx(nd.parents[1]));
          acc = acc.valid() ? acc + term : term;
        }
        t = acc;
        break;
      }
      case OpKind::kScaleConst: t = tape.scale_const(tx(nd.parents[0]), nd.c0); break;
      case OpKind::kAffineConst: t = tape.scale_const(tx(nd.parents[0]), nd.c0); break;
      case OpKind::kMatMul: {
        Expr acc{nullptr, -1};
        if (has(0)) acc = tape.matmul(tx(nd.parents[0]), par(1));
        if (has(1)) {
          Expr term = tape.matmul(par(0), tx(nd.parents[1]));
          acc = acc.valid() ? acc + term : term;
        }
        t = acc;
        break;
      }
      case OpKind::kAddRowVec:
        if (has(0) && has(1)) t = tape.add_rowvec(tx(nd.parents[0]), tx(nd.parents[1]));
        else if (has(0)) t = tx(nd.parents[0]);
        else {
          Expr zero = tape.constant(Matrix::Zero(nd.value.rows(), nd.value.cols()));
          t = tape.add_rowvec(zero, tx(nd.parents[1]));
        }
        break;
      case OpKind::kActivation:
        t = tape.hadamard(tape.act_prime(par(0), nd.act), tx(nd.parents[0]));
        break;
      case OpKind::kActPrime:
        throw config_error(
            "forward_tangent: tangent of act_prime would be a higher-order derivative "
            "(unsupported op: act_prime)");
      case OpKind::kSquare:
        t = tape.scale_const(tape.hadamard(par(0), tx(nd.parents[0])), 2.0);
        break;
      case OpKind::kSin: t = tape.hadamard(tape.cos(par(0)), tx(nd.parents[0])); break;
      case OpKind::kCos: t = -tape.hadamard(tape.sin(par(0)), tx(nd.parents[0])); break;
      case OpKind::kSum: t = tape.sum(tx(nd.parents[0])); break;
      case OpKind::kCol: t = tape.col(tx(nd.parents[0]), nd.col); break;
      case OpKind::kHCat: {
        std::vector<Expr> parts;
        for (std::size_t k = 0; k < nd.parents.size(); ++k) {
          if (tan[nd.parents[k]] >= 0) {
            parts.push_back(tx(nd.parents[k]));
          } else {
            const Matrix& pv = tape.value(nd.parents[k]);
            parts.push_back(tape.constant(Matrix::Zero(pv.rows(), pv.cols())));
          }
        }
        t = tape.hcat(parts);
        break;
      }
      case OpKind::kConstant:
      case OpKind::kLeaf:
        break;
    }
    if (t.valid()) tan[i] = t.id;
    (void)self;
  }

  std::vector<Expr> out;
  out.reserve(outputs.size());
  for (const Expr& o : outputs) {
    if (tan[o.id] >= 0) {
      out.push_back(tx(o.id));
    } else {
      const Matrix& v = tape.value(o);
      out.push_back(tape.constant(Matrix::Zero(v.rows(), v.cols())));
    }
  }
  return out;
}

// Convenience for the common single-seed single-output case: returns the
// primal value and the directional derivative.
inline std::pair<double, double> forward_tangent_scalar(Tape& tape, Expr seed_node,
                                                        Expr output) {
  auto t = forward_tangent(tape, {{seed_node, Matrix::Ones(tape.value(seed_node).rows(),
                                                           tape.value(seed_node).cols())}},
                           {output});
  if (tape.value(output).size() != 1 || tape.value(t[0]).size() != 1)
    throw shape_error("forward_tangent_scalar: output is not scalar");
  return {tape.value(output)(0, 0), tape.value(t[0])(0, 0)};
}

// --- finite-difference gradient verification -----------------------------------

struct GradCheckEntry {
  std::string leaf;
  double max_rel_error = 0.0;
  long worst_index = -1;   // flat column-major index within the leaf
  double analytic = 0.0;   // at the worst entry
  double numeric = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::vector<GradCheckEntry> per_leaf;
};

// Central-difference check of backward() for a scalar output. Perturbs each
// leaf entry by +-step and replays the tape; the relative-error denominator
// is floored so near-zero gradients compare absolutely.
inline GradCheckReport check_gradient(Tape& tape, Expr output, double step = 1e-5,
                                      double tolerance = 1e-6,
                                      std::vector<std::string> leaf_names = {},
                                      double denom_floor = 1e-6) {
  if (step <= 0.0) throw config_error("check_gradient: step must be positive");
  if (tape.value(output).size() != 1)
    throw shape_error("check_gradient: output is not scalar");
  if (leaf_names.empty())
    for (const auto& [name, id] : tape.leaves()) leaf_names.push_back(name);

  const Gradient grad = tape.backward(output, leaf_names);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (const auto& name : leaf_names) {
    const Matrix base = tape.value(tape.leaf_expr(name));
    const Matrix& g = grad.at(name);
    GradCheckEntry entry;
    entry.leaf = name;
    for (long k = 0; k < base.size(); ++k) {
      Matrix probe = base;
      probe(k) = base(k) + step;
      tape.set_leaf(name, probe);
      tape.recompute();
      const double fp = tape.value(output)(0, 0);
      probe(k) = base(k) - step;
      tape.set_leaf(name, probe);
      tape.recompute();
      const double fm = tape.value(output)(0, 0);
      tape.set_leaf(name, base);
      const double fd = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(g(k)), std::abs(fd), denom_floor});
      const double rel = std::abs(g(k) - fd) / denom;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = k;
        entry.analytic = g(k);
        entry.numeric = fd;
      }
    }
    entry.ok = entry.max_rel_error <= tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_leaf.push_back(entry);
  }
  tape.recompute();  // restore cached primals
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace dapinn::ad

#endif  // DAPINN_TAPE_HPP
