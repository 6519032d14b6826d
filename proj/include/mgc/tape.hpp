#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mgc/matrix.hpp"

namespace mgc::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Passed to a node's backward rule. Parents are indexed in the order given at
// node creation.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}

  const Matrix& out_grad() const;
  const Matrix& out_value() const;
  const Matrix& parent_value(std::size_t p) const;
  bool parent_needs_grad(std::size_t p) const;
  // Zero-initialized on first access within a backward pass.
  Matrix& parent_grad(std::size_t p);

 private:
  Tape& tape_;
  std::size_t node_;
};

using BackwardRule = std::function<void(BackwardContext&)>;

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// parents always precede children. A tape is single-threaded; build a fresh
// one per forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  // Generic node. The rule runs only if some parent needs a gradient.
  Var record(std::vector<std::size_t> parents, Matrix value, BackwardRule rule);

  // Seeds d(root)/d(root) = 1 and propagates to every node. Root must be 1x1.
  // All accumulators are cleared first.
  void backward(Var root);
  void zero_grad();

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class BackwardContext;

  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> parents;
    BackwardRule rule;
  };

  Matrix& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  Matrix empty_;
};

// Differentiable operations. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
// a (r x c) plus a 1 x c bias broadcast over rows.
Var add_row(Var a, Var bias);
Var concat_cols(std::span<const Var> parts);
// max(x, 0); derivative at exactly 0 is 0.
Var relu(Var a);
// Sum of squared entries, 1x1.
Var sum_squares(Var a);
// Sum of entries, 1x1.
Var sum(Var a);
// Applies a constant n x n matrix to each n-row block of h (see
// kernels::block_apply). `adj` must outlive the tape.
Var block_apply(const Matrix& adj, Var h);

}  // namespace mgc::ad
