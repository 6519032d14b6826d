#include "mgc/tape.hpp"

#include <algorithm>

#include "mgc/errors.hpp"
#include "mgc/kernels.hpp"

namespace mgc::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

const Matrix& BackwardContext::out_grad() const { return tape_.nodes_[node_].grad; }
const Matrix& BackwardContext::out_value() const { return tape_.nodes_[node_].value; }

const Matrix& BackwardContext::parent_value(std::size_t p) const {
  return tape_.nodes_[tape_.nodes_[node_].parents.at(p)].value;
}

bool BackwardContext::parent_needs_grad(std::size_t p) const {
  return tape_.nodes_[tape_.nodes_[node_].parents.at(p)].needs_grad;
}

Matrix& BackwardContext::parent_grad(std::size_t p) {
  return tape_.grad_slot(tape_.nodes_[node_].parents.at(p));
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::vector<std::size_t> parents, Matrix value, BackwardRule rule) {
  Node n;
  n.value = std::move(value);
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) throw UsageError("record: parent id not on this tape");
    n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  }
  n.parents = std::move(parents);
  if (n.needs_grad) n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    if (n.grad.rows() == n.value.rows() && n.grad.cols() == n.value.cols()) n.grad.fill(0.0);
    else n.grad = Matrix(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Matrix& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.has_grad) return empty_;
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.has_grad = false;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw UsageError("backward: root is not on this tape");
  const Matrix& rv = nodes_[root.id()].value;
  if (rv.rows() != 1 || rv.cols() != 1)
    throw UsageError("backward: root must be a scalar (1x1), got " + shape_string(rv));
  zero_grad();
  grad_slot(root.id())(0, 0) = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.rule) continue;
    BackwardContext ctx(*this, id);
    n.rule(ctx);
  }
}

// --- operations ------------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw UsageError(std::string(op) + ": operands live on different tapes");
  return *a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Matrix out;
  kernels::gemm_nn(a.value(), b.value(), out);
  return t.record({a.id(), b.id()}, std::move(out), [](BackwardContext& c) {
    const Matrix& g = c.out_grad();
    if (c.parent_needs_grad(0)) kernels::gemm_nt(g, c.parent_value(1), c.parent_grad(0), true);
    if (c.parent_needs_grad(1)) kernels::gemm_tn(c.parent_value(0), g, c.parent_grad(1), true);
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  return t.record({a.id(), b.id()}, a.value() + b.value(), [](BackwardContext& c) {
    for (std::size_t p = 0; p < 2; ++p)
      if (c.parent_needs_grad(p)) c.parent_grad(p) += c.out_grad();
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  return t.record({a.id(), b.id()}, a.value() - b.value(), [](BackwardContext& c) {
    if (c.parent_needs_grad(0)) c.parent_grad(0) += c.out_grad();
    if (c.parent_needs_grad(1)) {
      Matrix& g = c.parent_grad(1);
      const Matrix& og = c.out_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] -= og.data()[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.record({a.id()}, s * a.value(), [s](BackwardContext& c) {
    Matrix& g = c.parent_grad(0);
    const Matrix& og = c.out_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += s * og.data()[i];
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = same_tape(a, bias, "add_row");
  require_shape(bias.rows() == 1 && bias.cols() == a.cols(), "add_row", a.value(),
                bias.value());
  Matrix out = a.value();
  const double* b = bias.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.data() + r * out.cols();
    for (std::size_t j = 0; j < out.cols(); ++j) o[j] += b[j];
  }
  return t.record({a.id(), bias.id()}, std::move(out), [](BackwardContext& c) {
    const Matrix& og = c.out_grad();
    if (c.parent_needs_grad(0)) c.parent_grad(0) += og;
    if (c.parent_needs_grad(1)) {
      Matrix& g = c.parent_grad(1);
      for (std::size_t r = 0; r < og.rows(); ++r)
        for (std::size_t j = 0; j < og.cols(); ++j) g(0, j) += og(r, j);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no operands");
  Tape& t = *parts[0].tape();
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw UsageError("concat_cols: operands live on different tapes");
    require_shape(p.rows() == rows, "concat_cols", parts[0].value(), p.value());
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + offsets[k]);
  }
  return t.record(std::move(ids), std::move(out), [offsets](BackwardContext& c) {
    const Matrix& og = c.out_grad();
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (!c.parent_needs_grad(k)) continue;
      Matrix& g = c.parent_grad(k);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double* src = og.data() + r * og.cols() + offsets[k];
        double* dst = g.data() + r * g.cols();
        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
      }
    }
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (double& v : out.span()) v = v > 0.0 ? v : 0.0;
  return t.record({a.id()}, std::move(out), [](BackwardContext& c) {
    const Matrix& x = c.parent_value(0);
    const Matrix& og = c.out_grad();
    Matrix& g = c.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.data()[i] > 0.0) g.data()[i] += og.data()[i];
  });
}

Var sum_squares(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1, frobenius_sq(a.value()));
  return t.record({a.id()}, std::move(out), [](BackwardContext& c) {
    const double s = 2.0 * c.out_grad()(0, 0);
    const Matrix& x = c.parent_value(0);
    Matrix& g = c.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += s * x.data()[i];
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().span()) s += v;
  return t.record({a.id()}, Matrix(1, 1, s), [](BackwardContext& c) {
    const double og = c.out_grad()(0, 0);
    for (double& v : c.parent_grad(0).span()) v += og;
  });
}

Var block_apply(const Matrix& adj, Var h) {
  Tape& t = *h.tape();
  Matrix out;
  kernels::block_apply(adj, h.value(), out);
  const Matrix* adj_ptr = &adj;
  return t.record({h.id()}, std::move(out), [adj_ptr](BackwardContext& c) {
    kernels::block_apply(*adj_ptr, c.out_grad(), c.parent_grad(0), /*transpose=*/true,
                         /*accumulate=*/true);
  });
}

}  // namespace mgc::ad
