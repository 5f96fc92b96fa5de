#include "metasym/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metasym/error.hpp"

namespace metasym::ad {
namespace {

enum class Broadcast { none, b_scalar, b_row, a_scalar, a_row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::none;
  if (b.size() == 1) return Broadcast::b_scalar;
  if (a.size() == 1) return Broadcast::a_scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::b_row;
  if (a.rows() == 1 && a.cols() == b.cols()) return Broadcast::a_row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

// C = op(A) * op(B)
Tensor gemm(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const std::size_t m = ta ? ac : ar;
  const std::size_t k = ta ? ar : ac;
  const std::size_t kb = tb ? bc : br;
  const std::size_t n = tb ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + a.shape_string() + (ta ? "^T" : "") + " x " +
                     b.shape_string() + (tb ? "^T" : "") + ")");
  }
  Tensor c = Tensor::zeros(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = pc + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = pa[i * ac + p];
        if (aip == 0.0) continue;
        const double* bp = pb + p * bc;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = pa + i * ac;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = pb + j * bc;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        pc[i * n + j] = acc;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = pa + p * ac;
      const double* bp = pb + p * bc;
      for (std::size_t i = 0; i < m; ++i) {
        const double api = ap[i];
        if (api == 0.0) continue;
        double* ci = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += pa[p * ac + i] * pb[j * bc + p];
        pc[i * n + j] = acc;
      }
    }
  }
  return c;
}

Tensor elementwise(const Tensor& a, const Tensor& b, Broadcast kind, bool multiply) {
  const bool a_big = kind == Broadcast::none || kind == Broadcast::b_scalar || kind == Broadcast::b_row;
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  Tensor out = Tensor::zeros_like(big);
  const std::size_t cols = big.cols();
  for (std::size_t i = 0; i < big.size(); ++i) {
    double s = 0.0;
    switch (kind) {
      case Broadcast::none: s = small[i]; break;
      case Broadcast::b_scalar:
      case Broadcast::a_scalar: s = small[0]; break;
      case Broadcast::b_row:
      case Broadcast::a_row: s = small[i % cols]; break;
    }
    out[i] = multiply ? big[i] * s : big[i] + s;
  }
  return out;
}

// Sums a gradient shaped like the broadcast result back onto the operand shape.
Tensor reduce_to(const Tensor& grad, const Tensor& operand, bool operand_is_small, Broadcast kind) {
  if (!operand_is_small || kind == Broadcast::none) {
    Tensor g = grad;
    return Tensor(operand.shape(), std::move(g.storage()));
  }
  Tensor out = Tensor::zeros_like(operand);
  const std::size_t cols = grad.cols();
  if (kind == Broadcast::b_scalar || kind == Broadcast::a_scalar) {
    double acc = 0.0;
    for (double v : grad.data()) acc += v;
    out[0] = acc;
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) out[i % cols] += grad[i];
  }
  return out;
}

// Broadcasts `t` (same shape, scalar or row) to the shape of `like`.
Tensor expand(const Tensor& t, const Tensor& like) {
  if (t.size() == like.size()) return t;
  Tensor out = Tensor::zeros_like(like);
  const std::size_t cols = like.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.size() == 1 ? t[0] : t[i % cols];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

void accumulate(Tensor& into, const Tensor& g) {
  if (into.empty()) {
    into = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::sum: return "sum";
    case Op::square: return "square";
    case Op::softmax: return "softmax";
    case Op::slice: return "slice";
    case Op::concat: return "concat";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::input(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NonFiniteError("graph input contains NaN/Inf");
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const { return nodes_.at(v.id).value; }

bool Graph::requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

void Graph::set_input(Var leaf, Tensor value) {
  Node& n = nodes_.at(leaf.id);
  if (n.op != Op::leaf) throw Error("set_input on a non-leaf node");
  if (!n.value.same_shape(value)) throw ShapeError("set_input: shape change " + n.value.shape_string());
  if (!value.all_finite()) throw NonFiniteError("graph input contains NaN/Inf");
  n.value = std::move(value);
}

void Graph::replay() {
  for (Node& n : nodes_) {
    if (n.op == Op::leaf) continue;
    n.value = compute(n);
    if (!n.value.all_finite()) throw NonFiniteError("non-finite value produced by " + std::string(op_name(n.op)));
  }
  consumed_ = false;
}

Var Graph::record(Op op, std::vector<std::size_t> inputs, std::size_t a0, std::size_t a1, std::size_t a2,
                  std::size_t a3) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.args[0] = a0;
  n.args[1] = a1;
  n.args[2] = a2;
  n.args[3] = a3;
  for (std::size_t i : n.inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
  n.value = compute(n);
  if (!n.value.all_finite()) throw NonFiniteError("non-finite value produced by " + std::string(op_name(op)));
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor Graph::compute(const Node& n) const {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  switch (n.op) {
    case Op::leaf: return n.value;
    case Op::add:
    case Op::mul: {
      const Broadcast kind = broadcast_kind(in(0), in(1), op_name(n.op));
      return elementwise(in(0), in(1), kind, n.op == Op::mul);
    }
    case Op::matmul: return gemm(in(0), n.args[0] != 0, in(1), n.args[1] != 0);
    case Op::tanh: {
      Tensor out = in(0);
      for (double& v : out.data()) v = std::tanh(v);
      return out;
    }
    case Op::sigmoid: {
      Tensor out = in(0);
      for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
      return out;
    }
    case Op::sum: {
      double acc = 0.0;
      for (double v : in(0).data()) acc += v;
      return Tensor::scalar(acc);
    }
    case Op::square: {
      Tensor out = in(0);
      for (double& v : out.data()) v = v * v;
      return out;
    }
    case Op::softmax: {
      Tensor out = in(0);
      const std::size_t r = out.rows(), c = out.cols();
      for (std::size_t i = 0; i < r; ++i) {
        double* row = out.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= z;
      }
      return out;
    }
    case Op::slice: {
      const Tensor& a = in(0);
      const std::size_t r0 = n.args[0], r1 = n.args[1], c0 = n.args[2], c1 = n.args[3];
      if (r0 > r1 || c0 > c1 || r1 > a.rows() || c1 > a.cols()) {
        throw ShapeError("slice out of range for " + a.shape_string());
      }
      Tensor out = Tensor::zeros(r1 - r0, c1 - c0);
      for (std::size_t i = r0; i < r1; ++i) {
        for (std::size_t j = c0; j < c1; ++j) out.at(i - r0, j - c0) = a.at(i, j);
      }
      return out;
    }
    case Op::concat: {
      const bool by_rows = n.args[0] == 0;
      std::size_t rows = 0, cols = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& p = in(k);
        if (by_rows) {
          if (k > 0 && p.cols() != cols) throw ShapeError("concat(axis 0): column counts differ");
          cols = p.cols();
          rows += p.rows();
        } else {
          if (k > 0 && p.rows() != rows) throw ShapeError("concat(axis 1): row counts differ");
          rows = p.rows();
          cols += p.cols();
        }
      }
      Tensor out = Tensor::zeros(rows, cols);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& p = in(k);
        for (std::size_t i = 0; i < p.rows(); ++i) {
          for (std::size_t j = 0; j < p.cols(); ++j) {
            if (by_rows) {
              out.at(offset + i, j) = p.at(i, j);
            } else {
              out.at(i, offset + j) = p.at(i, j);
            }
          }
        }
        offset += by_rows ? p.rows() : p.cols();
      }
      return out;
    }
  }
  throw Error("unknown op");
}

void Graph::propagate(std::size_t index, const Tensor& g, std::vector<Tensor>& grads) const {
  const Node& n = nodes_[index];
  auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  auto give = [&](std::size_t k, const Tensor& t) { accumulate(grads[n.inputs[k]], t); };

  switch (n.op) {
    case Op::leaf: return;
    case Op::add: {
      const Broadcast kind = broadcast_kind(in(0), in(1), "add");
      const bool a_small = kind == Broadcast::a_scalar || kind == Broadcast::a_row;
      const bool b_small = kind == Broadcast::b_scalar || kind == Broadcast::b_row;
      if (needs(0)) give(0, reduce_to(g, in(0), a_small, kind));
      if (needs(1)) give(1, reduce_to(g, in(1), b_small, kind));
      return;
    }
    case Op::mul: {
      const Broadcast kind = broadcast_kind(in(0), in(1), "mul");
      const bool a_small = kind == Broadcast::a_scalar || kind == Broadcast::a_row;
      const bool b_small = kind == Broadcast::b_scalar || kind == Broadcast::b_row;
      if (needs(0)) give(0, reduce_to(hadamard(g, expand(in(1), g)), in(0), a_small, kind));
      if (needs(1)) give(1, reduce_to(hadamard(g, expand(in(0), g)), in(1), b_small, kind));
      return;
    }
    case Op::matmul: {
      const bool ta = n.args[0] != 0, tb = n.args[1] != 0;
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (needs(0)) {
        Tensor da = ta ? gemm(b, tb, g, true) : gemm(g, false, b, !tb);
        give(0, Tensor(a.shape(), std::move(da.storage())));
      }
      if (needs(1)) {
        Tensor db = tb ? gemm(g, true, a, ta) : gemm(a, !ta, g, false);
        give(1, Tensor(b.shape(), std::move(db.storage())));
      }
      return;
    }
    case Op::tanh: {
      if (!needs(0)) return;
      Tensor d = g;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - n.value[i] * n.value[i];
      give(0, d);
      return;
    }
    case Op::sigmoid: {
      if (!needs(0)) return;
      Tensor d = g;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= n.value[i] * (1.0 - n.value[i]);
      give(0, d);
      return;
    }
    case Op::sum: {
      if (!needs(0)) return;
      give(0, Tensor(in(0).shape(), std::vector<double>(in(0).size(), g[0])));
      return;
    }
    case Op::square: {
      if (!needs(0)) return;
      Tensor d = g;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 2.0 * in(0)[i];
      give(0, d);
      return;
    }
    case Op::softmax: {
      if (!needs(0)) return;
      const Tensor& y = n.value;
      Tensor d = Tensor::zeros_like(y);
      const std::size_t r = y.rows(), c = y.cols();
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) d[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
      }
      give(0, Tensor(in(0).shape(), std::move(d.storage())));
      return;
    }
    case Op::slice: {
      if (!needs(0)) return;
      const Tensor& a = in(0);
      Tensor d = Tensor::zeros_like(a);
      const std::size_t r0 = n.args[0], c0 = n.args[2];
      const std::size_t cols = a.cols();
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) d[(i + r0) * cols + j + c0] = g.at(i, j);
      }
      give(0, d);
      return;
    }
    case Op::concat: {
      const bool by_rows = n.args[0] == 0;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& p = in(k);
        if (needs(k)) {
          Tensor d = Tensor::zeros_like(p);
          for (std::size_t i = 0; i < p.rows(); ++i) {
            for (std::size_t j = 0; j < p.cols(); ++j) {
              d[i * p.cols() + j] = by_rows ? g.at(offset + i, j) : g.at(i, offset + j);
            }
          }
          give(k, d);
        }
        offset += by_rows ? p.rows() : p.cols();
      }
      return;
    }
  }
}

Gradients Graph::backward(Var seed) {
  if (seed.graph != this) throw Error("backward: seed belongs to another graph");
  if (consumed_) throw Error("backward: graph already consumed; replay() before a second backward pass");
  const Tensor& sv = nodes_.at(seed.id).value;
  if (sv.size() != 1) throw ShapeError("backward: seed must be scalar, got " + sv.shape_string());
  consumed_ = true;

  std::vector<Tensor> grads(nodes_.size());
  grads[seed.id] = Tensor(sv.shape(), {1.0});
  for (std::size_t i = seed.id + 1; i-- > 0;) {
    if (grads[i].empty() || !nodes_[i].requires_grad) continue;
    if (!grads[i].all_finite()) throw NonFiniteError("non-finite gradient at " + std::string(op_name(nodes_[i].op)));
    propagate(i, grads[i], grads);
    if (nodes_[i].op != Op::leaf) grads[i] = Tensor();  // intermediates are not reported
  }
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& n : nodes_) shapes.push_back(n.value.shape());
  return Gradients(std::move(grads), std::move(shapes));
}

Tensor Gradients::operator[](Var v) const {
  if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
  if (v.id < shapes_.size()) return Tensor(shapes_[v.id]);
  throw Error("gradient requested for unknown node");
}

namespace {

Graph& owner(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw Error("operands recorded on different graphs");
  return *a.graph;
}

}  // namespace

Var add(Var a, Var b) { return owner(a, b).record(Op::add, {a.id, b.id}); }
Var mul(Var a, Var b) { return owner(a, b).record(Op::mul, {a.id, b.id}); }
Var matmul(Var a, Var b, bool ta, bool tb) { return owner(a, b).record(Op::matmul, {a.id, b.id}, ta, tb); }
Var tanh(Var a) { return a.graph->record(Op::tanh, {a.id}); }
Var sigmoid(Var a) { return a.graph->record(Op::sigmoid, {a.id}); }
Var sum(Var a) { return a.graph->record(Op::sum, {a.id}); }
Var square(Var a) { return a.graph->record(Op::square, {a.id}); }
Var softmax_rows(Var a) { return a.graph->record(Op::softmax, {a.id}); }

Var slice(Var a, std::size_t row0, std::size_t row1, std::size_t col0, std::size_t col1) {
  return a.graph->record(Op::slice, {a.id}, row0, row1, col0, col1);
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.graph != parts.front().graph) throw Error("operands recorded on different graphs");
    ids.push_back(p.id);
  }
  return parts.front().graph->record(Op::concat, std::move(ids), axis == 0 ? 0 : 1);
}

Var scale(Var a, double s) { return mul(a, a.graph->constant(Tensor::scalar(s))); }

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_squared_error(Var prediction, Var target) { return mean(square(sub(prediction, target))); }

Var slice_rows(Var a, std::size_t row0, std::size_t row1) { return slice(a, row0, row1, 0, a.value().cols()); }

Var slice_cols(Var a, std::size_t col0, std::size_t col1) { return slice(a, 0, a.value().rows(), col0, col1); }

}  // namespace metasym::ad
