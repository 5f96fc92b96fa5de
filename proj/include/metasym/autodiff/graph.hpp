#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "metasym/autodiff/tensor.hpp"

namespace metasym::ad {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

enum class Op {
  leaf,
  add,
  mul,
  matmul,
  tanh,
  sigmoid,
  sum,
  square,
  softmax,
  slice,
  concat,
};

std::string_view op_name(Op op);

class Gradients;

/// Tape of primitive operations recorded during a forward evaluation.
///
/// Values are computed eagerly as nodes are appended. `backward` walks the
/// tape once in reverse; calling it a second time requires a `replay()`
/// first. Every node value is checked for NaN/Inf when produced.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var input(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return input(std::move(value), false); }

  const Tensor& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const;

  /// Overwrites a leaf value; call `replay()` to propagate it.
  void set_input(Var leaf, Tensor value);

  /// Recomputes every non-leaf node from the current leaf values.
  void replay();

  /// Reverse-mode sweep from a single-element seed node.
  Gradients backward(Var seed);

  // Used by the free-function primitives below.
  Var record(Op op, std::vector<std::size_t> inputs, std::size_t a0 = 0, std::size_t a1 = 0,
             std::size_t a2 = 0, std::size_t a3 = 0);

 private:
  struct Node {
    Op op = Op::leaf;
    Tensor value;
    std::vector<std::size_t> inputs;
    // slice: row0,row1,col0,col1; matmul: transpose flags; concat: axis
    std::size_t args[4] = {0, 0, 0, 0};
    bool requires_grad = false;
  };

  Tensor compute(const Node& node) const;
  void propagate(std::size_t index, const Tensor& grad, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Gradient of the seed with respect to every recorded node.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  /// Zero-filled when the seed does not depend on `v`.
  Tensor operator[](Var v) const;
  bool has(Var v) const { return v.id < grads_.size() && !grads_[v.id].empty(); }

 private:
  std::vector<Tensor> grads_;
  std::vector<Shape> shapes_;
};

// Primitive operations. `add` and `mul` broadcast a scalar or a 1 x n row
// operand across the rows of the other operand.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
Var tanh(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var square(Var a);
Var softmax_rows(Var a);
Var slice(Var a, std::size_t row0, std::size_t row1, std::size_t col0, std::size_t col1);
Var concat(const std::vector<Var>& parts, int axis);

// Compositions of the primitives.
Var scale(Var a, double s);
Var sub(Var a, Var b);
Var mean(Var a);
Var mean_squared_error(Var prediction, Var target);
Var slice_rows(Var a, std::size_t row0, std::size_t row1);
Var slice_cols(Var a, std::size_t col0, std::size_t col1);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace metasym::ad
