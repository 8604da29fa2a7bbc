#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star {

using Index = std::vector<std::size_t>;
using IndexPtr = std::shared_ptr<const Index>;

inline IndexPtr make_index(Index index) { return std::make_shared<const Index>(std::move(index)); }

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr; }
};

// Hands a backward closure the gradient buffers of its inputs.
class GradSink {
 public:
  // nullptr when the input does not require a gradient.
  double* input(std::size_t slot);

 private:
  friend class Tape;
  GradSink(Tape& tape, std::span<const std::size_t> inputs) : tape_(tape), inputs_(inputs) {}
  Tape& tape_;
  std::span<const std::size_t> inputs_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

// Single-owner record of executed ops. Nodes are appended in execution
// order, so node ids are a topological order of the graph.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. Throws NumericError if `out` has non-finite
  // entries. `fn` is dropped when no input requires a gradient.
  Var record(std::string_view op, Tensor out, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Reverse sweep from a scalar. Leaf gradients are kept, intermediate
  // buffers are released as the sweep passes them.
  void backward(Var loss);
  Tensor grad(Var v) const;  // zeros when the value took no part in the loss

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  friend class GradSink;
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  double* grad_buffer(std::size_t id);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// ---------------------------------------------------------------------------
// Op set. Binary elementwise ops broadcast the second operand only, in one
// of three ways: scalar, trailing suffix of the first operand's shape (a
// bias row), or first operand's shape with a trailing extent of 1 (a
// per-row column). Anything else needs an explicit reshape.
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b);                   // [m,k] x [k,n]
Var linear(Var x, Var weight, Var bias);    // [r,in] x [in,out] + [out]
Var bmm(Var a, Var b);                      // [B,m,k] x [B,k,n]
Var rowwise_dot(Var a, Var b);              // [m,k] . [m,k] -> [m,1]

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var exp(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var elu(Var a);  // alpha = 1
Var relu(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);

enum class ElementwiseKind { kAdd, kSub, kMul, kDiv, kExp, kTanh, kSigmoid, kSilu, kElu, kScale };
// Dispatcher over the kinds above. Binary kinds need `b`; kScale uses
// `factor`.
Var elementwise(ElementwiseKind kind, Var a, const Var* b = nullptr, double factor = 1.0);

Var reshape(Var a, Shape shape);
Var permute(Var a, std::span<const std::size_t> axes);
Var detach(Var a);

Var sum(Var a);  // -> scalar

// Row i of the result is row index[i] of src (rows = leading axis).
Var gather(Var src, IndexPtr index);
Var scatter_sum(Var src, IndexPtr index, std::size_t num_rows);

struct ScatterMaxResult {
  Var values;               // empty groups hold 0
  std::vector<bool> empty;  // per output row
};
ScatterMaxResult scatter_max(Var src, IndexPtr index, std::size_t num_rows);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var dropout(Var x, double p, bool training, Rng& rng);

// Softmax over the last axis restricted to entries where mask(i, j) == 1.
// scores: [..., V, V], mask: [V, V] of 0/1. Masked-out entries are 0.
Var masked_softmax(Var scores, const Tensor& mask);

// Mean cross-entropy over rows of [rows, classes].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

}  // namespace star
