#include <string>

#include "star/autodiff.hpp"
#include "star/errors.hpp"

namespace star {

const Tensor& Var::value() const {
  if (!tape) throw InvalidArgument("use of an unbound Var");
  return tape->value(*this);
}

double* GradSink::input(std::size_t slot) {
  std::size_t id = inputs_[slot];
  if (!tape_.nodes_[id].requires_grad) return nullptr;
  return tape_.grad_buffer(id);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad && grad_enabled_;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor out, std::initializer_list<Var> inputs, BackwardFn fn) {
  if (!out.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite values in output of shape " +
                       shape_str(out.shape()));
  }
  Node node;
  node.value = std::move(out);
  for (const Var& v : inputs) {
    if (v.tape != this) throw InvalidArgument(std::string(op) + ": operand recorded on another tape");
    if (nodes_[v.id].requires_grad) node.requires_grad = true;
  }
  node.requires_grad = node.requires_grad && grad_enabled_;
  if (node.requires_grad) {
    for (const Var& v : inputs) node.inputs.push_back(v.id);
    node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

double* Tape::grad_buffer(std::size_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value.numel(), 0.0);
  return g.data();
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw InvalidArgument("backward: loss recorded on another tape");
  const Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " + shape_str(root.value.shape()));
  }
  if (!root.requires_grad) throw InvalidArgument("backward: loss is detached from every parameter");

  grads_.assign(nodes_.size(), {});
  grads_[loss.id] = {1.0};
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || grads_[id].empty()) continue;
    GradSink sink(*this, node.inputs);
    node.backward(grads_[id], sink);
    if (!node.is_leaf) std::vector<double>().swap(grads_[id]);
  }
}

Tensor Tape::grad(Var v) const {
  const Tensor& value = nodes_.at(v.id).value;
  if (v.id >= grads_.size() || grads_[v.id].empty()) return Tensor::zeros(value.shape());
  return Tensor(value.shape(), grads_[v.id]);
}

}  // namespace star
