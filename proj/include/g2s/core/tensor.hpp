#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "g2s/core/errors.hpp"

namespace g2s {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixD = Matrix<double>;

/// A named trainable array. Vectors (biases, gains) are stored as a single
/// row with `rank == 1` so the checkpoint writer can restore the logical shape.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  int rank = 2;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v, int r = 2)
      : name(std::move(n)), value(std::move(v)), rank(r) {
    zero_grad();
  }

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

template <typename Scalar>
using ParameterRefs = std::vector<Parameter<Scalar>*>;

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid for the
/// lifetime of the tape that produced it.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item() on a non-scalar tensor");
    return value()(0, 0);
  }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape. Nodes are appended in evaluation
/// order, so reverse index order is a valid topological order for the
/// backward sweep. A tape belongs to one thread at a time.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<Scalar> constant(Mat value) { return push(std::move(value), false, {}, nullptr); }

  // Leaf that receives a gradient (used for input sensitivities).
  Tensor<Scalar> variable(Mat value) { return push(std::move(value), true, {}, nullptr); }

  // Leaf bound to a parameter. Repeated calls return the same node.
  Tensor<Scalar> parameter(const Parameter<Scalar>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Tensor<Scalar>(this, it->second);
    auto t = push(p.value, true, {}, &p);
    param_nodes_.emplace(&p, t.id());
    return t;
  }

  Tensor<Scalar> record(Mat value, std::initializer_list<Tensor<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError("tensors from different tapes combined");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  // Variant for ops with a runtime-sized input list.
  Tensor<Scalar> record(Mat value, const std::vector<Tensor<Scalar>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError("tensors from different tapes combined");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Clears previous gradients, seeds d(loss)/d(loss) = seed and sweeps
  /// backwards. The loss must be 1x1.
  void backward(const Tensor<Scalar>& loss, Scalar seed = Scalar(1)) {
    if (&loss.tape() != this) throw ContractError("loss is not on this tape");
    if (loss.rows() != 1 || loss.cols() != 1) throw ContractError("backward() requires a scalar loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id()].grad = Mat::Constant(1, 1, seed);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.requires_grad && n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    }
  }

  /// Calls f(parameter, gradient) for every parameter leaf on the tape.
  template <typename F>
  void for_each_parameter(F&& f) const {
    for (const auto& n : nodes_) {
      if (n.param != nullptr) f(*n.param, n.grad);
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    BackwardFn backward;
    const Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
  };

  Tensor<Scalar> push(Mat value, bool requires_grad, BackwardFn fn, const Parameter<Scalar>* param) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(fn);
    n.param = param;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor<Scalar>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, std::size_t> param_nodes_;
};

using DTensor = Tensor<double>;
using DTape = Tape<double>;
using DParameter = Parameter<double>;
using DParameterRefs = ParameterRefs<double>;

}  // namespace g2s
