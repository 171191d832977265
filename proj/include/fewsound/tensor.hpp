#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "fewsound/common.hpp"

namespace fewsound {

// Dense row-major tensor. float for the production path; the same template
// instantiated with double serves as the shadow type for gradient checking.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, T fill = T{})
      : shape(std::move(s)), data(numel_of(shape), fill) {}

  Tensor(std::vector<std::size_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor: " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
    }
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  T& at(std::size_t i) { return data[i]; }
  T at(std::size_t i) const { return data[i]; }
  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  T at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  T at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  T at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (const T v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
class Tape;

enum class Mode { train, eval };

// Handle to a node on a tape.
template <typename T>
struct Value {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& val() const { return tape->value_of(id); }
  const std::vector<std::size_t>& shape() const { return val().shape; }
  std::size_t numel() const { return val().numel(); }
};

// Reverse-mode gradient tape. Operations append records in execution order;
// backward() replays them once in reverse, which is a reverse topological
// order of the graph by construction.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Owned leaf; participates in gradients iff t.requires_grad.
  Value<T> leaf(Tensor<T> t) {
    check_finite_or_throw(t, "leaf");
    const bool needs = t.requires_grad;
    nodes_.push_back(Node{std::move(t), nullptr, needs, std::nullopt});
    return Value<T>{this, static_cast<int>(nodes_.size() - 1)};
  }

  // Leaf referencing external storage (model parameters). The tensor must
  // outlive the tape. `with_grad` overrides the stored flag so evaluation
  // passes can bind parameters without recording anything.
  Value<T> leaf_ref(Tensor<T>* t, bool with_grad) {
    check_finite_or_throw(*t, "leaf");
    nodes_.push_back(Node{Tensor<T>{}, t, with_grad && t->requires_grad, std::nullopt});
    return Value<T>{this, static_cast<int>(nodes_.size() - 1)};
  }

  Value<T> constant(Tensor<T> t) {
    t.requires_grad = false;
    return leaf(std::move(t));
  }

  // Appends one op node. `bw(tape, out_id)` may be empty when no input needs
  // gradients; it is recorded only when some input does.
  Value<T> emit(const char* op, Tensor<T> out, const std::vector<Value<T>>& inputs,
                std::function<void(Tape&, int)> bw) {
    if (!all_finite(out)) {
      throw NumericError(std::string(op) + ": produced non-finite values");
    }
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this) throw NumericError(std::string(op) + ": input from another tape");
      needs = needs || nodes_[in.id].needs;
    }
    nodes_.push_back(Node{std::move(out), nullptr, needs, std::nullopt});
    const int id = static_cast<int>(nodes_.size() - 1);
    if (needs && bw) records_.push_back(Record{id, std::move(bw)});
    return Value<T>{this, id};
  }

  void backward(const Value<T>& loss) {
    if (loss.tape != this) throw NumericError("backward: loss from another tape");
    if (consumed_) throw NumericError("backward: tape already consumed; re-run the forward pass");
    if (value_of(loss.id).numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_str(value_of(loss.id).shape));
    }
    consumed_ = true;
    grad_buf(loss.id).data[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!grad_present(it->out)) continue;  // nothing flowed into this node
      it->fn(*this, it->out);
    }
  }

  const Tensor<T>& grad(const Value<T>& v) const {
    if (v.tape != this) throw NumericError("grad: value from another tape");
    const Node& n = nodes_[v.id];
    if (!n.needs || !n.grad.has_value()) {
      throw NumericError("grad: no gradient recorded for this value");
    }
    return *n.grad;
  }

  bool has_grad(const Value<T>& v) const {
    return v.tape == this && nodes_[v.id].needs && nodes_[v.id].grad.has_value();
  }

  const Tensor<T>& value_of(int id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.owned;
  }

  bool needs_grad(int id) const { return nodes_[id].needs; }

  // Lazily-allocated zero gradient buffer, shaped like the node value.
  Tensor<T>& grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.grad.has_value()) n.grad.emplace(value_of(id).shape);
    return *n.grad;
  }

  const Tensor<T>& grad_at(int id) const { return *nodes_[id].grad; }
  bool grad_present(int id) const { return nodes_[id].grad.has_value(); }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor<T> owned;
    Tensor<T>* ext = nullptr;
    bool needs = false;
    std::optional<Tensor<T>> grad;
  };
  struct Record {
    int out;
    std::function<void(Tape&, int)> fn;
  };

  static void check_finite_or_throw(const Tensor<T>& t, const char* what) {
    if (!all_finite(t)) throw NumericError(std::string(what) + ": non-finite input values");
  }

  std::vector<Node> nodes_;
  std::vector<Record> records_;
  bool consumed_ = false;
};

}  // namespace fewsound
