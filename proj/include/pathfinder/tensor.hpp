#pragma once
// Full-precision tensors on a reverse-mode tape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pathfinder {

/// Thrown when training produces a NaN or infinity.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pathfinder

namespace pathfinder::ag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <class Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool placeholder = false;
};

/// Handle to a shared tensor node. Copies alias the same storage.
template <class Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0)) : node_(std::make_shared<Node<Real>>()) {
    node_->value.assign(ag::numel(shape), fill);
    node_->shape = std::move(shape);
  }

  static Tensor from(Shape shape, std::vector<Real> values) {
    if (ag::numel(shape) != values.size())
      throw std::invalid_argument("Tensor::from: " + to_string(shape) + " does not hold " +
                                  std::to_string(values.size()) + " values");
    Tensor t;
    t.node_ = std::make_shared<Node<Real>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    return t;
  }

  /// Shape-only tensor used when counting operations without computing them.
  static Tensor placeholder(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<Node<Real>>();
    t.node_->shape = std::move(shape);
    t.node_->placeholder = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  bool is_placeholder() const { return node_->placeholder; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return ag::numel(node_->shape); }

  std::span<Real> data() { return node_->value; }
  std::span<const Real> data() const { return node_->value; }
  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }
  Real item() const {
    if (node_->value.size() != 1) throw std::logic_error("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  /// Gradient storage, zero-allocated on first access.
  std::span<Real> grad_buffer() const {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), Real(0));
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Value copy with no gradient history.
  Tensor detach() const { return from(shape(), node_->value); }

  Node<Real>* node() const { return node_.get(); }
  bool same(const Tensor& o) const { return node_ == o.node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

/// Reverse-mode tape. Operations append their backward steps in execution
/// order; `backward` replays them in reverse.
template <class Real>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  /// Seeds d(root)/d(root) = 1 and propagates. The tape is cleared afterwards.
  void backward(Tensor<Real> root) {
    if (root.numel() != 1) throw std::invalid_argument("backward: root must be a scalar");
    root.grad_buffer()[0] += Real(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

template <class Real>
Tape<Real>*& active_tape() {
  thread_local Tape<Real>* tape = nullptr;
  return tape;
}

/// Makes `tape` the recording tape of this thread for the scope's lifetime.
template <class Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape) : previous_(active_tape<Real>()) { active_tape<Real>() = &tape; }
  ~TapeScope() { active_tape<Real>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* previous_;
};

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Operation accounting. Ops report binary and floating-point operation counts
// to the active counter; in shape-only mode they skip computation entirely.

struct OpRecord {
  std::string layer;
  std::string kind;
  std::uint64_t bops = 0;
  std::uint64_t flops = 0;
};

class OpCounter {
 public:
  void add(std::string kind, std::uint64_t bops, std::uint64_t flops);
  const std::vector<OpRecord>& records() const { return records_; }

 private:
  std::vector<OpRecord> records_;
};

inline OpCounter*& active_counter() {
  thread_local OpCounter* counter = nullptr;
  return counter;
}

inline std::vector<std::string>& name_stack() {
  thread_local std::vector<std::string> stack;
  return stack;
}

/// Pushes a layer-name component used to label counted operations.
class NameScope {
 public:
  explicit NameScope(std::string name) { name_stack().push_back(std::move(name)); }
  ~NameScope() { name_stack().pop_back(); }
  NameScope(const NameScope&) = delete;
  NameScope& operator=(const NameScope&) = delete;
};

inline std::string current_layer_name() {
  std::string out;
  for (const auto& part : name_stack()) out += (out.empty() ? "" : ".") + part;
  return out.empty() ? "<root>" : out;
}

inline void OpCounter::add(std::string kind, std::uint64_t bops, std::uint64_t flops) {
  records_.push_back({current_layer_name(), std::move(kind), bops, flops});
}

inline bool& shape_only_mode() {
  thread_local bool on = false;
  return on;
}

/// Counts operations into `counter` and, when `shape_only`, skips arithmetic.
class CountingScope {
 public:
  CountingScope(OpCounter& counter, bool shape_only)
      : previous_counter_(active_counter()), previous_shape_only_(shape_only_mode()) {
    active_counter() = &counter;
    shape_only_mode() = shape_only;
  }
  ~CountingScope() {
    active_counter() = previous_counter_;
    shape_only_mode() = previous_shape_only_;
  }
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounter* previous_counter_;
  bool previous_shape_only_;
};

inline void count_op(const char* kind, std::uint64_t bops, std::uint64_t flops) {
  if (auto* c = active_counter()) c->add(kind, bops, flops);
}

}  // namespace pathfinder::ag
