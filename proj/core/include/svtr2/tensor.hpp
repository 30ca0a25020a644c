#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "svtr2/common.hpp"

namespace svtr2 {

// Dense row-major tensor with an optional gradient buffer. `Tensor` is a
// cheap shared handle; ops hold handles in their backward closures, which is
// what keeps intermediate values alive for the backward pass.
//
// Scalar type S is double for gradient checking and float for training runs.

template <class S>
struct TensorImpl {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until first accumulation; else value.size()
  bool requires_grad = false;
  bool is_leaf = true;  // false for op outputs; their grads reset per backward

  long long numel() const {
    long long n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, S v);
  static Tensor from(std::vector<int> shape, std::vector<S> values);
  static Tensor scalar(S v) { return from({1}, {v}); }

  bool defined() const { return p_ != nullptr; }
  const std::vector<int>& shape() const { return p_->shape; }
  int ndim() const { return int(p_->shape.size()); }
  int dim(int i) const { return p_->shape[std::size_t(i)]; }
  long long numel() const { return p_->numel(); }

  S* data() { return p_->value.data(); }
  const S* data() const { return p_->value.data(); }
  std::vector<S>& values() { return p_->value; }
  const std::vector<S>& values() const { return p_->value; }

  // Element access for tests / glue code (row-major).
  S at(std::initializer_list<int> idx) const;

  bool requires_grad() const { return p_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    p_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return p_->is_leaf; }
  Tensor& mark_output() {  // op outputs: non-leaf, grad-carrying
    p_->requires_grad = true;
    p_->is_leaf = false;
    return *this;
  }

  bool has_grad() const { return !p_->grad.empty(); }
  // Gradient buffer, allocated (zero-filled) on first use.
  S* grad() {
    p_->ensure_grad();
    return p_->grad.data();
  }
  const std::vector<S>& grad_vec() const { return p_->grad; }
  void zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), S(0));
  }

  std::shared_ptr<TensorImpl<S>> impl() const { return p_; }

 private:
  std::shared_ptr<TensorImpl<S>> p_;
};

// Ordered record of executed primitives. Ops append one entry per executed
// op while a tape is active; `backward` replays the entries exactly once in
// reverse execution order (a valid topological order of the DAG by
// construction, since an op can only consume already-produced tensors).
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    if (active_ == this) active_ = nullptr;
  }

  void record(std::shared_ptr<TensorImpl<S>> output, std::function<void()> step) {
    entries_.push_back({std::move(output), std::move(step)});
  }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape once in reverse. Grads of
  // op outputs are reset first so a second backward (after resetting leaf
  // grads) reproduces identical values; leaf grads accumulate across calls.
  // Returns the number of records replayed.
  std::size_t backward(const Tensor<S>& loss);

  // RAII activation. Ops record onto the innermost active tape.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_; }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl<S>> output;
    std::function<void()> step;
  };
  std::vector<Entry> entries_;
  // Inline + constinit: every TU sees the constant initializer, so access
  // compiles to a plain TLS load with no init-wrapper call.
  static constinit inline thread_local Tape* active_ = nullptr;
};

template <class S>
bool recording(std::initializer_list<const Tensor<S>*> inputs) {
  if (!Tape<S>::active()) return false;
  for (const Tensor<S>* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

// Throws StateError if any value in `t` is NaN/Inf (only when checks are on).
template <class S>
void check_finite(const Tensor<S>& t, const char* op_name);

}  // namespace svtr2
