#include "svtr2/tensor.hpp"

#include <cmath>

namespace svtr2 {

namespace {
long long checked_numel(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError(str_cat("tensor dims must be positive, got ", shape_str(shape)));
    n *= d;
  }
  return n;
}
}  // namespace

template <class S>
Tensor<S> Tensor<S>::zeros(std::vector<int> shape) {
  long long n = checked_numel(shape);
  Tensor<S> t;
  t.p_ = std::make_shared<TensorImpl<S>>();
  t.p_->shape = std::move(shape);
  t.p_->value.assign(std::size_t(n), S(0));
  return t;
}

template <class S>
Tensor<S> Tensor<S>::full(std::vector<int> shape, S v) {
  Tensor<S> t = zeros(std::move(shape));
  std::fill(t.p_->value.begin(), t.p_->value.end(), v);
  return t;
}

template <class S>
Tensor<S> Tensor<S>::from(std::vector<int> shape, std::vector<S> values) {
  long long n = checked_numel(shape);
  if (n != (long long)values.size())
    throw ShapeError(str_cat("value count ", values.size(), " does not fill shape ",
                             shape_str(shape)));
  Tensor<S> t;
  t.p_ = std::make_shared<TensorImpl<S>>();
  t.p_->shape = std::move(shape);
  t.p_->value = std::move(values);
  return t;
}

template <class S>
S Tensor<S>::at(std::initializer_list<int> idx) const {
  if ((int)idx.size() != ndim())
    throw ShapeError(str_cat("index rank ", idx.size(), " vs tensor rank ", ndim()));
  long long off = 0;
  int i = 0;
  for (int v : idx) {
    int d = p_->shape[std::size_t(i)];
    if (v < 0 || v >= d) throw ShapeError(str_cat("index ", v, " out of bounds for dim ", d));
    off = off * d + v;
    ++i;
  }
  return p_->value[std::size_t(off)];
}

template <class S>
std::size_t Tape<S>::backward(const Tensor<S>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw StateError("backward: loss must be a defined scalar tensor");
  if (!loss.requires_grad())
    throw StateError("backward: loss does not depend on any tracked tensor");
  // Reset grads of every op output recorded here. Leaves keep theirs so
  // separate backward passes accumulate (e.g. grads summed over a batch).
  for (Entry& e : entries_)
    if (e.output && !e.output->grad.empty())
      std::fill(e.output->grad.begin(), e.output->grad.end(), S(0));
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = S(1);
  std::size_t replayed = 0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->step();
    ++replayed;
  }
  return replayed;
}

template <class S>
void check_finite(const Tensor<S>& t, const char* op_name) {
  if (!nan_checks_enabled()) return;
  for (S v : t.values())
    if (!std::isfinite(double(v)))
      throw StateError(str_cat(op_name, ": non-finite value produced"));
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);

}  // namespace svtr2
