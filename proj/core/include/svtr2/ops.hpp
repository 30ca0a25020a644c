#pragma once

#include <vector>

#include "svtr2/kernels.hpp"
#include "svtr2/tensor.hpp"

// Differentiable primitives. Each op computes its value eagerly and, when a
// Tape is active and any input is tracked, records one backward step that
// accumulates into the inputs' grad buffers.

namespace svtr2 {

template <class S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> scale(const Tensor<S>& a, double s);

// x:[m,n] + b:[n] broadcast over rows.
template <class S> Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b);

// [m,k] x [k,n] -> [m,n]
template <class S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

// 2-D transpose.
template <class S> Tensor<S> transpose(const Tensor<S>& x);

// Softmax along `axis` (negative axis counts from the end).
template <class S> Tensor<S> softmax(const Tensor<S>& x, int axis);

// Normalizes the last axis; gain/bias are 1-D of that length.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps = 1e-6);

template <class S> Tensor<S> gelu(const Tensor<S>& x);

template <class S> Tensor<S> sum(const Tensor<S>& x);
template <class S> Tensor<S> mean(const Tensor<S>& x);

// Same data, new shape (copying; grads flow back un-reshaped).
template <class S> Tensor<S> reshape(const Tensor<S>& x, std::vector<int> shape);

// Column slice of a 2-D tensor: columns [c0, c0+n).
template <class S> Tensor<S> slice_cols(const Tensor<S>& x, int c0, int n);
template <class S> Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts);

// Row gather / stack for 2-D tensors. gather_rows duplicates accumulate on
// the way back (this doubles as the embedding-table lookup).
template <class S> Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& rows);
template <class S> Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts);

// Grouped 2-D convolution. x:[cin,h,w], w:[cout,cin/groups,kh,kw], bias:[cout]
// (pass an undefined tensor for no bias), zero padding (ph,pw), stride (sh,sw).
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int groups,
                 int sh, int sw, int ph, int pw);

// Softmax cross-entropy of one row of logits ([n] or [1,n]) vs a class index.
template <class S> Tensor<S> cross_entropy(const Tensor<S>& logits, int target);

}  // namespace svtr2
