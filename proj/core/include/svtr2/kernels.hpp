#pragma once

// Raw numeric kernels under the autodiff ops. Row-major everywhere.
// Matrix products are delegated to single-threaded BLAS; convolutions are
// direct loops (they carry a small share of the arithmetic here).

namespace svtr2 {

// C[m,n] (+)= A[m,k] * B[k,n]
template <class S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate);

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <class S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate);

// C[k,n] (+)= A[m,k]^T * B[m,n]
template <class S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate);

struct ConvGeom {
  int cin = 0, h = 0, w = 0;      // input
  int cout = 0, kh = 0, kw = 0;   // kernel
  int groups = 1;
  int sh = 1, sw = 1;             // stride
  int ph = 0, pw = 0;             // zero padding
  int out_h() const { return (h + 2 * ph - kh) / sh + 1; }
  int out_w() const { return (w + 2 * pw - kw) / sw + 1; }
};

// y[cout, oh, ow]; w[cout, cin/groups, kh, kw]; bias may be null.
template <class S>
void conv2d_forward(const ConvGeom& g, const S* x, const S* w, const S* bias, S* y);

// dx += dy convolved back through w. dx must be pre-zeroed by the caller if
// plain gradients (rather than accumulation) are wanted.
template <class S>
void conv2d_backward_input(const ConvGeom& g, const S* w, const S* dy, S* dx);

// dw += x (*) dy ; dbias += row sums of dy (dbias may be null).
template <class S>
void conv2d_backward_params(const ConvGeom& g, const S* x, const S* dy, S* dw, S* dbias);

}  // namespace svtr2
