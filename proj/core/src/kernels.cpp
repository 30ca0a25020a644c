#include "svtr2/kernels.hpp"

#include <cblas.h>

#include "svtr2/common.hpp"

namespace svtr2 {

namespace {
inline void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                      const float* a, int lda, const float* b, int ldb, float beta, float* c,
                      int ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, 1.0f, a, lda, b, ldb, beta, c, ldc);
}
inline void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                      const double* a, int lda, const double* b, int ldb, double beta, double* c,
                      int ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, 1.0, a, lda, b, ldb, beta, c, ldc);
}
}  // namespace

template <class S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  runtime_init();
  blas_gemm(CblasNoTrans, CblasNoTrans, m, n, k, a, k, b, n, accumulate ? S(1) : S(0), c, n);
}

template <class S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  runtime_init();
  blas_gemm(CblasNoTrans, CblasTrans, m, n, k, a, k, b, k, accumulate ? S(1) : S(0), c, n);
}

template <class S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  runtime_init();
  blas_gemm(CblasTrans, CblasNoTrans, k, n, m, a, k, b, n, accumulate ? S(1) : S(0), c, n);
}

template void gemm_nn<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_nn<double>(const double*, const double*, double*, int, int, int, bool);
template void gemm_nt<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_nt<double>(const double*, const double*, double*, int, int, int, bool);
template void gemm_tn<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_tn<double>(const double*, const double*, double*, int, int, int, bool);

template <class S>
void conv2d_forward(const ConvGeom& g, const S* x, const S* w, const S* bias, S* y) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin / g.groups;   // input channels per group
  const int cog = g.cout / g.groups;  // output channels per group
  for (int oc = 0; oc < g.cout; ++oc) {
    S* yc = y + (long long)oc * oh * ow;
    const S b = bias ? bias[oc] : S(0);
    for (long long i = 0; i < (long long)oh * ow; ++i) yc[i] = b;
  }
  for (int grp = 0; grp < g.groups; ++grp) {
    for (int ocg = 0; ocg < cog; ++ocg) {
      const int oc = grp * cog + ocg;
      S* yc = y + (long long)oc * oh * ow;
      for (int icg = 0; icg < cig; ++icg) {
        const int ic = grp * cig + icg;
        const S* xc = x + (long long)ic * g.h * g.w;
        const S* wk = w + (((long long)oc * cig + icg) * g.kh) * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const S wv = wk[ky * g.kw + kx];
            if (wv == S(0)) continue;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * g.sh - g.ph + ky;
              if (iy < 0 || iy >= g.h) continue;
              const S* xrow = xc + (long long)iy * g.w;
              S* yrow = yc + (long long)oy * ow;
              // Clip ox so ix = ox*sw - pw + kx stays inside [0, w).
              int ox0 = 0, ox1 = ow;
              while (ox0 < ow && ox0 * g.sw - g.pw + kx < 0) ++ox0;
              while (ox1 > ox0 && (ox1 - 1) * g.sw - g.pw + kx >= g.w) --ox1;
              const int base = ox0 * g.sw - g.pw + kx;
              if (g.sw == 1) {
                const S* xs = xrow + base;
                for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xs[ox - ox0];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  yrow[ox] += wv * xrow[base + (ox - ox0) * g.sw];
              }
            }
          }
        }
      }
    }
  }
}

template <class S>
void conv2d_backward_input(const ConvGeom& g, const S* w, const S* dy, S* dx) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin / g.groups;
  const int cog = g.cout / g.groups;
  for (int grp = 0; grp < g.groups; ++grp) {
    for (int ocg = 0; ocg < cog; ++ocg) {
      const int oc = grp * cog + ocg;
      const S* dyc = dy + (long long)oc * oh * ow;
      for (int icg = 0; icg < cig; ++icg) {
        const int ic = grp * cig + icg;
        S* dxc = dx + (long long)ic * g.h * g.w;
        const S* wk = w + (((long long)oc * cig + icg) * g.kh) * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const S wv = wk[ky * g.kw + kx];
            if (wv == S(0)) continue;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * g.sh - g.ph + ky;
              if (iy < 0 || iy >= g.h) continue;
              S* dxrow = dxc + (long long)iy * g.w;
              const S* dyrow = dyc + (long long)oy * ow;
              int ox0 = 0, ox1 = ow;
              while (ox0 < ow && ox0 * g.sw - g.pw + kx < 0) ++ox0;
              while (ox1 > ox0 && (ox1 - 1) * g.sw - g.pw + kx >= g.w) --ox1;
              const int base = ox0 * g.sw - g.pw + kx;
              if (g.sw == 1) {
                S* dxs = dxrow + base;
                for (int ox = ox0; ox < ox1; ++ox) dxs[ox - ox0] += wv * dyrow[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  dxrow[base + (ox - ox0) * g.sw] += wv * dyrow[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <class S>
void conv2d_backward_params(const ConvGeom& g, const S* x, const S* dy, S* dw, S* dbias) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin / g.groups;
  const int cog = g.cout / g.groups;
  if (dbias) {
    for (int oc = 0; oc < g.cout; ++oc) {
      const S* dyc = dy + (long long)oc * oh * ow;
      S acc = 0;
      for (long long i = 0; i < (long long)oh * ow; ++i) acc += dyc[i];
      dbias[oc] += acc;
    }
  }
  for (int grp = 0; grp < g.groups; ++grp) {
    for (int ocg = 0; ocg < cog; ++ocg) {
      const int oc = grp * cog + ocg;
      const S* dyc = dy + (long long)oc * oh * ow;
      for (int icg = 0; icg < cig; ++icg) {
        const int ic = grp * cig + icg;
        const S* xc = x + (long long)ic * g.h * g.w;
        S* wk = dw + (((long long)oc * cig + icg) * g.kh) * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            S acc = 0;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * g.sh - g.ph + ky;
              if (iy < 0 || iy >= g.h) continue;
              const S* xrow = xc + (long long)iy * g.w;
              const S* dyrow = dyc + (long long)oy * ow;
              int ox0 = 0, ox1 = ow;
              while (ox0 < ow && ox0 * g.sw - g.pw + kx < 0) ++ox0;
              while (ox1 > ox0 && (ox1 - 1) * g.sw - g.pw + kx >= g.w) --ox1;
              const int base = ox0 * g.sw - g.pw + kx;
              if (g.sw == 1) {
                const S* xs = xrow + base;
                for (int ox = ox0; ox < ox1; ++ox) acc += xs[ox - ox0] * dyrow[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  acc += xrow[base + (ox - ox0) * g.sw] * dyrow[ox];
              }
            }
            wk[ky * g.kw + kx] += acc;
          }
        }
      }
    }
  }
}

template void conv2d_forward<float>(const ConvGeom&, const float*, const float*, const float*,
                                    float*);
template void conv2d_forward<double>(const ConvGeom&, const double*, const double*, const double*,
                                     double*);
template void conv2d_backward_input<float>(const ConvGeom&, const float*, const float*, float*);
template void conv2d_backward_input<double>(const ConvGeom&, const double*, const double*,
                                            double*);
template void conv2d_backward_params<float>(const ConvGeom&, const float*, const float*, float*,
                                            float*);
template void conv2d_backward_params<double>(const ConvGeom&, const double*, const double*,
                                             double*, double*);

}  // namespace svtr2
