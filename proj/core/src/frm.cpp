#include "svtr2/model.hpp"

#include "svtr2/common.hpp"

namespace svtr2 {

namespace {

std::vector<int> band_rows(int i, int w) {
  std::vector<int> rows(static_cast<std::size_t>(w));
  for (int j = 0; j < w; ++j) rows[std::size_t(j)] = i * w + j;
  return rows;
}

}  // namespace

template <class S>
FeatureMap<S> horizontal_rearrange(const FrmP<S>& p, const FeatureMap<S>& f, FrmDiag<S>* diag) {
  const int d = f.tokens.dim(1);
  if (p.heads < 1 || d % p.heads != 0)
    throw ShapeError(str_cat("horizontal_rearrange: ", d, " dims vs ", p.heads, " heads"));
  const int dh = d / p.heads;
  const double sc = attn_scale(dh);
  if (diag) {
    diag->mh.clear();
    diag->mh.reserve(std::size_t(f.h));
  }

  std::vector<Tensor<S>> out_rows;
  out_rows.reserve(std::size_t(f.h));
  for (int i = 0; i < f.h; ++i) {
    Tensor<S> fi = gather_rows(f.tokens, band_rows(i, f.w));
    Tensor<S> q = matmul(fi, p.hq);
    Tensor<S> k = matmul(fi, p.hk);
    Tensor<S> v = matmul(fi, p.hv);

    std::vector<Tensor<S>> heads;
    heads.reserve(std::size_t(p.heads));
    Tensor<S> mh_avg;
    if (diag) mh_avg = Tensor<S>::zeros({f.w, f.w});
    for (int hd = 0; hd < p.heads; ++hd) {
      Tensor<S> m = softmax(scale(matmul(slice_cols(q, hd * dh, dh),
                                         transpose(slice_cols(k, hd * dh, dh))),
                                  sc),
                            -1);
      if (diag) {
        S* acc = mh_avg.data();
        const S* mv = m.data();
        for (long long e = 0; e < m.numel(); ++e) acc[e] += mv[e] / S(p.heads);
      }
      heads.push_back(matmul(m, slice_cols(v, hd * dh, dh)));
    }
    if (diag) diag->mh.push_back(mh_avg);

    Tensor<S> mixed = p.heads == 1 ? heads[0] : concat_cols(heads);
    // The residual and norm come after the add (the defining formula wraps
    // the sum, unlike the backbone's pre-norm blocks).
    Tensor<S> y = layer_norm(add(mixed, fi), p.n1.g, p.n1.b);
    y = layer_norm(add(mlp_forward(p.mlp, y), y), p.n2.g, p.n2.b);
    out_rows.push_back(y);
  }
  return {f.h == 1 ? out_rows[0] : concat_rows(out_rows), f.h, f.w};
}

template <class S>
Tensor<S> vertical_rearrange(const FrmP<S>& p, const FeatureMap<S>& fh, FrmDiag<S>* diag) {
  const int d = fh.tokens.dim(1);
  Tensor<S> k = matmul(fh.tokens, p.vk);                                // [h*w, d]
  Tensor<S> scores = scale(matmul(k, transpose(p.vt)), attn_scale(d));  // [h*w, 1]
  Tensor<S> m = softmax(reshape(scores, {fh.h, fh.w}), 0);  // columns sum to 1 over rows

  if (diag) {
    Tensor<S> mv = Tensor<S>::zeros({fh.w, fh.h});
    for (int i = 0; i < fh.h; ++i)
      for (int j = 0; j < fh.w; ++j) mv.data()[j * fh.h + i] = m.at({i, j});
    diag->mv = mv;
  }

  Tensor<S> v = matmul(fh.tokens, p.vv);  // [h*w, d]
  Tensor<S> ones = Tensor<S>::full({1, d}, S(1));
  Tensor<S> out;  // sum over rows i of m[i, :] (as a column) * v band i
  for (int i = 0; i < fh.h; ++i) {
    Tensor<S> wi = matmul(transpose(gather_rows(m, {i})), ones);  // [w, d] broadcast weights
    Tensor<S> term = mul(wi, gather_rows(v, band_rows(i, fh.w)));
    out = i == 0 ? term : add(out, term);
  }
  return out;
}

template <class S>
Tensor<S> ctc_logits(const FrmP<S>& p, const Tensor<S>& seq) {
  return linear(p.cls, seq);
}

template <class S>
Tensor<S> effective_rearrangement(const FrmDiag<S>& diag, int h, int w) {
  if (int(diag.mh.size()) != h || !diag.mv.defined())
    throw StateError("effective_rearrangement: diagnostics were not captured");
  Tensor<S> out = Tensor<S>::zeros({w, h * w});
  for (int mrow = 0; mrow < w; ++mrow)
    for (int i = 0; i < h; ++i) {
      const S vi = diag.mv.at({mrow, i});
      for (int j = 0; j < w; ++j)
        out.data()[mrow * (h * w) + i * w + j] = vi * diag.mh[std::size_t(i)].at({mrow, j});
    }
  return out;
}

template <class S>
Tensor<S> column_mean(const FeatureMap<S>& f) {
  Tensor<S> acc = gather_rows(f.tokens, band_rows(0, f.w));
  for (int i = 1; i < f.h; ++i) acc = add(acc, gather_rows(f.tokens, band_rows(i, f.w)));
  return scale(acc, 1.0 / f.h);
}

#define SVTR2_INSTANTIATE(S)                                                                   \
  template FeatureMap<S> horizontal_rearrange<S>(const FrmP<S>&, const FeatureMap<S>&,        \
                                                 FrmDiag<S>*);                                 \
  template Tensor<S> vertical_rearrange<S>(const FrmP<S>&, const FeatureMap<S>&, FrmDiag<S>*); \
  template Tensor<S> ctc_logits<S>(const FrmP<S>&, const Tensor<S>&);                         \
  template Tensor<S> effective_rearrangement<S>(const FrmDiag<S>&, int, int);                 \
  template Tensor<S> column_mean<S>(const FeatureMap<S>&);

SVTR2_INSTANTIATE(float)
SVTR2_INSTANTIATE(double)
#undef SVTR2_INSTANTIATE

}  // namespace svtr2
