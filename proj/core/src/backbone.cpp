#include "svtr2/model.hpp"

#include "svtr2/common.hpp"

namespace svtr2 {

template <class S>
Tensor<S> tokens_to_plane(const Tensor<S>& x, int h, int w) {
  if (x.ndim() != 2 || x.dim(0) != h * w)
    throw ShapeError(str_cat("tokens_to_plane: ", shape_str(x.shape()), " vs grid ", h, "x", w));
  return reshape(transpose(x), {x.dim(1), h, w});
}

template <class S>
Tensor<S> plane_to_tokens(const Tensor<S>& x) {
  if (x.ndim() != 3)
    throw ShapeError(str_cat("plane_to_tokens: expected [c,h,w], got ", shape_str(x.shape())));
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

template <class S>
Tensor<S> linear(const LinearP<S>& p, const Tensor<S>& x) {
  Tensor<S> y = matmul(x, p.w);
  return p.b.defined() ? add_bias(y, p.b) : y;
}

template <class S>
Tensor<S> mlp_forward(const MlpP<S>& p, const Tensor<S>& x) {
  return linear(p.fc2, gelu(linear(p.fc1, x)));
}

namespace {

// Shared core of self- and cross-attention: per-head scaled dot-product over
// already-projected q/k/v ([n, d] each), heads split along columns.
template <class S>
Tensor<S> attention_mix(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads) {
  const int d = q.dim(1);
  if (heads < 1 || d % heads != 0)
    throw ShapeError(str_cat("attention: ", d, " dims not divisible by ", heads, " heads"));
  const int dh = d / heads;
  const double sc = attn_scale(dh);
  std::vector<Tensor<S>> outs;
  outs.reserve(std::size_t(heads));
  for (int hd = 0; hd < heads; ++hd) {
    Tensor<S> qh = slice_cols(q, hd * dh, dh);
    Tensor<S> kh = slice_cols(k, hd * dh, dh);
    Tensor<S> vh = slice_cols(v, hd * dh, dh);
    Tensor<S> m = softmax(scale(matmul(qh, transpose(kh)), sc), -1);
    outs.push_back(matmul(m, vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

template <class S>
Tensor<S> mhsa_forward(const AttnP<S>& p, const Tensor<S>& x) {
  return linear(p.o, attention_mix(linear(p.q, x), linear(p.k, x), linear(p.v, x), p.heads));
}

template <class S>
Tensor<S> cross_attention(const AttnP<S>& p, const Tensor<S>& q, const Tensor<S>& kv) {
  return linear(p.o, attention_mix(linear(p.q, q), linear(p.k, kv), linear(p.v, kv), p.heads));
}

template <class S>
Tensor<S> local_mixing(const LocalBlockP<S>& p, const Tensor<S>& x, int h, int w) {
  Tensor<S> n = layer_norm(x, p.n1.g, p.n1.b);
  Tensor<S> plane = tokens_to_plane(n, h, w);
  plane = conv2d(plane, p.c1.w, p.c1.b, p.c1.groups, 1, 1, 1, 1);
  plane = conv2d(plane, p.c2.w, p.c2.b, p.c2.groups, 1, 1, 1, 1);
  Tensor<S> y = add(x, plane_to_tokens(plane));
  return add(y, mlp_forward(p.mlp, layer_norm(y, p.n2.g, p.n2.b)));
}

template <class S>
Tensor<S> global_mixing(const GlobalBlockP<S>& p, const Tensor<S>& x) {
  Tensor<S> y = add(x, mhsa_forward(p.att, layer_norm(x, p.n1.g, p.n1.b)));
  return add(y, mlp_forward(p.mlp, layer_norm(y, p.n2.g, p.n2.b)));
}

template <class S>
FeatureMap<S> stem_embed(const StemP<S>& p, const Tensor<S>& image) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError(str_cat("stem_embed: expected [3,H,W], got ", shape_str(image.shape())));
  const int ih = image.dim(1), iw = image.dim(2);
  if (ih % 4 != 0 || iw % 4 != 0)
    throw ShapeError(str_cat("stem_embed: extents ", ih, "x", iw, " not divisible by 4"));

  Tensor<S> t = conv2d(image, p.c1.w, p.c1.b, 1, 2, 2, 1, 1);
  int h = ih / 2, w = iw / 2;
  t = gelu(layer_norm(plane_to_tokens(t), p.n1.g, p.n1.b));
  t = conv2d(tokens_to_plane(t, h, w), p.c2.w, p.c2.b, 1, 2, 2, 1, 1);
  h /= 2;
  w /= 2;
  t = gelu(layer_norm(plane_to_tokens(t), p.n2.g, p.n2.b));
  return {t, h, w};
}

template <class S>
FeatureMap<S> merge_height(const ConvP<S>& p, const FeatureMap<S>& x) {
  if (x.h % 2 != 0) throw ShapeError(str_cat("merge_height: odd grid height ", x.h));
  Tensor<S> plane = tokens_to_plane(x.tokens, x.h, x.w);
  plane = conv2d(plane, p.w, p.b, 1, 2, 1, 1, 1);
  return {plane_to_tokens(plane), x.h / 2, x.w};
}

#define SVTR2_INSTANTIATE(S)                                                                 \
  template Tensor<S> tokens_to_plane<S>(const Tensor<S>&, int, int);                        \
  template Tensor<S> plane_to_tokens<S>(const Tensor<S>&);                                  \
  template Tensor<S> linear<S>(const LinearP<S>&, const Tensor<S>&);                        \
  template Tensor<S> mlp_forward<S>(const MlpP<S>&, const Tensor<S>&);                      \
  template Tensor<S> mhsa_forward<S>(const AttnP<S>&, const Tensor<S>&);                    \
  template Tensor<S> cross_attention<S>(const AttnP<S>&, const Tensor<S>&, const Tensor<S>&); \
  template Tensor<S> local_mixing<S>(const LocalBlockP<S>&, const Tensor<S>&, int, int);    \
  template Tensor<S> global_mixing<S>(const GlobalBlockP<S>&, const Tensor<S>&);            \
  template FeatureMap<S> stem_embed<S>(const StemP<S>&, const Tensor<S>&);                  \
  template FeatureMap<S> merge_height<S>(const ConvP<S>&, const FeatureMap<S>&);

SVTR2_INSTANTIATE(float)
SVTR2_INSTANTIATE(double)
#undef SVTR2_INSTANTIATE

}  // namespace svtr2
