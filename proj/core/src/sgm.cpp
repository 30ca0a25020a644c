#include "svtr2/model.hpp"

#include "svtr2/common.hpp"

namespace svtr2 {

ContextWindows extract_windows(const std::vector<int>& label, int window, int pad_index) {
  if (label.empty()) throw InputError("extract_windows: empty label");
  if (window < 1) throw ConfigError(str_cat("extract_windows: window ", window, " < 1"));
  const int n = int(label.size());
  ContextWindows out;
  out.left.assign(std::size_t(n), {});
  out.right.assign(std::size_t(n), {});
  for (int i = 0; i < n; ++i) {
    for (int k = i - window; k < i; ++k)
      out.left[std::size_t(i)].push_back(k >= 0 ? label[std::size_t(k)] : pad_index);
    for (int k = i + 1; k <= i + window; ++k)
      out.right[std::size_t(i)].push_back(k < n ? label[std::size_t(k)] : pad_index);
  }
  return out;
}

template <class S>
Tensor<S> encode_context(const SgmP<S>& p, const SgmSideP<S>& side,
                         const std::vector<int>& window) {
  if (int(window.size()) != p.window)
    throw ShapeError(
        str_cat("encode_context: window of ", window.size(), ", expected ", p.window));
  const int d = p.embed.dim(1);
  Tensor<S> e = gather_rows(p.embed, window);  // [window, d]
  Tensor<S> q = matmul(side.token, side.cq);   // [1, d]
  Tensor<S> att = softmax(scale(matmul(q, transpose(matmul(e, side.ck))), attn_scale(d)), -1);
  Tensor<S> mixed = matmul(att, matmul(e, side.cv));  // [1, d]
  return layer_norm(add(mixed, side.token), side.norm.g, side.norm.b);
}

template <class S>
std::pair<Tensor<S>, Tensor<S>> attend_visual(const SgmSideP<S>& side, const Tensor<S>& q,
                                              const Tensor<S>& visual_tokens) {
  const int d = visual_tokens.dim(1);
  Tensor<S> qp = matmul(q, side.vq);  // [1, d]
  Tensor<S> att =
      softmax(scale(matmul(qp, transpose(matmul(visual_tokens, side.vk))), attn_scale(d)), -1);
  Tensor<S> attended = matmul(att, matmul(visual_tokens, side.vv));  // [1, d]
  return {att, attended};
}

namespace {

// Loss machinery shared by Model::sgm_loss / Model::sgm_attention. The key/
// value projections of the visual grid do not depend on the label position,
// so they are computed once per side and reused across positions.
template <class S>
struct SidePass {
  const SgmSideP<S>* side = nullptr;
  Tensor<S> fk, fv;  // [h*w, d]
};

template <class S>
SidePass<S> prepare_side(const SgmSideP<S>& side, const Tensor<S>& tokens) {
  return {&side, matmul(tokens, side.vk), matmul(tokens, side.vv)};
}

// Attention row + attended feature against the precomputed projections.
template <class S>
std::pair<Tensor<S>, Tensor<S>> attend_prepared(const SidePass<S>& sp, const Tensor<S>& q) {
  const int d = sp.fk.dim(1);
  Tensor<S> qp = matmul(q, sp.side->vq);
  Tensor<S> att = softmax(scale(matmul(qp, transpose(sp.fk)), attn_scale(d)), -1);
  return {att, matmul(att, sp.fv)};
}

}  // namespace

template <class S>
Tensor<S> Model<S>::sgm_loss(const FeatureMap<S>& f, const std::vector<int>& label) const {
  if (!cfg_.with_sgm)
    throw StateError("sgm_loss: the context branch is absent from this model");
  for (int c : label)
    if (c < 0 || c >= cfg_.charset_size)
      throw InputError(str_cat("sgm_loss: label index ", c, " outside charset of ",
                               cfg_.charset_size));
  ContextWindows win = extract_windows(label, sgm_.window, cfg_.charset_size);
  SidePass<S> left = prepare_side(sgm_.left, f.tokens);
  SidePass<S> right = prepare_side(sgm_.right, f.tokens);

  Tensor<S> total;
  const int n = int(label.size());
  for (int i = 0; i < n; ++i) {
    Tensor<S> ql = encode_context(sgm_, sgm_.left, win.left[std::size_t(i)]);
    Tensor<S> qr = encode_context(sgm_, sgm_.right, win.right[std::size_t(i)]);
    Tensor<S> fl = attend_prepared(left, ql).second;
    Tensor<S> fr = attend_prepared(right, qr).second;
    Tensor<S> ce = add(cross_entropy(matmul(fl, sgm_.cls), label[std::size_t(i)]),
                       cross_entropy(matmul(fr, sgm_.cls), label[std::size_t(i)]));
    total = i == 0 ? ce : add(total, ce);
  }
  return scale(total, 1.0 / (2.0 * n));
}

template <class S>
std::vector<std::pair<Tensor<S>, Tensor<S>>> Model<S>::sgm_attention(
    const FeatureMap<S>& f, const std::vector<int>& label) const {
  if (!cfg_.with_sgm)
    throw StateError("sgm_attention: the context branch is absent from this model");
  ContextWindows win = extract_windows(label, sgm_.window, cfg_.charset_size);
  SidePass<S> left = prepare_side(sgm_.left, f.tokens);
  SidePass<S> right = prepare_side(sgm_.right, f.tokens);

  std::vector<std::pair<Tensor<S>, Tensor<S>>> out;
  out.reserve(label.size());
  for (std::size_t i = 0; i < label.size(); ++i) {
    Tensor<S> al = attend_prepared(left, encode_context(sgm_, sgm_.left, win.left[i])).first;
    Tensor<S> ar = attend_prepared(right, encode_context(sgm_, sgm_.right, win.right[i])).first;
    out.emplace_back(Tensor<S>::from(al.shape(), al.values()),
                     Tensor<S>::from(ar.shape(), ar.values()));
  }
  return out;
}

#define SVTR2_INSTANTIATE(S)                                                            \
  template Tensor<S> encode_context<S>(const SgmP<S>&, const SgmSideP<S>&,              \
                                       const std::vector<int>&);                        \
  template std::pair<Tensor<S>, Tensor<S>> attend_visual<S>(const SgmSideP<S>&,         \
                                                            const Tensor<S>&,           \
                                                            const Tensor<S>&);          \
  template Tensor<S> Model<S>::sgm_loss(const FeatureMap<S>&, const std::vector<int>&)  \
      const;                                                                            \
  template std::vector<std::pair<Tensor<S>, Tensor<S>>> Model<S>::sgm_attention(        \
      const FeatureMap<S>&, const std::vector<int>&) const;

SVTR2_INSTANTIATE(float)
SVTR2_INSTANTIATE(double)
#undef SVTR2_INSTANTIATE

}  // namespace svtr2
