#include "svtr2/model.hpp"

#include <algorithm>

#include "svtr2/common.hpp"

namespace svtr2 {

Variant parse_variant(const std::string& name) {
  if (name == "nano") return Variant::nano;
  if (name == "tiny") return Variant::tiny;
  if (name == "small") return Variant::small;
  if (name == "base") return Variant::base;
  throw ConfigError(str_cat("unknown model variant '", name,
                            "' (expected nano, tiny, small, or base)"));
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::nano: return "nano";
    case Variant::tiny: return "tiny";
    case Variant::small: return "small";
    case Variant::base: return "base";
  }
  throw ConfigError("variant_name: bad enum value");
}

FrmMode parse_frm_mode(const std::string& name) {
  if (name == "frm") return FrmMode::frm;
  if (name == "pool") return FrmMode::pool;
  if (name == "tf1") return FrmMode::tf1;
  throw ConfigError(str_cat("unknown rearrangement mode '", name,
                            "' (expected frm, pool, or tf1)"));
}

std::string frm_mode_name(FrmMode m) {
  switch (m) {
    case FrmMode::frm: return "frm";
    case FrmMode::pool: return "pool";
    case FrmMode::tf1: return "tf1";
  }
  throw ConfigError("frm_mode_name: bad enum value");
}

namespace {

std::vector<BlockKind> mixing_plan(int locals, int globals) {
  std::vector<BlockKind> p;
  p.insert(p.end(), std::size_t(locals), BlockKind::local);
  p.insert(p.end(), std::size_t(globals), BlockKind::global);
  return p;
}

}  // namespace

BackboneConfig make_config(Variant v) {
  BackboneConfig c;
  switch (v) {
    case Variant::nano:
      c.dims = {32, 64, 128};
      c.depths = {2, 2, 2};
      c.permutation = mixing_plan(3, 3);
      break;
    case Variant::tiny:
      c.dims = {64, 128, 256};
      c.depths = {3, 6, 3};
      c.permutation = mixing_plan(6, 6);
      break;
    case Variant::small:
      c.dims = {96, 192, 384};
      c.depths = {3, 6, 3};
      c.permutation = mixing_plan(6, 6);
      break;
    case Variant::base:
      c.dims = {128, 256, 384};
      c.depths = {6, 6, 6};
      c.permutation = mixing_plan(8, 10);
      break;
  }
  for (int i = 0; i < 3; ++i) c.heads[std::size_t(i)] = std::max(c.dims[std::size_t(i)] / 32, 1);
  return c;
}

// ---------------------------------------------------------------------------
// ParamRegistry
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> ParamRegistry<S>::add(const std::string& name, std::vector<int> shape, double stddev,
                                bool no_decay, double constant, bool use_constant) {
  for (const ParamEntry<S>& e : entries_)
    if (e.name == name) throw ConfigError(str_cat("duplicate parameter name '", name, "'"));
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  if (use_constant) {
    if (constant != 0.0) std::fill(t.values().begin(), t.values().end(), S(constant));
  } else {
    Rng rng(hash_words({seed_, fnv1a64(name.data(), name.size())}));
    for (S& v : t.values()) v = S(rng.normal() * stddev);
  }
  t.set_requires_grad(true);
  entries_.push_back({name, t, no_decay});
  return t;
}

template <class S>
Tensor<S> ParamRegistry<S>::weight(const std::string& name, std::vector<int> shape,
                                   double stddev) {
  return add(name, std::move(shape), stddev, false, 0.0, false);
}

template <class S>
Tensor<S> ParamRegistry<S>::conv_weight(const std::string& name, std::vector<int> shape) {
  if (shape.size() != 4) throw ShapeError(str_cat("conv_weight ", name, ": expected 4-d shape"));
  double fan_in = double(shape[1]) * shape[2] * shape[3];
  return add(name, std::move(shape), std::sqrt(2.0 / fan_in), false, 0.0, false);
}

template <class S>
Tensor<S> ParamRegistry<S>::bias(const std::string& name, int n) {
  return add(name, {n}, 0.0, true, 0.0, true);
}

template <class S>
Tensor<S> ParamRegistry<S>::norm_gain(const std::string& name, int n) {
  return add(name, {n}, 0.0, true, 1.0, true);
}

template <class S>
Tensor<S> ParamRegistry<S>::norm_bias(const std::string& name, int n) {
  return add(name, {n}, 0.0, true, 0.0, true);
}

template <class S>
Tensor<S> ParamRegistry<S>::token(const std::string& name, int dim) {
  return add(name, {1, dim}, 0.02, false, 0.0, false);
}

template <class S>
const Tensor<S>* ParamRegistry<S>::find(const std::string& name) const {
  for (const ParamEntry<S>& e : entries_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

template <class S>
int ParamRegistry<S>::remove_prefix(const std::string& prefix) {
  auto it = std::remove_if(entries_.begin(), entries_.end(), [&](const ParamEntry<S>& e) {
    return e.name.rfind(prefix, 0) == 0;
  });
  int n = int(entries_.end() - it);
  entries_.erase(it, entries_.end());
  return n;
}

template <class S>
long long ParamRegistry<S>::total_elements() const {
  long long n = 0;
  for (const ParamEntry<S>& e : entries_) n += e.tensor.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

namespace {
constexpr double kLinearInitStd = 0.02;
}

template <class S>
Model<S>::Model(ModelConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg), bb_cfg_(make_config(cfg.variant)), reg_(init_seed) {
  if (cfg_.charset_size < 1)
    throw ConfigError(str_cat("model: charset size ", cfg_.charset_size, " < 1"));
  if (cfg_.sgm_window < 1)
    throw ConfigError(str_cat("model: context window ", cfg_.sgm_window, " < 1"));
  std::size_t want = 0;
  for (int d : bb_cfg_.depths) want += std::size_t(d);
  if (bb_cfg_.permutation.size() != want)
    throw ConfigError(str_cat("model: mixing plan of ", bb_cfg_.permutation.size(),
                              " blocks vs depths totalling ", want));
  build_backbone();
  build_frm();
  if (cfg_.with_sgm) build_sgm();
}

template <class S>
void Model<S>::build_backbone() {
  const auto& d = bb_cfg_.dims;
  const int d0 = d[0], d1 = d[1], d2 = d[2];

  stem_.c1 = {reg_.conv_weight("backbone.stem.c1.w", {d0 / 2, 3, 3, 3}),
              reg_.bias("backbone.stem.c1.b", d0 / 2)};
  stem_.n1 = {reg_.norm_gain("backbone.stem.n1.g", d0 / 2),
              reg_.norm_bias("backbone.stem.n1.b", d0 / 2)};
  stem_.c2 = {reg_.conv_weight("backbone.stem.c2.w", {d0, d0 / 2, 3, 3}),
              reg_.bias("backbone.stem.c2.b", d0)};
  stem_.n2 = {reg_.norm_gain("backbone.stem.n2.g", d0), reg_.norm_bias("backbone.stem.n2.b", d0)};

  std::size_t perm_at = 0;
  for (int s = 0; s < 3; ++s) {
    const int dim = d[std::size_t(s)];
    const int hidden = dim * bb_cfg_.mlp_ratio;
    for (int k = 0; k < bb_cfg_.depths[std::size_t(s)]; ++k) {
      const BlockKind kind = bb_cfg_.permutation[perm_at++];
      const std::string pre = str_cat("backbone.s", s + 1, ".b", k, ".");
      auto ln = [&](const char* tag) -> LayerNormP<S> {
        return {reg_.norm_gain(pre + tag + ".g", dim), reg_.norm_bias(pre + tag + ".b", dim)};
      };
      auto lin = [&](const std::string& tag, int in, int out) -> LinearP<S> {
        return {reg_.weight(pre + tag + ".w", {in, out}, kLinearInitStd),
                reg_.bias(pre + tag + ".b", out)};
      };
      if (kind == BlockKind::local) {
        LocalBlockP<S> b;
        b.n1 = ln("n1");
        const int groups = std::max(dim / 32, 1);
        b.c1 = {reg_.conv_weight(pre + "c1.w", {dim, dim / groups, 3, 3}),
                reg_.bias(pre + "c1.b", dim), groups};
        b.c2 = {reg_.conv_weight(pre + "c2.w", {dim, dim / groups, 3, 3}),
                reg_.bias(pre + "c2.b", dim), groups};
        b.n2 = ln("n2");
        b.mlp = {lin("mlp.f1", dim, hidden), lin("mlp.f2", hidden, dim)};
        blocks_.emplace_back(BlockKind::local, int(local_.size()));
        local_.push_back(std::move(b));
      } else {
        GlobalBlockP<S> b;
        b.n1 = ln("n1");
        b.att = {lin("att.q", dim, dim), lin("att.k", dim, dim), lin("att.v", dim, dim),
                 lin("att.o", dim, dim), bb_cfg_.heads[std::size_t(s)]};
        b.n2 = ln("n2");
        b.mlp = {lin("mlp.f1", dim, hidden), lin("mlp.f2", hidden, dim)};
        blocks_.emplace_back(BlockKind::global, int(global_.size()));
        global_.push_back(std::move(b));
      }
    }
  }

  merge_ = {reg_.conv_weight("backbone.merge.w", {d1, d0, 3, 3}), reg_.bias("backbone.merge.b", d1)};
  proj_ = {reg_.weight("backbone.proj.w", {d1, d2}, kLinearInitStd),
           reg_.bias("backbone.proj.b", d2)};
  final_norm_ = {reg_.norm_gain("backbone.norm.g", d2), reg_.norm_bias("backbone.norm.b", d2)};
}

template <class S>
void Model<S>::build_frm() {
  const int d2 = bb_cfg_.dims[2];
  const int classes = cfg_.charset_size + 1;  // + blank
  frm_.cls = {reg_.weight("frm.cls.w", {d2, classes}, kLinearInitStd), Tensor<S>{}};
  if (cfg_.frm_mode == FrmMode::pool) return;

  auto ln = [&](const std::string& tag) -> LayerNormP<S> {
    return {reg_.norm_gain(tag + ".g", d2), reg_.norm_bias(tag + ".b", d2)};
  };
  if (cfg_.frm_mode == FrmMode::frm) {
    frm_.heads = std::max(d2 / 32, 1);
    frm_.hq = reg_.weight("frm.h.q", {d2, d2}, kLinearInitStd);
    frm_.hk = reg_.weight("frm.h.k", {d2, d2}, kLinearInitStd);
    frm_.hv = reg_.weight("frm.h.v", {d2, d2}, kLinearInitStd);
    frm_.n1 = ln("frm.h.n1");
    frm_.n2 = ln("frm.h.n2");
    const int hidden = d2 * bb_cfg_.mlp_ratio;
    frm_.mlp = {{reg_.weight("frm.h.mlp.f1.w", {d2, hidden}, kLinearInitStd),
                 reg_.bias("frm.h.mlp.f1.b", hidden)},
                {reg_.weight("frm.h.mlp.f2.w", {hidden, d2}, kLinearInitStd),
                 reg_.bias("frm.h.mlp.f2.b", d2)}};
    frm_.vt = reg_.token("frm.v.token", d2);
    frm_.vk = reg_.weight("frm.v.k", {d2, d2}, kLinearInitStd);
    frm_.vv = reg_.weight("frm.v.v", {d2, d2}, kLinearInitStd);
    return;
  }

  // One holistic block: pooled column queries cross-attend over the grid.
  auto lin = [&](const std::string& tag, int in, int out) -> LinearP<S> {
    return {reg_.weight(tag + ".w", {in, out}, kLinearInitStd), reg_.bias(tag + ".b", out)};
  };
  frm_.tf.n1 = ln("frm.tf.n1");
  frm_.tf.att = {lin("frm.tf.att.q", d2, d2), lin("frm.tf.att.k", d2, d2),
                 lin("frm.tf.att.v", d2, d2), lin("frm.tf.att.o", d2, d2),
                 std::max(d2 / 32, 1)};
  frm_.tf.n2 = ln("frm.tf.n2");
  const int hidden = d2 * bb_cfg_.mlp_ratio;
  frm_.tf.mlp = {lin("frm.tf.mlp.f1", d2, hidden), lin("frm.tf.mlp.f2", hidden, d2)};
}

template <class S>
void Model<S>::build_sgm() {
  const int d2 = bb_cfg_.dims[2];
  sgm_.window = cfg_.sgm_window;
  sgm_.embed = reg_.weight("sgm.embed", {cfg_.charset_size + 1, d2}, kLinearInitStd);
  auto side = [&](const char* tag) -> SgmSideP<S> {
    const std::string pre = str_cat("sgm.", tag, ".");
    SgmSideP<S> s;
    s.token = reg_.token(pre + "token", d2);
    s.cq = reg_.weight(pre + "ctx.q", {d2, d2}, kLinearInitStd);
    s.ck = reg_.weight(pre + "ctx.k", {d2, d2}, kLinearInitStd);
    s.cv = reg_.weight(pre + "ctx.v", {d2, d2}, kLinearInitStd);
    s.norm = {reg_.norm_gain(pre + "n.g", d2), reg_.norm_bias(pre + "n.b", d2)};
    s.vq = reg_.weight(pre + "vis.q", {d2, d2}, kLinearInitStd);
    s.vk = reg_.weight(pre + "vis.k", {d2, d2}, kLinearInitStd);
    s.vv = reg_.weight(pre + "vis.v", {d2, d2}, kLinearInitStd);
    return s;
  };
  sgm_.left = side("left");
  sgm_.right = side("right");
  sgm_.cls = reg_.weight("sgm.cls.w", {d2, cfg_.charset_size}, kLinearInitStd);
}

template <class S>
void Model<S>::add_sgm(std::uint64_t seed) {
  if (cfg_.with_sgm) throw StateError("add_sgm: the context branch is already present");
  reg_.reseed(seed);
  cfg_.with_sgm = true;
  build_sgm();
}

template <class S>
void Model<S>::strip_sgm() {
  reg_.remove_prefix("sgm.");
  sgm_ = SgmP<S>{};
  cfg_.with_sgm = false;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <class S>
FeatureMap<S> Model<S>::backbone_forward(const Tensor<S>& image) const {
  FeatureMap<S> f = stem_embed(stem_, image);
  std::size_t bi = 0;
  for (int s = 0; s < 3; ++s) {
    if (s == 1) f = merge_height(merge_, f);
    if (s == 2) f.tokens = linear(proj_, f.tokens);
    for (int k = 0; k < bb_cfg_.depths[std::size_t(s)]; ++k, ++bi) {
      const auto& [kind, idx] = blocks_[bi];
      f.tokens = kind == BlockKind::local
                     ? local_mixing(local_[std::size_t(idx)], f.tokens, f.h, f.w)
                     : global_mixing(global_[std::size_t(idx)], f.tokens);
    }
  }
  f.tokens = layer_norm(f.tokens, final_norm_.g, final_norm_.b);
  return f;
}

template <class S>
Tensor<S> Model<S>::head_forward(const FeatureMap<S>& f, FrmDiag<S>* diag) const {
  switch (cfg_.frm_mode) {
    case FrmMode::frm: {
      FeatureMap<S> fh = horizontal_rearrange(frm_, f, diag);
      return ctc_logits(frm_, vertical_rearrange(frm_, fh, diag));
    }
    case FrmMode::pool:
      return ctc_logits(frm_, column_mean(f));
    case FrmMode::tf1: {
      Tensor<S> pooled = column_mean(f);
      Tensor<S> q = layer_norm(pooled, frm_.tf.n1.g, frm_.tf.n1.b);
      Tensor<S> kv = layer_norm(f.tokens, frm_.tf.n1.g, frm_.tf.n1.b);
      Tensor<S> y = add(pooled, cross_attention(frm_.tf.att, q, kv));
      y = add(y, mlp_forward(frm_.tf.mlp, layer_norm(y, frm_.tf.n2.g, frm_.tf.n2.b)));
      return ctc_logits(frm_, y);
    }
  }
  throw ConfigError("head_forward: bad rearrangement mode");
}

template <class S>
ModelOutput<S> Model<S>::forward(const Tensor<S>& image, FrmDiag<S>* diag) const {
  FeatureMap<S> f = backbone_forward(image);
  return {head_forward(f, diag), f};
}

#define SVTR2_INSTANTIATE(S)                                                        \
  template class ParamRegistry<S>;                                                 \
  template Model<S>::Model(ModelConfig, std::uint64_t);                            \
  template void Model<S>::add_sgm(std::uint64_t);                                  \
  template void Model<S>::strip_sgm();                                             \
  template FeatureMap<S> Model<S>::backbone_forward(const Tensor<S>&) const;       \
  template Tensor<S> Model<S>::head_forward(const FeatureMap<S>&, FrmDiag<S>*) const; \
  template ModelOutput<S> Model<S>::forward(const Tensor<S>&, FrmDiag<S>*) const;

SVTR2_INSTANTIATE(float)
SVTR2_INSTANTIATE(double)
#undef SVTR2_INSTANTIATE

}  // namespace svtr2
