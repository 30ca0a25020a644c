#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "svtr2/common.hpp"
#include "svtr2/ctc.hpp"
#include "svtr2/gradcheck.hpp"
#include "svtr2/model.hpp"
#include "svtr2/ops.hpp"

namespace svtr2 {
namespace {

using T = Tensor<double>;

T rnd(std::vector<int> shape, std::uint64_t seed, double s = 0.5) {
  Rng rng(hash_words({0x6AD5EEDull, seed}));
  T t = T::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.normal() * s;
  return t;
}

// Projects a tensor to a scalar with a fixed random weight per element, so the
// check sees every output coordinate with a distinct sensitivity. The weights
// are reconstructed from the seed on every call, which keeps repeated
// evaluations of the same closure consistent.
T pin(const T& y, std::uint64_t seed) { return sum(mul(y, rnd(y.shape(), seed))); }

LayerNormP<double> rnd_norm(int d, std::uint64_t seed) {
  LayerNormP<double> n;
  n.g = rnd({d}, seed, 0.2);
  for (double& v : n.g.values()) v += 1.0;
  n.b = rnd({d}, seed + 1, 0.2);
  return n;
}

LinearP<double> rnd_linear(int in, int out, std::uint64_t seed, bool bias = true) {
  LinearP<double> l;
  l.w = rnd({in, out}, seed);
  if (bias) l.b = rnd({out}, seed + 1, 0.2);
  return l;
}

MlpP<double> rnd_mlp(int d, int hidden, std::uint64_t seed) {
  MlpP<double> m;
  m.fc1 = rnd_linear(d, hidden, seed);
  m.fc2 = rnd_linear(hidden, d, seed + 2);
  return m;
}

AttnP<double> rnd_attn(int d, int heads, std::uint64_t seed) {
  AttnP<double> a;
  a.q = rnd_linear(d, d, seed);
  a.k = rnd_linear(d, d, seed + 2);
  a.v = rnd_linear(d, d, seed + 4);
  a.o = rnd_linear(d, d, seed + 6);
  a.heads = heads;
  return a;
}

void push_norm(std::vector<T>& v, const LayerNormP<double>& n) {
  v.push_back(n.g);
  v.push_back(n.b);
}

void push_linear(std::vector<T>& v, const LinearP<double>& l) {
  v.push_back(l.w);
  if (l.b.defined()) v.push_back(l.b);
}

void push_mlp(std::vector<T>& v, const MlpP<double>& m) {
  push_linear(v, m.fc1);
  push_linear(v, m.fc2);
}

void push_attn(std::vector<T>& v, const AttnP<double>& a) {
  push_linear(v, a.q);
  push_linear(v, a.k);
  push_linear(v, a.v);
  push_linear(v, a.o);
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite() {
  runtime_init();
  std::vector<GradCheckReport> out;
  auto run = [&](const std::string& name, const std::function<T()>& f,
                 const std::vector<T>& inputs, double tol, int cap = 0) {
    out.push_back(check_gradients(name, f, inputs, tol, cap));
  };
  constexpr double kPrim = 1e-6;   // element-wise and single-kernel ops
  constexpr double kBlock = 1e-5;  // composed sub-networks
  constexpr double kModel = 1e-4;  // the full training objective

  // --- Primitive ops -------------------------------------------------------
  {
    T a = rnd({3, 4}, 10), b = rnd({3, 4}, 11);
    run("op.add", [=] { return pin(add(a, b), 12); }, {a, b}, kPrim);
    run("op.sub", [=] { return pin(sub(a, b), 13); }, {a, b}, kPrim);
    run("op.mul", [=] { return pin(mul(a, b), 14); }, {a, b}, kPrim);
    run("op.scale", [=] { return pin(scale(a, -1.75), 15); }, {a}, kPrim);
    run("op.transpose", [=] { return pin(transpose(a), 16); }, {a}, kPrim);
    run("op.gelu", [=] { return pin(gelu(scale(a, 3.0)), 17); }, {a}, kPrim);
    run("op.sum", [=] { return sum(mul(a, rnd({3, 4}, 18))); }, {a}, kPrim);
    run("op.mean", [=] { return mean(mul(a, rnd({3, 4}, 19))); }, {a}, kPrim);
    run("op.reshape", [=] { return pin(reshape(a, {2, 6}), 20); }, {a}, kPrim);
  }
  {
    T x = rnd({3, 5}, 21), b = rnd({5}, 22);
    run("op.add_bias", [=] { return pin(add_bias(x, b), 23); }, {x, b}, kPrim);
    run("op.softmax_last", [=] { return pin(softmax(scale(x, 2.0), -1), 24); }, {x}, kPrim);
    run("op.softmax_rows", [=] { return pin(softmax(scale(x, 2.0), 0), 25); }, {x}, kPrim);
    run("op.cross_entropy", [=] { return cross_entropy(gather_rows(x, {1}), 3); }, {x}, kPrim);
  }
  {
    T a = rnd({3, 4}, 26), b = rnd({4, 2}, 27);
    run("op.matmul", [=] { return pin(matmul(a, b), 28); }, {a, b}, kPrim);
  }
  {
    T x = rnd({4, 6}, 29);
    LayerNormP<double> n = rnd_norm(6, 30);
    run("op.layer_norm", [=] { return pin(layer_norm(x, n.g, n.b), 31); }, {x, n.g, n.b}, kPrim);
    run("op.slice_cols", [=] { return pin(slice_cols(x, 1, 3), 32); }, {x}, kPrim);
    run("op.gather_rows_dup", [=] { return pin(gather_rows(x, {0, 2, 2, 3, 1}), 33); }, {x},
        kPrim);
  }
  {
    T a = rnd({3, 2}, 34), b = rnd({3, 3}, 35);
    run("op.concat_cols", [=] { return pin(concat_cols<double>({a, b}), 36); }, {a, b}, kPrim);
  }
  {
    T a = rnd({2, 4}, 37), b = rnd({3, 4}, 38);
    run("op.concat_rows", [=] { return pin(concat_rows<double>({a, b}), 39); }, {a, b}, kPrim);
  }
  {
    T x = rnd({2, 5, 6}, 40), w = rnd({3, 2, 3, 3}, 41), b = rnd({3}, 42, 0.2);
    run("op.conv2d", [=] { return pin(conv2d(x, w, b, 1, 1, 1, 1, 1), 43); }, {x, w, b}, kPrim);
    run("op.conv2d_nobias", [=] { return pin(conv2d(x, w, T{}, 1, 1, 1, 1, 1), 44); }, {x, w},
        kPrim);
  }
  {
    T x = rnd({4, 6, 5}, 45), w = rnd({4, 2, 3, 3}, 46), b = rnd({4}, 47, 0.2);
    run("op.conv2d_grouped_strided",
        [=] { return pin(conv2d(x, w, b, 2, 2, 1, 1, 1), 48); }, {x, w, b}, kPrim);
  }

  // --- Composed sub-networks -----------------------------------------------
  {
    StemP<double> p;
    p.c1 = {rnd({4, 3, 3, 3}, 50), rnd({4}, 51, 0.2), 1, 2, 2, 1, 1};
    p.n1 = rnd_norm(4, 52);
    p.c2 = {rnd({8, 4, 3, 3}, 54), rnd({8}, 55, 0.2), 1, 2, 2, 1, 1};
    p.n2 = rnd_norm(8, 56);
    T img = rnd({3, 8, 8}, 58);
    std::vector<T> in{img, p.c1.w, p.c1.b, p.c2.w, p.c2.b};
    push_norm(in, p.n1);
    push_norm(in, p.n2);
    run("block.stem", [=] { return pin(stem_embed(p, img).tokens, 59); }, in, kBlock);
  }
  {
    LocalBlockP<double> p;
    p.n1 = rnd_norm(8, 60);
    p.c1 = {rnd({8, 4, 3, 3}, 62), rnd({8}, 63, 0.2), 2};
    p.c2 = {rnd({8, 4, 3, 3}, 64), rnd({8}, 65, 0.2), 2};
    p.n2 = rnd_norm(8, 66);
    p.mlp = rnd_mlp(8, 16, 68);
    T x = rnd({12, 8}, 72);
    std::vector<T> in{x, p.c1.w, p.c1.b, p.c2.w, p.c2.b};
    push_norm(in, p.n1);
    push_norm(in, p.n2);
    push_mlp(in, p.mlp);
    run("block.local_grouped", [=] { return pin(local_mixing(p, x, 3, 4), 73); }, in, kBlock);
  }
  {
    GlobalBlockP<double> p;
    p.n1 = rnd_norm(8, 80);
    p.att = rnd_attn(8, 2, 82);
    p.n2 = rnd_norm(8, 90);
    p.mlp = rnd_mlp(8, 16, 92);
    T x = rnd({6, 8}, 96);
    std::vector<T> in{x};
    push_norm(in, p.n1);
    push_attn(in, p.att);
    push_norm(in, p.n2);
    push_mlp(in, p.mlp);
    run("block.global", [=] { return pin(global_mixing(p, x), 97); }, in, kBlock);
  }
  {
    AttnP<double> p = rnd_attn(8, 2, 100);
    T q = rnd({2, 8}, 108), kv = rnd({5, 8}, 109);
    std::vector<T> in{q, kv};
    push_attn(in, p);
    run("block.cross_attention", [=] { return pin(cross_attention(p, q, kv), 110); }, in, kBlock);
  }
  {
    ConvP<double> p{rnd({8, 4, 3, 3}, 112), rnd({8}, 113, 0.2), 1, 2, 1, 1, 1};
    FeatureMap<double> fm{rnd({12, 4}, 114), 4, 3};
    run("block.merge",
        [=] { return pin(merge_height(p, fm).tokens, 115); }, {fm.tokens, p.w, p.b}, kBlock);
  }
  {
    FrmP<double> p;
    p.heads = 2;
    p.hq = rnd({8, 8}, 120);
    p.hk = rnd({8, 8}, 121);
    p.hv = rnd({8, 8}, 122);
    p.n1 = rnd_norm(8, 124);
    p.n2 = rnd_norm(8, 126);
    p.mlp = rnd_mlp(8, 16, 128);
    p.vt = rnd({1, 8}, 132);
    p.vk = rnd({8, 8}, 133);
    p.vv = rnd({8, 8}, 134);
    p.cls = rnd_linear(8, 5, 135, /*bias=*/false);
    FeatureMap<double> fm{rnd({12, 8}, 137), 3, 4};
    std::vector<T> in{fm.tokens, p.hq, p.hk, p.hv, p.vt, p.vk, p.vv, p.cls.w};
    push_norm(in, p.n1);
    push_norm(in, p.n2);
    push_mlp(in, p.mlp);
    run("block.rearrange_head",
        [=] {
          FeatureMap<double> fh = horizontal_rearrange(p, fm);
          return pin(ctc_logits(p, vertical_rearrange(p, fh)), 138);
        },
        in, kBlock, 12);
  }
  {
    SgmP<double> p;
    p.window = 2;
    p.embed = rnd({5, 8}, 140);
    p.left.token = rnd({1, 8}, 141);
    p.left.cq = rnd({8, 8}, 142);
    p.left.ck = rnd({8, 8}, 143);
    p.left.cv = rnd({8, 8}, 144);
    p.left.norm = rnd_norm(8, 145);
    p.left.vq = rnd({8, 8}, 147);
    p.left.vk = rnd({8, 8}, 148);
    p.left.vv = rnd({8, 8}, 149);
    p.cls = rnd({8, 4}, 150);
    T vis = rnd({6, 8}, 151);
    std::vector<T> in{p.embed, p.left.token, p.left.cq, p.left.ck, p.left.cv,
                      p.left.vq, p.left.vk, p.left.vv, p.cls, vis};
    push_norm(in, p.left.norm);
    run("block.context_branch",
        [=] {
          T q = encode_context(p, p.left, {1, 3});
          T ctx = attend_visual(p.left, q, vis).second;
          return cross_entropy(matmul(ctx, p.cls), 2);
        },
        in, kBlock);
  }

  // --- Sequence losses ------------------------------------------------------
  {
    T logits = rnd({5, 4}, 160, 1.0);
    std::vector<int> label{0, 1, 0};
    run("loss.ctc", [=] { return ctc_loss(logits, label); }, {logits}, kPrim);
  }

  // --- Whole model: the two-term training objective on one sample ----------
  {
    ModelConfig mc;
    mc.variant = Variant::nano;
    mc.charset_size = 6;
    mc.frm_mode = FrmMode::frm;
    mc.with_sgm = true;
    mc.sgm_window = 2;
    auto model = std::make_shared<Model<double>>(mc, 5);
    std::vector<int> label{2, 4, 1};

    {
      FeatureMap<double> fm{rnd({8, 128}, 170), 2, 4};
      std::vector<T> in{fm.tokens};
      for (const auto& e : model->params().entries())
        if (e.name.rfind("sgm.", 0) == 0) in.push_back(e.tensor);
      run("loss.context",
          [=] { return model->sgm_loss(fm, label); }, in, kBlock, 8);
    }

    T img = rnd({3, 16, 16}, 171);
    std::vector<T> in{img};
    for (const auto& e : model->params().entries()) in.push_back(e.tensor);
    run("model.objective",
        [=] {
          ModelOutput<double> o = model->forward(img);
          return add(scale(ctc_loss(o.logits, label), 0.1),
                     scale(model->sgm_loss(o.features, label), 1.0));
        },
        in, kModel, 4);
  }

  return out;
}

}  // namespace svtr2
