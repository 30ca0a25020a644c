#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "svtr2/common.hpp"
#include "svtr2/gradcheck.hpp"
#include "svtr2/model.hpp"
#include "svtr2/ops.hpp"

using namespace svtr2;

namespace {

Tensor<double> rnd(std::vector<int> shape, Rng& rng, double scl = 0.5) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (long long i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * scl;
  return t;
}

Tensor<double> param(std::vector<int> shape, Rng& rng, double scl = 0.5) {
  return rnd(std::move(shape), rng, scl).set_requires_grad(true);
}

// Scalar readout: mean of out * fixed random weights, so every output element
// contributes a distinct gradient path.
Tensor<double> readout(const Tensor<double>& out, Rng& rng) {
  Tensor<double> c = rnd(out.shape(), rng, 1.0);
  return mean(mul(out, c));
}

void zero_param(ParamRegistry<float>& reg, const std::string& name) {
  for (auto& e : reg.entries())
    if (e.name == name) {
      std::fill(e.tensor.values().begin(), e.tensor.values().end(), 0.0f);
      return;
    }
  FAIL("no parameter named ", name);
}

std::vector<std::string> param_names(const ParamRegistry<float>& reg) {
  std::vector<std::string> names;
  for (const auto& e : reg.entries()) names.push_back(e.name);
  return names;
}

double value_sum(const Tensor<float>& t) {
  double s = 0;
  for (float v : t.values()) s += v;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration tables.
// ---------------------------------------------------------------------------

TEST_CASE("variant tables") {
  BackboneConfig n = make_config(Variant::nano);
  CHECK(n.dims == std::array<int, 3>{32, 64, 128});
  CHECK(n.depths == std::array<int, 3>{2, 2, 2});
  CHECK(n.heads == std::array<int, 3>{1, 2, 4});
  CHECK(n.permutation.size() == 6);

  BackboneConfig t = make_config(Variant::tiny);
  CHECK(t.dims == std::array<int, 3>{64, 128, 256});
  CHECK(t.depths == std::array<int, 3>{3, 6, 3});
  CHECK(t.heads == std::array<int, 3>{2, 4, 8});

  BackboneConfig s = make_config(Variant::small);
  CHECK(s.dims == std::array<int, 3>{96, 192, 384});
  CHECK(s.heads == std::array<int, 3>{3, 6, 12});

  BackboneConfig b = make_config(Variant::base);
  CHECK(b.dims == std::array<int, 3>{128, 256, 384});
  CHECK(b.depths == std::array<int, 3>{6, 6, 6});
  CHECK(b.heads == std::array<int, 3>{4, 8, 12});
  CHECK(b.permutation.size() == 18);
  CHECK(std::count(b.permutation.begin(), b.permutation.end(), BlockKind::local) == 8);
  CHECK(std::count(b.permutation.begin(), b.permutation.end(), BlockKind::global) == 10);

  // Every variant: local blocks first, then global, spanning the stages.
  for (Variant v : {Variant::nano, Variant::tiny, Variant::small, Variant::base}) {
    BackboneConfig c = make_config(v);
    std::size_t want = 0;
    for (int d : c.depths) want += std::size_t(d);
    REQUIRE(c.permutation.size() == want);
    bool seen_global = false;
    for (BlockKind k : c.permutation) {
      if (k == BlockKind::global) seen_global = true;
      if (seen_global) CHECK(k == BlockKind::global);
    }
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("medium"), ConfigError);
}

TEST_CASE("rearrangement mode parsing") {
  for (FrmMode m : {FrmMode::frm, FrmMode::pool, FrmMode::tf1})
    CHECK(parse_frm_mode(frm_mode_name(m)) == m);
  CHECK_THROWS_AS(parse_frm_mode("attnpool"), ConfigError);
}

// ---------------------------------------------------------------------------
// Parameter registry.
// ---------------------------------------------------------------------------

TEST_CASE("registry rejects duplicate names") {
  ParamRegistry<float> reg(7);
  reg.weight("a.w", {2, 2}, 0.02);
  CHECK_THROWS_AS(reg.weight("a.w", {2, 2}, 0.02), ConfigError);
  CHECK_THROWS_AS(reg.bias("a.w", 2), ConfigError);
}

TEST_CASE("registry init is keyed by name, not registration order") {
  ParamRegistry<float> a(42), b(42);
  Tensor<float> a1 = a.weight("x", {3, 3}, 0.02);
  Tensor<float> a2 = a.weight("y", {3, 3}, 0.02);
  Tensor<float> b2 = b.weight("y", {3, 3}, 0.02);  // reversed order
  Tensor<float> b1 = b.weight("x", {3, 3}, 0.02);
  CHECK(a1.values() == b1.values());
  CHECK(a2.values() == b2.values());
  CHECK(a1.values() != a2.values());

  ParamRegistry<float> c(43);  // different seed, different draws
  CHECK(c.weight("x", {3, 3}, 0.02).values() != a1.values());
}

TEST_CASE("registry constant and scaled initializers") {
  ParamRegistry<float> reg(11);
  Tensor<float> g = reg.norm_gain("n.g", 5);
  Tensor<float> b = reg.norm_bias("n.b", 5);
  Tensor<float> bias = reg.bias("l.b", 4);
  CHECK(g.values() == std::vector<float>(5, 1.0f));
  CHECK(b.values() == std::vector<float>(5, 0.0f));
  CHECK(bias.values() == std::vector<float>(4, 0.0f));

  Tensor<float> tok = reg.token("t", 8);
  CHECK(tok.shape() == std::vector<int>{1, 8});

  // Decay exemptions: norm parameters and bias vectors only.
  for (const auto& e : reg.entries()) {
    bool exempt = e.name == "n.g" || e.name == "n.b" || e.name == "l.b";
    CHECK(e.no_decay == exempt);
  }

  // He-style convolution init: std ~= sqrt(2 / fan_in).
  Tensor<float> k = reg.conv_weight("c.w", {64, 16, 3, 3});
  double m = 0, ss = 0;
  for (float v : k.values()) m += v;
  m /= double(k.numel());
  for (float v : k.values()) ss += (v - m) * (v - m);
  double sd = std::sqrt(ss / double(k.numel()));
  double want = std::sqrt(2.0 / (16 * 3 * 3));
  CHECK(std::abs(m) < 0.01);
  CHECK(sd == doctest::Approx(want).epsilon(0.1));

  CHECK(reg.find("c.w") != nullptr);
  CHECK(reg.find("zzz") == nullptr);
  CHECK(reg.remove_prefix("n.") == 2);
  CHECK(reg.find("n.g") == nullptr);
  CHECK(reg.remove_prefix("n.") == 0);
}

// ---------------------------------------------------------------------------
// Shape contract.
// ---------------------------------------------------------------------------

TEST_CASE("model output shapes across sizes and variants") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 12;
  Model<float> m(cfg, 1);

  struct Case {
    int h, w;
  };
  for (Case c : {Case{32, 224}, Case{64, 64}, Case{48, 96}, Case{40, 112}}) {
    Tensor<float> img = Tensor<float>::full({3, c.h, c.w}, 0.1f);
    ModelOutput<float> out = m.forward(img);
    CHECK(out.features.h == c.h / 8);
    CHECK(out.features.w == c.w / 4);
    CHECK(out.features.tokens.shape() == std::vector<int>{(c.h / 8) * (c.w / 4), 128});
    CHECK(out.logits.shape() == std::vector<int>{c.w / 4, 13});
  }

  ModelConfig bc;
  bc.variant = Variant::base;
  bc.charset_size = 12;
  Model<float> big(bc, 1);
  ModelOutput<float> out = big.forward(Tensor<float>::full({3, 32, 64}, 0.1f));
  CHECK(out.features.tokens.shape() == std::vector<int>{4 * 16, 384});
  CHECK(out.logits.shape() == std::vector<int>{16, 13});

  // Odd grid height cannot be merged.
  CHECK_THROWS_AS(m.forward(Tensor<float>::full({3, 20, 64}, 0.1f)), ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor<float>::full({3, 32}, 0.1f)), ShapeError);
}

TEST_CASE("same seed builds identical models") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 9;
  Model<float> a(cfg, 5), b(cfg, 5), c(cfg, 6);
  Tensor<float> img = Tensor<float>::full({3, 32, 64}, 0.25f);
  Tensor<float> la = a.forward(img).logits, lb = b.forward(img).logits,
                lc = c.forward(img).logits;
  CHECK(la.values() == lb.values());
  CHECK(la.values() != lc.values());
}

// ---------------------------------------------------------------------------
// Block semantics.
// ---------------------------------------------------------------------------

TEST_CASE("zeroed mixing blocks pass tokens through unchanged") {
  Rng rng(3);
  Tensor<double> x = rnd({6, 8}, rng);

  LocalBlockP<double> lb;
  lb.n1 = {Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8})};
  lb.c1 = {Tensor<double>::zeros({8, 4, 3, 3}), Tensor<double>::zeros({8}), 2};
  lb.c2 = {Tensor<double>::zeros({8, 4, 3, 3}), Tensor<double>::zeros({8}), 2};
  lb.n2 = {Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8})};
  lb.mlp = {{Tensor<double>::zeros({8, 32}), Tensor<double>::zeros({32})},
            {Tensor<double>::zeros({32, 8}), Tensor<double>::zeros({8})}};
  Tensor<double> y = local_mixing(lb, x, 2, 3);
  for (long long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  GlobalBlockP<double> gb;
  gb.n1 = lb.n1;
  gb.att = {{rnd({8, 8}, rng), Tensor<double>::zeros({8})},
            {rnd({8, 8}, rng), Tensor<double>::zeros({8})},
            {Tensor<double>::zeros({8, 8}), Tensor<double>::zeros({8})},  // v = 0
            {rnd({8, 8}, rng), Tensor<double>::zeros({8})},
            2};
  gb.n2 = lb.n2;
  gb.mlp = lb.mlp;
  Tensor<double> z = global_mixing(gb, x);
  for (long long i = 0; i < x.numel(); ++i) CHECK(z.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("attention over a single token is the value path") {
  Rng rng(4);
  AttnP<double> p{{rnd({6, 6}, rng), rnd({6}, rng)},
                  {rnd({6, 6}, rng), rnd({6}, rng)},
                  {rnd({6, 6}, rng), rnd({6}, rng)},
                  {rnd({6, 6}, rng), rnd({6}, rng)},
                  2};
  Tensor<double> x = rnd({1, 6}, rng);
  Tensor<double> got = mhsa_forward(p, x);
  // Softmax over one key is 1, so the result is o(v(x)) regardless of q/k.
  Tensor<double> want = linear(p.o, linear(p.v, x));
  for (int j = 0; j < 6; ++j)
    CHECK(got.at({0, j}) == doctest::Approx(want.at({0, j})).epsilon(1e-12));
}

TEST_CASE("global mixing commutes with row permutation") {
  Rng rng(5);
  GlobalBlockP<double> p;
  p.n1 = {rnd({8}, rng, 0.1), rnd({8}, rng, 0.1)};
  for (double& v : p.n1.g.values()) v += 1.0;
  p.att = {{rnd({8, 8}, rng), rnd({8}, rng)},
           {rnd({8, 8}, rng), rnd({8}, rng)},
           {rnd({8, 8}, rng), rnd({8}, rng)},
           {rnd({8, 8}, rng), rnd({8}, rng)},
           2};
  p.n2 = {Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8})};
  p.mlp = {{rnd({8, 32}, rng), rnd({32}, rng)}, {rnd({32, 8}, rng), rnd({8}, rng)}};

  Tensor<double> x = rnd({5, 8}, rng);
  std::vector<int> perm = {3, 0, 4, 1, 2};
  Tensor<double> y = global_mixing(p, x);
  Tensor<double> yp = global_mixing(p, gather_rows(x, perm));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(yp.at({i, j}) == doctest::Approx(y.at({perm[std::size_t(i)], j})).epsilon(1e-10));
}

// ---------------------------------------------------------------------------
// Rearrangement head semantics.
// ---------------------------------------------------------------------------

namespace {

FrmP<double> random_frm(int d, int heads, Rng& rng) {
  FrmP<double> p;
  p.heads = heads;
  p.hq = rnd({d, d}, rng);
  p.hk = rnd({d, d}, rng);
  p.hv = rnd({d, d}, rng);
  p.n1 = {Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d})};
  p.n2 = {Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d})};
  p.mlp = {{rnd({d, 2 * d}, rng), rnd({2 * d}, rng)}, {rnd({2 * d, d}, rng), rnd({d}, rng)}};
  p.vt = rnd({1, d}, rng);
  p.vk = rnd({d, d}, rng);
  p.vv = rnd({d, d}, rng);
  p.cls = {rnd({d, 5}, rng), Tensor<double>{}};
  return p;
}

}  // namespace

TEST_CASE("horizontal attention is row-stochastic per grid row") {
  Rng rng(6);
  FrmP<double> p = random_frm(8, 2, rng);
  FeatureMap<double> f{rnd({3 * 4, 8}, rng), 3, 4};
  FrmDiag<double> diag;
  FeatureMap<double> fh = horizontal_rearrange(p, f, &diag);
  CHECK(fh.tokens.shape() == std::vector<int>{12, 8});
  REQUIRE(diag.mh.size() == 3);
  for (const auto& m : diag.mh) {
    REQUIRE(m.shape() == std::vector<int>{4, 4});
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int j = 0; j < 4; ++j) {
        s += m.at({i, j});
        CHECK(m.at({i, j}) >= 0.0);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero query/key projections give uniform horizontal attention") {
  Rng rng(7);
  FrmP<double> p = random_frm(8, 2, rng);
  std::fill(p.hq.values().begin(), p.hq.values().end(), 0.0);
  std::fill(p.hk.values().begin(), p.hk.values().end(), 0.0);
  FeatureMap<double> f{rnd({2 * 5, 8}, rng), 2, 5};
  FrmDiag<double> diag;
  horizontal_rearrange(p, f, &diag);
  for (const auto& m : diag.mh)
    for (long long i = 0; i < m.numel(); ++i)
      CHECK(m.data()[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("vertical attention normalizes over grid rows") {
  Rng rng(8);
  FrmP<double> p = random_frm(8, 2, rng);
  FeatureMap<double> f{rnd({3 * 4, 8}, rng), 3, 4};
  FrmDiag<double> diag;
  FeatureMap<double> fh = horizontal_rearrange(p, f, &diag);
  Tensor<double> seq = vertical_rearrange(p, fh, &diag);
  CHECK(seq.shape() == std::vector<int>{4, 8});
  REQUIRE(diag.mv.shape() == std::vector<int>{4, 3});
  for (int j = 0; j < 4; ++j) {
    double s = 0;
    for (int i = 0; i < 3; ++i) {
      s += diag.mv.at({j, i});
      CHECK(diag.mv.at({j, i}) >= 0.0);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("single-row grids bypass the vertical mix") {
  Rng rng(9);
  FrmP<double> p = random_frm(8, 1, rng);
  FeatureMap<double> fh{rnd({6, 8}, rng), 1, 6};
  FrmDiag<double> diag;
  Tensor<double> seq = vertical_rearrange(p, fh, &diag);
  // One row: every column's softmax is the single value 1, so the sequence is
  // exactly the value projection of that row.
  Tensor<double> want = matmul(fh.tokens, p.vv);
  for (long long i = 0; i < seq.numel(); ++i)
    CHECK(seq.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
  for (int j = 0; j < 6; ++j) CHECK(diag.mv.at({j, 0}) == doctest::Approx(1.0));
}

TEST_CASE("effective rearrangement composes the two attentions") {
  FrmDiag<double> diag;
  diag.mv = Tensor<double>::from({2, 2}, {0.3, 0.7, 0.6, 0.4});
  diag.mh = {Tensor<double>::from({2, 2}, {1.0, 0.0, 0.5, 0.5}),
             Tensor<double>::from({2, 2}, {0.25, 0.75, 0.2, 0.8})};
  Tensor<double> eff = effective_rearrangement(diag, 2, 2);
  REQUIRE(eff.shape() == std::vector<int>{2, 4});
  CHECK(eff.at({0, 0}) == doctest::Approx(0.3));
  CHECK(eff.at({0, 1}) == doctest::Approx(0.0));
  CHECK(eff.at({0, 2}) == doctest::Approx(0.7 * 0.25));
  CHECK(eff.at({0, 3}) == doctest::Approx(0.7 * 0.75));
  CHECK(eff.at({1, 0}) == doctest::Approx(0.6 * 0.5));
  CHECK(eff.at({1, 2}) == doctest::Approx(0.4 * 0.2));
  for (int m = 0; m < 2; ++m) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += eff.at({m, c});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Composed from live attention: rows still sum to one.
  Rng rng(10);
  FrmP<double> p = random_frm(8, 2, rng);
  FeatureMap<double> f{rnd({3 * 4, 8}, rng), 3, 4};
  FrmDiag<double> live;
  vertical_rearrange(p, horizontal_rearrange(p, f, &live), &live);
  Tensor<double> e2 = effective_rearrangement(live, 3, 4);
  REQUIRE(e2.shape() == std::vector<int>{4, 12});
  for (int m = 0; m < 4; ++m) {
    double s = 0;
    for (int c = 0; c < 12; ++c) s += e2.at({m, c});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  FrmDiag<double> empty;
  CHECK_THROWS_AS(effective_rearrangement(empty, 3, 4), StateError);
}

TEST_CASE("column mean pools the grid height") {
  FeatureMap<double> f{Tensor<double>::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}), 2, 2};
  Tensor<double> m = column_mean(f);
  REQUIRE(m.shape() == std::vector<int>{2, 2});
  CHECK(m.at({0, 0}) == doctest::Approx(3.0));  // rows 0 and 2
  CHECK(m.at({0, 1}) == doctest::Approx(4.0));
  CHECK(m.at({1, 0}) == doctest::Approx(5.0));  // rows 1 and 3
  CHECK(m.at({1, 1}) == doctest::Approx(6.0));
}

// ---------------------------------------------------------------------------
// Context branch.
// ---------------------------------------------------------------------------

TEST_CASE("context windows at the label boundaries") {
  const int pad = 24;
  ContextWindows w = extract_windows({2, 0, 19}, 2, pad);
  REQUIRE(w.left.size() == 3);
  REQUIRE(w.right.size() == 3);
  CHECK(w.left[0] == std::vector<int>{pad, pad});
  CHECK(w.left[1] == std::vector<int>{pad, 2});
  CHECK(w.left[2] == std::vector<int>{2, 0});
  CHECK(w.right[0] == std::vector<int>{0, 19});
  CHECK(w.right[1] == std::vector<int>{19, pad});
  CHECK(w.right[2] == std::vector<int>{pad, pad});

  ContextWindows w1 = extract_windows({2, 0, 19}, 1, pad);
  CHECK(w1.left[0] == std::vector<int>{pad});
  CHECK(w1.left[2] == std::vector<int>{0});
  CHECK(w1.right[0] == std::vector<int>{0});
  CHECK(w1.right[2] == std::vector<int>{pad});

  // Window longer than the label: everything beyond the ends is padding.
  ContextWindows w5 = extract_windows({7}, 3, pad);
  CHECK(w5.left[0] == std::vector<int>{pad, pad, pad});
  CHECK(w5.right[0] == std::vector<int>{pad, pad, pad});

  CHECK_THROWS_AS(extract_windows({}, 2, pad), InputError);
  CHECK_THROWS_AS(extract_windows({1}, 0, pad), ConfigError);
}

TEST_CASE("context encoding reduces to the normed token when attention is dead") {
  Rng rng(11);
  SgmP<double> p;
  p.window = 2;
  p.embed = rnd({6, 4}, rng);
  SgmSideP<double> side;
  side.token = rnd({1, 4}, rng);
  side.cq = Tensor<double>::zeros({4, 4});
  side.ck = Tensor<double>::zeros({4, 4});
  side.cv = Tensor<double>::zeros({4, 4});
  side.norm = {Tensor<double>::full({4}, 1.0), Tensor<double>::zeros({4})};
  Tensor<double> got = encode_context(p, side, {0, 3});
  Tensor<double> want = layer_norm(side.token, side.norm.g, side.norm.b);
  for (int j = 0; j < 4; ++j)
    CHECK(got.at({0, j}) == doctest::Approx(want.at({0, j})).epsilon(1e-12));
}

TEST_CASE("visual attention rows are a probability distribution") {
  Rng rng(12);
  SgmSideP<double> side;
  side.token = rnd({1, 4}, rng);
  side.vq = rnd({4, 4}, rng);
  side.vk = rnd({4, 4}, rng);
  side.vv = rnd({4, 4}, rng);
  Tensor<double> q = rnd({1, 4}, rng);
  Tensor<double> tokens = rnd({6, 4}, rng);
  auto [att, attended] = attend_visual(side, q, tokens);
  REQUIRE(att.shape() == std::vector<int>{1, 6});
  REQUIRE(attended.shape() == std::vector<int>{1, 4});
  double s = 0;
  for (int j = 0; j < 6; ++j) s += att.at({0, j});
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

  // Zero query: uniform attention, so the attended row is the token mean
  // through the value projection.
  side.vq = Tensor<double>::zeros({4, 4});
  auto [att_u, attended_u] = attend_visual(side, q, tokens);
  Tensor<double> pooled = scale(matmul(Tensor<double>::full({1, 6}, 1.0), matmul(tokens, side.vv)),
                                1.0 / 6.0);
  for (int j = 0; j < 6; ++j) CHECK(att_u.at({0, j}) == doctest::Approx(1.0 / 6));
  for (int j = 0; j < 4; ++j)
    CHECK(attended_u.at({0, j}) == doctest::Approx(pooled.at({0, j})).epsilon(1e-12));
}

TEST_CASE("context loss with a zero classifier is log charset size") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 12;
  cfg.with_sgm = true;
  Model<double> m(cfg, 2);
  for (auto& e : m.params().entries())
    if (e.name == "sgm.cls.w")
      std::fill(e.tensor.values().begin(), e.tensor.values().end(), 0.0);

  Rng rng(13);
  FeatureMap<double> f{rnd({2 * 4, 128}, rng), 2, 4};
  Tensor<double> loss = m.sgm_loss(f, {1, 5, 11});
  CHECK(loss.numel() == 1);
  CHECK(loss.at({0}) == doctest::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("context loss input validation") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 12;
  Model<double> plain(cfg, 2);
  Rng rng(14);
  FeatureMap<double> f{rnd({2 * 4, 128}, rng), 2, 4};
  CHECK_THROWS_AS(plain.sgm_loss(f, {1, 2}), StateError);

  cfg.with_sgm = true;
  Model<double> m(cfg, 2);
  CHECK(m.sgm_loss(f, {0, 11}).numel() == 1);
  CHECK_THROWS_AS(m.sgm_loss(f, {0, 12}), InputError);  // == charset size
  CHECK_THROWS_AS(m.sgm_loss(f, {-1}), InputError);
  CHECK_THROWS_AS(m.sgm_loss(f, {}), InputError);

  auto rows = m.sgm_attention(f, {3, 7, 1, 0});
  REQUIRE(rows.size() == 4);
  for (auto& [l, r] : rows) {
    REQUIRE(l.shape() == std::vector<int>{1, 8});
    REQUIRE(r.shape() == std::vector<int>{1, 8});
    double sl = 0, sr = 0;
    for (int j = 0; j < 8; ++j) {
      sl += l.at({0, j});
      sr += r.at({0, j});
    }
    CHECK(sl == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sr == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("adding and stripping the context branch leaves recognition unchanged") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 12;
  Model<float> m(cfg, 3);
  CHECK_FALSE(m.has_sgm());
  std::vector<std::string> base_names = param_names(m.params());
  Tensor<float> img = Tensor<float>::full({3, 32, 64}, 0.2f);
  std::vector<float> before = m.forward(img).logits.values();

  m.add_sgm(99);
  CHECK(m.has_sgm());
  CHECK(m.params().find("sgm.embed") != nullptr);
  CHECK(m.params().find("sgm.left.token") != nullptr);
  CHECK(m.params().find("sgm.right.vis.q") != nullptr);
  CHECK(m.params().find("sgm.cls.w") != nullptr);
  CHECK_THROWS_AS(m.add_sgm(100), StateError);
  CHECK(m.forward(img).logits.values() == before);  // branch never touches recognition

  Rng rng(15);
  FeatureMap<float> f = m.backbone_forward(img);
  CHECK(m.sgm_loss(f, {2, 4}).numel() == 1);

  m.strip_sgm();
  CHECK_FALSE(m.has_sgm());
  CHECK(param_names(m.params()) == base_names);
  CHECK(m.forward(img).logits.values() == before);
  CHECK_THROWS_AS(m.sgm_loss(f, {2, 4}), StateError);
}

TEST_CASE("fresh context branches differ by seed") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 12;
  Model<float> a(cfg, 3), b(cfg, 3);
  a.add_sgm(10);
  b.add_sgm(20);
  const Tensor<float>* ea = a.params().find("sgm.embed");
  const Tensor<float>* eb = b.params().find("sgm.embed");
  REQUIRE(ea != nullptr);
  REQUIRE(eb != nullptr);
  CHECK(ea->values() != eb->values());
  CHECK(value_sum(*ea) != doctest::Approx(value_sum(*eb)));
}

// ---------------------------------------------------------------------------
// Gradient checks for the composed blocks (f64, against central differences).
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: stem embedding") {
  Rng rng(20);
  StemP<double> p;
  p.c1 = {param({4, 3, 3, 3}, rng), param({4}, rng, 0.1)};
  p.n1 = {param({4}, rng, 0.1), param({4}, rng, 0.1)};
  for (double& v : p.n1.g.values()) v += 1.0;
  p.c2 = {param({8, 4, 3, 3}, rng), param({8}, rng, 0.1)};
  p.n2 = {param({8}, rng, 0.1), param({8}, rng, 0.1)};
  for (double& v : p.n2.g.values()) v += 1.0;
  Tensor<double> img = param({3, 8, 8}, rng);
  Rng ro(21);
  Tensor<double> c = rnd({4, 8}, ro, 1.0);  // (8/4)*(8/4)=4 tokens
  auto f = [&]() { return mean(mul(stem_embed(p, img).tokens, c)); };
  GradCheckReport r = check_gradients(
      "stem", f, {img, p.c1.w, p.c1.b, p.n1.g, p.n1.b, p.c2.w, p.c2.b, p.n2.g, p.n2.b}, 1e-5, 40);
  CHECK_MESSAGE(r.pass, r.worst);
}

TEST_CASE("gradcheck: local mixing with grouped convolutions") {
  Rng rng(22);
  LocalBlockP<double> p;
  p.n1 = {param({8}, rng, 0.1), param({8}, rng, 0.1)};
  for (double& v : p.n1.g.values()) v += 1.0;
  p.c1 = {param({8, 4, 3, 3}, rng), param({8}, rng, 0.1), 2};
  p.c2 = {param({8, 4, 3, 3}, rng), param({8}, rng, 0.1), 2};
  p.n2 = {param({8}, rng, 0.1), param({8}, rng, 0.1)};
  for (double& v : p.n2.g.values()) v += 1.0;
  p.mlp = {{param({8, 16}, rng), param({16}, rng, 0.1)}, {param({16, 8}, rng), param({8}, rng, 0.1)}};
  Tensor<double> x = param({2 * 3, 8}, rng);
  Rng ro(23);
  Tensor<double> c = rnd({6, 8}, ro, 1.0);
  auto f = [&]() { return mean(mul(local_mixing(p, x, 2, 3), c)); };
  GradCheckReport r = check_gradients("local", f,
                                      {x, p.n1.g, p.n1.b, p.c1.w, p.c1.b, p.c2.w, p.c2.b, p.n2.g,
                                       p.n2.b, p.mlp.fc1.w, p.mlp.fc1.b, p.mlp.fc2.w, p.mlp.fc2.b},
                                      1e-5, 40);
  CHECK_MESSAGE(r.pass, r.worst);
}

TEST_CASE("gradcheck: global mixing") {
  Rng rng(24);
  GlobalBlockP<double> p;
  p.n1 = {param({8}, rng, 0.1), param({8}, rng, 0.1)};
  for (double& v : p.n1.g.values()) v += 1.0;
  p.att = {{param({8, 8}, rng), param({8}, rng, 0.1)},
           {param({8, 8}, rng), param({8}, rng, 0.1)},
           {param({8, 8}, rng), param({8}, rng, 0.1)},
           {param({8, 8}, rng), param({8}, rng, 0.1)},
           2};
  p.n2 = {param({8}, rng, 0.1), param({8}, rng, 0.1)};
  for (double& v : p.n2.g.values()) v += 1.0;
  p.mlp = {{param({8, 16}, rng), param({16}, rng, 0.1)}, {param({16, 8}, rng), param({8}, rng, 0.1)}};
  Tensor<double> x = param({6, 8}, rng);
  Rng ro(25);
  Tensor<double> c = rnd({6, 8}, ro, 1.0);
  auto f = [&]() { return mean(mul(global_mixing(p, x), c)); };
  GradCheckReport r = check_gradients(
      "global", f,
      {x, p.att.q.w, p.att.q.b, p.att.k.w, p.att.k.b, p.att.v.w, p.att.v.b, p.att.o.w, p.att.o.b,
       p.mlp.fc1.w, p.mlp.fc2.w, p.n1.g, p.n2.b},
      1e-5, 40);
  CHECK_MESSAGE(r.pass, r.worst);
}

TEST_CASE("gradcheck: height merge") {
  Rng rng(26);
  ConvP<double> p{param({8, 6, 3, 3}, rng), param({8}, rng, 0.1)};
  FeatureMap<double> f{param({4 * 3, 6}, rng), 4, 3};
  Rng ro(27);
  Tensor<double> c = rnd({2 * 3, 8}, ro, 1.0);
  auto fn = [&]() { return mean(mul(merge_height(p, f).tokens, c)); };
  GradCheckReport r = check_gradients("merge", fn, {f.tokens, p.w, p.b}, 1e-5, 40);
  CHECK_MESSAGE(r.pass, r.worst);
}

TEST_CASE("gradcheck: rearrangement head end to end") {
  Rng rng(28);
  FrmP<double> p = random_frm(8, 2, rng);
  for (auto* t : {&p.hq, &p.hk, &p.hv, &p.vt, &p.vk, &p.vv, &p.cls.w, &p.mlp.fc1.w, &p.mlp.fc1.b,
                  &p.mlp.fc2.w, &p.mlp.fc2.b, &p.n1.g, &p.n1.b, &p.n2.g, &p.n2.b})
    t->set_requires_grad(true);
  FeatureMap<double> f{param({3 * 4, 8}, rng), 3, 4};
  Rng ro(29);
  Tensor<double> c = rnd({4, 5}, ro, 1.0);
  auto fn = [&]() {
    return mean(mul(ctc_logits(p, vertical_rearrange(p, horizontal_rearrange(p, f))), c));
  };
  GradCheckReport r = check_gradients(
      "frm_head", fn,
      {f.tokens, p.hq, p.hk, p.hv, p.n1.g, p.n1.b, p.n2.g, p.n2.b, p.mlp.fc1.w, p.mlp.fc1.b,
       p.mlp.fc2.w, p.mlp.fc2.b, p.vt, p.vk, p.vv, p.cls.w},
      1e-5, 30);
  CHECK_MESSAGE(r.pass, r.worst);
}

TEST_CASE("gradcheck: context branch pieces") {
  Rng rng(30);
  SgmP<double> p;
  p.window = 2;
  p.embed = param({6, 8}, rng);
  SgmSideP<double> side;
  side.token = param({1, 8}, rng);
  side.cq = param({8, 8}, rng);
  side.ck = param({8, 8}, rng);
  side.cv = param({8, 8}, rng);
  side.norm = {param({8}, rng, 0.1), param({8}, rng, 0.1)};
  for (double& v : side.norm.g.values()) v += 1.0;
  side.vq = param({8, 8}, rng);
  side.vk = param({8, 8}, rng);
  side.vv = param({8, 8}, rng);
  Tensor<double> cls = param({8, 5}, rng);
  Tensor<double> visual = param({6, 8}, rng);

  auto fn = [&]() {
    Tensor<double> q = encode_context(p, side, {1, 5});
    auto [att, attended] = attend_visual(side, q, visual);
    (void)att;
    return cross_entropy(matmul(attended, cls), 3);
  };
  GradCheckReport r = check_gradients(
      "context_branch", fn,
      {p.embed, side.token, side.cq, side.ck, side.cv, side.norm.g, side.norm.b, side.vq, side.vk,
       side.vv, cls, visual},
      1e-5, 40);
  CHECK_MESSAGE(r.pass, r.worst);
}

TEST_CASE("gradcheck: full context loss on a small grid") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 6;
  cfg.with_sgm = true;
  cfg.sgm_window = 2;
  Model<double> m(cfg, 4);
  Rng rng(31);
  Tensor<double> tokens = param({2 * 3, 128}, rng);
  FeatureMap<double> f{tokens, 2, 3};
  auto fn = [&]() { return m.sgm_loss(f, {1, 4, 0}); };
  std::vector<Tensor<double>> inputs{tokens};
  for (auto& e : m.params().entries())
    if (e.name.rfind("sgm.", 0) == 0) inputs.push_back(e.tensor);
  GradCheckReport r = check_gradients("sgm_loss", fn, inputs, 1e-4, 12);
  CHECK_MESSAGE(r.pass, r.worst);
}

TEST_CASE("gradcheck: pooled and one-block heads") {
  ModelConfig cfg;
  cfg.variant = Variant::nano;
  cfg.charset_size = 6;
  for (FrmMode mode : {FrmMode::pool, FrmMode::tf1}) {
    cfg.frm_mode = mode;
    Model<double> m(cfg, 5);
    Rng rng(32);
    Tensor<double> tokens = param({2 * 3, 128}, rng);
    FeatureMap<double> f{tokens, 2, 3};
    Rng ro(33);
    Tensor<double> c = rnd({3, 7}, ro, 1.0);
    auto fn = [&]() { return mean(mul(m.head_forward(f), c)); };
    std::vector<Tensor<double>> inputs{tokens};
    for (auto& e : m.params().entries())
      if (e.name.rfind("frm.", 0) == 0) inputs.push_back(e.tensor);
    GradCheckReport r =
        check_gradients(frm_mode_name(mode) + "_head", fn, inputs, 1e-4, 10);
    CHECK_MESSAGE(r.pass, r.worst);
  }
}
