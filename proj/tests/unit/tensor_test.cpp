#include <doctest.h>

#include <cmath>

#include "svtr2/gradcheck.hpp"
#include "svtr2/ops.hpp"

using namespace svtr2;

namespace {

Tensor<double> rand_tensor(std::vector<int> shape, Rng& rng, double scl = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (long long i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * scl;
  return t;
}

// Direct per-output-pixel convolution, written independently of the library
// kernel (different loop structure) to cross-check values.
std::vector<double> conv_reference(const std::vector<double>& x, const std::vector<double>& w,
                                   const std::vector<double>& b, int cin, int h, int wd, int cout,
                                   int kh, int kw, int groups, int sh, int sw, int ph, int pw) {
  const int oh = (h + 2 * ph - kh) / sh + 1;
  const int ow = (wd + 2 * pw - kw) / sw + 1;
  const int cig = cin / groups, cog = cout / groups;
  std::vector<double> y(std::size_t(cout) * oh * ow, 0.0);
  for (int oc = 0; oc < cout; ++oc) {
    const int grp = oc / cog;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b.empty() ? 0.0 : b[std::size_t(oc)];
        for (int icg = 0; icg < cig; ++icg) {
          const int ic = grp * cig + icg;
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * sh - ph + ky;
              const int ix = ox * sw - pw + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x[std::size_t((ic * h + iy) * wd + ix)] *
                     w[std::size_t(((oc * cig + icg) * kh + ky) * kw + kx)];
            }
          }
        }
        y[std::size_t((oc * oh + oy) * ow + ox)] = acc;
      }
    }
  }
  return y;
}

}  // namespace

TEST_CASE("tensor construction and validation") {
  auto t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.ndim() == 2);
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6.0);
  CHECK_THROWS_AS(Tensor<double>::zeros({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
}

TEST_CASE("matmul basics") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = matmul(eye, a);
  for (int i = 0; i < 6; ++i) CHECK(r.data()[i] == a.data()[i]);

  // A row selector picks out one row.
  auto sel = Tensor<double>::from({1, 2}, {0, 1});
  auto row = matmul(sel, a);
  CHECK(row.at({0, 0}) == 4.0);
  CHECK(row.at({0, 2}) == 6.0);

  auto bad = Tensor<double>::zeros({4, 2});
  try {
    matmul(a, bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    // The message must name both offending shapes.
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("softmax values and stability") {
  Rng rng(7);
  auto x = rand_tensor({5, 9}, rng, 100.0);
  for (long long i = 0; i < x.numel(); ++i) x.data()[i] = std::min(700.0, std::max(-700.0, x.data()[i] * 7.0));
  auto y = softmax(x, -1);
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) {
      const double v = y.at({i, j});
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }

  auto extreme = softmax(Tensor<double>::from({2}, {1000.0, 0.0}), 0);
  CHECK(extreme.at({0}) == 1.0);
  CHECK(extreme.at({1}) == 0.0);

  auto uniform = softmax(Tensor<double>::zeros({4}), 0);
  for (int j = 0; j < 4; ++j) CHECK(uniform.at({j}) == doctest::Approx(0.25).epsilon(1e-12));

  // Axis selection: softmax over axis 0 of a 2-D tensor normalizes columns.
  auto z = softmax(Tensor<double>::from({2, 2}, {0, 10, 0, 10}), 0);
  CHECK(z.at({0, 0}) == doctest::Approx(0.5));
  CHECK(z.at({1, 1}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(softmax(x, 2), ShapeError);
}

TEST_CASE("float32 softmax rows stay normalized to float accuracy") {
  Rng rng(11);
  auto x = Tensor<float>::zeros({8, 56});
  for (long long i = 0; i < x.numel(); ++i) x.data()[i] = float(rng.normal() * 5.0);
  auto y = softmax(x, 1);
  for (int i = 0; i < 8; ++i) {
    double s = 0;
    for (int j = 0; j < 56; ++j) s += double(y.at({i, j}));
    CHECK(std::abs(s - 1.0) <= 1e-5);
  }
}

TEST_CASE("layer_norm values") {
  auto gain = Tensor<double>::full({2}, 1.0);
  auto bias = Tensor<double>::zeros({2});
  auto y = layer_norm(Tensor<double>::from({1, 2}, {1.0, 3.0}), gain, bias);
  CHECK(y.at({0, 0}) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-5));

  // Constant rows collapse to the bias.
  auto b2 = Tensor<double>::from({3}, {5, 6, 7});
  auto g2 = Tensor<double>::full({3}, 2.0);
  auto c = layer_norm(Tensor<double>::full({2, 3}, 4.0), g2, b2);
  for (int j = 0; j < 3; ++j) CHECK(c.at({1, j}) == doctest::Approx(b2.at({j})).epsilon(1e-9));

  CHECK_THROWS_AS(layer_norm(Tensor<double>::zeros({2, 3}), gain, bias), ShapeError);
}

TEST_CASE("gelu reference values") {
  auto y = gelu(Tensor<double>::from({3}, {0.0, 1.0, -1.0}));
  CHECK(y.at({0}) == 0.0);
  CHECK(y.at({1}) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y.at({2}) == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("backward through simple graphs") {
  auto x = Tensor<double>::from({3}, {1.0, 2.0, -4.0}).set_requires_grad(true);
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto loss = sum(x);
    const std::size_t replayed = tape.backward(loss);
    CHECK(replayed == tape.size());
  }
  for (int i = 0; i < 3; ++i) CHECK(x.grad_vec()[std::size_t(i)] == 1.0);

  auto x2 = Tensor<double>::from({2}, {1.0, 2.0}).set_requires_grad(true);
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto loss = sum(mul(x2, x2));
    tape.backward(loss);
  }
  CHECK(x2.grad_vec()[0] == doctest::Approx(2.0));
  CHECK(x2.grad_vec()[1] == doctest::Approx(4.0));
}

TEST_CASE("tape accumulation and reset semantics") {
  auto x = Tensor<double>::from({2}, {3.0, -1.0}).set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    Tape<double>::Scope scope(tape);
    loss = sum(mul(x, x));
    tape.backward(loss);
  }
  const std::vector<double> once = x.grad_vec();
  // Without a reset, leaf grads accumulate: a second replay adds the same
  // contributions again.
  tape.backward(loss);
  CHECK(x.grad_vec()[0] == doctest::Approx(2.0 * once[0]));
  CHECK(x.grad_vec()[1] == doctest::Approx(2.0 * once[1]));
  // With a reset in between, replay reproduces identical gradients.
  x.zero_grad();
  tape.backward(loss);
  for (std::size_t i = 0; i < 2; ++i) CHECK(x.grad_vec()[i] == once[i]);

  CHECK_THROWS_AS(tape.backward(Tensor<double>::zeros({2})), StateError);
  auto untracked = Tensor<double>::zeros({1});
  CHECK_THROWS_AS(tape.backward(untracked), StateError);
}

TEST_CASE("ops outside a tape do not track gradients") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}).set_requires_grad(true);
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  Tape<double> tape;
  CHECK(tape.empty());
}

TEST_CASE("conv2d identity and reference cross-check") {
  // 1x1 kernels with unit weights and groups == channels pass input through.
  auto x = Tensor<double>::from({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  auto w = Tensor<double>::full({2, 1, 1, 1}, 1.0);
  auto y = conv2d(x, w, Tensor<double>(), 2, 1, 1, 0, 0);
  for (long long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  Rng rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    const int groups = 1 + int(rng.uniform_int(0, 2));
    const int cig = 1 + int(rng.uniform_int(0, 2));
    const int cog = 1 + int(rng.uniform_int(0, 2));
    const int cin = groups * cig, cout = groups * cog;
    const int kh = 1 + int(rng.uniform_int(0, 2)), kw = 1 + int(rng.uniform_int(0, 2));
    const int sh = 1 + int(rng.uniform_int(0, 1)), sw = 1 + int(rng.uniform_int(0, 1));
    const int ph = int(rng.uniform_int(0, 1)), pw = int(rng.uniform_int(0, 1));
    const int h = kh + int(rng.uniform_int(0, 4)), wd = kw + int(rng.uniform_int(0, 4));
    auto xt = rand_tensor({cin, h, wd}, rng);
    auto wt = rand_tensor({cout, cig, kh, kw}, rng);
    auto bt = rand_tensor({cout}, rng);
    auto yt = conv2d(xt, wt, bt, groups, sh, sw, ph, pw);
    auto ref = conv_reference(xt.values(), wt.values(), bt.values(), cin, h, wd, cout, kh, kw,
                              groups, sh, sw, ph, pw);
    REQUIRE(yt.numel() == (long long)ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(yt.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({2, 2, 1, 1}), Tensor<double>(), 2, 1, 1, 0, 0),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(x, w, Tensor<double>(), 3, 1, 1, 0, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({2, 1, 5, 5}), Tensor<double>(), 2, 1, 1, 0, 0),
                  ShapeError);
}

TEST_CASE("cross_entropy values") {
  auto uniform = Tensor<double>::zeros({1, 12});
  auto l = cross_entropy(uniform, 3);
  CHECK(l.at({0}) == doctest::Approx(std::log(12.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(uniform, 12), InputError);
  CHECK_THROWS_AS(cross_entropy(Tensor<double>::zeros({2, 3}), 0), ShapeError);
}

TEST_CASE("finite-difference checks for every primitive") {
  Rng rng(1234);
  std::vector<GradCheckReport> reports;

  {
    auto a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
    reports.push_back(check_gradients(
        "matmul", [&] { return sum(matmul(a, b)); }, {a, b}, 1e-6));
  }
  {
    auto a = rand_tensor({2, 5}, rng), b = rand_tensor({2, 5}, rng);
    reports.push_back(check_gradients(
        "add", [&] { return sum(mul(add(a, b), add(a, b))); }, {a, b}, 1e-6));
    reports.push_back(check_gradients(
        "sub", [&] { return sum(mul(sub(a, b), sub(a, b))); }, {a, b}, 1e-6));
    reports.push_back(check_gradients(
        "mul", [&] { return sum(mul(a, b)); }, {a, b}, 1e-6));
    reports.push_back(check_gradients(
        "scale", [&] { return sum(scale(a, -1.7)); }, {a}, 1e-6));
  }
  {
    auto x = rand_tensor({4, 3}, rng);
    auto b = rand_tensor({3}, rng);
    reports.push_back(check_gradients(
        "add_bias", [&] { return sum(mul(add_bias(x, b), add_bias(x, b))); }, {x, b}, 1e-6));
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    auto wq = rand_tensor({4, 4}, rng);
    reports.push_back(check_gradients(
        "transpose", [&] { return sum(matmul(x, transpose(matmul(x, wq)))); }, {x, wq}, 1e-6));
  }
  {
    auto x = rand_tensor({3, 5}, rng);
    auto w = rand_tensor({5, 5}, rng);
    reports.push_back(check_gradients(
        "softmax_rows", [&] { return sum(mul(softmax(x, 1), matmul(x, w))); }, {x, w}, 1e-6));
    reports.push_back(check_gradients(
        "softmax_cols", [&] { return sum(mul(softmax(x, 0), matmul(x, w))); }, {x, w}, 1e-6));
  }
  {
    auto x = rand_tensor({3, 6}, rng);
    auto g = rand_tensor({6}, rng), b = rand_tensor({6}, rng);
    reports.push_back(check_gradients(
        "layer_norm", [&] { return sum(mul(layer_norm(x, g, b), x)); }, {x, g, b}, 1e-6));
  }
  {
    auto x = rand_tensor({2, 7}, rng);
    reports.push_back(check_gradients(
        "gelu", [&] { return sum(mul(gelu(x), x)); }, {x}, 1e-6));
    reports.push_back(check_gradients(
        "mean", [&] { return mean(mul(x, x)); }, {x}, 1e-6));
    reports.push_back(check_gradients(
        "reshape", [&] { return sum(mul(reshape(x, {7, 2}), reshape(x, {7, 2}))); }, {x}, 1e-6));
  }
  {
    auto x = rand_tensor({3, 8}, rng);
    reports.push_back(check_gradients(
        "slice_cols",
        [&] {
          auto a = slice_cols(x, 1, 3);
          auto b = slice_cols(x, 4, 3);
          return sum(mul(a, b));
        },
        {x}, 1e-6));
    reports.push_back(check_gradients(
        "concat_cols",
        [&] {
          auto parts = std::vector<Tensor<double>>{slice_cols(x, 0, 2), slice_cols(x, 2, 2)};
          auto c = concat_cols(parts);
          return sum(mul(c, c));
        },
        {x}, 1e-6));
    reports.push_back(check_gradients(
        "concat_rows",
        [&] {
          auto parts = std::vector<Tensor<double>>{x, x};
          auto c = concat_rows(parts);
          return sum(mul(c, c));
        },
        {x}, 1e-6));
    reports.push_back(check_gradients(
        "gather_rows",
        [&] {
          auto gth = gather_rows(x, {0, 2, 2, 1});  // duplicate rows accumulate
          return sum(mul(gth, gth));
        },
        {x}, 1e-6));
  }
  {
    auto x = rand_tensor({4, 5, 6}, rng);
    auto w = rand_tensor({6, 2, 3, 3}, rng);
    auto b = rand_tensor({6}, rng);
    reports.push_back(check_gradients(
        "conv2d_grouped",
        [&] {
          auto y = conv2d(x, w, b, 2, 2, 1, 1, 1);
          return sum(mul(y, y));
        },
        {x, w, b}, 1e-6));
  }
  {
    auto logits = rand_tensor({1, 9}, rng);
    reports.push_back(check_gradients(
        "cross_entropy", [&] { return cross_entropy(logits, 4); }, {logits}, 1e-6));
  }

  for (const GradCheckReport& r : reports) {
    INFO(r.name, ": max rel err ", r.max_rel_err, " worst ", r.worst);
    CHECK(r.pass);
  }
}

TEST_CASE("nan detection in checked mode") {
  const bool saved = nan_checks_enabled();
  set_nan_checks(true);
  auto inf = Tensor<double>::full({2}, HUGE_VAL);
  CHECK_THROWS_AS(scale(inf, 1.0), StateError);
  set_nan_checks(saved);
}

TEST_CASE("rng determinism and ranges") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    auto v = r.uniform_int(-3, 7);
    CHECK(v >= -3);
    CHECK(v <= 7);
    CHECK(std::isfinite(r.normal()));
    const double u = r.uniform(2.0, 3.0);
    CHECK(u >= 2.0);
    CHECK(u < 3.0);
  }
  std::vector<int> perm{0, 1, 2, 3, 4, 5, 6, 7};
  Rng s(17);
  s.shuffle(perm);
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 8; ++i) CHECK(sorted[std::size_t(i)] == i);
}
