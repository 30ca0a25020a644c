#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "svtr2/common.hpp"
#include "svtr2/msr.hpp"
#include "svtr2/synth.hpp"

using namespace svtr2;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("svtr2_synth_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TmpDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::array<double, 2> quad_center(const std::array<std::array<double, 2>, 4>& q) {
  return {(q[0][0] + q[1][0] + q[2][0] + q[3][0]) / 4.0,
          (q[0][1] + q[1][1] + q[2][1] + q[3][1]) / 4.0};
}

// Integer-aligned crop around a center; out-of-bounds reads as 0.
std::vector<float> crop_window(const Image& im, double cx, double cy, int half_w, int half_h) {
  std::vector<float> out;
  out.reserve(std::size_t(2 * half_h + 1) * std::size_t(2 * half_w + 1));
  int icx = int(std::lround(cx)), icy = int(std::lround(cy));
  for (int dy = -half_h; dy <= half_h; ++dy)
    for (int dx = -half_w; dx <= half_w; ++dx) {
      int y = icy + dy, x = icx + dx;
      out.push_back(y >= 0 && y < im.h && x >= 0 && x < im.w ? im.at(0, y, x) : 0.F);
    }
  return out;
}

double min_shift_ssd(const Image& a, double acx, double acy, const Image& b, double bcx,
                     double bcy, int half_w, int half_h) {
  std::vector<float> wa = crop_window(a, acx, acy, half_w, half_h);
  double best = 1e300;
  for (int sy = -2; sy <= 2; ++sy)
    for (int sx = -2; sx <= 2; ++sx) {
      std::vector<float> wb = crop_window(b, bcx + sx, bcy + sy, half_w, half_h);
      double ssd = 0.0;
      for (std::size_t i = 0; i < wa.size(); ++i) {
        double d = double(wa[i]) - wb[i];
        ssd += d * d;
      }
      best = std::min(best, ssd);
    }
  return best;
}

}  // namespace

TEST_CASE("glyph font: full coverage, distinct letterforms, validation") {
  GlyphFont f = GlyphFont::basic(kTestAlphabet);
  std::set<std::array<std::uint8_t, 35>> seen;
  for (char c = 'a'; c <= 'z'; ++c) {
    REQUIRE(f.has(c));
    const auto& g = f.glyph(c);
    int ink = 0;
    for (auto v : g) ink += v;
    CHECK(ink >= 5);  // every glyph draws something substantial
    CHECK(seen.insert(g).second);
  }
  CHECK(seen.size() == 26);
  CHECK_THROWS_AS(GlyphFont::basic("ab1"), InputError);
  CHECK_THROWS_AS(GlyphFont::basic("aba"), InputError);
  CHECK_THROWS_AS(GlyphFont::basic(""), InputError);
  GlyphFont small = GlyphFont::basic("abc");
  CHECK(!small.has('z'));
  CHECK_THROWS_AS(small.glyph('z'), InputError);
}

TEST_CASE("plain render is a pixel-exact tiling of glyph bitmaps") {
  GlyphFont f = GlyphFont::basic("ab");
  SceneSpec spec;
  spec.text = "ab";
  spec.glyph_scale = 2;
  RawSample s = render(spec, 1, f);
  // margin 4, glyph 14x10, gap 2.
  REQUIRE(s.image.h == 8 + 14);
  REQUIRE(s.image.w == 8 + 20 + 2);
  Image want(1, s.image.h, s.image.w, 0.F);
  for (int gi = 0; gi < 2; ++gi) {
    const auto& g = f.glyph(spec.text[std::size_t(gi)]);
    int x0 = 4 + gi * 12;
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c)
        if (g[std::size_t(r * 5 + c)])
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) want.at(0, 4 + r * 2 + dy, x0 + c * 2 + dx) = 1.F;
  }
  CHECK(s.image.data == want.data);
  CHECK(s.label == std::vector<int>{0, 1});
}

TEST_CASE("render determinism and rotation-180 symmetry") {
  GlyphFont f = GlyphFont::basic(kDefaultAlphabet);
  SceneSpec spec;
  spec.text = "face";
  spec.glyph_scale = 3;
  spec.noise_sigma = 0.05;
  RawSample a = render(spec, 42, f);
  RawSample b = render(spec, 42, f);
  CHECK(a.image.data == b.image.data);
  RawSample c = render(spec, 43, f);
  CHECK(a.image.data != c.image.data);  // different noise stream

  SceneSpec plain;
  plain.text = "bad";
  plain.glyph_scale = 2;
  RawSample base = render(plain, 7, f);
  plain.rotation_deg = 180.0;
  RawSample turned = render(plain, 7, f);
  REQUIRE(turned.image.h == base.image.h);
  REQUIRE(turned.image.w == base.image.w);
  for (int y = 0; y < base.image.h; ++y)
    for (int x = 0; x < base.image.w; ++x)
      CHECK(turned.image.at(0, y, x) == base.image.at(0, base.image.h - 1 - y, base.image.w - 1 - x));
}

TEST_CASE("vertical layout stacks glyphs top to bottom") {
  GlyphFont f = GlyphFont::basic(kDefaultAlphabet);
  SceneSpec spec;
  spec.text = "abcd";
  spec.glyph_scale = 2;
  spec.layout = Layout::vertical;
  RenderDetail d;
  RawSample s = render(spec, 1, f, &d);
  CHECK(s.image.h > s.image.w);
  REQUIRE(d.glyph_quads.size() == 4);
  for (int i = 1; i < 4; ++i)
    CHECK(quad_center(d.glyph_quads[std::size_t(i)])[1] >
          quad_center(d.glyph_quads[std::size_t(i - 1)])[1]);
}

TEST_CASE("render rejects unknown glyphs and bad specs") {
  GlyphFont f = GlyphFont::basic(kDefaultAlphabet);  // a..l
  SceneSpec spec;
  spec.text = "lazy";  // y,z outside the 12-char alphabet
  CHECK_THROWS_AS(render(spec, 1, f), InputError);
  spec.text = "";
  CHECK_THROWS_AS(render(spec, 1, f), InputError);
  spec.text = "abc";
  spec.glyph_scale = 0;
  CHECK_THROWS_AS(render(spec, 1, f), InputError);
}

TEST_CASE("occlusion masks exactly one whole character and nothing else") {
  SynthGenerator gen(kDefaultAlphabet, 77);
  for (int i = 0; i < 12; ++i) {
    SceneSpec spec = gen.spec_for(Profile::occluded, i);
    CHECK(spec.occlusion_frac >= 0.1);
    CHECK(spec.occlusion_frac <= 0.3);
    CHECK(std::lround(spec.occlusion_frac * spec.text.size()) == 1);

    std::uint64_t rseed = 12345 + std::uint64_t(i);
    RenderDetail masked_detail;
    RawSample masked = render(spec, rseed, gen.font(), &masked_detail);
    REQUIRE(masked_detail.masked_indices.size() == 1);
    int mi = masked_detail.masked_indices[0];

    SceneSpec open = spec;
    open.occlusion_frac = 0.0;
    RawSample full = render(open, rseed, gen.font());
    REQUIRE(full.image.h == masked.image.h);
    REQUIRE(full.image.w == masked.image.w);

    // The masked glyph's area is blank; every other pixel matches the
    // unmasked render exactly; the two images do differ (ink was erased).
    const auto& q = masked_detail.glyph_quads[std::size_t(mi)];
    double lox = 1e9, hix = -1e9, loy = 1e9, hiy = -1e9;
    for (const auto& p : q) {
      lox = std::min(lox, p[0]);
      hix = std::max(hix, p[0]);
      loy = std::min(loy, p[1]);
      hiy = std::max(hiy, p[1]);
    }
    bool differs = false;
    for (int y = 0; y < full.image.h; ++y)
      for (int x = 0; x < full.image.w; ++x) {
        bool in_box = x >= lox - 0.5 && x <= hix + 0.5 && y >= loy - 0.5 && y <= hiy + 0.5;
        float mv = masked.image.at(0, y, x);
        if (!in_box) {
          CHECK(mv == full.image.at(0, y, x));
        } else {
          CHECK(mv <= 0.55F);  // residual corner bleed only, never solid ink
        }
        if (mv != full.image.at(0, y, x)) differs = true;
      }
    CHECK(differs);
  }
}

TEST_CASE("lexicon is deterministic, in-alphabet, and covers lengths 1..8") {
  auto lex = make_lexicon(kDefaultAlphabet);
  auto lex2 = make_lexicon(kDefaultAlphabet);
  CHECK(lex == lex2);
  std::set<int> lengths;
  for (const std::string& w : lex) {
    lengths.insert(int(w.size()));
    for (char c : w) CHECK(std::string(kDefaultAlphabet).find(c) != std::string::npos);
  }
  CHECK(lengths == std::set<int>{1, 2, 3, 4, 5, 6, 7, 8});
  // Words are distinct within the whole inventory for this alphabet size.
  std::set<std::string> uniq(lex.begin(), lex.end());
  CHECK(uniq.size() == lex.size());
  CHECK_THROWS_AS(make_lexicon(""), InputError);
}

TEST_CASE("generator profiles honor their contracts") {
  SynthGenerator gen(kDefaultAlphabet, 5);

  for (int i = 0; i < 20; ++i) {
    SceneSpec r = gen.spec_for(Profile::regular, i);
    CHECK(r.text.size() >= 1);
    CHECK(r.text.size() <= 8);
    CHECK(std::abs(r.rotation_deg) <= 5.0);
    CHECK(r.curvature == 0.0);
    CHECK(r.occlusion_frac == 0.0);

    SceneSpec rot = gen.spec_for(Profile::rotated, i);
    double a = rot.rotation_deg;
    bool near_right_angle = std::abs(a - 90) <= 10 || std::abs(a - 180) <= 10 || std::abs(a - 270) <= 10;
    CHECK(near_right_angle);

    SceneSpec cur = gen.spec_for(Profile::curved, i);
    CHECK(cur.curvature >= 0.5);
    CHECK(cur.curvature <= 1.0);

    SceneSpec lng = gen.spec_for(Profile::long_text, i);
    CHECK(lng.text.size() >= 26);
    CHECK(lng.text.size() <= 35);
  }

  // Determinism: same (profile, index) -> same spec; mixed resolves variably.
  SceneSpec s1 = gen.spec_for(Profile::mixed, 3);
  SceneSpec s2 = gen.spec_for(Profile::mixed, 3);
  CHECK(s1.text == s2.text);
  CHECK(s1.rotation_deg == s2.rotation_deg);
  std::set<std::string> effs;
  for (int i = 0; i < 40; ++i) {
    Profile eff = Profile::mixed;
    gen.spec_for(Profile::mixed, i, &eff);
    CHECK(eff != Profile::mixed);
    effs.insert(profile_name(eff));
  }
  CHECK(effs.size() >= 4);  // 40 draws essentially always hit most profiles
}

TEST_CASE("mixed profile spans all four aspect buckets") {
  SynthGenerator gen(kDefaultAlphabet, 11);
  std::set<BucketId> buckets;
  for (int i = 0; i < 80 && buckets.size() < 4; ++i) {
    RawSample s = gen.sample_for(Profile::mixed, i);
    buckets.insert(compute_bucket(s.image.h, s.image.w).id);
  }
  CHECK(buckets.size() == 4);
}

TEST_CASE("dataset writer: determinism, long lengths, manifest loadability") {
  TmpDir a, b;
  make_dataset(Profile::long_text, 10, 99, a.path.string());
  make_dataset(Profile::long_text, 10, 99, b.path.string());
  CHECK(slurp(a.file("manifest.tsv")) == slurp(b.file("manifest.tsv")));
  CHECK(slurp(a.file("charset.txt")) == slurp(b.file("charset.txt")));
  CHECK(slurp(a.file("images/00003_long.pgm")) == slurp(b.file("images/00003_long.pgm")));

  Charset cs = Charset::load(a.file("charset.txt"));
  CHECK(cs.size() == 12);
  auto samples = load_manifest(a.file("manifest.tsv"), cs);
  REQUIRE(samples.size() == 10);
  for (const auto& s : samples) {
    CHECK(s.label.size() >= 26);
    CHECK(s.label.size() <= 35);
    CHECK(s.source_id.find("_long.pgm") != std::string::npos);
  }

  TmpDir c;
  make_dataset(Profile::mixed, 8, 1, c.path.string());
  auto mixed = load_manifest(c.file("manifest.tsv"), cs);
  CHECK(mixed.size() == 8);
  CHECK_THROWS_AS(make_dataset(Profile::regular, 0, 1, c.path.string()), InputError);
}

TEST_CASE("augmentation: identity at p=0, determinism, range preservation") {
  SynthGenerator gen(kDefaultAlphabet, 3);
  RawSample s = gen.sample_for(Profile::regular, 4);

  AugmentConfig off;
  off.p_rotate = off.p_perspective = off.p_blur = off.p_noise = 0.0;
  RawSample same = augment(s, off, 123);
  CHECK(same.image.data == s.image.data);
  CHECK(same.label == s.label);

  AugmentConfig on;
  on.p_rotate = on.p_perspective = on.p_blur = on.p_noise = 1.0;
  RawSample a1 = augment(s, on, 9);
  RawSample a2 = augment(s, on, 9);
  CHECK(a1.image.data == a2.image.data);
  RawSample a3 = augment(s, on, 10);
  CHECK(a1.image.data != a3.image.data);
  CHECK(a1.label == s.label);
  for (float v : a1.image.data) {
    CHECK(v >= 0.F);
    CHECK(v <= 1.F);
  }
}

TEST_CASE("legibility floor: template matcher reads the regular profile") {
  SynthGenerator gen(kDefaultAlphabet, 2024);
  const std::string alpha = kDefaultAlphabet;
  int total = 0, correct = 0;
  for (int i = 0; i < 40; ++i) {
    SceneSpec spec = gen.spec_for(Profile::regular, i);
    spec.noise_sigma = 0.0;
    RenderDetail d;
    RawSample s = render(spec, gen.sample_seed(i), gen.font(), &d);
    int gs = spec.glyph_scale;
    int half_w = (5 * gs + 6) / 2, half_h = (7 * gs + 6) / 2;
    for (std::size_t j = 0; j < spec.text.size(); ++j) {
      auto center = quad_center(d.glyph_quads[j]);
      char best = '?';
      double best_ssd = 1e300;
      for (char cand : alpha) {
        SceneSpec tpl;
        tpl.text = std::string(1, cand);
        tpl.glyph_scale = gs;
        tpl.rotation_deg = spec.rotation_deg;
        RenderDetail td;
        RawSample t = render(tpl, 1, gen.font(), &td);
        auto tc = quad_center(td.glyph_quads[0]);
        double ssd = min_shift_ssd(s.image, center[0], center[1], t.image, tc[0], tc[1],
                                   half_w, half_h);
        if (ssd < best_ssd) {
          best_ssd = ssd;
          best = cand;
        }
      }
      ++total;
      if (best == spec.text[j]) ++correct;
    }
  }
  INFO("matched ", correct, " of ", total);
  CHECK(double(correct) / total >= 0.99);
}
