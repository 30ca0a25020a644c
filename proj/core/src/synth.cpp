#include "svtr2/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "svtr2/common.hpp"

namespace svtr2 {

namespace {

// Block letterforms, 7 rows x 5 cols, '#' = ink. Indexed by letter - 'a'.
constexpr const char* kGlyphRows[26][7] = {
    {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // a
    {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."},  // b
    {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."},  // c
    {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."},  // d
    {"#####", "#....", "#....", "####.", "#....", "#....", "#####"},  // e
    {"#####", "#....", "#....", "####.", "#....", "#....", "#...."},  // f
    {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."},  // g
    {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // h
    {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"},  // i
    {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."},  // j
    {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"},  // k
    {"#....", "#....", "#....", "#....", "#....", "#....", "#####"},  // l
    {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"},  // m
    {"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"},  // n
    {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // o
    {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."},  // p
    {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"},  // q
    {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"},  // r
    {".####", "#....", "#....", ".###.", "....#", "....#", "####."},  // s
    {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."},  // t
    {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // u
    {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."},  // v
    {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"},  // w
    {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"},  // x
    {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."},  // y
    {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"},  // z
};

}  // namespace

GlyphFont GlyphFont::basic(const std::string& alphabet) {
  if (alphabet.empty()) throw InputError("font alphabet is empty");
  GlyphFont f;
  f.alphabet_ = alphabet;
  for (char c : alphabet) {
    if (c < 'a' || c > 'z') throw InputError(str_cat("no glyph for character '", c, "'"));
    int gi = c - 'a';
    if (f.present_[std::size_t(gi)])
      throw InputError(str_cat("duplicate alphabet character '", c, "'"));
    f.present_[std::size_t(gi)] = true;
    for (int r = 0; r < kRows; ++r)
      for (int x = 0; x < kCols; ++x)
        f.glyphs_[std::size_t(gi)][std::size_t(r * kCols + x)] =
            kGlyphRows[gi][r][x] == '#' ? 1 : 0;
  }
  return f;
}

bool GlyphFont::has(char c) const {
  return c >= 'a' && c <= 'z' && present_[std::size_t(c - 'a')];
}

const std::array<std::uint8_t, GlyphFont::kRows * GlyphFont::kCols>& GlyphFont::glyph(
    char c) const {
  if (!has(c)) throw InputError(str_cat("character '", c, "' not in font"));
  return glyphs_[std::size_t(c - 'a')];
}

namespace {

struct Box {
  int x0, y0, w, h;
};

// Forward map of an input-canvas point through the same rotation rotate()
// applies (counterclockwise, centered canvases).
std::array<double, 2> rotate_point(double x, double y, double deg, int in_h, int in_w,
                                   int out_h, int out_w) {
  double rad = deg * (3.14159265358979323846 / 180.0);
  double c = std::cos(rad), s = std::sin(rad);
  for (double exact : {-1.0, 0.0, 1.0}) {
    if (std::abs(c - exact) < 1e-9) c = exact;
    if (std::abs(s - exact) < 1e-9) s = exact;
  }
  double dx = x - 0.5 * (in_w - 1), dy = y - 0.5 * (in_h - 1);
  // rotate() maps output offsets through [c -s; s c] to input offsets, so the
  // forward direction is the transpose.
  return {c * dx + s * dy + 0.5 * (out_w - 1), -s * dx + c * dy + 0.5 * (out_h - 1)};
}

bool point_in_quad(const std::array<std::array<double, 2>, 4>& q, double px, double py) {
  // Convex quad, corners in perimeter order; inside = consistent cross signs.
  double sign = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = q[std::size_t(i)];
    const auto& b = q[std::size_t((i + 1) % 4)];
    double cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    if (std::abs(cross) < 1e-12) continue;
    if (sign == 0.0)
      sign = cross > 0 ? 1.0 : -1.0;
    else if ((cross > 0 ? 1.0 : -1.0) != sign)
      return false;
  }
  return true;
}

}  // namespace

RawSample render(const SceneSpec& spec, std::uint64_t seed, const GlyphFont& font,
                 RenderDetail* detail) {
  if (spec.text.empty()) throw InputError("render: empty text");
  if (spec.glyph_scale < 1)
    throw InputError(str_cat("render: glyph_scale must be >= 1, got ", spec.glyph_scale));
  for (char c : spec.text)
    if (!font.has(c)) throw InputError(str_cat("character '", c, "' not in font"));

  int L = int(spec.text.size());
  int s = spec.glyph_scale;
  int gw = GlyphFont::kCols * s, gh = GlyphFont::kRows * s;
  int gap = s, margin = 2 * s;
  bool horiz = spec.layout == Layout::horizontal;
  int amp = spec.curvature > 0 ? int(std::ceil(spec.curvature * gh)) : 0;

  int w0, h0;
  if (horiz) {
    w0 = 2 * margin + L * gw + (L - 1) * gap;
    h0 = 2 * margin + gh + amp;
  } else {
    w0 = 2 * margin + gw + amp;
    h0 = 2 * margin + L * gh + (L - 1) * gap;
  }
  Image canvas(1, h0, w0, 0.F);

  std::vector<Box> boxes;
  boxes.reserve(std::size_t(L));
  for (int i = 0; i < L; ++i) {
    double t = L > 1 ? double(i) / (L - 1) : 0.5;
    int arc = amp > 0 ? int(std::lround(amp * std::sin(3.14159265358979323846 * t))) : 0;
    Box b;
    if (horiz) {
      b.x0 = margin + i * (gw + gap);
      b.y0 = margin + arc;
    } else {
      b.x0 = margin + arc;
      b.y0 = margin + i * (gh + gap);
    }
    b.w = gw;
    b.h = gh;
    const auto& g = font.glyph(spec.text[std::size_t(i)]);
    for (int r = 0; r < GlyphFont::kRows; ++r)
      for (int cx = 0; cx < GlyphFont::kCols; ++cx) {
        if (!g[std::size_t(r * GlyphFont::kCols + cx)]) continue;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx)
            canvas.at(0, b.y0 + r * s + dy, b.x0 + cx * s + dx) = 1.F;
      }
    boxes.push_back(b);
  }

  Image out = spec.rotation_deg != 0.0 ? rotate(canvas, spec.rotation_deg, 0.F) : canvas;

  // Post-rotation character quads, padded so bilinear bleed is covered but
  // neighbours (one `gap` away) are not clipped.
  double pad = std::min(1.25, gap - 0.5);
  std::vector<std::array<std::array<double, 2>, 4>> quads;
  quads.reserve(std::size_t(L));
  for (const Box& b : boxes) {
    double x0 = b.x0 - pad, y0 = b.y0 - pad;
    double x1 = b.x0 + b.w - 1 + pad, y1 = b.y0 + b.h - 1 + pad;
    quads.push_back({rotate_point(x0, y0, spec.rotation_deg, h0, w0, out.h, out.w),
                     rotate_point(x1, y0, spec.rotation_deg, h0, w0, out.h, out.w),
                     rotate_point(x1, y1, spec.rotation_deg, h0, w0, out.h, out.w),
                     rotate_point(x0, y1, spec.rotation_deg, h0, w0, out.h, out.w)});
  }

  Rng rng(hash_words({seed, 0x72656e64ULL}));
  std::vector<int> masked;
  int n_mask = std::clamp(int(std::lround(spec.occlusion_frac * L)), 0, L);
  if (n_mask > 0) {
    std::vector<int> order(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) order[std::size_t(i)] = i;
    rng.shuffle(order);
    masked.assign(order.begin(), order.begin() + n_mask);
    std::sort(masked.begin(), masked.end());
    for (int mi : masked) {
      const auto& q = quads[std::size_t(mi)];
      double lox = q[0][0], hix = q[0][0], loy = q[0][1], hiy = q[0][1];
      for (const auto& p : q) {
        lox = std::min(lox, p[0]);
        hix = std::max(hix, p[0]);
        loy = std::min(loy, p[1]);
        hiy = std::max(hiy, p[1]);
      }
      for (int y = std::max(0, int(std::floor(loy))); y <= std::min(out.h - 1, int(std::ceil(hiy))); ++y)
        for (int x = std::max(0, int(std::floor(lox))); x <= std::min(out.w - 1, int(std::ceil(hix))); ++x)
          if (point_in_quad(q, x, y)) out.at(0, y, x) = 0.F;
    }
  }

  if (spec.noise_sigma > 0) out = add_gaussian_noise(out, spec.noise_sigma, rng);

  if (detail) {
    detail->glyph_quads = quads;
    detail->masked_indices = masked;
  }

  RawSample sample;
  sample.image = std::move(out);
  sample.label.reserve(std::size_t(L));
  for (char c : spec.text)
    sample.label.push_back(int(font.alphabet().find(c)));
  return sample;
}

std::vector<std::string> make_lexicon(const std::string& alphabet, int words_per_length) {
  if (alphabet.empty()) throw InputError("make_lexicon: empty alphabet");
  if (words_per_length < 1) throw InputError("make_lexicon: words_per_length must be >= 1");
  Rng rng(hash_words({0x4c455849434f4eULL, fnv1a64(alphabet.data(), alphabet.size())}));
  std::vector<std::string> lex;
  for (int len = 1; len <= 8; ++len) {
    std::set<std::string> seen;
    double space = std::pow(double(alphabet.size()), len);
    int want = int(std::min<double>(words_per_length, space));
    int attempts = 0;
    while (int(seen.size()) < want && attempts < want * 64) {
      std::string w;
      for (int k = 0; k < len; ++k)
        w.push_back(alphabet[std::size_t(rng.uniform_int(0, std::int64_t(alphabet.size()) - 1))]);
      seen.insert(w);
      ++attempts;
    }
    lex.insert(lex.end(), seen.begin(), seen.end());
  }
  return lex;
}

Profile parse_profile(const std::string& name) {
  if (name == "regular") return Profile::regular;
  if (name == "rotated") return Profile::rotated;
  if (name == "curved") return Profile::curved;
  if (name == "occluded") return Profile::occluded;
  if (name == "long") return Profile::long_text;
  if (name == "mixed") return Profile::mixed;
  throw ConfigError(str_cat("unknown profile '", name,
                            "' (expected regular|rotated|curved|occluded|long|mixed)"));
}

std::string profile_name(Profile p) {
  switch (p) {
    case Profile::regular: return "regular";
    case Profile::rotated: return "rotated";
    case Profile::curved: return "curved";
    case Profile::occluded: return "occluded";
    case Profile::long_text: return "long";
    case Profile::mixed: return "mixed";
  }
  throw ConfigError("invalid profile value");
}

SynthGenerator::SynthGenerator(std::string alphabet, std::uint64_t seed)
    : alphabet_(std::move(alphabet)),
      seed_(seed),
      font_(GlyphFont::basic(alphabet_)),
      lexicon_(make_lexicon(alphabet_)) {}

std::uint64_t SynthGenerator::sample_seed(int index) const {
  return hash_words({seed_, std::uint64_t(index)});
}

namespace {

// Picks a lexicon word of exactly `len` characters.
std::string word_of_length(const std::vector<std::string>& lex, int len, Rng& rng) {
  std::vector<std::string> pool;
  for (const std::string& w : lex)
    if (int(w.size()) == len) pool.push_back(w);
  if (pool.empty()) throw StateError(str_cat("lexicon has no words of length ", len));
  return rng.pick(pool);
}

}  // namespace

SceneSpec SynthGenerator::spec_for(Profile p, int index, Profile* effective) const {
  Rng rng(sample_seed(index));
  Profile eff = p;
  if (p == Profile::mixed) {
    static constexpr Profile kAll[] = {Profile::regular, Profile::rotated, Profile::curved,
                                       Profile::occluded, Profile::long_text};
    eff = kAll[std::size_t(rng.uniform_int(0, 4))];
  }
  if (effective) *effective = eff;

  SceneSpec spec;
  spec.glyph_scale = int(rng.uniform_int(2, 4));
  switch (eff) {
    case Profile::regular: {
      int len = int(rng.uniform_int(1, 8));
      spec.text = word_of_length(lexicon_, len, rng);
      spec.rotation_deg = rng.uniform(-5.0, 5.0);
      break;
    }
    case Profile::rotated: {
      int len = int(rng.uniform_int(1, 8));
      spec.text = word_of_length(lexicon_, len, rng);
      double base = 90.0 * double(rng.uniform_int(1, 3));
      spec.rotation_deg = base + rng.uniform(-10.0, 10.0);
      break;
    }
    case Profile::curved: {
      int len = int(rng.uniform_int(3, 8));
      spec.text = word_of_length(lexicon_, len, rng);
      spec.curvature = rng.uniform(0.5, 1.0);
      break;
    }
    case Profile::occluded: {
      int len = int(rng.uniform_int(3, 8));
      spec.text = word_of_length(lexicon_, len, rng);
      double lo = std::max(0.1, 0.6 / len), hi = std::min(0.3, 1.4 / len);
      spec.occlusion_frac = rng.uniform(lo, hi);  // rounds to exactly one char
      break;
    }
    case Profile::long_text: {
      int target = int(rng.uniform_int(26, 35));
      spec.glyph_scale = int(rng.uniform_int(2, 3));
      std::string text;
      int rem = target;
      while (rem > 0) {
        int len = rem <= 8 ? rem : int(rng.uniform_int(3, std::min<std::int64_t>(8, rem - 1)));
        text += word_of_length(lexicon_, len, rng);
        rem -= len;
      }
      spec.text = text;
      spec.rotation_deg = rng.uniform(-3.0, 3.0);
      break;
    }
    case Profile::mixed:
      throw StateError("mixed profile must resolve before spec construction");
  }
  return spec;
}

RawSample SynthGenerator::sample_for(Profile p, int index, RenderDetail* detail) const {
  SceneSpec spec = spec_for(p, index);
  return render(spec, hash_words({sample_seed(index), 0x696d67ULL}), font_, detail);
}

void make_dataset(Profile p, int n, std::uint64_t seed, const std::string& out_dir,
                  const std::string& alphabet) {
  if (n < 1) throw InputError(str_cat("make_dataset: n must be >= 1, got ", n));
  namespace fs = std::filesystem;
  fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError(str_cat("cannot create ", (root / "images").string(), ": ", ec.message()));

  SynthGenerator gen(alphabet, seed);
  std::vector<std::string> chars;
  for (char c : alphabet) chars.emplace_back(1, c);
  Charset(chars).save((root / "charset.txt").string());

  std::ofstream manifest(root / "manifest.tsv", std::ios::binary);
  if (!manifest) throw IoError(str_cat("cannot write ", (root / "manifest.tsv").string()));
  for (int i = 0; i < n; ++i) {
    Profile eff = p;
    SceneSpec spec = gen.spec_for(p, i, &eff);
    RawSample s = render(spec, hash_words({gen.sample_seed(i), 0x696d67ULL}), gen.font());
    char name[64];
    std::snprintf(name, sizeof name, "images/%05d_%s.pgm", i, profile_name(eff).c_str());
    write_pgm((root / name).string(), s.image);
    manifest << name << "\t" << spec.text << "\n";
  }
  if (!manifest) throw IoError(str_cat("short write: ", (root / "manifest.tsv").string()));
}

RawSample augment(const RawSample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
  Rng rng(hash_words({seed, 0x617567ULL}));
  RawSample out;
  out.label = sample.label;
  out.source_id = sample.source_id;
  out.image = sample.image;
  if (cfg.p_rotate > 0 && rng.bernoulli(cfg.p_rotate))
    out.image = rotate(out.image, rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg), 0.F);
  if (cfg.p_perspective > 0 && rng.bernoulli(cfg.p_perspective)) {
    double jw = cfg.max_corner_jitter * out.image.w, jh = cfg.max_corner_jitter * out.image.h;
    double w1 = out.image.w - 1.0, h1 = out.image.h - 1.0;
    std::array<std::array<double, 2>, 4> rect{{{0, 0}, {w1, 0}, {w1, h1}, {0, h1}}};
    std::array<std::array<double, 2>, 4> quad = rect;
    for (auto& pnt : quad) {
      pnt[0] += rng.uniform(-jw, jw);
      pnt[1] += rng.uniform(-jh, jh);
    }
    // The warp maps destination pixels to jittered source locations.
    out.image = warp_perspective(out.image, solve_homography(rect, quad), out.image.h,
                                 out.image.w, 0.F);
  }
  if (cfg.p_blur > 0 && rng.bernoulli(cfg.p_blur)) {
    int half = int(rng.uniform_int(1, std::max(1, cfg.max_blur_len / 2)));
    out.image = motion_blur_h(out.image, 2 * half + 1);
  }
  if (cfg.p_noise > 0 && rng.bernoulli(cfg.p_noise)) {
    Rng nrng = rng.child(0x6e6f697365ULL);
    out.image = add_gaussian_noise(out.image, rng.uniform(0.0, cfg.max_noise_sigma), nrng);
  }
  return out;
}

}  // namespace svtr2
