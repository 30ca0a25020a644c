#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "svtr2/image.hpp"
#include "svtr2/msr.hpp"

namespace svtr2 {

// 7x5 binary glyphs for lowercase a..z. Block letterforms: distinct, pixel
// exact, and free of external font files.
class GlyphFont {
 public:
  static constexpr int kRows = 7;
  static constexpr int kCols = 5;

  // Font restricted to `alphabet` (each char must be in a..z, no repeats).
  static GlyphFont basic(const std::string& alphabet);

  bool has(char c) const;
  // Row-major 7x5 bitmap, 1 = ink.
  const std::array<std::uint8_t, kRows * kCols>& glyph(char c) const;
  const std::string& alphabet() const { return alphabet_; }

 private:
  std::string alphabet_;
  std::array<std::array<std::uint8_t, kRows * kCols>, 26> glyphs_{};
  std::array<bool, 26> present_{};
};

enum class Layout { horizontal, vertical };

// Full description of one rendered scene. Rendering is deterministic in
// (spec, seed, font); the seed only feeds noise and occlusion-target choice.
struct SceneSpec {
  std::string text;
  double rotation_deg = 0.0;   // counterclockwise
  double curvature = 0.0;      // 0 = straight baseline, 1 = strongest arc
  double occlusion_frac = 0.0; // fraction of characters to mask (rounded)
  double noise_sigma = 0.0;
  int glyph_scale = 2;         // integer pixel replication factor
  Layout layout = Layout::horizontal;
};

// Introspection for tests: where each character landed and what was masked.
struct RenderDetail {
  // Post-rotation glyph bounding quads, corner order TL,TR,BR,BL.
  std::vector<std::array<std::array<double, 2>, 4>> glyph_quads;
  std::vector<int> masked_indices;
};

// Composes glyphs along a straight or curved baseline, rotates, masks whole
// characters, adds noise. Gray canvas, ink=1 on background=0, values [0,1].
// The label holds alphabet positions of the text characters.
RawSample render(const SceneSpec& spec, std::uint64_t seed, const GlyphFont& font,
                 RenderDetail* detail = nullptr);

// Deterministic pseudo-word inventory: for each length 1..8, up to
// `words_per_length` distinct words over `alphabet`. Fixed internal seed so
// every dataset built from the same alphabet shares one lexicon (this is
// what makes masked-character inference learnable).
std::vector<std::string> make_lexicon(const std::string& alphabet, int words_per_length = 40);

enum class Profile { regular, rotated, curved, occluded, long_text, mixed };

Profile parse_profile(const std::string& name);  // ConfigError on unknown
std::string profile_name(Profile p);

inline constexpr const char* kDefaultAlphabet = "abcdefghijkl";
inline constexpr const char* kTestAlphabet = "abcdefghijklmnopqrstuvwxyz";

// Deterministic scene source: sample i of a (alphabet, seed, profile) stream
// is a pure function of those values, so datasets are reproducible byte for
// byte and rendering can fan out across workers.
class SynthGenerator {
 public:
  SynthGenerator(std::string alphabet, std::uint64_t seed);

  const GlyphFont& font() const { return font_; }
  const std::vector<std::string>& lexicon() const { return lexicon_; }
  std::uint64_t sample_seed(int index) const;

  // `effective` receives the resolved profile (mixed picks one per sample).
  SceneSpec spec_for(Profile p, int index, Profile* effective = nullptr) const;
  RawSample sample_for(Profile p, int index, RenderDetail* detail = nullptr) const;

 private:
  std::string alphabet_;
  std::uint64_t seed_;
  GlyphFont font_;
  std::vector<std::string> lexicon_;
};

// Writes images/NNNNN_<profile>.pgm, manifest.tsv, charset.txt under out_dir.
// Byte-deterministic in (profile, n, seed, alphabet).
void make_dataset(Profile p, int n, std::uint64_t seed, const std::string& out_dir,
                  const std::string& alphabet = kDefaultAlphabet);

// Training-time augmentation: random subset of small rotation, perspective
// jitter, horizontal motion blur, and Gaussian noise. Label untouched.
struct AugmentConfig {
  double p_rotate = 0.3;
  double p_perspective = 0.3;
  double p_blur = 0.3;
  double p_noise = 0.3;
  double max_rotate_deg = 15.0;
  double max_corner_jitter = 0.04;  // fraction of each image extent
  int max_blur_len = 7;             // odd
  double max_noise_sigma = 0.08;
};

RawSample augment(const RawSample& sample, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace svtr2
