#include "svtr2/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace svtr2 {

Image::Image(int c_, int h_, int w_, float fill) : c(c_), h(h_), w(w_) {
  if (c <= 0 || h <= 0 || w <= 0)
    throw InputError(str_cat("image dims must be positive, got c=", c, " h=", h, " w=", w));
  data.assign(std::size_t(c) * h * w, fill);
}

namespace {

// Reads one PNM header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(char(ch));
  }
  return tok;
}

int pnm_int(std::istream& in, const char* what) {
  std::string tok = pnm_token(in);
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError(str_cat("bad PNM ", what, ": '", tok, "'"));
  return std::stoi(tok);
}

}  // namespace

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(str_cat("cannot open image: ", path));
  std::string magic = pnm_token(in);
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw ParseError(str_cat("unsupported image magic '", magic, "' in ", path));
  int w = pnm_int(in, "width");
  int h = pnm_int(in, "height");
  int maxval = pnm_int(in, "maxval");
  if (w <= 0 || h <= 0) throw ParseError(str_cat("bad PNM size ", w, "x", h, " in ", path));
  if (maxval != 255) throw ParseError(str_cat("unsupported PNM maxval ", maxval, " in ", path));
  std::vector<unsigned char> raw(std::size_t(channels) * h * w);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (std::size_t(in.gcount()) != raw.size())
    throw ParseError(str_cat("truncated PNM payload in ", path));
  Image im(channels, h, w);
  // PNM payload is interleaved; our layout is planar.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < channels; ++ch)
        im.at(ch, y, x) = float(raw[(std::size_t(y) * w + x) * channels + ch]) / 255.F;
  return im;
}

namespace {

unsigned char quantize(float v) {
  float s = std::clamp(v, 0.F, 1.F) * 255.F;
  return static_cast<unsigned char>(std::lround(s));
}

}  // namespace

void write_pgm(const std::string& path, const Image& im) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(str_cat("cannot write image: ", path));
  out << "P5\n" << im.w << " " << im.h << "\n255\n";
  std::vector<unsigned char> raw(std::size_t(im.h) * im.w);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      float v = 0.F;
      for (int ch = 0; ch < im.c; ++ch) v += im.at(ch, y, x);
      raw[std::size_t(y) * im.w + x] = quantize(v / float(im.c));
    }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw IoError(str_cat("short write: ", path));
}

void write_ppm(const std::string& path, const Image& im) {
  if (im.c != 3) throw InputError(str_cat("PPM needs 3 channels, image has ", im.c));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(str_cat("cannot write image: ", path));
  out << "P6\n" << im.w << " " << im.h << "\n255\n";
  std::vector<unsigned char> raw(std::size_t(3) * im.h * im.w);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        raw[(std::size_t(y) * im.w + x) * 3 + ch] = quantize(im.at(ch, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw IoError(str_cat("short write: ", path));
}

Image with_channels(const Image& im, int c) {
  if (c == im.c) return im;
  Image out(c, im.h, im.w);
  if (im.c == 1) {
    for (int ch = 0; ch < c; ++ch)
      std::copy(im.data.begin(), im.data.end(),
                out.data.begin() + std::size_t(ch) * im.h * im.w);
  } else if (c == 1) {
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x) {
        float v = 0.F;
        for (int ch = 0; ch < im.c; ++ch) v += im.at(ch, y, x);
        out.at(0, y, x) = v / float(im.c);
      }
  } else {
    throw InputError(str_cat("cannot convert ", im.c, " channels to ", c));
  }
  return out;
}

Image resize_bilinear(const Image& im, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0)
    throw InputError(str_cat("resize target must be positive, got ", out_h, "x", out_w));
  if (out_h == im.h && out_w == im.w) return im;
  Image out(im.c, out_h, out_w);
  double sy = double(im.h) / out_h;
  double sx = double(im.w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;  // half-pixel centers
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, im.h - 1);
    int y1c = std::clamp(y0 + 1, 0, im.h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, im.w - 1);
      int x1c = std::clamp(x0 + 1, 0, im.w - 1);
      for (int ch = 0; ch < im.c; ++ch) {
        double top = (1.0 - wx) * im.at(ch, y0c, x0c) + wx * im.at(ch, y0c, x1c);
        double bot = (1.0 - wx) * im.at(ch, y1c, x0c) + wx * im.at(ch, y1c, x1c);
        out.at(ch, oy, ox) = float((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

namespace {

// Snaps cos/sin of near-right angles to exact values so 90/180/270-degree
// turns are pure index permutations (no resampling blur).
void rot_coeffs(double deg, double& c, double& s) {
  double rad = deg * (3.14159265358979323846 / 180.0);
  c = std::cos(rad);
  s = std::sin(rad);
  for (double exact : {-1.0, 0.0, 1.0}) {
    if (std::abs(c - exact) < 1e-9) c = exact;
    if (std::abs(s - exact) < 1e-9) s = exact;
  }
}

float sample_bilinear(const Image& im, int ch, double fy, double fx, float fill) {
  int y0 = int(std::floor(fy));
  int x0 = int(std::floor(fx));
  double wy = fy - y0, wx = fx - x0;
  auto px = [&](int y, int x) -> double {
    if (y < 0 || y >= im.h || x < 0 || x >= im.w) return fill;
    return im.at(ch, y, x);
  };
  double top = (1.0 - wx) * px(y0, x0) + wx * px(y0, x0 + 1);
  double bot = (1.0 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1);
  return float((1.0 - wy) * top + wy * bot);
}

}  // namespace

Image rotate(const Image& im, double deg, float fill) {
  double c, s;
  rot_coeffs(deg, c, s);
  // Canvas = bounding box of the rotated extent.
  int out_w = int(std::ceil(std::abs(c) * im.w + std::abs(s) * im.h - 1e-9));
  int out_h = int(std::ceil(std::abs(s) * im.w + std::abs(c) * im.h - 1e-9));
  Image out(im.c, out_h, out_w, fill);
  double cx_in = 0.5 * (im.w - 1), cy_in = 0.5 * (im.h - 1);
  double cx_out = 0.5 * (out_w - 1), cy_out = 0.5 * (out_h - 1);
  bool exact = (c == std::floor(c)) && (s == std::floor(s));
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      // Inverse map: rotate the destination offset by -deg.
      double dx = ox - cx_out, dy = oy - cy_out;
      double fx = c * dx - s * dy + cx_in;  // y axis points down, so the
      double fy = s * dx + c * dy + cy_in;  // screen-CCW inverse is [c -s; s c]
      if (exact) {
        long xi = std::lround(fx), yi = std::lround(fy);
        for (int ch = 0; ch < im.c; ++ch)
          out.at(ch, oy, ox) = (xi < 0 || xi >= im.w || yi < 0 || yi >= im.h)
                                   ? fill
                                   : im.at(ch, int(yi), int(xi));
      } else {
        for (int ch = 0; ch < im.c; ++ch)
          out.at(ch, oy, ox) = sample_bilinear(im, ch, fy, fx, fill);
      }
    }
  return out;
}

Image warp_perspective(const Image& im, const std::array<double, 9>& m, int out_h,
                       int out_w, float fill) {
  Image out(im.c, out_h, out_w, fill);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      double d = m[6] * ox + m[7] * oy + m[8];
      if (std::abs(d) < 1e-12) continue;
      double fx = (m[0] * ox + m[1] * oy + m[2]) / d;
      double fy = (m[3] * ox + m[4] * oy + m[5]) / d;
      for (int ch = 0; ch < im.c; ++ch) out.at(ch, oy, ox) = sample_bilinear(im, ch, fy, fx, fill);
    }
  return out;
}

std::array<double, 9> solve_homography(const std::array<std::array<double, 2>, 4>& src,
                                       const std::array<std::array<double, 2>, 4>& dst) {
  // Standard 8x8 DLT system with h22 fixed to 1, solved by Gaussian
  // elimination with partial pivoting.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    double x = src[i][0], y = src[i][1], u = dst[i][0], v = dst[i][1];
    double r0[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
    double r1[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
    std::copy(r0, r0 + 9, a[2 * i]);
    std::copy(r1, r1 + 9, a[2 * i + 1]);
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) throw InputError("degenerate homography points");
    std::swap_ranges(a[col], a[col] + 9, a[piv]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      double f = a[r][col] / a[col][col];
      for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::array<double, 9> h{};
  for (int i = 0; i < 8; ++i) h[std::size_t(i)] = a[i][8] / a[i][i];
  h[8] = 1.0;
  return h;
}

Image motion_blur_h(const Image& im, int len) {
  if (len < 1 || len % 2 == 0) throw InputError(str_cat("blur length must be odd >=1, got ", len));
  if (len == 1) return im;
  Image out(im.c, im.h, im.w);
  int r = len / 2;
  for (int ch = 0; ch < im.c; ++ch)
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) acc += im.at(ch, y, std::clamp(x + k, 0, im.w - 1));
        out.at(ch, y, x) = float(acc / len);
      }
  return out;
}

Image add_gaussian_noise(const Image& im, double sigma, Rng& rng) {
  Image out = im;
  if (sigma <= 0.0) return out;
  for (float& v : out.data) v = float(std::clamp(double(v) + sigma * rng.normal(), 0.0, 1.0));
  return out;
}

}  // namespace svtr2
