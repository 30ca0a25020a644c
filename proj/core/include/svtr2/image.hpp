#pragma once

#include <array>
#include <string>
#include <vector>

#include "svtr2/common.hpp"

namespace svtr2 {

// Planar float image, values in [0,1], layout [c][h][w]. Gray images have
// c == 1; color c == 3. This is the container for everything on the data
// side of the pipeline; batches convert to Tensor<S> at assembly time.
struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c_, int h_, int w_, float fill = 0.F);

  float& at(int ch, int y, int x) {
    return data[(std::size_t(ch) * h + std::size_t(y)) * w + std::size_t(x)];
  }
  float at(int ch, int y, int x) const {
    return data[(std::size_t(ch) * h + std::size_t(y)) * w + std::size_t(x)];
  }
  std::size_t numel() const { return data.size(); }
};

// Binary PGM (P5) / PPM (P6) with maxval 255. Values map linearly to [0,1].
Image read_pnm(const std::string& path);
void write_pgm(const std::string& path, const Image& im);  // writes gray; c==3 is averaged
void write_ppm(const std::string& path, const Image& im);  // requires c==3

// Channel conversion: 1->n replicates, 3->1 averages.
Image with_channels(const Image& im, int c);

// Bilinear resize with half-pixel sample centers (the resize used by the
// size-bucketing pipeline). Output values stay within the input range.
Image resize_bilinear(const Image& im, int out_h, int out_w);

// Rotate counterclockwise by `deg` about the image center onto a canvas just
// large enough for the rotated extent; bilinear sampling, `fill` outside.
// Angles within 1e-9 degrees of a multiple of 90 take an exact integer path,
// so e.g. a 180-degree turn is a bit-exact double flip.
Image rotate(const Image& im, double deg, float fill = 0.F);

// Projective warp. `h2d` maps destination pixel centers to source pixel
// centers (row-major 3x3). Bilinear sampling, `fill` outside.
Image warp_perspective(const Image& im, const std::array<double, 9>& dst_to_src,
                       int out_h, int out_w, float fill = 0.F);

// Solve for the 3x3 homography H (row-major, H[8] normalized to 1) with
// H * src[i] ~ dst[i] for four point pairs. Throws InputError if degenerate.
std::array<double, 9> solve_homography(const std::array<std::array<double, 2>, 4>& src,
                                       const std::array<std::array<double, 2>, 4>& dst);

// 1-D horizontal motion blur with a box kernel of odd length `len`.
Image motion_blur_h(const Image& im, int len);

// Adds N(0, sigma^2) noise elementwise and clamps to [0,1].
Image add_gaussian_noise(const Image& im, double sigma, Rng& rng);

}  // namespace svtr2
