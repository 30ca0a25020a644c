#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svtr2/charset.hpp"
#include "svtr2/image.hpp"
#include "svtr2/tensor.hpp"

namespace svtr2 {

// One labeled text image. Images keep their source channel count (gray stays
// planar gray); batch assembly expands to 3 channels.
struct RawSample {
  Image image;
  std::vector<int> label;     // class indices per charset
  std::string source_id;      // manifest-relative path (not necessarily unique)
};

enum class BucketId { R1, R2, R3, R4 };

struct AspectBucket {
  BucketId id;
  int height = 0;
  int width = 0;
};

// Longest supported shape multiplier for very wide images: aspect ratios
// beyond 24 are squeezed to width 768 to bound activation memory.
inline constexpr int kMaxWidthMultiple = 24;

// Aspect-ratio bucketing. R = width/height:
//   R < 1.5          -> (64, 64)
//   1.5 <= R < 2.5   -> (48, 96)
//   2.5 <= R < 3.5   -> (40, 112)
//   R >= 3.5         -> (32, max(floor(R), 3) * 32), floor(R) capped at 24
AspectBucket compute_bucket(int height, int width);

enum class ResizeMode { msr, fixed32x128, fixed64x256 };

ResizeMode parse_resize_mode(const std::string& name);  // ConfigError on unknown
std::string resize_mode_name(ResizeMode mode);

// Target size for one image under the given mode (fixed modes ignore shape).
AspectBucket target_for(ResizeMode mode, int height, int width);

// A size-homogeneous minibatch: indices into the sample list plus the common
// target extent every member is resized to.
struct Batch {
  std::vector<int> sample_indices;
  int height = 0;
  int width = 0;
};

struct BatchManifest {
  std::vector<Batch> batches;
  std::uint64_t seed = 0;
};

// Groups samples by target size (for the variable-width bucket, by width),
// shuffles within groups and across batches with `seed`, keeps the last
// partial batch. Every sample appears in exactly one batch.
BatchManifest build_batches(const std::vector<RawSample>& samples, int batch_size,
                            std::uint64_t seed, ResizeMode mode = ResizeMode::msr);

// Manifest format: UTF-8 text, one `<relative-image-path>\t<label>` per line.
// Image paths resolve relative to the manifest's directory. Labels must
// encode under `charset`. Malformed lines report their 1-based line number.
std::vector<RawSample> load_manifest(const std::string& manifest_path, const Charset& charset);

// Resizes every member of `batch` to its target extent and packs a
// [B, 3, h, w] input tensor (values in [0,1], gray replicated to 3 planes).
template <class S>
Tensor<S> assemble_batch(const std::vector<RawSample>& samples, const Batch& batch) {
  int b = int(batch.sample_indices.size());
  Tensor<S> out = Tensor<S>::zeros({b, 3, batch.height, batch.width});
  S* dst = out.data();
  std::size_t plane = std::size_t(batch.height) * batch.width;
  for (int i = 0; i < b; ++i) {
    const RawSample& s = samples[std::size_t(batch.sample_indices[std::size_t(i)])];
    Image r = resize_bilinear(s.image, batch.height, batch.width);
    Image r3 = with_channels(r, 3);
    for (std::size_t k = 0; k < 3 * plane; ++k) dst[std::size_t(i) * 3 * plane + k] = S(r3.data[k]);
  }
  return out;
}

}  // namespace svtr2
