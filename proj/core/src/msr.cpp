#include "svtr2/msr.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "svtr2/common.hpp"

namespace svtr2 {

AspectBucket compute_bucket(int height, int width) {
  if (height <= 0 || width <= 0)
    throw InputError(str_cat("image extent must be positive, got ", height, "x", width));
  double r = double(width) / double(height);
  if (r < 1.5) return {BucketId::R1, 64, 64};
  if (r < 2.5) return {BucketId::R2, 48, 96};
  if (r < 3.5) return {BucketId::R3, 40, 112};
  int mult = std::clamp(int(std::floor(r)), 3, kMaxWidthMultiple);
  return {BucketId::R4, 32, mult * 32};
}

ResizeMode parse_resize_mode(const std::string& name) {
  if (name == "msr") return ResizeMode::msr;
  if (name == "fixed32x128") return ResizeMode::fixed32x128;
  if (name == "fixed64x256") return ResizeMode::fixed64x256;
  throw ConfigError(str_cat("unknown resize mode '", name,
                            "' (expected msr|fixed32x128|fixed64x256)"));
}

std::string resize_mode_name(ResizeMode mode) {
  switch (mode) {
    case ResizeMode::msr: return "msr";
    case ResizeMode::fixed32x128: return "fixed32x128";
    case ResizeMode::fixed64x256: return "fixed64x256";
  }
  throw ConfigError("invalid resize mode value");
}

AspectBucket target_for(ResizeMode mode, int height, int width) {
  switch (mode) {
    case ResizeMode::msr: return compute_bucket(height, width);
    case ResizeMode::fixed32x128: return {BucketId::R4, 32, 128};
    case ResizeMode::fixed64x256: return {BucketId::R4, 64, 256};
  }
  throw ConfigError("invalid resize mode value");
}

BatchManifest build_batches(const std::vector<RawSample>& samples, int batch_size,
                            std::uint64_t seed, ResizeMode mode) {
  if (samples.empty()) throw InputError("build_batches: empty dataset");
  if (batch_size < 1) throw InputError(str_cat("batch size must be >= 1, got ", batch_size));
  // Group by target extent. std::map keeps key order deterministic so the
  // per-group shuffle streams don't depend on hash iteration order.
  std::map<std::pair<int, int>, std::vector<int>> groups;
  for (int i = 0; i < int(samples.size()); ++i) {
    const Image& im = samples[std::size_t(i)].image;
    AspectBucket t = target_for(mode, im.h, im.w);
    groups[{t.height, t.width}].push_back(i);
  }
  Rng rng(hash_words({seed, 0x62617463ULL}));
  BatchManifest out;
  out.seed = seed;
  for (auto& [key, idx] : groups) {
    Rng g = rng.child(hash_words({std::uint64_t(key.first), std::uint64_t(key.second)}));
    g.shuffle(idx);
    for (std::size_t start = 0; start < idx.size(); start += std::size_t(batch_size)) {
      Batch b;
      b.height = key.first;
      b.width = key.second;
      std::size_t end = std::min(idx.size(), start + std::size_t(batch_size));
      b.sample_indices.assign(idx.begin() + std::ptrdiff_t(start), idx.begin() + std::ptrdiff_t(end));
      out.batches.push_back(std::move(b));
    }
  }
  rng.shuffle(out.batches);
  return out;
}

std::vector<RawSample> load_manifest(const std::string& manifest_path, const Charset& charset) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError(str_cat("cannot open manifest: ", manifest_path));
  std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<RawSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(str_cat(manifest_path, ":", lineno, ": expected <path>\\t<label>"));
    std::string rel = line.substr(0, tab);
    std::string text = line.substr(tab + 1);
    if (rel.empty()) throw ParseError(str_cat(manifest_path, ":", lineno, ": empty image path"));
    if (text.empty()) throw ParseError(str_cat(manifest_path, ":", lineno, ": empty label"));
    RawSample s;
    try {
      s.label = charset.encode(text);
    } catch (const InputError& e) {
      throw InputError(str_cat(manifest_path, ":", lineno, ": ", e.what()));
    }
    s.image = read_pnm((base / rel).string());
    if (s.image.h < 8 || s.image.w < 8)
      throw InputError(str_cat(manifest_path, ":", lineno, ": image smaller than 8x8 (",
                               s.image.h, "x", s.image.w, ")"));
    s.source_id = rel;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace svtr2
