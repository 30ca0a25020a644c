#include "svtr2/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "svtr2/common.hpp"

namespace svtr2 {

namespace {

using nlohmann::json;

struct ArrayRef {
  std::string name;
  const Tensor<float>* tensor;
};

std::string hex_u64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<ArrayRef> sorted_arrays(const Model<float>& model) {
  std::vector<ArrayRef> arr;
  for (const ParamEntry<float>& e : model.params().entries()) arr.push_back({e.name, &e.tensor});
  std::sort(arr.begin(), arr.end(),
            [](const ArrayRef& a, const ArrayRef& b) { return a.name < b.name; });
  return arr;
}

void write_u32(std::FILE* f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  if (std::fwrite(b, 1, 4, f) != 4) throw IoError("checkpoint: short write");
}

std::uint32_t read_u32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4)
    throw IoError(str_cat("checkpoint ", path, ": truncated header length"));
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

// f32 payloads are written as their little-endian byte patterns; this build
// targets little-endian hosts, so the in-memory layout is the file layout.
static_assert(sizeof(float) == 4, "checkpoint payload assumes 4-byte floats");

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model, const Charset& charset,
                     const std::string& phase, long long step) {
  if (phase != "A" && phase != "B" && phase != "inference")
    throw ConfigError(str_cat("checkpoint: unknown phase '", phase, "'"));
  if (charset.size() != model.config().charset_size)
    throw ConfigError(str_cat("checkpoint: charset of ", charset.size(),
                              " classes vs model built for ", model.config().charset_size));

  std::vector<ArrayRef> arrays = sorted_arrays(model);

  json inventory = json::array();
  for (const ArrayRef& a : arrays) inventory.push_back(json::array({a.name, a.tensor->shape()}));
  json chars = json::array();
  for (int i = 0; i < charset.size(); ++i) chars.push_back(charset.at(i));

  json header;
  header["format_version"] = kCheckpointVersion;
  header["arrays"] = std::move(inventory);
  header["charset"] = std::move(chars);
  header["charset_hash"] = hex_u64(charset.hash());
  header["model"] = {{"variant", variant_name(model.config().variant)},
                     {"frm_mode", frm_mode_name(model.config().frm_mode)},
                     {"charset_size", model.config().charset_size},
                     {"sgm_window", model.config().sgm_window}};
  header["phase"] = phase;
  header["step"] = step;
  const std::string head = header.dump();

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError(str_cat("checkpoint: cannot open ", path, " for writing"));
  if (std::fwrite(kCheckpointMagic, 1, 8, f.get()) != 8)
    throw IoError("checkpoint: short write");
  write_u32(f.get(), std::uint32_t(head.size()));
  if (std::fwrite(head.data(), 1, head.size(), f.get()) != head.size())
    throw IoError("checkpoint: short write");
  for (const ArrayRef& a : arrays) {
    const std::size_t n = std::size_t(a.tensor->numel());
    if (std::fwrite(a.tensor->data(), sizeof(float), n, f.get()) != n)
      throw IoError("checkpoint: short write");
  }
  if (std::fflush(f.get()) != 0) throw IoError(str_cat("checkpoint: flush failed for ", path));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError(str_cat("checkpoint: cannot open ", path));

  char magic[8];
  if (std::fread(magic, 1, 8, f.get()) != 8)
    throw IoError(str_cat("checkpoint ", path, ": truncated magic"));
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError(str_cat("checkpoint ", path, ": bad magic"));

  const std::uint32_t head_len = read_u32(f.get(), path);
  if (head_len == 0 || head_len > (64u << 20))
    throw ParseError(str_cat("checkpoint ", path, ": implausible header length ", head_len));
  std::string head(head_len, '\0');
  if (std::fread(head.data(), 1, head_len, f.get()) != head_len)
    throw IoError(str_cat("checkpoint ", path, ": truncated header"));

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw ParseError(str_cat("checkpoint ", path, ": malformed header: ", e.what()));
  }

  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion)
      throw ParseError(str_cat("checkpoint ", path, ": unsupported format version ",
                               header.at("format_version").get<int>()));

    std::vector<std::string> chars;
    for (const json& c : header.at("charset")) chars.push_back(c.get<std::string>());
    Charset charset(std::move(chars));
    if (hex_u64(charset.hash()) != header.at("charset_hash").get<std::string>())
      throw ParseError(str_cat("checkpoint ", path, ": charset hash does not match its table"));

    const json& m = header.at("model");
    ModelConfig cfg;
    cfg.variant = parse_variant(m.at("variant").get<std::string>());
    cfg.frm_mode = parse_frm_mode(m.at("frm_mode").get<std::string>());
    cfg.charset_size = m.at("charset_size").get<int>();
    cfg.sgm_window = m.at("sgm_window").get<int>();
    if (cfg.charset_size != charset.size())
      throw ParseError(str_cat("checkpoint ", path, ": model declares ", cfg.charset_size,
                               " classes but the charset holds ", charset.size()));

    const json& inventory = header.at("arrays");
    cfg.with_sgm = false;
    for (const json& a : inventory)
      if (a.at(0).get<std::string>().rfind("sgm.", 0) == 0) cfg.with_sgm = true;

    LoadedCheckpoint out{Model<float>(cfg, 0), std::move(charset),
                         header.at("phase").get<std::string>(),
                         header.at("step").get<long long>()};
    if (out.phase != "A" && out.phase != "B" && out.phase != "inference")
      throw ParseError(str_cat("checkpoint ", path, ": unknown phase '", out.phase, "'"));

    // The file inventory must be exactly the rebuilt model's parameter set.
    std::vector<ArrayRef> arrays = sorted_arrays(out.model);
    if (arrays.size() != inventory.size())
      throw ParseError(str_cat("checkpoint ", path, ": ", inventory.size(),
                               " arrays vs ", arrays.size(), " expected for this architecture"));
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const json& a = inventory[i];
      if (a.at(0).get<std::string>() != arrays[i].name)
        throw ParseError(str_cat("checkpoint ", path, ": array '", a.at(0).get<std::string>(),
                                 "' where '", arrays[i].name, "' was expected"));
      if (a.at(1).get<std::vector<int>>() != arrays[i].tensor->shape())
        throw ParseError(
            str_cat("checkpoint ", path, ": array '", arrays[i].name, "' has the wrong shape"));
    }
    for (const ArrayRef& a : arrays) {
      Tensor<float> t = *a.tensor;  // shared storage; writable view
      const std::size_t n = std::size_t(t.numel());
      if (std::fread(t.data(), sizeof(float), n, f.get()) != n)
        throw IoError(str_cat("checkpoint ", path, ": truncated payload at '", a.name, "'"));
    }
    // Trailing garbage means the file was not produced by this writer.
    char extra;
    if (std::fread(&extra, 1, 1, f.get()) == 1)
      throw ParseError(str_cat("checkpoint ", path, ": trailing bytes after payload"));
    return out;
  } catch (const json::exception& e) {
    throw ParseError(str_cat("checkpoint ", path, ": malformed header: ", e.what()));
  }
}

void strip_for_inference(const std::string& in_path, const std::string& out_path) {
  LoadedCheckpoint ckpt = load_checkpoint(in_path);
  ckpt.model.strip_sgm();
  save_checkpoint(out_path, ckpt.model, ckpt.charset, "inference", ckpt.step);
}

}  // namespace svtr2
