#include "svtr2/charset.hpp"

#include <fstream>
#include <sstream>

#include "svtr2/common.hpp"

namespace svtr2 {

std::vector<std::string> utf8_split(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char b = static_cast<unsigned char>(text[i]);
    std::size_t len;
    if (b < 0x80)
      len = 1;
    else if ((b & 0xE0) == 0xC0)
      len = 2;
    else if ((b & 0xF0) == 0xE0)
      len = 3;
    else if ((b & 0xF8) == 0xF0)
      len = 4;
    else
      throw ParseError(str_cat("malformed UTF-8 lead byte at offset ", i));
    if (i + len > text.size())
      throw ParseError(str_cat("truncated UTF-8 sequence at offset ", i));
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80)
        throw ParseError(str_cat("malformed UTF-8 continuation at offset ", i + k));
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Charset::Charset(std::vector<std::string> chars) : chars_(std::move(chars)) {
  for (int i = 0; i < int(chars_.size()); ++i) {
    if (chars_[std::size_t(i)].empty())
      throw ConfigError(str_cat("charset entry ", i, " is empty"));
    auto [_, fresh] = index_.emplace(chars_[std::size_t(i)], i);
    if (!fresh) throw ConfigError(str_cat("duplicate charset entry '", chars_[std::size_t(i)], "'"));
  }
}

Charset Charset::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(str_cat("cannot open charset: ", path));
  std::vector<std::string> chars;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    chars.push_back(line);
  }
  if (chars.empty()) throw ParseError(str_cat("charset file is empty: ", path));
  return Charset(std::move(chars));
}

void Charset::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(str_cat("cannot write charset: ", path));
  for (const std::string& ch : chars_) out << ch << "\n";
  if (!out) throw IoError(str_cat("short write: ", path));
}

const std::string& Charset::at(int idx) const {
  if (idx < 0 || idx >= size())
    throw InputError(str_cat("class index ", idx, " outside charset of size ", size()));
  return chars_[std::size_t(idx)];
}

int Charset::index_of(const std::string& ch) const {
  auto it = index_.find(ch);
  if (it == index_.end()) throw InputError(str_cat("character '", ch, "' not in charset"));
  return it->second;
}

std::vector<int> Charset::encode(const std::string& text) const {
  std::vector<int> out;
  for (const std::string& cp : utf8_split(text)) out.push_back(index_of(cp));
  return out;
}

std::string Charset::decode(const std::vector<int>& label) const {
  std::string out;
  for (int idx : label) out += at(idx);
  return out;
}

std::uint64_t Charset::hash() const {
  std::ostringstream os;
  for (const std::string& ch : chars_) os << ch << "\n";
  std::string bytes = os.str();
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace svtr2
