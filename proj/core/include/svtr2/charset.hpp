#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace svtr2 {

// Character inventory for recognition. One entry per class; the blank class
// used by the alignment loss is NOT stored here — it is implicitly appended
// as index size() by the loss/decoder.
class Charset {
 public:
  Charset() = default;
  explicit Charset(std::vector<std::string> chars);

  // File format: UTF-8, one character per line, line index == class index.
  static Charset load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return int(chars_.size()); }
  const std::string& at(int idx) const;
  bool contains(const std::string& ch) const { return index_.count(ch) != 0; }
  int index_of(const std::string& ch) const;  // InputError if absent

  // Splits UTF-8 text into code points and maps each to its class index.
  // A code point outside the inventory raises InputError naming it.
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& label) const;

  // FNV-1a 64 over the exact serialized bytes; stored in checkpoints so a
  // model can refuse to load against a different inventory.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> chars_;
  std::unordered_map<std::string, int> index_;
};

// Splits UTF-8 into code point substrings; malformed bytes raise ParseError.
std::vector<std::string> utf8_split(const std::string& text);

}  // namespace svtr2
