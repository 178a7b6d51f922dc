#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxseq/error.hpp"

namespace ctxseq {

// Reserved token ids, fixed for every vocabulary.
enum SpecialToken : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kUnk = 3,
  kSep = 4,
  kNumSpecial = 5,
};

// Splits UTF-8 text into single-codepoint tokens. Invalid bytes become
// U+FFFD so downstream code never sees malformed sequences.
std::vector<std::string> utf8_chars(const std::string& text);

// Bidirectional character/token <-> id map with the five reserved ids.
// Immutable after construction and freely shareable across threads.
class Vocabulary {
 public:
  Vocabulary();

  // Deterministic construction from token counts: count desc, then token
  // lexicographic (byte order). Tokens under min_count are dropped (they
  // encode to UNK).
  static Vocabulary build(const std::vector<std::string>& texts, int min_count = 1);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int token_id(const std::string& token) const;  // UNK when absent
  const std::string& token(int id) const;        // IndexError when out of range
  bool contains(const std::string& token) const;

  std::vector<int> encode(const std::string& text) const;
  // Inverse of encode on OOV-free text; reserved ids render as their
  // <pad>/<bos>/... names.
  std::string decode(const std::vector<int>& ids) const;
  // Chat-facing form: stops at EOS, skips the other reserved ids.
  std::string decode_text(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // CRC32 of the serialized form; the checkpoint compatibility reference.
  uint32_t content_hash() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;

  void push_token(const std::string& tok);
  std::string serialize() const;
};

}  // namespace ctxseq
