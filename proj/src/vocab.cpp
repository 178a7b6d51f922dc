#include "ctxseq/vocab.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace ctxseq {

namespace {

const char* kSpecialNames[kNumSpecial] = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
const char* kVocabHeader = "ctxseq-vocab v1";

int utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return -1;
}

}  // namespace

std::vector<std::string> utf8_chars(const std::string& text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    int len = utf8_len(static_cast<unsigned char>(text[i]));
    if (len < 0 || i + len > text.size()) {
      out.push_back("\xef\xbf\xbd");  // U+FFFD
      ++i;
      continue;
    }
    bool ok = true;
    for (int j = 1; j < len; ++j) {
      if ((static_cast<unsigned char>(text[i + j]) >> 6) != 0x2) ok = false;
    }
    if (!ok) {
      out.push_back("\xef\xbf\xbd");
      ++i;
      continue;
    }
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (int i = 0; i < kNumSpecial; ++i) push_token(kSpecialNames[i]);
}

void Vocabulary::push_token(const std::string& tok) {
  token_to_id_.emplace(tok, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(tok);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, int min_count) {
  if (texts.empty()) throw CorpusError("build_vocab: empty corpus stream");
  // std::map gives the lexicographic ordering for the tie-break.
  std::map<std::string, long> counts;
  bool any = false;
  for (const auto& t : texts) {
    for (auto& ch : utf8_chars(t)) {
      ++counts[ch];
      any = true;
    }
  }
  if (!any) throw CorpusError("build_vocab: corpus contains no characters");
  std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, count] : ordered) {
    if (count < min_count) continue;
    v.push_token(tok);
  }
  return v;
}

int Vocabulary::token_id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(size()));
  }
  return id_to_token_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (auto& ch : utf8_chars(text)) ids.push_back(token_id(ch));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

std::string Vocabulary::decode_text(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id < kNumSpecial) continue;
    out += token(id);
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  os << kVocabHeader << "\n";
  for (int id = kNumSpecial; id < size(); ++id) os << id_to_token_[static_cast<size_t>(id)] << "\n";
  return os.str();
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CorpusError("cannot open vocabulary file for writing: " + path);
  f << serialize();
  if (!f) throw CorpusError("failed to write vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorpusError("cannot open vocabulary file: " + path);
  std::string line;
  if (!std::getline(f, line) || line != kVocabHeader) {
    throw CorpusError("bad vocabulary header in " + path);
  }
  Vocabulary v;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (v.contains(line)) throw CorpusError("duplicate token in vocabulary file: " + path);
    v.push_token(line);
  }
  return v;
}

uint32_t Vocabulary::content_hash() const {
  const std::string s = serialize();
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

}  // namespace ctxseq
