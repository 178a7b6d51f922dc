#include "ctxseq/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace ctxseq {

using nlohmann::json;

namespace {

json parse_line(const std::string& line, const std::string& path, size_t lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw CorpusError(path + ":" + std::to_string(lineno) + ": not a JSON object");
  }
  return j;
}

std::string require_string(const json& j, const char* field, const std::string& path,
                           size_t lineno) {
  if (!j.contains(field) || !j[field].is_string()) {
    throw CorpusError(path + ":" + std::to_string(lineno) + ": missing or non-string field \"" +
                      field + "\"");
  }
  std::string s = j[field].get<std::string>();
  if (s.empty()) {
    throw CorpusError(path + ":" + std::to_string(lineno) + ": empty \"" + std::string(field) +
                      "\"");
  }
  return s;
}

}  // namespace

std::vector<QAExample> load_qa(const std::string& path, const std::set<std::string>* expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorpusError("cannot open QA corpus: " + path);
  std::vector<QAExample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    QAExample ex;
    ex.question = require_string(j, "q", path, lineno);
    ex.answer = require_string(j, "a", path, lineno);
    ex.label = require_string(j, "label", path, lineno);
    if (expected && !expected->count(ex.label)) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": unknown label \"" + ex.label +
                        "\"");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<DialogueExample> load_dialogue(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorpusError("cannot open dialogue corpus: " + path);
  std::vector<DialogueExample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    if (!j.contains("turns") || !j["turns"].is_array()) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": missing \"turns\" array");
    }
    DialogueExample d;
    for (const auto& t : j["turns"]) {
      if (!t.is_string() || t.get<std::string>().empty()) {
        throw CorpusError(path + ":" + std::to_string(lineno) + ": empty or non-string turn");
      }
      d.turns.push_back(t.get<std::string>());
    }
    if (d.turns.size() < 2) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": dialogue needs >= 2 turns");
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_qa(const std::string& path, const std::vector<QAExample>& examples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CorpusError("cannot open for writing: " + path);
  for (const auto& ex : examples) {
    json j = {{"q", ex.question}, {"a", ex.answer}, {"label", ex.label}};
    f << j.dump() << "\n";
  }
  if (!f) throw CorpusError("failed writing: " + path);
}

void save_dialogue(const std::string& path, const std::vector<DialogueExample>& dialogues) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CorpusError("cannot open for writing: " + path);
  for (const auto& d : dialogues) {
    json j = {{"turns", d.turns}};
    f << j.dump() << "\n";
  }
  if (!f) throw CorpusError("failed writing: " + path);
}

std::vector<int> concat_context(const std::vector<std::vector<int>>& utterances, int max_len) {
  if (utterances.empty()) throw ContractError("concat_context of empty utterance list");
  std::vector<int> out;
  for (size_t i = 0; i < utterances.size(); ++i) {
    if (i) out.push_back(kSep);
    out.insert(out.end(), utterances[i].begin(), utterances[i].end());
    if (static_cast<int>(out.size()) >= max_len) break;
  }
  if (static_cast<int>(out.size()) > max_len) out.resize(static_cast<size_t>(max_len));
  return out;
}

std::vector<int> frame_target(const std::vector<int>& raw) {
  std::vector<int> out;
  out.reserve(raw.size() + 2);
  out.push_back(kBos);
  out.insert(out.end(), raw.begin(), raw.end());
  out.push_back(kEos);
  return out;
}

std::vector<TrainingPair> pairs_from_dialogue(const DialogueExample& d, const Vocabulary& vocab,
                                              int window, int max_context_len) {
  if (window < 1) throw ContractError("pairs_from_dialogue: window must be >= 1");
  std::vector<std::vector<int>> turn_ids;
  turn_ids.reserve(d.turns.size());
  for (const auto& t : d.turns) turn_ids.push_back(vocab.encode(t));

  std::vector<TrainingPair> out;
  for (size_t i = 0; i + 1 < turn_ids.size(); ++i) {
    TrainingPair p;
    p.source = turn_ids[i];
    p.target = frame_target(turn_ids[i + 1]);
    std::vector<std::vector<int>> history;  // most recent first
    for (int back = 0; back < window && static_cast<int>(i) - back >= 0; ++back) {
      history.push_back(turn_ids[i - static_cast<size_t>(back)]);
    }
    p.context_tokens = concat_context(history, max_context_len);
    if (p.context_tokens.empty()) p.context_tokens = p.source;
    out.push_back(std::move(p));
  }
  return out;
}

TrainingPair pair_from_qa(const QAExample& qa, const Vocabulary& vocab, int max_context_len,
                          int label_index) {
  TrainingPair p;
  p.source = vocab.encode(qa.question);
  p.target = frame_target(vocab.encode(qa.answer));
  p.context_tokens = concat_context({p.source}, max_context_len);
  p.label = label_index;
  return p;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

namespace {

void pad_to(std::vector<std::vector<int>>& rows, std::vector<std::vector<int>>* masks) {
  size_t mx = 0;
  for (const auto& r : rows) mx = std::max(mx, r.size());
  if (mx == 0) mx = 1;
  for (auto& r : rows) {
    if (masks) {
      std::vector<int> m(mx, 0);
      std::fill(m.begin(), m.begin() + static_cast<long>(r.size()), 1);
      masks->push_back(std::move(m));
    }
    r.resize(mx, kPad);
  }
}

}  // namespace

std::vector<Batch> make_batches(const std::vector<TrainingPair>& pairs, int batch_size,
                                bool bucketing, SeededRng& rng) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  if (bucketing) {
    rng.shuffle(order);
    // Group similar target lengths to limit padding, keeping the shuffled
    // order within each length.
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return pairs[a].target.size() < pairs[b].target.size();
    });
  }
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    Batch b;
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    for (size_t i = start; i < end; ++i) {
      const auto& p = pairs[order[i]];
      b.source.push_back(p.source);
      b.target.push_back(p.target);
      b.context.push_back(p.context_tokens);
      b.labels.push_back(p.label);
      b.pair_indices.push_back(order[i]);
    }
    pad_to(b.source, &b.source_mask);
    pad_to(b.target, &b.target_mask);
    pad_to(b.context, nullptr);
    batches.push_back(std::move(b));
  }
  if (bucketing) {
    // Batch-level shuffle so length buckets are interleaved across a pass.
    rng.shuffle(batches);
  }
  return batches;
}

TrainingPair unpad_row(const Batch& b, size_t row) {
  TrainingPair p;
  const auto strip = [](const std::vector<int>& ids, const std::vector<int>& mask) {
    std::vector<int> out;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (mask[i]) out.push_back(ids[i]);
    }
    return out;
  };
  p.source = strip(b.source[row], b.source_mask[row]);
  p.target = strip(b.target[row], b.target_mask[row]);
  p.context_tokens = b.context[row];
  while (!p.context_tokens.empty() && p.context_tokens.back() == kPad) p.context_tokens.pop_back();
  p.label = b.labels[row];
  return p;
}

}  // namespace ctxseq
