#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ctxseq/rng.hpp"
#include "ctxseq/vocab.hpp"

namespace ctxseq {

struct QAExample {
  std::string question;
  std::string answer;
  std::string label;
};

struct DialogueExample {
  std::vector<std::string> turns;  // alternating speakers, >= 2
};

// One supervised example: source utterance, BOS/EOS-framed target, and the
// token sequence the topic encoder reads.
struct TrainingPair {
  std::vector<int> source;
  std::vector<int> target;          // BOS ... EOS
  std::vector<int> context_tokens;  // non-empty; falls back to source
  int label = -1;                   // category index, -1 when unlabeled
};

std::vector<QAExample> load_qa(const std::string& path,
                               const std::set<std::string>* expected_labels = nullptr);
std::vector<DialogueExample> load_dialogue(const std::string& path);

void save_qa(const std::string& path, const std::vector<QAExample>& examples);
void save_dialogue(const std::string& path, const std::vector<DialogueExample>& dialogues);

// Joins token sequences most-recent-first with SEP between them, truncated
// to max_len from the front so the most recent content is always kept.
// utterances[0] is the most recent.
std::vector<int> concat_context(const std::vector<std::vector<int>>& utterances, int max_len);

// Frames a raw target with BOS/EOS.
std::vector<int> frame_target(const std::vector<int>& raw);

// Adjacent-turn pairs: source = turn_i, target = turn_{i+1}, context from
// the w most recent turns ending at turn_i (most recent first).
std::vector<TrainingPair> pairs_from_dialogue(const DialogueExample& d, const Vocabulary& vocab,
                                              int window, int max_context_len);

// QA pair: source = question, target = answer, context = the question.
TrainingPair pair_from_qa(const QAExample& qa, const Vocabulary& vocab, int max_context_len,
                          int label_index);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  // Row-major [batch x max_len] id matrices padded with PAD, plus masks
  // (1 for a real token, 0 for padding).
  std::vector<std::vector<int>> source;
  std::vector<std::vector<int>> target;
  std::vector<std::vector<int>> context;
  std::vector<std::vector<int>> source_mask;
  std::vector<std::vector<int>> target_mask;
  std::vector<int> labels;
  std::vector<size_t> pair_indices;  // positions in the original pair list
};

// Splits pairs into padded batches. When bucketing is on, pairs are
// shuffled, grouped by target length, and the batch order reshuffled, all
// from the given rng; otherwise file order is kept.
std::vector<Batch> make_batches(const std::vector<TrainingPair>& pairs, int batch_size,
                                bool bucketing, SeededRng& rng);

// Strips padding from one batch row back into a TrainingPair.
TrainingPair unpad_row(const Batch& b, size_t row);

}  // namespace ctxseq
