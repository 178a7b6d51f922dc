#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxseq/corpus.hpp"

namespace ctxseq {

// Desk-scale stand-in for the unavailable QA/forum corpora. Every token is
// a single Unicode symbol, so character-level modeling is exact. Each topic
// owns a content alphabet; entities and function words are shared. Targets
// are keyed on (topic, entity), so sources that carry no content symbols
// are ambiguous and resolvable only through conversation history.
struct SyntheticSpec {
  int topics = 8;
  int content_per_topic = 10;
  int entities = 12;
  int function_words = 6;
  double overlap = 0.0;  // fraction of each topic's alphabet drawn from a shared pool
  int qa_train_per_topic = 110;
  int qa_test_per_topic = 15;
  int dialogues_train = 240;
  int dialogues_test = 60;
  double long_answer_fraction = 0.18;  // answers with tails long enough for the >30 bucket
  double noise_rate = 0.0;             // chance of one stray function symbol per utterance
  uint64_t seed = 1;

  std::string canonical() const;  // deterministic key=value form
  uint32_t hash() const;          // CRC32 of canonical form
};

SyntheticSpec parse_synth_spec(const std::string& path);

// Resolved symbol tables; enough to classify a response back to a topic.
struct SynthTables {
  std::vector<std::string> function_words;
  std::vector<std::string> entities;
  std::vector<std::vector<std::string>> topic_content;  // [topic][symbol]
  std::vector<std::vector<std::string>> answer_table;   // [topic][entity]
  std::vector<std::string> labels;                      // "topic0"...

  // Majority vote over content-symbol membership; -1 when no content symbol
  // of any topic occurs.
  int classify_topic(const std::string& text) const;
  // Position (token index) of the first entity symbol, -1 if none.
  int entity_position(const std::vector<std::string>& tokens) const;
  int entity_index(const std::string& symbol) const;
};

struct SynthData {
  SyntheticSpec spec;
  SynthTables tables;
  std::vector<QAExample> qa_train;
  std::vector<QAExample> qa_test;
  std::vector<DialogueExample> dialogue_train;
  std::vector<DialogueExample> dialogue_test;

  // Probe material for evaluation harnesses: an ambiguous question about
  // entity e (no content symbols), and in-topic chatter.
  std::string ambiguous_question(int entity, SeededRng& rng) const;
  std::string chatter(int topic, SeededRng& rng) const;
};

// Deterministic function of the spec (including its seed). Train and test
// are disjoint by exact match of (source, context).
SynthData synth_generate(const SyntheticSpec& spec);

}  // namespace ctxseq
