#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctxseq/checkpoint.hpp"
#include "ctxseq/corpus.hpp"
#include "ctxseq/seq2seq.hpp"
#include "ctxseq/synth.hpp"

namespace ctxseq {

// ---------------------------------------------------------------------------
// Length-bucketed perplexity
// ---------------------------------------------------------------------------

struct BucketStat {
  int count = 0;
  long tokens = 0;
  double nll_sum = 0.0;
  std::optional<double> ppl;  // absent when the bucket is empty
};

struct PerplexityReport {
  BucketStat bucket_short;  // target length < 20
  BucketStat bucket_long;   // target length > 30
  int excluded_count = 0;   // lengths 20..30, mirrored from the table split
  int total_pairs = 0;
  long total_tokens = 0;
  double overall = 0.0;
  // Buckets use the raw target length in characters (BOS/EOS excluded);
  // recorded here because the choice is a convention.
  std::string bucketed_by = "target_chars";

  std::string to_json() const;
};

// Corpus-level perplexity: exp(sum NLL / sum tokens), exponentiation at the
// end, per bucket. cnn may be null for the baseline kinds.
PerplexityReport perplexity(const ModelParams& params, const CnnParams* cnn,
                            const std::vector<TrainingPair>& pairs);

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct BeamHypothesis {
  std::vector<int> tokens;  // generated ids, EOS kept when emitted
  double logprob = 0.0;     // accumulated log p
  double score = 0.0;       // logprob / length^gamma
  bool finished = false;    // last token is EOS
};

struct DecodeSettings {
  int beam = 5;
  double gamma = 0.6;  // length-normalization power
  int max_len = 64;
};

struct GreedyResult {
  std::vector<int> tokens;
  std::vector<std::vector<double>> alpha;  // per-step attention rows (attention kinds)
};

// Argmax per step until EOS or max_len; ties break to the smallest id.
GreedyResult greedy_decode(const ModelParams& params, const CnnParams* cnn,
                           const std::vector<int>& source, const std::vector<int>& context,
                           int max_len);

// Standard beam search ranked by length-normalized score with deterministic
// tie-breaking (score, then lexicographic tokens). When nothing finishes
// within max_len the best unfinished hypothesis is returned, flagged.
std::vector<BeamHypothesis> beam_search(const ModelParams& params, const CnnParams* cnn,
                                        const std::vector<int>& source,
                                        const std::vector<int>& context, int B, int max_len,
                                        double gamma);

// ---------------------------------------------------------------------------
// Chat sessions
// ---------------------------------------------------------------------------

class ChatSession {
 public:
  ChatSession(const ModelParams& model, const CnnParams* cnn, const Vocabulary& vocab, int window,
              DecodeSettings settings);

  // Appends the utterance, infers context over the rolling history, decodes
  // the reply, appends it, and trims the history to the window.
  std::string turn(const std::string& utterance);
  void reset();
  // Topic distribution inferred from the current history; empty for
  // non-contextual models.
  std::vector<double> current_topic() const;
  const std::vector<std::string>& history() const { return history_; }

 private:
  const ModelParams& model_;
  const CnnParams* cnn_;
  const Vocabulary& vocab_;
  int window_;
  DecodeSettings settings_;
  std::vector<std::string> history_;  // chronological

  std::vector<int> context_ids() const;
};

// ---------------------------------------------------------------------------
// Attention traces
// ---------------------------------------------------------------------------

struct AttentionTrace {
  std::vector<std::string> source_tokens;
  std::vector<std::string> target_tokens;
  std::vector<std::vector<double>> alpha;  // [target steps x source positions]
  std::vector<std::vector<double>> gates;  // [source positions x hidden], Context-Attn only
  std::vector<double> context;             // c when contextual

  std::string to_json() const;
  std::string to_ascii() const;  // monospace heat grid, darker = larger
};

// Greedy decode of source_text recording attention rows; contract error for
// kinds without attention. history is most-recent-first and defaults to the
// source alone.
AttentionTrace attention_trace(const ModelParams& params, const CnnParams* cnn,
                               const Vocabulary& vocab, const std::string& source_text,
                               const std::vector<std::string>& history_recent_first,
                               int max_len);

// ---------------------------------------------------------------------------
// Robustness probe
// ---------------------------------------------------------------------------

struct NoiseSpec {
  enum class Kind { None, Insert, Substitute, Prepend, Append };
  Kind kind = Kind::Insert;
  int count = 1;                  // symbols touched per variant
  std::vector<std::string> pool;  // noise symbols

  // "none" | "insert[:count=N][,pool=abc]" | "substitute..." etc.
  // Default pool: the vocabulary's non-reserved tokens.
  static NoiseSpec parse(const std::string& text, const Vocabulary& vocab);
};

struct ProbeVariant {
  std::string input;
  std::string response;
  bool exact_match = false;
  int response_topic = -1;
  bool topic_stable = false;
};

struct RobustnessReport {
  std::string base_input;
  std::string clean_response;
  int clean_topic = -1;
  std::vector<ProbeVariant> variants;
  double exact_match_fraction = 0.0;
  double topic_stable_fraction = 0.0;  // meaningful only with tables
  bool has_topic_classes = false;

  std::string to_json() const;
};

// Decodes noisy variants of the base utterance and measures response
// stability. tables, when given, enables the topic-equivalence metric.
RobustnessReport robustness_probe(const ModelParams& params, const CnnParams* cnn,
                                  const Vocabulary& vocab, const std::string& base,
                                  const NoiseSpec& noise, int trials, uint64_t seed,
                                  const SynthTables* tables, const DecodeSettings& settings);

}  // namespace ctxseq
