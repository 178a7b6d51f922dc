#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctxseq/checkpoint.hpp"
#include "ctxseq/corpus.hpp"
#include "ctxseq/eval.hpp"
#include "ctxseq/seq2seq.hpp"

namespace ctxseq {

struct StageConfig {
  enum class Kind { QA, Dialogue };
  Kind kind = Kind::QA;
  std::string corpus_path;
  std::string test_path;  // optional explicit held-out file
  int epochs = 2;
  int batch_size = 32;
  double lr = 1e-3;
};

struct TrainConfig {
  std::vector<StageConfig> stages;
  uint64_t seed = 1;
  double clip_norm = 5.0;
  int eval_every = 1;  // epochs between held-out evaluations; 0 disables
  int window = 2;      // dialogue history window w
  int test_size = 2000;
  double holdout_fraction = 0.05;  // used when a stage has no test file
  bool finetune_cnn = false;

  void validate() const;
};

struct HistoryRow {
  int stage = 0;
  int epoch = 0;
  int64_t step = 0;
  double train_loss = 0.0;  // mean per-token NLL over the epoch
  std::optional<double> ppl_short;
  std::optional<double> ppl_long;
};

// Pairs plus per-stage context-vector cache (frozen topic encoder).
struct StageData {
  std::vector<TrainingPair> train;
  std::vector<TrainingPair> held_out;
};

// Loads and splits one stage corpus per the stage's context rule: cQA uses
// the question itself, dialogue uses the concatenated recent turns.
StageData load_stage(const StageConfig& stage, const TrainConfig& cfg, const Vocabulary& vocab,
                     const ModelConfig& model_cfg, uint64_t seed, int stage_index);

struct TrainOutput {
  ModelBundle bundle;
  std::vector<HistoryRow> history;
};

// Fresh bundle at initialization (uniform +-0.08, zero biases, forget bias
// +1); the topic encoder, when given, rides along frozen unless the config
// says fine-tune.
ModelBundle make_initial_bundle(const ModelConfig& model_cfg, std::optional<CnnParams> cnn,
                                uint32_t vocab_hash, uint64_t seed, const std::string& precision);

// Two-stage curriculum: teacher-forced loss, backward, global-norm clip,
// Adam. Deterministic function of (bundle, config, corpora). Resumes from
// the bundle's (stage, epoch) cursor, so a reloaded checkpoint continues on
// the identical trajectory. Stage-end checkpoints land in ckpt_dir when it
// is non-empty.
TrainOutput train_model(ModelBundle bundle, const TrainConfig& cfg, const Vocabulary& vocab,
                        const std::string& ckpt_dir);

void save_history_csv(const std::string& path, const std::vector<HistoryRow>& rows);

}  // namespace ctxseq
