#pragma once

#include <string>
#include <vector>

#include "ctxseq/adam.hpp"
#include "ctxseq/tensor.hpp"
#include "ctxseq/vocab.hpp"

namespace ctxseq {

enum class Mode { Train, Eval };

struct CnnConfig {
  int vocab_size = 0;
  int embed_dim = 32;      // first-layer filter width is fixed to this
  int filters = 16;        // per height bank, heights 1..4
  int k_top = 4;
  int topics = 8;          // K
  int layer2_filters = 16;
  int layer2_height = 2;
  double dropout = 0.2;
};

// Two conv layers: four parallel height-1..4 banks with dynamic k-max
// pooling, then one bank over the concatenated pooled sequences with a
// fixed k_top pool, then a fully connected softmax head.
struct CnnParams {
  CnnConfig config;
  Tensor embedding;              // [V x d], pad row implicitly zero
  std::vector<Tensor> conv_w;    // bank h+1: [F x (h+1) x d]
  std::vector<Tensor> conv_b;    // [F]
  Tensor conv2_w;                // [F2 x h2 x F]
  Tensor conv2_b;                // [F2]
  Tensor fc_w;                   // [K x F2*k_top]
  Tensor fc_b;                   // [K]

  static CnnParams init(const CnnConfig& config, SeededRng& rng);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
};

// Pool size schedule: k = max(k_top, ceil(((n_layers - level)/n_layers) * L));
// the top layer always returns exactly k_top.
int dynamic_k(int level, int length, int k_top, int n_layers);

struct CnnOut {
  Tensor topic;   // softmax probabilities, [K]
  Tensor logits;  // [K]
};

// Trailing PAD tokens are ignored: convolution runs over the real prefix,
// so appending padding never changes the output. Banks taller than the
// input contribute zero feature rows.
CnnOut cnn_forward(const std::vector<int>& tokens, const CnnParams& params, Mode mode,
                   SeededRng& rng);

// Eval-mode topic distribution for a conversation history (most recent
// utterance first), through concat_context.
std::vector<double> infer_context(const std::vector<std::vector<int>>& history,
                                  const CnnParams& params, int max_context_len);
std::vector<double> infer_context_text(const std::vector<std::string>& history_recent_first,
                                       const CnnParams& params, const Vocabulary& vocab,
                                       int max_context_len);

struct LabeledTokens {
  std::vector<int> tokens;
  int label;
};

struct CnnTrainOptions {
  int epochs = 3;
  int batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 7;
};

// Adam on cross-entropy of label given question.
void cnn_train_supervised(const std::vector<LabeledTokens>& examples, CnnParams& params,
                          const CnnTrainOptions& opts);

double cnn_accuracy(const std::vector<LabeledTokens>& examples, const CnnParams& params);

// k-fold cross validation; returns per-fold held-out accuracies.
std::vector<double> cnn_cross_validate(const std::vector<LabeledTokens>& examples,
                                       const CnnConfig& config, int folds,
                                       const CnnTrainOptions& opts);

}  // namespace ctxseq
