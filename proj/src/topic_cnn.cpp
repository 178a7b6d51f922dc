#include "ctxseq/topic_cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctxseq/corpus.hpp"

namespace ctxseq {

namespace {
constexpr int kMaxFilterHeight = 4;
constexpr int kConvLayers = 2;
constexpr double kInitRange = 0.08;
}  // namespace

CnnParams CnnParams::init(const CnnConfig& config, SeededRng& rng) {
  if (config.vocab_size <= kNumSpecial) throw ConfigError("cnn: vocab_size too small");
  if (config.embed_dim <= 0 || config.filters <= 0 || config.k_top <= 0 || config.topics <= 1) {
    throw ConfigError("cnn: extents must be positive (and topics >= 2)");
  }
  if (config.layer2_height < 1 || config.layer2_height > config.k_top * kMaxFilterHeight) {
    throw ConfigError("cnn: layer2_height out of range");
  }
  CnnParams p;
  p.config = config;
  p.embedding = Tensor::uniform({config.vocab_size, config.embed_dim}, -kInitRange, kInitRange,
                                rng, true);
  // Pad row frozen at zero (lookup never reads it, keep it clean anyway).
  for (int c = 0; c < config.embed_dim; ++c) p.embedding.value()[static_cast<size_t>(c)] = 0.0;
  for (int h = 1; h <= kMaxFilterHeight; ++h) {
    p.conv_w.push_back(Tensor::uniform({config.filters, h, config.embed_dim}, -kInitRange,
                                       kInitRange, rng, true));
    p.conv_b.push_back(Tensor::zeros({config.filters}, true));
  }
  p.conv2_w = Tensor::uniform({config.layer2_filters, config.layer2_height, config.filters},
                              -kInitRange, kInitRange, rng, true);
  p.conv2_b = Tensor::zeros({config.layer2_filters}, true);
  p.fc_w = Tensor::uniform({config.topics, config.layer2_filters * config.k_top}, -kInitRange,
                           kInitRange, rng, true);
  p.fc_b = Tensor::zeros({config.topics}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> CnnParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("cnn.embed", embedding);
  for (int h = 0; h < kMaxFilterHeight; ++h) {
    out.emplace_back("cnn.l1.h" + std::to_string(h + 1) + ".w", conv_w[static_cast<size_t>(h)]);
    out.emplace_back("cnn.l1.h" + std::to_string(h + 1) + ".b", conv_b[static_cast<size_t>(h)]);
  }
  out.emplace_back("cnn.l2.w", conv2_w);
  out.emplace_back("cnn.l2.b", conv2_b);
  out.emplace_back("cnn.fc.w", fc_w);
  out.emplace_back("cnn.fc.b", fc_b);
  return out;
}

std::vector<Tensor> CnnParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

int dynamic_k(int level, int length, int k_top, int n_layers) {
  if (level < 1 || level > n_layers) throw ContractError("dynamic_k: level outside [1, n_layers]");
  if (level == n_layers) return k_top;
  const double frac = static_cast<double>(n_layers - level) / n_layers;
  const int k = static_cast<int>(std::ceil(frac * length));
  return std::max(k_top, k);
}

CnnOut cnn_forward(const std::vector<int>& tokens, const CnnParams& params, Mode mode,
                   SeededRng& rng) {
  if (tokens.empty()) throw ContractError("cnn_forward: empty input");
  // Everything from the first PAD on is padding; the model is a function
  // of the real prefix only.
  int valid_len = 0;
  while (valid_len < static_cast<int>(tokens.size()) && tokens[static_cast<size_t>(valid_len)] != kPad) {
    ++valid_len;
  }
  if (valid_len == 0) throw ContractError("cnn_forward: input starts with PAD");
  std::vector<int> real(tokens.begin(), tokens.begin() + valid_len);

  const auto& cfg = params.config;
  const Tensor embedded = lookup(params.embedding, real, kPad);  // [L x d]
  const int k1 = dynamic_k(1, valid_len, cfg.k_top, kConvLayers);

  std::vector<Tensor> pooled_blocks;
  for (int h = 1; h <= kMaxFilterHeight; ++h) {
    if (valid_len < h) {
      // No window fits inside the real prefix; this bank contributes zeros.
      pooled_blocks.push_back(Tensor::zeros({k1, cfg.filters}));
      continue;
    }
    Tensor feat = tanh(conv_text(embedded, params.conv_w[static_cast<size_t>(h - 1)],
                                 params.conv_b[static_cast<size_t>(h - 1)]));  // [F x T]
    const int T = feat.extent(1);
    const int k_eff = std::min(k1, T);
    Tensor pooled = k_max_pool(feat, k_eff);        // [F x k_eff]
    Tensor seq = transpose(pooled);                 // [k_eff x F]
    if (k_eff < k1) seq = pad_rows(seq, 0, k1 - k_eff);
    pooled_blocks.push_back(seq);
  }
  Tensor layer1 = vcat(pooled_blocks);  // [4*k1 x F]

  Tensor feat2 = tanh(conv_text(layer1, params.conv2_w, params.conv2_b));  // [F2 x (4k1-h2+1)]
  Tensor pooled2 = k_max_pool(feat2, cfg.k_top);                           // [F2 x k_top]
  Tensor flat = flatten(pooled2);
  if (mode == Mode::Train) flat = dropout(flat, cfg.dropout, rng, true);
  Tensor logits = add(matmul(params.fc_w, flat), params.fc_b);
  return CnnOut{softmax(logits), logits};
}

std::vector<double> infer_context(const std::vector<std::vector<int>>& history,
                                  const CnnParams& params, int max_context_len) {
  if (history.empty()) throw ContractError("infer_context: empty history");
  NoGradGuard ng;
  SeededRng unused(0);
  const std::vector<int> ctx = concat_context(history, max_context_len);
  return cnn_forward(ctx, params, Mode::Eval, unused).topic.value();
}

std::vector<double> infer_context_text(const std::vector<std::string>& history_recent_first,
                                       const CnnParams& params, const Vocabulary& vocab,
                                       int max_context_len) {
  std::vector<std::vector<int>> ids;
  for (const auto& u : history_recent_first) ids.push_back(vocab.encode(u));
  return infer_context(ids, params, max_context_len);
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

void cnn_train_supervised(const std::vector<LabeledTokens>& examples, CnnParams& params,
                          const CnnTrainOptions& opts) {
  if (examples.empty()) throw CorpusError("cnn_train: no examples");
  for (const auto& ex : examples) {
    if (ex.label < 0 || ex.label >= params.config.topics) {
      throw CorpusError("cnn_train: label " + std::to_string(ex.label) + " outside [0," +
                        std::to_string(params.config.topics) + ")");
    }
  }
  SeededRng root(opts.seed);
  auto tensors = params.all();
  std::vector<AdamState> states(tensors.size());
  for (auto& s : states) s.alpha = opts.lr;

  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    SeededRng erng = root.child("epoch" + std::to_string(epoch));
    erng.shuffle(order);
    SeededRng drng = erng.child("dropout");
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
      for (auto& t : tensors) t.zero_grad();
      std::vector<Tensor> losses;
      for (size_t i = start; i < end; ++i) {
        const auto& ex = examples[order[i]];
        CnnOut out = cnn_forward(ex.tokens, params, Mode::Train, drng);
        losses.push_back(cross_entropy(out.logits, ex.label));
      }
      Tensor batch_loss = scale(sum(concat(losses)), 1.0 / static_cast<double>(losses.size()));
      backward(batch_loss);
      for (size_t t = 0; t < tensors.size(); ++t) {
        adam_step(tensors[t], tensors[t].grad(), states[t]);
      }
      // Keep the pad embedding row at zero.
      for (int c = 0; c < params.config.embed_dim; ++c) {
        params.embedding.value()[static_cast<size_t>(c)] = 0.0;
      }
    }
  }
}

double cnn_accuracy(const std::vector<LabeledTokens>& examples, const CnnParams& params) {
  if (examples.empty()) return 0.0;
  NoGradGuard ng;
  SeededRng unused(0);
  int correct = 0;
  for (const auto& ex : examples) {
    CnnOut out = cnn_forward(ex.tokens, params, Mode::Eval, unused);
    const auto& probs = out.topic.value();
    const int pred = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    if (pred == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::vector<double> cnn_cross_validate(const std::vector<LabeledTokens>& examples,
                                       const CnnConfig& config, int folds,
                                       const CnnTrainOptions& opts) {
  if (folds < 2) throw ConfigError("cross validation needs at least 2 folds");
  if (static_cast<size_t>(folds) > examples.size()) throw ConfigError("more folds than examples");
  SeededRng rng = SeededRng(opts.seed).child("cv-split");
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<double> accs;
  for (int fold = 0; fold < folds; ++fold) {
    std::vector<LabeledTokens> train, held;
    for (size_t i = 0; i < order.size(); ++i) {
      if (static_cast<int>(i % static_cast<size_t>(folds)) == fold) {
        held.push_back(examples[order[i]]);
      } else {
        train.push_back(examples[order[i]]);
      }
    }
    SeededRng init_rng = SeededRng(opts.seed).child("fold" + std::to_string(fold));
    CnnParams params = CnnParams::init(config, init_rng);
    CnnTrainOptions fold_opts = opts;
    fold_opts.seed = init_rng.child("train").seed();
    cnn_train_supervised(train, params, fold_opts);
    accs.push_back(cnn_accuracy(held, params));
  }
  return accs;
}

}  // namespace ctxseq
