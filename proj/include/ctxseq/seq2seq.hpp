#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctxseq/corpus.hpp"
#include "ctxseq/tensor.hpp"
#include "ctxseq/topic_cnn.hpp"

namespace ctxseq {

enum class DecoderKind { Vanilla, SoftAttention, ContextIn, ContextIO, ContextAttn };

const char* kind_name(DecoderKind kind);
DecoderKind kind_from_name(const std::string& name);
bool kind_is_contextual(DecoderKind kind);
bool kind_has_attention(DecoderKind kind);

struct ModelConfig {
  int n_layers = 2;
  int hidden = 64;
  int embed_dim = 32;
  int vocab_size = 0;
  int topics = 8;  // K
  DecoderKind kind = DecoderKind::Vanilla;
  double dropout = 0.2;
  // Source reversal follows the vanilla baseline; attention and context
  // variants read the source in order. Overridable per config.
  std::optional<bool> reverse_source;
  int attn_conv_width = 3;
  int max_source_len = 96;
  int max_target_len = 64;
  int max_context_len = 96;
  bool context_per_gate = false;     // Context-In: one W_cx per gate instead of shared
  bool context_io_cell_mod = false;  // Context-IO: modulate previous cell instead of adding

  bool reversed() const { return reverse_source.value_or(kind == DecoderKind::Vanilla); }
  void validate() const;
};

// Named collection of every learnable tensor for one decoder kind.
// Fused gate layout per layer: W [4H x (in+H)] over [x; h_prev], gate order
// i | f | g | o, forget bias initialized to +1.
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> order;
  std::unordered_map<std::string, Tensor> tensors;

  static ModelParams init(const ModelConfig& config, SeededRng& rng);
  void add(const std::string& name, Tensor t);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
};

struct LstmState {
  std::vector<Tensor> h;  // per layer, [H]
  std::vector<Tensor> C;
};

struct EncodedSource {
  Tensor H;       // [T x H] top-layer outputs in original position order
  LstmState v;    // final state, copied layer-wise into the decoder
  int length = 0;
};

// One LSTM cell step. ctx_pre, when given, is a [4H] projected-context
// vector added to all gate pre-activations (the Context-In wiring).
struct LstmCellOut {
  Tensor h;
  Tensor C;
};
LstmCellOut lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& C_prev,
                      const Tensor& W, const Tensor& b, const Tensor* ctx_pre = nullptr);

EncodedSource encode_source(const std::vector<int>& tokens, const ModelParams& params, Mode mode,
                            SeededRng& rng);

struct AttentionOut {
  Tensor a;      // [H] context vector
  Tensor alpha;  // [T] weights, sums to 1
};

// Additive attention over raw encoder outputs: e_t = v . tanh(Wk h_t + Ws s).
AttentionOut attention_soft(const Tensor& H, const Tensor& s, const ModelParams& params);

// Per-position vector gates g_t = sigmoid(Wc c + Wh h_t + b), weights shared
// across positions; returns (g_t * h_t rows, gates).
struct GatedSource {
  Tensor H_gated;  // [T x H]
  Tensor gates;    // [T x H]
};
GatedSource gated_context_attention(const Tensor& H, const Tensor& c, const ModelParams& params);

// Keys from a same-padded one-layer convolution over the gated outputs.
Tensor attention_keys_cnn(const Tensor& H_gated, const ModelParams& params);
AttentionOut attention_vector_cnn(const Tensor& keys, const Tensor& H_gated, const Tensor& s,
                                  const ModelParams& params);

// Per-sequence decoder session: holds the state and everything computable
// once per example (gated source, attention keys, projected context).
class DecoderSession {
 public:
  // c must be defined exactly for contextual kinds.
  DecoderSession(const ModelParams& params, const EncodedSource& enc, const Tensor& c);

  struct StepOut {
    Tensor logits;  // [V]
    Tensor alpha;   // [T] for attention kinds, undefined otherwise
  };
  StepOut step(int y_prev, Mode mode, SeededRng& rng);

  const Tensor& gates() const { return gates_; }  // Context-Attn only
  const LstmState& state() const { return state_; }
  void set_state(const LstmState& s) { state_ = s; }

 private:
  const ModelParams& params_;
  DecoderKind kind_;
  Tensor c_;
  Tensor H_;           // encoder outputs or gated outputs
  Tensor Ht_;          // transpose of H_, cached for the weighted sum
  Tensor keyproj_;     // [T x H] Wk-projected keys
  Tensor gates_;
  Tensor ctx_pre_;     // [4H] Context-In gate addition
  Tensor ctx_in_;      // [e] or [H] Context-IO input injection
  Tensor ctx_out_;     // [V] Context-IO output injection
  LstmState state_;
};

struct SequenceScore {
  Tensor nll;                   // scalar graph node, sum over target steps
  double logprob = 0.0;         // -nll value
  std::vector<double> step_nll; // per-step values
  int tokens = 0;               // excludes BOS, includes EOS
};

// Teacher-forced log probability of pair.target given pair.source and c.
// PAD-masked: steps whose target is PAD contribute nothing.
SequenceScore sequence_logprob(const ModelParams& params, const TrainingPair& pair,
                               const Tensor& c, Mode mode, SeededRng& rng);

// Convenience for contextual models: builds the c tensor from a plain
// probability vector (no gradient; frozen-encoder path).
Tensor context_tensor(const std::vector<double>& probs);

}  // namespace ctxseq
