#include "ctxseq/seq2seq.hpp"

#include <algorithm>
#include <cmath>

namespace ctxseq {

namespace {
constexpr double kInitRange = 0.08;
constexpr double kForgetBias = 1.0;
}  // namespace

const char* kind_name(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::Vanilla: return "vanilla";
    case DecoderKind::SoftAttention: return "soft_attention";
    case DecoderKind::ContextIn: return "context_in";
    case DecoderKind::ContextIO: return "context_io";
    case DecoderKind::ContextAttn: return "context_attn";
  }
  throw ContractError("unknown decoder kind");
}

DecoderKind kind_from_name(const std::string& name) {
  if (name == "vanilla") return DecoderKind::Vanilla;
  if (name == "soft_attention") return DecoderKind::SoftAttention;
  if (name == "context_in") return DecoderKind::ContextIn;
  if (name == "context_io") return DecoderKind::ContextIO;
  if (name == "context_attn") return DecoderKind::ContextAttn;
  throw ConfigError("unknown model kind \"" + name + "\"");
}

bool kind_is_contextual(DecoderKind kind) {
  return kind == DecoderKind::ContextIn || kind == DecoderKind::ContextIO ||
         kind == DecoderKind::ContextAttn;
}

bool kind_has_attention(DecoderKind kind) {
  return kind == DecoderKind::SoftAttention || kind == DecoderKind::ContextAttn;
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (hidden < 1 || embed_dim < 1) throw ConfigError("hidden/embed_dim must be >= 1");
  if (vocab_size <= kNumSpecial) throw ConfigError("vocab_size must exceed the reserved ids");
  if (topics < 2 && kind_is_contextual(kind)) throw ConfigError("contextual kinds need K >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (attn_conv_width < 1 || attn_conv_width % 2 == 0) {
    throw ConfigError("attn_conv_width must be odd");
  }
  if (max_source_len < 1 || max_target_len < 1 || max_context_len < 1) {
    throw ConfigError("max lengths must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

void ModelParams::add(const std::string& name, Tensor t) {
  if (tensors.count(name)) throw ContractError("duplicate parameter name " + name);
  order.push_back(name);
  tensors.emplace(name, std::move(t));
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing parameter " + name);
  return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing parameter " + name);
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& n : order) out.emplace_back(n, tensors.at(n));
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (const auto& n : order) out.push_back(tensors.at(n));
  return out;
}

namespace {

Tensor init_lstm_bias(int hidden) {
  Tensor b = Tensor::zeros({4 * hidden}, true);
  // forget gate slice [H, 2H)
  for (int i = hidden; i < 2 * hidden; ++i) b.value()[static_cast<size_t>(i)] = kForgetBias;
  return b;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, SeededRng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  const int H = config.hidden, E = config.embed_dim, V = config.vocab_size, K = config.topics;
  const bool attn = kind_has_attention(config.kind);

  auto uni = [&](const Shape& s) { return Tensor::uniform(s, -kInitRange, kInitRange, rng, true); };

  p.add("enc.embed", uni({V, E}));
  for (int l = 0; l < config.n_layers; ++l) {
    const int in = (l == 0) ? E : H;
    p.add("enc.l" + std::to_string(l) + ".W", uni({4 * H, in + H}));
    p.add("enc.l" + std::to_string(l) + ".b", init_lstm_bias(H));
  }
  p.add("dec.embed", uni({V, E}));
  for (int l = 0; l < config.n_layers; ++l) {
    const int in = (l == 0) ? (attn ? E + H : E) : H;
    p.add("dec.l" + std::to_string(l) + ".W", uni({4 * H, in + H}));
    p.add("dec.l" + std::to_string(l) + ".b", init_lstm_bias(H));
  }
  p.add("dec.Wy", uni({V, H}));
  p.add("dec.by", Tensor::zeros({V}, true));

  switch (config.kind) {
    case DecoderKind::Vanilla:
      break;
    case DecoderKind::SoftAttention:
      p.add("attn.Wk", uni({H, H}));
      p.add("attn.Ws", uni({H, H}));
      p.add("attn.v", uni({H}));
      break;
    case DecoderKind::ContextIn:
      p.add("dec.Wcx", uni({config.context_per_gate ? 4 * H : H, K}));
      break;
    case DecoderKind::ContextIO:
      p.add("dec.Wcx_in", uni({config.context_io_cell_mod ? H : E, K}));
      p.add("dec.Wcx_out", uni({V, K}));
      break;
    case DecoderKind::ContextAttn:
      p.add("gate.Wc", uni({H, K}));
      p.add("gate.Wh", uni({H, H}));
      p.add("gate.b", Tensor::zeros({H}, true));
      p.add("attn.conv.w", uni({H, config.attn_conv_width, H}));
      p.add("attn.conv.b", Tensor::zeros({H}, true));
      p.add("attn.Wk", uni({H, H}));
      p.add("attn.Ws", uni({H, H}));
      p.add("attn.v", uni({H}));
      break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// LSTM cell and encoder
// ---------------------------------------------------------------------------

LstmCellOut lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& C_prev,
                      const Tensor& W, const Tensor& b, const Tensor* ctx_pre) {
  const int H = C_prev.extent(0);
  Tensor z = concat({x, h_prev});
  Tensor pre = add(matmul(W, z), b);  // [4H]
  if (ctx_pre) pre = add(pre, *ctx_pre);
  Tensor i = sigmoid(slice(pre, 0, H));
  Tensor f = sigmoid(slice(pre, H, H));
  Tensor g = tanh(slice(pre, 2 * H, H));
  Tensor o = sigmoid(slice(pre, 3 * H, H));
  Tensor C = add(mul(f, C_prev), mul(i, g));
  Tensor h = mul(o, tanh(C));
  return {h, C};
}

namespace {

LstmState zero_state(const ModelConfig& cfg) {
  LstmState s;
  for (int l = 0; l < cfg.n_layers; ++l) {
    s.h.push_back(Tensor::zeros({cfg.hidden}));
    s.C.push_back(Tensor::zeros({cfg.hidden}));
  }
  return s;
}

// One step through the stack. Dropout is applied to inter-layer inputs and
// to the returned top output, never to the recurrent connections.
Tensor stacked_step(const ModelParams& params, const char* prefix, const Tensor& input,
                    LstmState& state, const Tensor* ctx_pre, Mode mode, SeededRng& rng,
                    const Tensor* layer0_cell_mod = nullptr) {
  const auto& cfg = params.config;
  const bool train = (mode == Mode::Train);
  Tensor x = input;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string ln = std::string(prefix) + ".l" + std::to_string(l);
    Tensor pre_extra;
    const Tensor* extra = ctx_pre;
    if (l == 0 && layer0_cell_mod) {
      // Context-IO cell-modulation reading: gate pre-activations receive
      // (Wcx c) * C_{t-1} tiled over the four gates.
      Tensor mod = mul(*layer0_cell_mod, state.C[0]);
      pre_extra = ctx_pre ? add(concat({mod, mod, mod, mod}), *ctx_pre)
                          : concat({mod, mod, mod, mod});
      extra = &pre_extra;
    }
    LstmCellOut out = lstm_cell(x, state.h[static_cast<size_t>(l)], state.C[static_cast<size_t>(l)],
                                params.at(ln + ".W"), params.at(ln + ".b"), extra);
    state.h[static_cast<size_t>(l)] = out.h;
    state.C[static_cast<size_t>(l)] = out.C;
    x = train ? dropout(out.h, cfg.dropout, rng, true) : out.h;
  }
  return x;  // top output, dropout already applied in train mode
}

}  // namespace

EncodedSource encode_source(const std::vector<int>& tokens, const ModelParams& params, Mode mode,
                            SeededRng& rng) {
  if (tokens.empty()) throw ContractError("encode_source: empty source");
  const auto& cfg = params.config;
  std::vector<int> seq = tokens;
  if (static_cast<int>(seq.size()) > cfg.max_source_len) {
    seq.resize(static_cast<size_t>(cfg.max_source_len));
  }
  const bool rev = cfg.reversed();
  if (rev) std::reverse(seq.begin(), seq.end());

  Tensor embedded = lookup(params.at("enc.embed"), seq, kPad);  // [T x E]
  LstmState state = zero_state(cfg);
  std::vector<Tensor> tops;
  tops.reserve(seq.size());
  for (size_t t = 0; t < seq.size(); ++t) {
    Tensor x = row(embedded, static_cast<int>(t));
    tops.push_back(stacked_step(params, "enc", x, state, nullptr, mode, rng));
  }
  if (rev) std::reverse(tops.begin(), tops.end());  // H in original order
  EncodedSource enc;
  enc.H = stack_rows(tops);
  enc.v = state;
  enc.length = static_cast<int>(seq.size());
  return enc;
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

AttentionOut attention_soft(const Tensor& H, const Tensor& s, const ModelParams& params) {
  Tensor keyproj = matmul(H, transpose(params.at("attn.Wk")));  // [T x H]
  Tensor u = matmul(params.at("attn.Ws"), s);                   // [H]
  Tensor scores = matmul(ctxseq::tanh(add_bias_rows(keyproj, u)), params.at("attn.v"));  // [T]
  Tensor alpha = softmax(scores);
  Tensor a = matmul(transpose(H), alpha);
  return {a, alpha};
}

GatedSource gated_context_attention(const Tensor& H, const Tensor& c, const ModelParams& params) {
  if (!c.defined()) throw ContractError("gated attention requires a context vector");
  Tensor uc = add(matmul(params.at("gate.Wc"), c), params.at("gate.b"));  // [H]
  Tensor M = matmul(H, transpose(params.at("gate.Wh")));                  // [T x H]
  Tensor gates = sigmoid(add_bias_rows(M, uc));
  return {mul(gates, H), gates};
}

Tensor attention_keys_cnn(const Tensor& H_gated, const ModelParams& params) {
  const Tensor& w = params.at("attn.conv.w");
  const int pad = (w.extent(1) - 1) / 2;
  Tensor padded = pad_rows(H_gated, pad, pad);
  // conv_text yields [H x T]; keys are per-position rows.
  return transpose(ctxseq::tanh(conv_text(padded, w, params.at("attn.conv.b"))));
}

AttentionOut attention_vector_cnn(const Tensor& keys, const Tensor& H_gated, const Tensor& s,
                                  const ModelParams& params) {
  Tensor keyproj = matmul(keys, transpose(params.at("attn.Wk")));  // [T x H]
  Tensor u = matmul(params.at("attn.Ws"), s);
  Tensor scores = matmul(ctxseq::tanh(add_bias_rows(keyproj, u)), params.at("attn.v"));
  Tensor alpha = softmax(scores);
  Tensor a = matmul(transpose(H_gated), alpha);
  return {a, alpha};
}

// ---------------------------------------------------------------------------
// Decoder session
// ---------------------------------------------------------------------------

DecoderSession::DecoderSession(const ModelParams& params, const EncodedSource& enc, const Tensor& c)
    : params_(params), kind_(params.config.kind), c_(c), state_(enc.v) {
  const bool needs_c = kind_is_contextual(kind_);
  if (needs_c && !c.defined()) {
    throw ContractError(std::string(kind_name(kind_)) + " requires a context vector");
  }
  if (!needs_c && c.defined()) {
    throw ContractError(std::string(kind_name(kind_)) + " does not take a context vector");
  }
  if (needs_c && c.extent(0) != params.config.topics) {
    throw ShapeError("context vector length " + std::to_string(c.extent(0)) + " != K " +
                     std::to_string(params.config.topics));
  }

  switch (kind_) {
    case DecoderKind::Vanilla:
      break;
    case DecoderKind::SoftAttention:
      H_ = enc.H;
      Ht_ = transpose(H_);
      keyproj_ = matmul(H_, transpose(params.at("attn.Wk")));
      break;
    case DecoderKind::ContextIn: {
      Tensor proj = matmul(params.at("dec.Wcx"), c_);
      ctx_pre_ = params.config.context_per_gate ? proj : concat({proj, proj, proj, proj});
      break;
    }
    case DecoderKind::ContextIO:
      ctx_in_ = matmul(params.at("dec.Wcx_in"), c_);
      ctx_out_ = matmul(params.at("dec.Wcx_out"), c_);
      break;
    case DecoderKind::ContextAttn: {
      GatedSource gs = gated_context_attention(enc.H, c_, params);
      H_ = gs.H_gated;
      gates_ = gs.gates;
      Ht_ = transpose(H_);
      Tensor keys = attention_keys_cnn(H_, params);
      keyproj_ = matmul(keys, transpose(params.at("attn.Wk")));
      break;
    }
  }
}

DecoderSession::StepOut DecoderSession::step(int y_prev, Mode mode, SeededRng& rng) {
  const auto& cfg = params_.config;
  Tensor embedded = row(lookup(params_.at("dec.embed"), {y_prev}, kPad), 0);  // [E]

  Tensor input;
  Tensor alpha;
  if (kind_has_attention(kind_)) {
    // Scores use the previous top hidden state; a is fed with the input.
    Tensor u = matmul(params_.at("attn.Ws"), state_.h.back());
    Tensor scores = matmul(ctxseq::tanh(add_bias_rows(keyproj_, u)), params_.at("attn.v"));
    alpha = softmax(scores);
    Tensor a = matmul(Ht_, alpha);
    input = concat({embedded, a});
  } else if (kind_ == DecoderKind::ContextIO && !cfg.context_io_cell_mod) {
    input = add(embedded, ctx_in_);
  } else {
    input = embedded;
  }

  const Tensor* ctx_pre = (kind_ == DecoderKind::ContextIn) ? &ctx_pre_ : nullptr;
  const Tensor* cell_mod =
      (kind_ == DecoderKind::ContextIO && cfg.context_io_cell_mod) ? &ctx_in_ : nullptr;
  Tensor top = stacked_step(params_, "dec", input, state_, ctx_pre, mode, rng, cell_mod);

  Tensor logits = add(matmul(params_.at("dec.Wy"), top), params_.at("dec.by"));
  if (kind_ == DecoderKind::ContextIO) logits = add(logits, ctx_out_);
  return {logits, alpha};
}

// ---------------------------------------------------------------------------
// Sequence scoring
// ---------------------------------------------------------------------------

SequenceScore sequence_logprob(const ModelParams& params, const TrainingPair& pair,
                               const Tensor& c, Mode mode, SeededRng& rng) {
  if (pair.target.size() < 2 || pair.target.front() != kBos) {
    throw ContractError("sequence_logprob: target must be BOS-framed");
  }
  EncodedSource enc = encode_source(pair.source, params, mode, rng);
  DecoderSession session(params, enc, c);

  std::vector<Tensor> losses;
  SequenceScore out;
  const int limit = std::min<int>(static_cast<int>(pair.target.size()),
                                  params.config.max_target_len + 2);
  for (int t = 1; t < limit; ++t) {
    const int y = pair.target[static_cast<size_t>(t)];
    if (y == kPad) break;  // mask: padded tail carries no loss
    auto step = session.step(pair.target[static_cast<size_t>(t - 1)], mode, rng);
    Tensor ce = cross_entropy(step.logits, y);
    out.step_nll.push_back(ce.item());
    losses.push_back(ce);
    ++out.tokens;
  }
  if (losses.empty()) throw ContractError("sequence_logprob: empty target");
  out.nll = sum(concat(losses));
  out.logprob = -out.nll.item();
  return out;
}

Tensor context_tensor(const std::vector<double>& probs) {
  return Tensor::of(probs, {static_cast<int>(probs.size())});
}

}  // namespace ctxseq
