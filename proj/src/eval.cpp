#include "ctxseq/eval.hpp"

#include <algorithm>
#include <cmath>

#include "ctxseq/topic_cnn.hpp"
#include "json.hpp"

namespace ctxseq {

using nlohmann::json;

namespace {

// Context vector for one pair; null cnn is only legal for baseline kinds.
Tensor pair_context(const ModelParams& params, const CnnParams* cnn, const TrainingPair& pair) {
  if (!kind_is_contextual(params.config.kind)) return Tensor();
  if (!cnn) throw ContractError("contextual model evaluated without a topic encoder");
  return context_tensor(infer_context({pair.context_tokens}, *cnn, params.config.max_context_len));
}

Tensor raw_context(const ModelParams& params, const CnnParams* cnn, const std::vector<int>& ctx) {
  if (!kind_is_contextual(params.config.kind)) return Tensor();
  if (!cnn) throw ContractError("contextual model decoded without a topic encoder");
  // The context ids are already concatenated; run the encoder directly.
  NoGradGuard ng;
  SeededRng unused(0);
  return context_tensor(cnn_forward(ctx, *cnn, Mode::Eval, unused).topic.value());
}

std::vector<double> log_softmax_values(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

PerplexityReport perplexity(const ModelParams& params, const CnnParams* cnn,
                            const std::vector<TrainingPair>& pairs) {
  NoGradGuard ng;
  SeededRng unused(0);
  PerplexityReport rep;
  for (const auto& pair : pairs) {
    const Tensor c = pair_context(params, cnn, pair);
    SequenceScore s = sequence_logprob(params, pair, c, Mode::Eval, unused);
    const int target_chars = static_cast<int>(pair.target.size()) - 2;  // strip BOS/EOS
    rep.total_pairs += 1;
    rep.total_tokens += s.tokens;
    rep.overall += s.nll.item();
    if (target_chars < 20) {
      rep.bucket_short.count += 1;
      rep.bucket_short.tokens += s.tokens;
      rep.bucket_short.nll_sum += s.nll.item();
    } else if (target_chars > 30) {
      rep.bucket_long.count += 1;
      rep.bucket_long.tokens += s.tokens;
      rep.bucket_long.nll_sum += s.nll.item();
    } else {
      rep.excluded_count += 1;
    }
  }
  if (rep.bucket_short.tokens > 0) {
    rep.bucket_short.ppl = std::exp(rep.bucket_short.nll_sum / rep.bucket_short.tokens);
  }
  if (rep.bucket_long.tokens > 0) {
    rep.bucket_long.ppl = std::exp(rep.bucket_long.nll_sum / rep.bucket_long.tokens);
  }
  rep.overall = rep.total_tokens > 0 ? std::exp(rep.overall / rep.total_tokens) : 0.0;
  return rep;
}

std::string PerplexityReport::to_json() const {
  json j;
  j["short"] = {{"n", bucket_short.count},
                {"ppl", bucket_short.ppl ? json(*bucket_short.ppl) : json(nullptr)}};
  j["long"] = {{"n", bucket_long.count},
               {"ppl", bucket_long.ppl ? json(*bucket_long.ppl) : json(nullptr)}};
  j["excluded_n"] = excluded_count;
  j["overall"] = overall;
  j["bucketed_by"] = bucketed_by;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

GreedyResult greedy_decode(const ModelParams& params, const CnnParams* cnn,
                           const std::vector<int>& source, const std::vector<int>& context,
                           int max_len) {
  if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
  NoGradGuard ng;
  SeededRng unused(0);
  const Tensor c = raw_context(params, cnn, context.empty() ? source : context);
  EncodedSource enc = encode_source(source, params, Mode::Eval, unused);
  DecoderSession session(params, enc, c);

  GreedyResult out;
  int prev = kBos;
  for (int t = 0; t < max_len; ++t) {
    auto step = session.step(prev, Mode::Eval, unused);
    if (step.alpha.defined()) out.alpha.push_back(step.alpha.value());
    const auto& logits = step.logits.value();
    int best = 0;
    for (int v = 1; v < static_cast<int>(logits.size()); ++v) {
      if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(best)]) best = v;
    }
    out.tokens.push_back(best);
    if (best == kEos) break;
    prev = best;
  }
  return out;
}

std::vector<BeamHypothesis> beam_search(const ModelParams& params, const CnnParams* cnn,
                                        const std::vector<int>& source,
                                        const std::vector<int>& context, int B, int max_len,
                                        double gamma) {
  if (B < 1) throw ContractError("beam_search: B must be >= 1");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");
  NoGradGuard ng;
  SeededRng unused(0);
  const Tensor c = raw_context(params, cnn, context.empty() ? source : context);
  EncodedSource enc = encode_source(source, params, Mode::Eval, unused);
  DecoderSession session(params, enc, c);

  struct Live {
    std::vector<int> tokens;
    double logprob = 0.0;
    LstmState state;
  };
  std::vector<Live> live;
  live.push_back({{}, 0.0, session.state()});
  std::vector<BeamHypothesis> pool;

  const auto norm_score = [gamma](double logprob, size_t len) {
    return gamma == 0.0 ? logprob : logprob / std::pow(static_cast<double>(len), gamma);
  };

  for (int step_i = 0; step_i < max_len && !live.empty(); ++step_i) {
    struct Cand {
      std::vector<int> tokens;
      double logprob;
      size_t origin;
    };
    std::vector<Cand> cands;
    std::vector<LstmState> next_states(live.size());
    for (size_t h = 0; h < live.size(); ++h) {
      session.set_state(live[h].state);
      const int prev = live[h].tokens.empty() ? kBos : live[h].tokens.back();
      auto step = session.step(prev, Mode::Eval, unused);
      next_states[h] = session.state();
      const auto lp = log_softmax_values(step.logits.value());
      for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
        Cand cand;
        cand.tokens = live[h].tokens;
        cand.tokens.push_back(v);
        cand.logprob = live[h].logprob + lp[static_cast<size_t>(v)];
        cand.origin = h;
        cands.push_back(std::move(cand));
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.tokens < b.tokens;
    });
    if (static_cast<int>(cands.size()) > B) cands.resize(static_cast<size_t>(B));

    std::vector<Live> next_live;
    for (auto& cand : cands) {
      if (cand.tokens.back() == kEos) {
        BeamHypothesis hyp;
        hyp.tokens = std::move(cand.tokens);
        hyp.logprob = cand.logprob;
        hyp.score = norm_score(cand.logprob, hyp.tokens.size());
        hyp.finished = true;
        pool.push_back(std::move(hyp));
      } else {
        next_live.push_back({std::move(cand.tokens), cand.logprob, next_states[cand.origin]});
      }
    }
    live = std::move(next_live);
  }

  if (pool.empty()) {
    // Nothing finished: hand back the best live hypothesis, flagged.
    BeamHypothesis best;
    bool have = false;
    for (const auto& l : live) {
      BeamHypothesis hyp;
      hyp.tokens = l.tokens;
      hyp.logprob = l.logprob;
      hyp.score = norm_score(l.logprob, std::max<size_t>(1, l.tokens.size()));
      hyp.finished = false;
      if (!have || hyp.score > best.score ||
          (hyp.score == best.score && hyp.tokens < best.tokens)) {
        best = hyp;
        have = true;
      }
    }
    if (!have) throw ContractError("beam_search: no hypotheses produced");
    return {best};
  }
  std::sort(pool.begin(), pool.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  if (static_cast<int>(pool.size()) > B) pool.resize(static_cast<size_t>(B));
  return pool;
}

// ---------------------------------------------------------------------------
// Chat sessions
// ---------------------------------------------------------------------------

ChatSession::ChatSession(const ModelParams& model, const CnnParams* cnn, const Vocabulary& vocab,
                         int window, DecodeSettings settings)
    : model_(model), cnn_(cnn), vocab_(vocab), window_(window), settings_(settings) {
  if (window_ < 1) throw ConfigError("chat window must be >= 1");
  if (kind_is_contextual(model.config.kind) && !cnn) {
    throw ContractError("contextual model needs a topic encoder for chat");
  }
}

std::vector<int> ChatSession::context_ids() const {
  std::vector<std::vector<int>> recent_first;
  for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
    if (static_cast<int>(recent_first.size()) >= window_) break;
    recent_first.push_back(vocab_.encode(*it));
  }
  if (recent_first.empty()) throw ContractError("chat context requested with empty history");
  return concat_context(recent_first, model_.config.max_context_len);
}

std::string ChatSession::turn(const std::string& utterance) {
  if (utterance.empty()) throw ContractError("chat_turn: empty utterance");
  history_.push_back(utterance);
  const std::vector<int> source = vocab_.encode(utterance);
  const std::vector<int> ctx = context_ids();
  auto hyps = beam_search(model_, cnn_, source, ctx, settings_.beam, settings_.max_len,
                          settings_.gamma);
  const std::string response = vocab_.decode_text(hyps.front().tokens);
  history_.push_back(response);
  while (static_cast<int>(history_.size()) > window_) history_.erase(history_.begin());
  return response;
}

void ChatSession::reset() { history_.clear(); }

std::vector<double> ChatSession::current_topic() const {
  if (!cnn_ || history_.empty()) return {};
  NoGradGuard ng;
  SeededRng unused(0);
  return cnn_forward(context_ids(), *cnn_, Mode::Eval, unused).topic.value();
}

// ---------------------------------------------------------------------------
// Attention traces
// ---------------------------------------------------------------------------

AttentionTrace attention_trace(const ModelParams& params, const CnnParams* cnn,
                               const Vocabulary& vocab, const std::string& source_text,
                               const std::vector<std::string>& history_recent_first,
                               int max_len) {
  if (!kind_has_attention(params.config.kind)) {
    throw ContractError("attention trace requested for a kind without attention");
  }
  NoGradGuard ng;
  SeededRng unused(0);
  const std::vector<int> source = vocab.encode(source_text);
  if (source.empty()) throw ContractError("attention_trace: empty source");

  Tensor c;
  if (kind_is_contextual(params.config.kind)) {
    if (!cnn) throw ContractError("contextual model traced without a topic encoder");
    std::vector<std::vector<int>> hist;
    if (history_recent_first.empty()) {
      hist.push_back(source);
    } else {
      for (const auto& u : history_recent_first) hist.push_back(vocab.encode(u));
    }
    c = context_tensor(infer_context(hist, *cnn, params.config.max_context_len));
  }

  EncodedSource enc = encode_source(source, params, Mode::Eval, unused);
  DecoderSession session(params, enc, c);

  AttentionTrace trace;
  for (int id : source) trace.source_tokens.push_back(vocab.token(id));
  if (c.defined()) trace.context = c.value();
  if (session.gates().defined()) {
    const Tensor& g = session.gates();
    for (int t = 0; t < g.extent(0); ++t) {
      std::vector<double> grow(g.value().begin() + static_cast<size_t>(t) * g.extent(1),
                               g.value().begin() + static_cast<size_t>(t + 1) * g.extent(1));
      trace.gates.push_back(std::move(grow));
    }
  }

  int prev = kBos;
  for (int t = 0; t < max_len; ++t) {
    auto step = session.step(prev, Mode::Eval, unused);
    trace.alpha.push_back(step.alpha.value());
    const auto& logits = step.logits.value();
    int best = 0;
    for (int v = 1; v < static_cast<int>(logits.size()); ++v) {
      if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(best)]) best = v;
    }
    trace.target_tokens.push_back(vocab.token(best));
    if (best == kEos) break;
    prev = best;
  }
  return trace;
}

std::string AttentionTrace::to_json() const {
  json j;
  j["source"] = source_tokens;
  j["target"] = target_tokens;
  j["alpha"] = alpha;
  j["gates"] = gates.empty() ? json(nullptr) : json(gates);
  j["context"] = context;
  return j.dump(2);
}

std::string AttentionTrace::to_ascii() const {
  static const char* ramp = " .:-=+*#%@";
  std::string out;
  out += "target \\ source";
  for (const auto& s : source_tokens) out += " " + s;
  out += "\n";
  for (size_t t = 0; t < alpha.size(); ++t) {
    out += (t < target_tokens.size() ? target_tokens[t] : "?");
    out += " |";
    for (double w : alpha[t]) {
      const int level = std::min(9, std::max(0, static_cast<int>(w * 10.0)));
      out += ' ';
      out += ramp[level];
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Robustness probe
// ---------------------------------------------------------------------------

NoiseSpec NoiseSpec::parse(const std::string& text, const Vocabulary& vocab) {
  NoiseSpec spec;
  std::string head = text;
  std::string rest;
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    head = text.substr(0, colon);
    rest = text.substr(colon + 1);
  }
  if (head == "none") spec.kind = Kind::None;
  else if (head == "insert") spec.kind = Kind::Insert;
  else if (head == "substitute") spec.kind = Kind::Substitute;
  else if (head == "prepend") spec.kind = Kind::Prepend;
  else if (head == "append") spec.kind = Kind::Append;
  else throw ConfigError("unknown noise kind \"" + head + "\"");

  size_t pos = 0;
  while (pos < rest.size()) {
    auto comma = rest.find(',', pos);
    if (comma == std::string::npos) comma = rest.size();
    const std::string field = rest.substr(pos, comma - pos);
    pos = comma + 1;
    if (field.empty()) continue;
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("noise spec field needs key=value: " + field);
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "count") {
      spec.count = std::stoi(val);
      if (spec.count < 1) throw ConfigError("noise count must be >= 1");
    } else if (key == "pool") {
      spec.pool = utf8_chars(val);
    } else {
      throw ConfigError("unknown noise spec key \"" + key + "\"");
    }
  }
  if (spec.pool.empty() && spec.kind != Kind::None) {
    for (int id = kNumSpecial; id < vocab.size(); ++id) spec.pool.push_back(vocab.token(id));
  }
  return spec;
}

namespace {

std::string apply_noise(const std::string& base, const NoiseSpec& spec, SeededRng& rng) {
  auto chars = utf8_chars(base);
  switch (spec.kind) {
    case NoiseSpec::Kind::None:
      break;
    case NoiseSpec::Kind::Insert:
      for (int i = 0; i < spec.count; ++i) {
        const size_t pos = static_cast<size_t>(rng.next_below(chars.size() + 1));
        chars.insert(chars.begin() + static_cast<long>(pos),
                     spec.pool[static_cast<size_t>(rng.next_below(spec.pool.size()))]);
      }
      break;
    case NoiseSpec::Kind::Substitute:
      for (int i = 0; i < spec.count && !chars.empty(); ++i) {
        const size_t pos = static_cast<size_t>(rng.next_below(chars.size()));
        chars[pos] = spec.pool[static_cast<size_t>(rng.next_below(spec.pool.size()))];
      }
      break;
    case NoiseSpec::Kind::Prepend:
      for (int i = 0; i < spec.count; ++i) {
        chars.insert(chars.begin(),
                     spec.pool[static_cast<size_t>(rng.next_below(spec.pool.size()))]);
      }
      break;
    case NoiseSpec::Kind::Append:
      for (int i = 0; i < spec.count; ++i) {
        chars.push_back(spec.pool[static_cast<size_t>(rng.next_below(spec.pool.size()))]);
      }
      break;
  }
  std::string out;
  for (const auto& ch : chars) out += ch;
  return out;
}

}  // namespace

RobustnessReport robustness_probe(const ModelParams& params, const CnnParams* cnn,
                                  const Vocabulary& vocab, const std::string& base,
                                  const NoiseSpec& noise, int trials, uint64_t seed,
                                  const SynthTables* tables, const DecodeSettings& settings) {
  if (trials < 1) throw ContractError("robustness_probe: trials must be >= 1");
  RobustnessReport rep;
  rep.base_input = base;
  rep.has_topic_classes = tables != nullptr;

  const auto respond = [&](const std::string& input) {
    const std::vector<int> src = vocab.encode(input);
    auto hyps = beam_search(params, cnn, src, src, settings.beam, settings.max_len,
                            settings.gamma);
    return vocab.decode_text(hyps.front().tokens);
  };

  rep.clean_response = respond(base);
  rep.clean_topic = tables ? tables->classify_topic(rep.clean_response) : -1;

  SeededRng rng = SeededRng(seed).child("noise");
  int exact = 0, stable = 0;
  for (int i = 0; i < trials; ++i) {
    ProbeVariant v;
    v.input = apply_noise(base, noise, rng);
    v.response = respond(v.input);
    v.exact_match = (v.response == rep.clean_response);
    if (tables) {
      v.response_topic = tables->classify_topic(v.response);
      v.topic_stable = (v.response_topic == rep.clean_topic);
    }
    exact += v.exact_match ? 1 : 0;
    stable += v.topic_stable ? 1 : 0;
    rep.variants.push_back(std::move(v));
  }
  rep.exact_match_fraction = static_cast<double>(exact) / trials;
  rep.topic_stable_fraction = static_cast<double>(stable) / trials;
  return rep;
}

std::string RobustnessReport::to_json() const {
  json j;
  j["base_input"] = base_input;
  j["clean_response"] = clean_response;
  j["exact_match_fraction"] = exact_match_fraction;
  j["topic_stable_fraction"] = has_topic_classes ? json(topic_stable_fraction) : json(nullptr);
  json vars = json::array();
  for (const auto& v : variants) {
    vars.push_back({{"input", v.input},
                    {"response", v.response},
                    {"exact_match", v.exact_match},
                    {"topic_stable", has_topic_classes ? json(v.topic_stable) : json(nullptr)}});
  }
  j["variants"] = vars;
  return j.dump(2);
}

}  // namespace ctxseq
