#include "ctxseq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ctxseq/topic_cnn.hpp"

namespace ctxseq {

void TrainConfig::validate() const {
  if (stages.empty()) throw ConfigError("training needs at least one stage");
  for (const auto& s : stages) {
    if (s.epochs < 0) throw ConfigError("stage epochs must be >= 0");
    if (s.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (s.lr <= 0.0) throw ConfigError("learning rate must be positive");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive (use +inf to disable)");
  if (window < 1) throw ConfigError("history window must be >= 1");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout fraction must be in [0,1)");
  }
}

StageData load_stage(const StageConfig& stage, const TrainConfig& cfg, const Vocabulary& vocab,
                     const ModelConfig& model_cfg, uint64_t seed, int stage_index) {
  const auto pairs_from_file = [&](const std::string& path) {
    std::vector<TrainingPair> pairs;
    if (stage.kind == StageConfig::Kind::QA) {
      // cQA context rule: the question itself.
      const auto examples = load_qa(path);
      std::set<std::string> labels;
      for (const auto& ex : examples) labels.insert(ex.label);
      std::vector<std::string> ordered(labels.begin(), labels.end());
      for (const auto& ex : examples) {
        const int li = static_cast<int>(
            std::lower_bound(ordered.begin(), ordered.end(), ex.label) - ordered.begin());
        pairs.push_back(pair_from_qa(ex, vocab, model_cfg.max_context_len, li));
      }
    } else {
      // Conversation context rule: current plus previous turns, window w.
      for (const auto& d : load_dialogue(path)) {
        auto dp = pairs_from_dialogue(d, vocab, cfg.window, model_cfg.max_context_len);
        pairs.insert(pairs.end(), dp.begin(), dp.end());
      }
    }
    return pairs;
  };

  StageData data;
  data.train = pairs_from_file(stage.corpus_path);
  if (!stage.test_path.empty()) {
    data.held_out = pairs_from_file(stage.test_path);
  } else if (cfg.holdout_fraction > 0.0) {
    // Seeded shuffle, last fraction becomes the held-out split.
    SeededRng rng = SeededRng(seed).child("split-stage" + std::to_string(stage_index));
    std::vector<size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const size_t n_held = static_cast<size_t>(cfg.holdout_fraction *
                                              static_cast<double>(data.train.size()));
    std::vector<TrainingPair> train_kept, held;
    for (size_t i = 0; i < order.size(); ++i) {
      if (i + n_held >= order.size()) {
        held.push_back(data.train[order[i]]);
      } else {
        train_kept.push_back(data.train[order[i]]);
      }
    }
    data.train = std::move(train_kept);
    data.held_out = std::move(held);
  }
  if (cfg.test_size > 0 && static_cast<int>(data.held_out.size()) > cfg.test_size) {
    data.held_out.resize(static_cast<size_t>(cfg.test_size));
  }
  return data;
}

ModelBundle make_initial_bundle(const ModelConfig& model_cfg, std::optional<CnnParams> cnn,
                                uint32_t vocab_hash, uint64_t seed, const std::string& precision) {
  if (kind_is_contextual(model_cfg.kind) && !cnn) {
    throw ConfigError(std::string(kind_name(model_cfg.kind)) + " needs a topic encoder");
  }
  if (cnn && cnn->config.topics != model_cfg.topics) {
    throw ConfigError("topic encoder K does not match model K");
  }
  ModelBundle b;
  SeededRng init_rng = SeededRng(seed).child("model-init");
  b.model = ModelParams::init(model_cfg, init_rng);
  b.cnn = std::move(cnn);
  b.vocab_hash = vocab_hash;
  b.seed = seed;
  b.precision = precision;
  return b;
}

namespace {

std::vector<std::pair<std::string, Tensor>> trainable_tensors(ModelBundle& bundle,
                                                              bool finetune_cnn) {
  auto named = bundle.model.named();
  if (finetune_cnn && bundle.cnn) {
    for (auto& nt : bundle.cnn->named()) named.push_back(nt);
  }
  return named;
}

// Frozen-encoder context vectors, computed once per stage.
std::vector<Tensor> precompute_contexts(const std::vector<TrainingPair>& pairs,
                                        const ModelBundle& bundle) {
  std::vector<Tensor> out(pairs.size());
  if (!kind_is_contextual(bundle.model.config.kind)) return out;
  for (size_t i = 0; i < pairs.size(); ++i) {
    out[i] = context_tensor(
        infer_context({pairs[i].context_tokens}, *bundle.cnn,
                      bundle.model.config.max_context_len));
  }
  return out;
}

}  // namespace

TrainOutput train_model(ModelBundle bundle, const TrainConfig& cfg, const Vocabulary& vocab,
                        const std::string& ckpt_dir) {
  (void)vocab;
  cfg.validate();
  bundle.model.config.validate();
  const DecoderKind kind = bundle.model.config.kind;
  const bool contextual = kind_is_contextual(kind);
  if (contextual && !bundle.cnn) throw ConfigError("contextual kind without topic encoder");

  TrainOutput out;
  auto named = trainable_tensors(bundle, cfg.finetune_cnn);

  for (int stage_i = bundle.stage; stage_i < static_cast<int>(cfg.stages.size()); ++stage_i) {
    const StageConfig& stage = cfg.stages[static_cast<size_t>(stage_i)];
    StageData data = load_stage(stage, cfg, vocab, bundle.model.config, bundle.seed, stage_i);
    std::vector<Tensor> contexts;
    std::vector<Tensor> held_contexts;
    if (contextual && !cfg.finetune_cnn) contexts = precompute_contexts(data.train, bundle);

    // Adam state per tensor; learning rate comes from the stage.
    for (auto& [name, t] : named) {
      auto it = bundle.adam.find(name);
      if (it == bundle.adam.end()) {
        AdamState st;
        st.init(t.value().size());
        bundle.adam.emplace(name, std::move(st));
      }
      bundle.adam.at(name).alpha = stage.lr;
    }

    const int first_epoch = (stage_i == bundle.stage) ? bundle.epoch : 0;
    for (int epoch = first_epoch; epoch < stage.epochs; ++epoch) {
      SeededRng epoch_rng =
          SeededRng(bundle.seed).child("stage" + std::to_string(stage_i) + ".epoch" +
                                       std::to_string(epoch));
      SeededRng shuffle_rng = epoch_rng.child("shuffle");
      SeededRng dropout_rng = epoch_rng.child("dropout");
      auto batches = make_batches(data.train, stage.batch_size, true, shuffle_rng);

      double epoch_nll = 0.0;
      long epoch_tokens = 0;
      for (size_t batch_i = 0; batch_i < batches.size(); ++batch_i) {
        const Batch& batch = batches[batch_i];
        for (auto& [name, t] : named) t.zero_grad();

        std::vector<Tensor> nlls;
        long batch_tokens = 0;
        for (size_t rowi = 0; rowi < batch.source.size(); ++rowi) {
          TrainingPair pair = unpad_row(batch, rowi);
          Tensor c;
          if (contextual) {
            if (cfg.finetune_cnn) {
              SeededRng cnn_rng = dropout_rng.child("cnn" + std::to_string(rowi));
              c = cnn_forward(pair.context_tokens, *bundle.cnn, Mode::Eval, cnn_rng).topic;
            } else {
              c = contexts[batch.pair_indices[rowi]];
            }
          }
          SequenceScore score = sequence_logprob(bundle.model, pair, c, Mode::Train, dropout_rng);
          nlls.push_back(score.nll);
          batch_tokens += score.tokens;
        }
        Tensor batch_loss = scale(sum(concat(nlls)), 1.0 / static_cast<double>(batch_tokens));
        const double loss_value = batch_loss.item();
        backward(batch_loss);

        if (!std::isfinite(loss_value)) {
          // Diagnostics: name the parameter with the largest finite |grad|
          // (or the first non-finite one).
          std::string worst = "?";
          double worst_mag = -1.0;
          for (auto& [name, t] : named) {
            for (double g : t.grad()) {
              if (!std::isfinite(g)) {
                worst = name + " (non-finite)";
                worst_mag = std::numeric_limits<double>::infinity();
                break;
              }
              if (std::fabs(g) > worst_mag) {
                worst_mag = std::fabs(g);
                worst = name;
              }
            }
          }
          throw NumericError("non-finite loss at stage " + std::to_string(stage_i) + " batch " +
                             std::to_string(batch_i) + "; max-|grad| parameter: " + worst);
        }

        std::vector<std::vector<double>*> gradrefs;
        for (auto& [name, t] : named) gradrefs.push_back(&t.grad_buffer());
        clip_global_norm(gradrefs, cfg.clip_norm);
        for (auto& [name, t] : named) adam_step(t, t.grad(), bundle.adam.at(name));
        if (cfg.finetune_cnn && bundle.cnn) {
          for (int ccol = 0; ccol < bundle.cnn->config.embed_dim; ++ccol) {
            bundle.cnn->embedding.value()[static_cast<size_t>(ccol)] = 0.0;
          }
        }

        epoch_nll += loss_value * static_cast<double>(batch_tokens);
        epoch_tokens += batch_tokens;
        bundle.step += 1;
      }

      HistoryRow row;
      row.stage = stage_i;
      row.epoch = epoch;
      row.step = bundle.step;
      row.train_loss = epoch_tokens > 0 ? epoch_nll / static_cast<double>(epoch_tokens) : 0.0;
      const bool eval_now = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0) &&
                            !data.held_out.empty();
      if (eval_now) {
        PerplexityReport rep =
            perplexity(bundle.model, bundle.cnn ? &*bundle.cnn : nullptr, data.held_out);
        row.ppl_short = rep.bucket_short.ppl;
        row.ppl_long = rep.bucket_long.ppl;
      }
      out.history.push_back(row);
      bundle.epoch = epoch + 1;
    }

    bundle.stage = stage_i + 1;
    bundle.epoch = 0;
    if (!ckpt_dir.empty()) {
      checkpoint_save(ckpt_dir + "/stage" + std::to_string(stage_i + 1) + ".ckpt",
                      bundle.to_checkpoint());
    }
  }

  if (!ckpt_dir.empty()) {
    checkpoint_save(ckpt_dir + "/model.ckpt", bundle.to_checkpoint());
  }
  out.bundle = std::move(bundle);
  return out;
}

void save_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "stage,epoch,step,train_loss,ppl_short,ppl_long\n";
  char buf[64];
  for (const auto& r : rows) {
    os << r.stage << "," << r.epoch << "," << r.step << ",";
    std::snprintf(buf, sizeof(buf), "%.6f", r.train_loss);
    os << buf << ",";
    if (r.ppl_short) {
      std::snprintf(buf, sizeof(buf), "%.6f", *r.ppl_short);
      os << buf;
    }
    os << ",";
    if (r.ppl_long) {
      std::snprintf(buf, sizeof(buf), "%.6f", *r.ppl_long);
      os << buf;
    }
    os << "\n";
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CorpusError("cannot open for writing: " + tmp);
    f << os.str();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw CorpusError("cannot rename history file onto " + path);
  }
}

}  // namespace ctxseq
