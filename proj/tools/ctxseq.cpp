// Command-line front end: data generation, classifier pre-training,
// curriculum training, evaluation, attention traces, robustness probes,
// and an interactive chat REPL.

#include <sys/stat.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ctxseq/checkpoint.hpp"
#include "ctxseq/corpus.hpp"
#include "ctxseq/eval.hpp"
#include "ctxseq/seq2seq.hpp"
#include "ctxseq/synth.hpp"
#include "ctxseq/topic_cnn.hpp"
#include "ctxseq/trainer.hpp"
#include "ctxseq/vocab.hpp"
#include "json.hpp"

using nlohmann::json;
using namespace ctxseq;

namespace {

// Exit codes: 0 success, 2 input/spec error, 3 numeric abort,
// 4 compatibility error, 5 capability error.
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCompat = 4;
constexpr int kExitCapability = 5;

struct CapabilityRefusal : Error {
  explicit CapabilityRefusal(const std::string& msg) : Error(msg) {}
};

struct CompatRefusal : Error {
  explicit CompatRefusal(const std::string& msg) : Error(msg) {}
};

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CorpusError("cannot open for writing: " + tmp);
    f << content;
    if (!f) throw CorpusError("failed writing: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw CorpusError("cannot rename onto " + path);
  }
}

void ensure_dir(const std::string& path) {
  struct stat st{};
  if (stat(path.c_str(), &st) == 0) {
    if (!S_ISDIR(st.st_mode)) throw CorpusError(path + " exists and is not a directory");
    return;
  }
  if (mkdir(path.c_str(), 0755) != 0) throw CorpusError("cannot create directory " + path);
}

// Line-oriented "key = value" config files with optional [section] headers
// (headers group keys visually; keys stay flat). File values apply only to
// flags not given on the command line.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(path + ":" + std::to_string(lineno) + ": bad section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

// Applies config-file values to CLI options the user did not pass.
// Unknown keys are errors, matching the unknown-flag contract.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  auto kv = read_config_file(path);
  for (const auto& [key, value] : kv) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) throw ConfigError("unknown config key \"" + key + "\" in " + path);
    if (opt->count() > 0) continue;  // flags override file values
    opt->add_result(value);
    opt->run_callback();
  }
}

void log_resolved(const CLI::App* cmd) {
  std::cerr << "# " << cmd->get_name() << " resolved config:\n";
  for (const auto* opt : cmd->get_options()) {
    if (opt->get_name() == "--help") continue;
    std::string value;
    auto results = opt->results();
    if (results.empty()) {
      value = opt->get_default_str();
    } else {
      for (size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    }
    std::cerr << "#   " << opt->get_name() << " = " << value << "\n";
  }
}

std::vector<TrainingPair> pairs_from_any_corpus(const std::string& path, const Vocabulary& vocab,
                                                int window, int max_context_len) {
  // Detect the schema from the first non-empty line.
  std::ifstream f(path);
  if (!f) throw CorpusError("cannot open corpus: " + path);
  std::string first;
  while (std::getline(f, first)) {
    if (!first.empty()) break;
  }
  if (first.empty()) throw CorpusError("empty corpus: " + path);
  json j = json::parse(first, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw CorpusError(path + ":1: not a JSON object");
  std::vector<TrainingPair> pairs;
  if (j.contains("turns")) {
    for (const auto& d : load_dialogue(path)) {
      auto dp = pairs_from_dialogue(d, vocab, window, max_context_len);
      pairs.insert(pairs.end(), dp.begin(), dp.end());
    }
  } else {
    std::set<std::string> labels;
    auto examples = load_qa(path);
    for (const auto& ex : examples) labels.insert(ex.label);
    std::vector<std::string> ordered(labels.begin(), labels.end());
    for (const auto& ex : examples) {
      const int li = static_cast<int>(
          std::lower_bound(ordered.begin(), ordered.end(), ex.label) - ordered.begin());
      pairs.push_back(pair_from_qa(ex, vocab, max_context_len, li));
    }
  }
  return pairs;
}

SynthTables tables_from_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CorpusError("cannot open manifest: " + path);
  json j;
  f >> j;
  SynthTables t;
  const auto& tab = j.at("tables");
  t.function_words = tab.at("function_words").get<std::vector<std::string>>();
  t.entities = tab.at("entities").get<std::vector<std::string>>();
  for (const auto& topic : tab.at("topics")) {
    t.labels.push_back(topic.at("label").get<std::string>());
    t.topic_content.push_back(topic.at("content").get<std::vector<std::string>>());
  }
  t.answer_table = tab.at("answers").get<std::vector<std::vector<std::string>>>();
  return t;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string spec_path;
  std::string out_dir;
  int64_t seed = -1;  // -1: keep the spec's seed
};

int cmd_gen_data(const GenDataArgs& args) {
  SyntheticSpec spec = args.spec_path.empty() ? SyntheticSpec{} : parse_synth_spec(args.spec_path);
  if (args.seed >= 0) spec.seed = static_cast<uint64_t>(args.seed);
  SynthData data = synth_generate(spec);
  ensure_dir(args.out_dir);

  // Build every artifact before writing anything, then write atomically.
  std::vector<std::string> all_texts;
  for (const auto& ex : data.qa_train) {
    all_texts.push_back(ex.question);
    all_texts.push_back(ex.answer);
  }
  for (const auto& d : data.dialogue_train) {
    for (const auto& t : d.turns) all_texts.push_back(t);
  }
  Vocabulary vocab = Vocabulary::build(all_texts, 1);

  json manifest;
  manifest["spec_hash"] = spec.hash();
  manifest["seed"] = spec.seed;
  manifest["counts"] = {{"qa_train", data.qa_train.size()},
                        {"qa_test", data.qa_test.size()},
                        {"dialogue_train", data.dialogue_train.size()},
                        {"dialogue_test", data.dialogue_test.size()}};
  json topics = json::array();
  for (size_t k = 0; k < data.tables.topic_content.size(); ++k) {
    topics.push_back({{"label", data.tables.labels[k]}, {"content", data.tables.topic_content[k]}});
  }
  manifest["tables"] = {{"function_words", data.tables.function_words},
                        {"entities", data.tables.entities},
                        {"topics", topics},
                        {"answers", data.tables.answer_table}};

  save_qa(args.out_dir + "/qa_train.jsonl", data.qa_train);
  save_qa(args.out_dir + "/qa_test.jsonl", data.qa_test);
  save_dialogue(args.out_dir + "/dialogue_train.jsonl", data.dialogue_train);
  save_dialogue(args.out_dir + "/dialogue_test.jsonl", data.dialogue_test);
  vocab.save(args.out_dir + "/vocab.txt");
  write_text_atomic(args.out_dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "wrote " << data.qa_train.size() << " train / " << data.qa_test.size()
            << " test QA pairs, " << data.dialogue_train.size() << " train / "
            << data.dialogue_test.size() << " test dialogues, vocab size " << vocab.size()
            << " to " << args.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

struct ClassifyArgs {
  std::string data_path;
  std::string vocab_path;
  int folds = 5;
  int64_t seed = 7;
  CnnConfig cnn;
  int epochs = 3;
  double lr = 1e-3;
};

int cmd_classify(const ClassifyArgs& args) {
  if (args.folds < 2) throw ConfigError("--folds must be >= 2");
  auto examples = load_qa(args.data_path);
  if (examples.empty()) throw CorpusError("no examples in " + args.data_path);

  Vocabulary vocab;
  if (!args.vocab_path.empty()) {
    vocab = Vocabulary::load(args.vocab_path);
  } else {
    std::vector<std::string> texts;
    for (const auto& ex : examples) texts.push_back(ex.question);
    vocab = Vocabulary::build(texts, 1);
  }

  std::set<std::string> labels;
  for (const auto& ex : examples) labels.insert(ex.label);
  std::vector<std::string> ordered(labels.begin(), labels.end());

  CnnConfig cfg = args.cnn;
  cfg.vocab_size = vocab.size();
  cfg.topics = static_cast<int>(ordered.size());

  std::vector<LabeledTokens> data;
  for (const auto& ex : examples) {
    const int li = static_cast<int>(
        std::lower_bound(ordered.begin(), ordered.end(), ex.label) - ordered.begin());
    data.push_back({vocab.encode(ex.question), li});
  }

  CnnTrainOptions opts;
  opts.epochs = args.epochs;
  opts.lr = args.lr;
  opts.seed = static_cast<uint64_t>(args.seed);
  auto accs = cnn_cross_validate(data, cfg, args.folds, opts);
  double mean = 0.0;
  for (size_t i = 0; i < accs.size(); ++i) {
    std::ostringstream line;
    line.precision(4);
    line << std::fixed << "fold " << i << ": " << accs[i];
    std::cout << line.str() << "\n";
    mean += accs[i];
  }
  mean /= static_cast<double>(accs.size());
  std::ostringstream line;
  line.precision(4);
  line << std::fixed << "mean: " << mean;
  std::cout << line.str() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string model = "vanilla";  // kind name or "all"
  std::string stage1, stage2;
  std::string vocab_path;
  std::string out_dir;
  std::string cnn_ckpt;
  std::string resume;
  int64_t seed = 1;
  // model shape
  int n_layers = 2, hidden = 64, embed_dim = 32, topics = 8;
  double dropout = 0.2;
  int attn_conv_width = 3;
  int max_source_len = 96, max_target_len = 64, max_context_len = 96;
  // training
  int epochs1 = 2, epochs2 = 3, batch = 32;
  double lr1 = 1e-3, lr2 = 1e-3, clip = 5.0;
  int window = 2, test_size = 2000, eval_every = 1;
  double holdout = 0.05;
  bool finetune_cnn = false;
  std::string precision = "f64";
  // cnn pre-training
  int cnn_embed = 32, cnn_filters = 16, cnn_k_top = 4, cnn_epochs = 3;
  double cnn_lr = 1e-3, cnn_dropout = 0.2;
};

CnnParams pretrain_cnn(const TrainArgs& args, const Vocabulary& vocab) {
  auto examples = load_qa(args.stage1);
  std::set<std::string> labels;
  for (const auto& ex : examples) labels.insert(ex.label);
  std::vector<std::string> ordered(labels.begin(), labels.end());
  if (static_cast<int>(ordered.size()) > args.topics) {
    throw ConfigError("stage1 corpus has " + std::to_string(ordered.size()) +
                      " labels but K = " + std::to_string(args.topics));
  }
  CnnConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.embed_dim = args.cnn_embed;
  cfg.filters = args.cnn_filters;
  cfg.k_top = args.cnn_k_top;
  cfg.topics = args.topics;
  cfg.layer2_filters = args.cnn_filters;
  cfg.dropout = args.cnn_dropout;

  std::vector<LabeledTokens> data;
  for (const auto& ex : examples) {
    const int li = static_cast<int>(
        std::lower_bound(ordered.begin(), ordered.end(), ex.label) - ordered.begin());
    data.push_back({vocab.encode(ex.question), li});
  }
  SeededRng rng = SeededRng(static_cast<uint64_t>(args.seed)).child("cnn-init");
  CnnParams params = CnnParams::init(cfg, rng);
  CnnTrainOptions opts;
  opts.epochs = args.cnn_epochs;
  opts.lr = args.cnn_lr;
  opts.seed = rng.child("cnn-train").seed();
  cnn_train_supervised(data, params, opts);
  std::cerr << "# topic encoder pre-trained, train accuracy " << cnn_accuracy(data, params)
            << "\n";
  return params;
}

int cmd_train(const TrainArgs& args) {
  Vocabulary vocab = Vocabulary::load(args.vocab_path);
  ensure_dir(args.out_dir);

  std::vector<DecoderKind> kinds;
  if (args.model == "all") {
    kinds = {DecoderKind::Vanilla, DecoderKind::SoftAttention, DecoderKind::ContextIn,
             DecoderKind::ContextIO, DecoderKind::ContextAttn};
  } else {
    kinds = {kind_from_name(args.model)};
  }

  TrainConfig tc;
  StageConfig s1;
  s1.kind = StageConfig::Kind::QA;
  s1.corpus_path = args.stage1;
  s1.epochs = args.epochs1;
  s1.batch_size = args.batch;
  s1.lr = args.lr1;
  tc.stages.push_back(s1);
  if (!args.stage2.empty()) {
    StageConfig s2;
    s2.kind = StageConfig::Kind::Dialogue;
    s2.corpus_path = args.stage2;
    s2.epochs = args.epochs2;
    s2.batch_size = args.batch;
    s2.lr = args.lr2;
    tc.stages.push_back(s2);
  }
  tc.seed = static_cast<uint64_t>(args.seed);
  tc.clip_norm = args.clip;
  tc.eval_every = args.eval_every;
  tc.window = args.window;
  tc.test_size = args.test_size;
  tc.holdout_fraction = args.holdout;
  tc.finetune_cnn = args.finetune_cnn;

  std::optional<CnnParams> shared_cnn;
  const bool any_contextual = std::any_of(kinds.begin(), kinds.end(), kind_is_contextual);
  if (any_contextual) {
    if (!args.cnn_ckpt.empty()) {
      Checkpoint ck = checkpoint_load(args.cnn_ckpt);
      ModelBundle b = ModelBundle::from_checkpoint(ck);
      if (!b.cnn) throw LoadError("checkpoint " + args.cnn_ckpt + " carries no topic encoder");
      shared_cnn = std::move(b.cnn);
    } else {
      shared_cnn = pretrain_cnn(args, vocab);
    }
  }

  for (DecoderKind kind : kinds) {
    ModelConfig mc;
    mc.kind = kind;
    mc.n_layers = args.n_layers;
    mc.hidden = args.hidden;
    mc.embed_dim = args.embed_dim;
    mc.vocab_size = vocab.size();
    mc.topics = args.topics;
    mc.dropout = args.dropout;
    mc.attn_conv_width = args.attn_conv_width;
    mc.max_source_len = args.max_source_len;
    mc.max_target_len = args.max_target_len;
    mc.max_context_len = args.max_context_len;

    const std::string kind_dir = args.out_dir + "/" + kind_name(kind);
    ensure_dir(kind_dir);

    ModelBundle bundle;
    if (!args.resume.empty()) {
      Checkpoint ck = checkpoint_load(args.resume);
      require_compatible(ck, mc);
      bundle = ModelBundle::from_checkpoint(ck);
    } else {
      bundle = make_initial_bundle(
          mc, kind_is_contextual(kind) ? shared_cnn : std::optional<CnnParams>(),
          vocab.content_hash(), tc.seed, args.precision);
    }

    TrainOutput out = train_model(std::move(bundle), tc, vocab, kind_dir);
    save_history_csv(kind_dir + "/history.csv", out.history);
    std::cout << kind_name(kind) << ": trained " << out.history.size() << " epochs, final loss "
              << (out.history.empty() ? 0.0 : out.history.back().train_loss) << ", checkpoint "
              << kind_dir << "/model.ckpt\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, test_path, vocab_path, train_path, report_path;
  bool json_out = false;
  int window = 2;
};

int cmd_eval(const EvalArgs& args) {
  Checkpoint ck = checkpoint_load(args.ckpt);
  ModelBundle bundle = ModelBundle::from_checkpoint(ck);
  Vocabulary vocab = Vocabulary::load(args.vocab_path);
  if (vocab.content_hash() != bundle.vocab_hash) {
    throw CompatRefusal("vocabulary hash mismatch: checkpoint was trained with a different vocabulary");
  }

  auto pairs = pairs_from_any_corpus(args.test_path, vocab, args.window,
                                     bundle.model.config.max_context_len);
  if (!args.train_path.empty()) {
    auto train_pairs = pairs_from_any_corpus(args.train_path, vocab, args.window,
                                             bundle.model.config.max_context_len);
    std::set<std::string> seen;
    const auto key = [](const TrainingPair& p) {
      std::string k;
      for (int id : p.source) k += std::to_string(id) + ",";
      k += "|";
      for (int id : p.context_tokens) k += std::to_string(id) + ",";
      return k;
    };
    for (const auto& p : train_pairs) seen.insert(key(p));
    for (const auto& p : pairs) {
      if (seen.count(key(p))) {
        throw CorpusError("test pair overlaps the training set (source+context hash match)");
      }
    }
  }

  PerplexityReport rep = perplexity(bundle.model, bundle.cnn ? &*bundle.cnn : nullptr, pairs);
  if (args.json_out) {
    std::cout << rep.to_json() << "\n";
  } else {
    std::cout << "pairs: " << rep.total_pairs << " (excluded 20..30: " << rep.excluded_count
              << ")\n";
    std::cout << "short (<20): n=" << rep.bucket_short.count << " ppl="
              << (rep.bucket_short.ppl ? std::to_string(*rep.bucket_short.ppl) : "n/a") << "\n";
    std::cout << "long  (>30): n=" << rep.bucket_long.count << " ppl="
              << (rep.bucket_long.ppl ? std::to_string(*rep.bucket_long.ppl) : "n/a") << "\n";
    std::cout << "overall ppl: " << rep.overall << "\n";
  }
  if (!args.report_path.empty()) write_text_atomic(args.report_path, rep.to_json() + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// chat
// ---------------------------------------------------------------------------

struct ChatArgs {
  std::string ckpt, vocab_path;
  int beam = 5;
  int window = 2;
  double gamma = 0.6;
  int max_len = 64;
};

int cmd_chat(const ChatArgs& args) {
  Checkpoint ck = checkpoint_load(args.ckpt);
  ModelBundle bundle = ModelBundle::from_checkpoint(ck);
  Vocabulary vocab = Vocabulary::load(args.vocab_path);
  if (vocab.content_hash() != bundle.vocab_hash) {
    throw CompatRefusal("vocabulary hash mismatch with checkpoint");
  }
  DecodeSettings settings;
  settings.beam = args.beam;
  settings.gamma = args.gamma;
  settings.max_len = args.max_len;
  ChatSession session(bundle.model, bundle.cnn ? &*bundle.cnn : nullptr, vocab, args.window,
                      settings);

  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    if (line == "/quit") break;
    if (line == "/reset") {
      session.reset();
      std::cout << "(history cleared)\n";
      continue;
    }
    if (line == "/topic") {
      const auto probs = session.current_topic();
      if (probs.empty()) {
        std::cout << "(no topic encoder or empty history)\n";
      } else {
        const int arg = static_cast<int>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        std::cout << "topic argmax: " << arg << " [";
        for (size_t i = 0; i < probs.size(); ++i) {
          char buf[16];
          std::snprintf(buf, sizeof(buf), "%.3f", probs[i]);
          std::cout << (i ? " " : "") << buf;
        }
        std::cout << "]\n";
      }
      continue;
    }
    try {
      const std::string response = session.turn(line);
      std::cout << (response.empty() ? "..." : response) << "\n";
    } catch (const Error& e) {
      std::cout << "(sorry, I could not answer that: " << e.what() << ")\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

struct VizArgs {
  std::string ckpt, vocab_path, input, context, out_path;
  bool ascii = false;
  int max_len = 64;
};

int cmd_viz(const VizArgs& args) {
  Checkpoint ck = checkpoint_load(args.ckpt);
  ModelBundle bundle = ModelBundle::from_checkpoint(ck);
  if (!kind_has_attention(bundle.model.config.kind)) {
    throw CapabilityRefusal(std::string("model kind ") + kind_name(bundle.model.config.kind) +
                            " has no attention to visualize");
  }
  Vocabulary vocab = Vocabulary::load(args.vocab_path);
  if (vocab.content_hash() != bundle.vocab_hash) {
    throw CompatRefusal("vocabulary hash mismatch with checkpoint");
  }
  std::vector<std::string> history;
  history.push_back(args.input);
  if (!args.context.empty()) history.push_back(args.context);  // most recent first
  AttentionTrace trace = attention_trace(bundle.model, bundle.cnn ? &*bundle.cnn : nullptr, vocab,
                                         args.input, history, args.max_len);
  if (args.ascii) {
    std::cout << trace.to_ascii();
  } else {
    std::cout << trace.to_json() << "\n";
  }
  if (!args.out_path.empty()) write_text_atomic(args.out_path, trace.to_json() + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeArgs {
  std::string ckpt, ckpt2, vocab_path, input, noise = "insert", manifest, out_path;
  int trials = 20;
  int64_t seed = 11;
  int beam = 5;
  double gamma = 0.6;
  int max_len = 64;
};

int cmd_probe(const ProbeArgs& args) {
  Vocabulary vocab = Vocabulary::load(args.vocab_path);
  std::optional<SynthTables> tables;
  if (!args.manifest.empty()) tables = tables_from_manifest(args.manifest);
  NoiseSpec noise = NoiseSpec::parse(args.noise, vocab);
  DecodeSettings settings;
  settings.beam = args.beam;
  settings.gamma = args.gamma;
  settings.max_len = args.max_len;

  const auto run_one = [&](const std::string& ckpt_path) {
    Checkpoint ck = checkpoint_load(ckpt_path);
    ModelBundle bundle = ModelBundle::from_checkpoint(ck);
    if (vocab.content_hash() != bundle.vocab_hash) {
      throw CompatRefusal("vocabulary hash mismatch with checkpoint " + ckpt_path);
    }
    RobustnessReport rep = robustness_probe(
        bundle.model, bundle.cnn ? &*bundle.cnn : nullptr, vocab, args.input, noise, args.trials,
        static_cast<uint64_t>(args.seed), tables ? &*tables : nullptr, settings);
    return std::make_pair(std::string(kind_name(bundle.model.config.kind)), rep);
  };

  auto [kind1, rep1] = run_one(args.ckpt);
  std::cout << "model " << kind1 << ": clean response \"" << rep1.clean_response << "\"\n";
  std::cout << "exact-match stability: " << rep1.exact_match_fraction << "\n";
  if (rep1.has_topic_classes) {
    std::cout << "topic-stable fraction: " << rep1.topic_stable_fraction << "\n";
  }
  for (const auto& v : rep1.variants) {
    std::cout << "  \"" << v.input << "\" -> \"" << v.response << "\""
              << (v.exact_match ? "" : "  [changed]") << "\n";
  }
  if (!args.out_path.empty()) write_text_atomic(args.out_path, rep1.to_json() + "\n");

  if (!args.ckpt2.empty()) {
    auto [kind2, rep2] = run_one(args.ckpt2);
    std::cout << "\ncomparison (same noise, same seeds):\n";
    std::cout << "  model           exact-match   topic-stable\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "  %-15s %11.3f   %11.3f\n", kind1.c_str(),
                  rep1.exact_match_fraction, rep1.topic_stable_fraction);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "  %-15s %11.3f   %11.3f\n", kind2.c_str(),
                  rep2.exact_match_fraction, rep2.topic_stable_fraction);
    std::cout << buf;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual seq2seq toolkit"};
  app.require_subcommand(1);

  // gen-data
  GenDataArgs gen;
  CLI::App* cgen = app.add_subcommand("gen-data", "generate a synthetic topic-labeled corpus");
  cgen->add_option("--spec", gen.spec_path, "synthetic spec file (key = value)");
  cgen->add_option("--out", gen.out_dir, "output directory")->required();
  cgen->add_option("--seed", gen.seed, "override the spec seed");

  // classify
  ClassifyArgs cls;
  CLI::App* ccls = app.add_subcommand("classify", "k-fold question-category cross validation");
  ccls->add_option("--data", cls.data_path, "labeled QA jsonl")->required();
  ccls->add_option("--vocab", cls.vocab_path, "vocabulary file (default: build from data)");
  ccls->add_option("--folds", cls.folds, "number of folds");
  ccls->add_option("--seed", cls.seed, "rng seed");
  ccls->add_option("--epochs", cls.epochs, "training epochs per fold");
  ccls->add_option("--lr", cls.lr, "Adam learning rate");
  ccls->add_option("--embed-dim", cls.cnn.embed_dim, "embedding size");
  ccls->add_option("--filters", cls.cnn.filters, "filters per height");
  ccls->add_option("--k-top", cls.cnn.k_top, "top-layer pool size");
  ccls->add_option("--dropout", cls.cnn.dropout, "dropout rate");

  // train
  TrainArgs tr;
  CLI::App* ctr = app.add_subcommand("train", "two-stage curriculum training");
  ctr->add_option("--model", tr.model, "vanilla|soft_attention|context_in|context_io|context_attn|all");
  ctr->add_option("--stage1", tr.stage1, "cQA corpus (jsonl)")->required();
  ctr->add_option("--stage2", tr.stage2, "conversation corpus (jsonl)");
  ctr->add_option("--vocab", tr.vocab_path, "vocabulary file")->required();
  ctr->add_option("--out", tr.out_dir, "checkpoint directory")->required();
  ctr->add_option("--cnn", tr.cnn_ckpt, "pre-trained topic-encoder checkpoint");
  ctr->add_option("--resume", tr.resume, "resume from checkpoint");
  ctr->add_option("--seed", tr.seed, "training seed");
  ctr->add_option("--n-layers", tr.n_layers, "LSTM layers");
  ctr->add_option("--hidden", tr.hidden, "hidden size");
  ctr->add_option("--embed-dim", tr.embed_dim, "embedding size");
  ctr->add_option("--topics", tr.topics, "topic count K");
  ctr->add_option("--dropout", tr.dropout, "dropout rate");
  ctr->add_option("--attn-conv-width", tr.attn_conv_width, "attention key conv width");
  ctr->add_option("--max-source-len", tr.max_source_len, "source truncation");
  ctr->add_option("--max-target-len", tr.max_target_len, "target truncation");
  ctr->add_option("--max-context-len", tr.max_context_len, "context truncation");
  ctr->add_option("--epochs1", tr.epochs1, "stage-1 epochs");
  ctr->add_option("--epochs2", tr.epochs2, "stage-2 epochs");
  ctr->add_option("--batch", tr.batch, "batch size");
  ctr->add_option("--lr1", tr.lr1, "stage-1 learning rate");
  ctr->add_option("--lr2", tr.lr2, "stage-2 learning rate");
  ctr->add_option("--clip", tr.clip, "global-norm gradient clip");
  ctr->add_option("--window", tr.window, "dialogue history window");
  ctr->add_option("--test-size", tr.test_size, "held-out cap");
  ctr->add_option("--eval-every", tr.eval_every, "epochs between held-out evals");
  ctr->add_option("--holdout", tr.holdout, "held-out fraction when no test file");
  ctr->add_flag("--finetune-cnn", tr.finetune_cnn, "fine-tune the topic encoder");
  ctr->add_option("--precision", tr.precision, "checkpoint float width: f64|f32");
  ctr->add_option("--cnn-embed", tr.cnn_embed, "topic encoder embedding size");
  ctr->add_option("--cnn-filters", tr.cnn_filters, "topic encoder filters per height");
  ctr->add_option("--cnn-k-top", tr.cnn_k_top, "topic encoder pool size");
  ctr->add_option("--cnn-epochs", tr.cnn_epochs, "topic encoder pre-training epochs");
  ctr->add_option("--cnn-lr", tr.cnn_lr, "topic encoder learning rate");
  ctr->add_option("--cnn-dropout", tr.cnn_dropout, "topic encoder dropout");

  // eval
  EvalArgs ev;
  CLI::App* cev = app.add_subcommand("eval", "length-bucketed perplexity");
  cev->add_option("--ckpt", ev.ckpt, "model checkpoint")->required();
  cev->add_option("--test", ev.test_path, "test corpus (qa or dialogue jsonl)")->required();
  cev->add_option("--vocab", ev.vocab_path, "vocabulary file")->required();
  cev->add_option("--train", ev.train_path, "training corpus for disjointness verification");
  cev->add_option("--report", ev.report_path, "write the JSON report here");
  cev->add_flag("--json", ev.json_out, "print JSON instead of the text summary");
  cev->add_option("--window", ev.window, "dialogue history window");

  // chat
  ChatArgs ch;
  CLI::App* cch = app.add_subcommand("chat", "interactive REPL (/reset /topic /quit)");
  cch->add_option("--ckpt", ch.ckpt, "model checkpoint")->required();
  cch->add_option("--vocab", ch.vocab_path, "vocabulary file")->required();
  cch->add_option("--beam", ch.beam, "beam width");
  cch->add_option("--window", ch.window, "history window");
  cch->add_option("--gamma", ch.gamma, "length-normalization power");
  cch->add_option("--max-len", ch.max_len, "decode length cap");

  // viz
  VizArgs vz;
  CLI::App* cvz = app.add_subcommand("viz", "attention trace export");
  cvz->add_option("--ckpt", vz.ckpt, "model checkpoint")->required();
  cvz->add_option("--vocab", vz.vocab_path, "vocabulary file")->required();
  cvz->add_option("--input", vz.input, "source utterance")->required();
  cvz->add_option("--context", vz.context, "previous utterance for topic inference");
  cvz->add_option("--out", vz.out_path, "write the JSON trace here");
  cvz->add_flag("--ascii", vz.ascii, "render a monospace heat grid");
  cvz->add_option("--max-len", vz.max_len, "decode length cap");

  // probe
  ProbeArgs pr;
  CLI::App* cpr = app.add_subcommand("probe", "robustness under noisy inputs");
  cpr->add_option("--ckpt", pr.ckpt, "model checkpoint")->required();
  cpr->add_option("--ckpt2", pr.ckpt2, "second checkpoint for a paired comparison");
  cpr->add_option("--vocab", pr.vocab_path, "vocabulary file")->required();
  cpr->add_option("--input", pr.input, "base utterance")->required();
  cpr->add_option("--noise", pr.noise, "none|insert|substitute|prepend|append[:count=N,pool=...]");
  cpr->add_option("--manifest", pr.manifest, "dataset manifest for topic-equivalence classes");
  cpr->add_option("--trials", pr.trials, "number of noisy variants");
  cpr->add_option("--seed", pr.seed, "noise seed");
  cpr->add_option("--beam", pr.beam, "beam width");
  cpr->add_option("--gamma", pr.gamma, "length normalization");
  cpr->add_option("--max-len", pr.max_len, "decode length cap");
  cpr->add_option("--out", pr.out_path, "write the JSON report here");

  // A --config on any subcommand loads file values for flags not given.
  std::map<CLI::App*, std::string> config_paths;
  for (CLI::App* sub : {cgen, ccls, ctr, cev, cch, cvz, cpr}) {
    auto* holder = &config_paths[sub];
    sub->add_option("--config", *holder, "key = value config file (flags override)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    if (!config_paths[active].empty()) apply_config_file(active, config_paths[active]);
    log_resolved(active);
    if (active == cgen) return cmd_gen_data(gen);
    if (active == ccls) return cmd_classify(cls);
    if (active == ctr) return cmd_train(tr);
    if (active == cev) return cmd_eval(ev);
    if (active == cch) return cmd_chat(ch);
    if (active == cvz) return cmd_viz(vz);
    if (active == cpr) return cmd_probe(pr);
    return kExitInput;
  } catch (const CapabilityRefusal& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCapability;
  } catch (const CompatRefusal& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompat;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompat;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
