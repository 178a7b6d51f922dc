#include "ctxseq/synth.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ctxseq {

namespace {

std::string codepoint_utf8(uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xc0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xe0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else {
    out += static_cast<char>(0xf0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  }
  return out;
}

// Fixed symbol pool: Latin, digits, Greek, Cyrillic, then CJK as overflow.
std::string pool_symbol(size_t i) {
  static const std::vector<uint32_t> blocks_start = {'a', 'A', '0', 0x3b1, 0x391, 0x430, 0x410};
  static const std::vector<uint32_t> blocks_len = {26, 26, 10, 25, 17, 32, 32};
  size_t off = i;
  for (size_t b = 0; b < blocks_start.size(); ++b) {
    if (off < blocks_len[b]) return codepoint_utf8(blocks_start[b] + static_cast<uint32_t>(off));
    off -= blocks_len[b];
  }
  return codepoint_utf8(0x4e00 + static_cast<uint32_t>(off));
}

template <class T>
const T& pick(const std::vector<T>& v, SeededRng& rng) {
  return v[static_cast<size_t>(rng.next_below(v.size()))];
}

}  // namespace

std::string SyntheticSpec::canonical() const {
  std::ostringstream os;
  os << "content_per_topic=" << content_per_topic << "\n"
     << "dialogues_test=" << dialogues_test << "\n"
     << "dialogues_train=" << dialogues_train << "\n"
     << "entities=" << entities << "\n"
     << "function_words=" << function_words << "\n"
     << "long_answer_fraction=" << long_answer_fraction << "\n"
     << "noise_rate=" << noise_rate << "\n"
     << "overlap=" << overlap << "\n"
     << "qa_test_per_topic=" << qa_test_per_topic << "\n"
     << "qa_train_per_topic=" << qa_train_per_topic << "\n"
     << "seed=" << seed << "\n"
     << "topics=" << topics << "\n";
  return os.str();
}

uint32_t SyntheticSpec::hash() const {
  const std::string s = canonical();
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

SyntheticSpec parse_synth_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw SpecError("cannot open synthetic spec: " + path);
  SyntheticSpec spec;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    if (line.empty() || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw SpecError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto x = s.find_first_not_of(" \t");
      const auto y = s.find_last_not_of(" \t");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "topics") spec.topics = std::stoi(val);
      else if (key == "content_per_topic") spec.content_per_topic = std::stoi(val);
      else if (key == "entities") spec.entities = std::stoi(val);
      else if (key == "function_words") spec.function_words = std::stoi(val);
      else if (key == "overlap") spec.overlap = std::stod(val);
      else if (key == "qa_train_per_topic") spec.qa_train_per_topic = std::stoi(val);
      else if (key == "qa_test_per_topic") spec.qa_test_per_topic = std::stoi(val);
      else if (key == "dialogues_train") spec.dialogues_train = std::stoi(val);
      else if (key == "dialogues_test") spec.dialogues_test = std::stoi(val);
      else if (key == "long_answer_fraction") spec.long_answer_fraction = std::stod(val);
      else if (key == "noise_rate") spec.noise_rate = std::stod(val);
      else if (key == "seed") spec.seed = std::stoull(val);
      else throw SpecError(path + ":" + std::to_string(lineno) + ": unknown key \"" + key + "\"");
    } catch (const std::invalid_argument&) {
      throw SpecError(path + ":" + std::to_string(lineno) + ": bad value for \"" + key + "\"");
    }
  }
  return spec;
}

int SynthTables::classify_topic(const std::string& text) const {
  std::vector<int> votes(topic_content.size(), 0);
  for (const auto& ch : utf8_chars(text)) {
    for (size_t k = 0; k < topic_content.size(); ++k) {
      if (std::find(topic_content[k].begin(), topic_content[k].end(), ch) !=
          topic_content[k].end()) {
        ++votes[k];
      }
    }
  }
  int best = -1, best_votes = 0;
  for (size_t k = 0; k < votes.size(); ++k) {
    if (votes[k] > best_votes) {
      best_votes = votes[k];
      best = static_cast<int>(k);
    }
  }
  return best;
}

int SynthTables::entity_position(const std::vector<std::string>& tokens) const {
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (std::find(entities.begin(), entities.end(), tokens[i]) != entities.end()) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

int SynthTables::entity_index(const std::string& symbol) const {
  auto it = std::find(entities.begin(), entities.end(), symbol);
  return it == entities.end() ? -1 : static_cast<int>(it - entities.begin());
}

namespace {

struct Generator {
  const SyntheticSpec& spec;
  SynthTables tables;

  std::string question(int topic, int entity, SeededRng& rng) const {
    std::string q;
    const int n_content = 2 + static_cast<int>(rng.next_below(2));
    for (int i = 0; i < n_content; ++i) q += pick(tables.topic_content[topic], rng);
    q += pick(tables.function_words, rng);
    q += tables.entities[entity];
    q += pick(tables.function_words, rng);
    return q;
  }

  // Ambiguous form: entity plus function words only.
  std::string probe(int entity, SeededRng& rng) const {
    std::string q = pick(tables.function_words, rng);
    q += tables.entities[entity];
    q += pick(tables.function_words, rng);
    return q;
  }

  std::string answer(int topic, int entity, SeededRng& rng) const {
    std::string a = tables.answer_table[topic][entity];
    a += tables.entities[entity];  // echo for attention alignment
    const bool long_tail = rng.next_double() < spec.long_answer_fraction;
    const int tail = long_tail ? 30 + static_cast<int>(rng.next_below(7))
                               : 1 + static_cast<int>(rng.next_below(8));
    const int echo_at = long_tail ? 8 + static_cast<int>(rng.next_below(16)) : -1;
    for (int i = 0; i < tail; ++i) {
      if (i == echo_at) {
        a += tables.entities[entity];
      } else if (rng.next_double() < 0.25) {
        a += pick(tables.function_words, rng);
      } else {
        a += pick(tables.topic_content[topic], rng);
      }
    }
    return a;
  }

  std::string chatter(int topic, SeededRng& rng) const {
    std::string u = pick(tables.topic_content[topic], rng);  // always >= 1 content symbol
    const int len = 1 + static_cast<int>(rng.next_below(5));
    for (int i = 0; i < len; ++i) {
      if (rng.next_double() < 0.3) {
        u += pick(tables.function_words, rng);
      } else {
        u += pick(tables.topic_content[topic], rng);
      }
    }
    return u;
  }

  std::string add_noise(std::string u, SeededRng& rng) const {
    if (spec.noise_rate <= 0.0 || rng.next_double() >= spec.noise_rate) return u;
    auto chars = utf8_chars(u);
    const size_t pos = static_cast<size_t>(rng.next_below(chars.size() + 1));
    chars.insert(chars.begin() + static_cast<long>(pos), pick(tables.function_words, rng));
    std::string out;
    for (const auto& c : chars) out += c;
    return out;
  }

  QAExample qa_example(int topic, SeededRng& rng) const {
    const int entity = static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.entities)));
    QAExample ex;
    ex.question = add_noise(question(topic, entity, rng), rng);
    ex.answer = answer(topic, entity, rng);
    ex.label = tables.labels[topic];
    return ex;
  }

  DialogueExample dialogue(int topic, SeededRng& rng) const {
    const int entity = static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.entities)));
    DialogueExample d;
    d.turns.push_back(add_noise(chatter(topic, rng), rng));
    d.turns.push_back(add_noise(chatter(topic, rng), rng));
    d.turns.push_back(add_noise(probe(entity, rng), rng));
    d.turns.push_back(answer(topic, entity, rng));
    if (rng.next_double() < 0.5) {
      d.turns.push_back(add_noise(chatter(topic, rng), rng));
      d.turns.push_back(add_noise(chatter(topic, rng), rng));
    }
    return d;
  }
};

// (source, context) keys, one per adjacent-turn pair; context is the
// current plus previous turn, mirroring the window-2 training rule.
std::vector<std::string> pair_keys(const DialogueExample& d) {
  std::vector<std::string> keys;
  for (size_t i = 0; i + 1 < d.turns.size(); ++i) {
    std::string k = d.turns[i];
    k += '\x1f';
    k += d.turns[i];
    if (i > 0) {
      k += '\x1e';
      k += d.turns[i - 1];
    }
    keys.push_back(std::move(k));
  }
  return keys;
}

std::string qa_key(const QAExample& ex) {
  std::string k = ex.question;
  k += '\x1f';
  k += ex.question;
  return k;
}

}  // namespace

std::string SynthData::ambiguous_question(int entity, SeededRng& rng) const {
  Generator g{spec, tables};
  return g.probe(entity, rng);
}

std::string SynthData::chatter(int topic, SeededRng& rng) const {
  Generator g{spec, tables};
  return g.chatter(topic, rng);
}

SynthData synth_generate(const SyntheticSpec& spec) {
  if (spec.topics < 2) throw SpecError("need at least 2 topics");
  if (spec.content_per_topic < 2) throw SpecError("need at least 2 content symbols per topic");
  if (spec.entities < 1) throw SpecError("need at least 1 entity");
  if (spec.function_words < 2) throw SpecError("need at least 2 function words");
  if (spec.overlap < 0.0 || spec.overlap > 0.9) throw SpecError("overlap must be in [0, 0.9]");
  if (spec.long_answer_fraction < 0.0 || spec.long_answer_fraction > 1.0) {
    throw SpecError("long_answer_fraction must be in [0,1]");
  }
  if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0) throw SpecError("noise_rate must be in [0,1]");

  SynthData data;
  data.spec = spec;
  auto& t = data.tables;

  // Symbol assignment: function words, entities, shared content pool, then
  // per-topic content. Disjoint by construction at overlap 0.
  size_t cursor = 0;
  for (int i = 0; i < spec.function_words; ++i) t.function_words.push_back(pool_symbol(cursor++));
  for (int i = 0; i < spec.entities; ++i) t.entities.push_back(pool_symbol(cursor++));
  const int n_shared = static_cast<int>(spec.overlap * spec.content_per_topic);
  std::vector<std::string> shared_pool;
  for (int i = 0; i < n_shared * 2; ++i) shared_pool.push_back(pool_symbol(cursor++));

  SeededRng root(spec.seed);
  SeededRng table_rng = root.child("tables");
  for (int k = 0; k < spec.topics; ++k) {
    std::vector<std::string> content;
    for (int i = 0; i < spec.content_per_topic - n_shared; ++i) {
      content.push_back(pool_symbol(cursor++));
    }
    t.topic_content.push_back(content);  // own symbols only, for the answer table
    t.labels.push_back("topic" + std::to_string(k));
  }
  // Answers come from the topic's own alphabet so gold targets differ
  // across topics for the same entity.
  for (int k = 0; k < spec.topics; ++k) {
    std::vector<std::string> row;
    for (int e = 0; e < spec.entities; ++e) row.push_back(pick(t.topic_content[k], table_rng));
    t.answer_table.push_back(std::move(row));
  }
  if (n_shared > 0) {
    for (int k = 0; k < spec.topics; ++k) {
      for (int i = 0; i < n_shared; ++i) t.topic_content[k].push_back(pick(shared_pool, table_rng));
    }
  }

  Generator gen{spec, t};

  std::set<std::string> train_keys;

  SeededRng qa_rng = root.child("qa");
  for (int k = 0; k < spec.topics; ++k) {
    for (int i = 0; i < spec.qa_train_per_topic; ++i) {
      QAExample ex = gen.qa_example(k, qa_rng);
      train_keys.insert(qa_key(ex));
      data.qa_train.push_back(std::move(ex));
    }
  }

  SeededRng dlg_rng = root.child("dialogue");
  for (int i = 0; i < spec.dialogues_train; ++i) {
    const int k = i % spec.topics;
    DialogueExample d = gen.dialogue(k, dlg_rng);
    for (auto& key : pair_keys(d)) train_keys.insert(std::move(key));
    data.dialogue_train.push_back(std::move(d));
  }

  for (int k = 0; k < spec.topics; ++k) {
    for (int i = 0; i < spec.qa_test_per_topic; ++i) {
      QAExample ex = gen.qa_example(k, qa_rng);
      int guard = 0;
      while (train_keys.count(qa_key(ex))) {
        ex = gen.qa_example(k, qa_rng);
        if (++guard > 1000) throw SpecError("cannot draw disjoint QA test set; enlarge alphabets");
      }
      data.qa_test.push_back(std::move(ex));
    }
  }
  for (int i = 0; i < spec.dialogues_test; ++i) {
    const int k = i % spec.topics;
    DialogueExample d = gen.dialogue(k, dlg_rng);
    int guard = 0;
    const auto collides = [&](const DialogueExample& cand) {
      for (const auto& key : pair_keys(cand)) {
        if (train_keys.count(key)) return true;
      }
      return false;
    };
    while (collides(d)) {
      d = gen.dialogue(k, dlg_rng);
      if (++guard > 1000) throw SpecError("cannot draw disjoint dialogue test set");
    }
    data.dialogue_test.push_back(std::move(d));
  }
  return data;
}

}  // namespace ctxseq
