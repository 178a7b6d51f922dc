// End-to-end checks of the command-line binary via subprocesses.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/stat.h>
#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& cmd) {
  RunResult r;
  FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (fgets(buf, sizeof(buf), pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

const std::string kBin = CTXSEQ_BIN;
const std::string kDir = "/tmp/ctxseq_cli";

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
}

struct Fixture {
  Fixture() {
    mkdir(kDir.c_str(), 0755);
    write_file(kDir + "/spec.txt",
               "topics = 3\n"
               "content_per_topic = 6\n"
               "entities = 4\n"
               "qa_train_per_topic = 12\n"
               "qa_test_per_topic = 3\n"
               "dialogues_train = 9\n"
               "dialogues_test = 3\n"
               "long_answer_fraction = 0\n"
               "seed = 42\n");
  }
};

Fixture fixture;

}  // namespace

TEST_CASE("gen-data writes a consistent dataset and replays byte-identically") {
  const auto r1 = run(kBin + " gen-data --spec " + kDir + "/spec.txt --out " + kDir + "/d1");
  CHECK(r1.exit_code == 0);
  const auto r2 = run(kBin + " gen-data --spec " + kDir + "/spec.txt --out " + kDir + "/d2");
  CHECK(r2.exit_code == 0);
  for (const char* name : {"qa_train.jsonl", "qa_test.jsonl", "dialogue_train.jsonl",
                           "dialogue_test.jsonl", "vocab.txt", "manifest.json"}) {
    CAPTURE(name);
    const std::string a = slurp(kDir + "/d1/" + name);
    CHECK(!a.empty());
    CHECK(a == slurp(kDir + "/d2/" + name));
  }
  // manifest counts match the line counts
  const std::string manifest = slurp(kDir + "/d1/manifest.json");
  CHECK(manifest.find("\"qa_train\": 36") != std::string::npos);

  // a different seed changes the corpus
  const auto r3 = run(kBin + " gen-data --spec " + kDir + "/spec.txt --seed 43 --out " + kDir +
                      "/d3");
  CHECK(r3.exit_code == 0);
  CHECK(slurp(kDir + "/d3/qa_train.jsonl") != slurp(kDir + "/d1/qa_train.jsonl"));
}

TEST_CASE("gen-data rejects malformed specs with exit 2 and no partial files") {
  write_file(kDir + "/bad_spec.txt", "topics = 1\n");
  const auto r = run(kBin + " gen-data --spec " + kDir + "/bad_spec.txt --out " + kDir + "/bad");
  CHECK(r.exit_code == 2);
  struct stat st{};
  CHECK(stat((kDir + "/bad/qa_train.jsonl").c_str(), &st) != 0);
}

TEST_CASE("classify reports per-fold accuracies") {
  const auto r = run(kBin + " classify --data " + kDir + "/d1/qa_train.jsonl --vocab " + kDir +
                     "/d1/vocab.txt --folds 2 --epochs 2 --embed-dim 8 --filters 4 --k-top 2");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("fold 0:") != std::string::npos);
  CHECK(r.out.find("fold 1:") != std::string::npos);
  CHECK(r.out.find("mean:") != std::string::npos);

  const auto bad = run(kBin + " classify --data " + kDir + "/d1/qa_train.jsonl --folds 1");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("train / eval / chat / viz / probe pipeline") {
  // tiny but real two-stage run for the vanilla and context_attn kinds
  const std::string common = " --stage1 " + kDir + "/d1/qa_train.jsonl --stage2 " + kDir +
                             "/d1/dialogue_train.jsonl --vocab " + kDir +
                             "/d1/vocab.txt --hidden 12 --embed-dim 8 --n-layers 1 --topics 3"
                             " --epochs1 1 --epochs2 1 --batch 8 --seed 5 --cnn-embed 8"
                             " --cnn-filters 4 --cnn-k-top 2 --cnn-epochs 1 --eval-every 0";
  const auto tv = run(kBin + " train --model vanilla --out " + kDir + "/m" + common);
  CHECK(tv.exit_code == 0);
  const auto ta = run(kBin + " train --model context_attn --out " + kDir + "/m" + common);
  CHECK(ta.exit_code == 0);

  const std::string van_ckpt = kDir + "/m/vanilla/model.ckpt";
  const std::string attn_ckpt = kDir + "/m/context_attn/model.ckpt";

  // eval prints buckets and honors --json
  const auto ev = run(kBin + " eval --ckpt " + van_ckpt + " --test " + kDir +
                      "/d1/dialogue_test.jsonl --vocab " + kDir + "/d1/vocab.txt --json");
  CHECK(ev.exit_code == 0);
  CHECK(ev.out.find("\"overall\"") != std::string::npos);

  // vocab mismatch is a compatibility error (exit 4)
  const auto bad_vocab = run(kBin + " eval --ckpt " + van_ckpt + " --test " + kDir +
                             "/d1/dialogue_test.jsonl --vocab " + kDir + "/d3/vocab.txt");
  CHECK(bad_vocab.exit_code == 4);

  // scripted chat transcripts replay deterministically
  write_file(kDir + "/script.txt", "abc\n/topic\nde\n/reset\nabc\n/quit\n");
  const std::string chat_cmd = "cat " + kDir + "/script.txt | " + kBin + " chat --ckpt " +
                               attn_ckpt + " --vocab " + kDir + "/d1/vocab.txt --beam 2";
  const auto c1 = run(chat_cmd);
  const auto c2 = run(chat_cmd);
  CHECK(c1.exit_code == 0);
  CHECK(c1.out == c2.out);
  CHECK(c1.out.find("topic argmax:") != std::string::npos);
  CHECK(c1.out.find("(history cleared)") != std::string::npos);

  // viz refuses vanilla with exit 5, works for context_attn
  const auto viz_bad = run(kBin + " viz --ckpt " + van_ckpt + " --vocab " + kDir +
                           "/d1/vocab.txt --input abc");
  CHECK(viz_bad.exit_code == 5);
  const auto viz_ok = run(kBin + " viz --ckpt " + attn_ckpt + " --vocab " + kDir +
                          "/d1/vocab.txt --input abc --ascii");
  CHECK(viz_ok.exit_code == 0);

  // probe with no noise reports stability 1
  const auto probe = run(kBin + " probe --ckpt " + attn_ckpt + " --vocab " + kDir +
                         "/d1/vocab.txt --input abc --noise none --trials 3 --manifest " + kDir +
                         "/d1/manifest.json");
  CHECK(probe.exit_code == 0);
  CHECK(probe.out.find("exact-match stability: 1") != std::string::npos);

  // resume: rerun stage 2 from the stage-1 checkpoint, identical results
  const auto full = slurp(kDir + "/m/vanilla/model.ckpt");
  const auto tr = run(kBin + " train --model vanilla --out " + kDir + "/m2" + common +
                      " --resume " + kDir + "/m/vanilla/stage1.ckpt");
  CHECK(tr.exit_code == 0);
  CHECK(slurp(kDir + "/m2/vanilla/model.ckpt") == full);
}

TEST_CASE("config file values apply under flag precedence") {
  write_file(kDir + "/train.cfg",
             "[model]\n"
             "hidden = 12\n"
             "embed-dim = 8\n"
             "n-layers = 1\n"
             "topics = 3\n"
             "[train]\n"
             "epochs1 = 1\n"
             "epochs2 = 0\n"
             "batch = 8\n"
             "seed = 5\n"
             "eval-every = 0\n"
             "cnn-epochs = 1\n");
  const auto r = run(kBin + " train --model vanilla --out " + kDir + "/m3 --config " + kDir +
                     "/train.cfg --stage1 " + kDir + "/d1/qa_train.jsonl --vocab " + kDir +
                     "/d1/vocab.txt");
  CHECK(r.exit_code == 0);

  write_file(kDir + "/bad.cfg", "no_such_key = 1\n");
  const auto bad = run(kBin + " train --model vanilla --out " + kDir + "/m4 --config " + kDir +
                       "/bad.cfg --stage1 " + kDir + "/d1/qa_train.jsonl --vocab " + kDir +
                       "/d1/vocab.txt");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("unknown flags and missing inputs fail with exit 2") {
  const auto unknown = run(kBin + " eval --ckpt x --test y --vocab z --bogus-flag");
  CHECK(unknown.exit_code == 2);
  const auto missing = run(kBin + " gen-data --spec /nonexistent.txt --out " + kDir + "/x");
  CHECK(missing.exit_code == 2);
}
