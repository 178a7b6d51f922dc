#include <cmath>

#include "ctxseq/adam.hpp"
#include "ctxseq/gradcheck.hpp"
#include "ctxseq/tensor.hpp"
#include "doctest.h"

using namespace ctxseq;

TEST_CASE("tensor_new init modes") {
  Tensor z = Tensor::zeros({2, 2});
  CHECK(z.value() == std::vector<double>{0, 0, 0, 0});

  Tensor c = Tensor::constant({3}, 1.5);
  CHECK(c.value() == std::vector<double>{1.5, 1.5, 1.5});

  SeededRng r1(7), r2(7);
  Tensor u1 = Tensor::uniform({4}, -0.1, 0.1, r1);
  Tensor u2 = Tensor::uniform({4}, -0.1, 0.1, r2);
  CHECK(u1.value() == u2.value());  // bit-identical under the same seed
  for (double v : u1.value()) {
    CHECK(v >= -0.1);
    CHECK(v < 0.1);
  }

  CHECK_THROWS_AS(Tensor::zeros({0}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, -1}), ShapeError);
}

TEST_CASE("matmul forward") {
  Tensor eye = Tensor::of({1, 0, 0, 1}, {2, 2});
  Tensor m = Tensor::of({3, 4, 5, 6}, {2, 2});
  CHECK(matmul(eye, m).value() == m.value());

  Tensor a = Tensor::of({1, 2, 3, 4}, {2, 2});
  Tensor b = Tensor::of({5, 6}, {2, 1});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(17));
  CHECK(c.at(1, 0) == doctest::Approx(39));

  Tensor v = Tensor::of({5, 6}, {2});
  CHECK(matmul(a, v).value() == std::vector<double>{17, 39});

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  SeededRng rng(3);
  Tensor a = Tensor::uniform({3, 4}, -1, 1, rng, true);
  Tensor b = Tensor::uniform({4, 2}, -1, 1, rng, true);
  const double err = grad_check([&] { return sum(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise basics") {
  Tensor x0 = Tensor::of({0.0}, {1});
  CHECK(sigmoid(x0).item() == doctest::Approx(0.5));
  CHECK(ctxseq::tanh(x0).item() == doctest::Approx(0.0));

  SeededRng rng(5);
  Tensor xs = Tensor::uniform({64}, -4, 4, rng);
  Tensor sym = add(sigmoid(xs), sigmoid(scale(xs, -1.0)));
  for (double v : sym.value()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(mul(Tensor::zeros({2}), Tensor::zeros({2, 1})), ShapeError);
}

TEST_CASE("softmax properties") {
  Tensor two = Tensor::of({0, 0}, {2});
  CHECK(softmax(two).value() == std::vector<double>{0.5, 0.5});

  Tensor x = Tensor::of({1, 2, 3}, {3});
  Tensor s = softmax(x);
  const double z = std::exp(1) + std::exp(2) + std::exp(3);
  for (int i = 0; i < 3; ++i) {
    CHECK(s.at(i) == doctest::Approx(std::exp(i + 1.0) / z).epsilon(1e-12));
  }

  // shift invariance and normalization on random slices
  SeededRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor r = Tensor::uniform({5}, -10, 10, rng);
    Tensor shifted = scale(add(r, Tensor::constant({5}, 3.7)), 1.0);
    const auto s1 = softmax(r).value();
    const auto s2 = softmax(shifted).value();
    double total = 0;
    for (int i = 0; i < 5; ++i) {
      CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-9));
      CHECK(s1[i] > 0);
      CHECK(s1[i] < 1);
      total += s1[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    // argmax agreement
    size_t am_in = 0, am_out = 0;
    for (size_t i = 0; i < 5; ++i) {
      if (r.value()[i] > r.value()[am_in]) am_in = i;
      if (s1[i] > s1[am_out]) am_out = i;
    }
    CHECK(am_in == am_out);
  }
}

TEST_CASE("cross entropy") {
  Tensor uniform_logits = Tensor::zeros({8});
  CHECK(cross_entropy(uniform_logits, 3).item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  // saturation: huge logit on the target drives the loss to zero
  Tensor peaked = Tensor::of({0, 0, 40, 0}, {4});
  CHECK(cross_entropy(peaked, 2).item() < 1e-12);

  CHECK_THROWS_AS(cross_entropy(uniform_logits, 8), IndexError);
  CHECK_THROWS_AS(cross_entropy(uniform_logits, -1), IndexError);

  // analytic gradient equals softmax - onehot
  SeededRng rng(9);
  Tensor logits = Tensor::uniform({6}, -2, 2, rng, true);
  Tensor loss = cross_entropy(logits, 4);
  backward(loss);
  const auto probs = softmax(logits).value();
  for (int i = 0; i < 6; ++i) {
    const double expect = probs[static_cast<size_t>(i)] - (i == 4 ? 1.0 : 0.0);
    CHECK(logits.grad()[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("conv_text") {
  // all-ones input, all-ones h=2 filter, d=3 -> every output = 6
  Tensor input = Tensor::constant({5, 3}, 1.0);
  Tensor bank = Tensor::constant({1, 2, 3}, 1.0);
  Tensor bias = Tensor::zeros({1});
  Tensor out = conv_text(input, bank, bias);
  CHECK(out.shape() == Shape{1, 4});
  for (double v : out.value()) CHECK(v == doctest::Approx(6.0));

  // zero filters -> zero outputs
  Tensor zbank = Tensor::zeros({2, 3, 3});
  Tensor zout = conv_text(input, zbank, Tensor::zeros({2}));
  for (double v : zout.value()) CHECK(v == 0.0);

  CHECK_THROWS_AS(conv_text(Tensor::zeros({2, 3}), Tensor::zeros({1, 4, 3}), Tensor::zeros({1})),
                  ShapeError);

  SeededRng rng(21);
  Tensor in = Tensor::uniform({6, 4}, -1, 1, rng, true);
  Tensor w = Tensor::uniform({3, 2, 4}, -1, 1, rng, true);
  Tensor b = Tensor::uniform({3}, -1, 1, rng, true);
  const double err = grad_check([&] { return sum(ctxseq::tanh(conv_text(in, w, b))); }, {in, w, b});
  CHECK(err < 1e-5);
}

TEST_CASE("k_max_pool") {
  Tensor x = Tensor::of({3, 9, 1, 7, 5}, {5});
  CHECK(k_max_pool(x, 2).value() == std::vector<double>{9, 7});
  CHECK(k_max_pool(x, 5).value() == x.value());  // k = L identity
  CHECK(k_max_pool(x, 1).value() == std::vector<double>{9});
  CHECK_THROWS_AS(k_max_pool(x, 6), PoolError);

  // ties: earlier position wins
  Tensor t = Tensor::of({4, 4, 4, 1}, {4});
  CHECK(k_max_pool(t, 2).value() == std::vector<double>{4, 4});

  // order-preserving subsequence + multiset property on random input
  SeededRng rng(13);
  Tensor r = Tensor::uniform({10}, -5, 5, rng, true);
  Tensor pooled = k_max_pool(r, 4);
  auto sorted_desc = r.value();
  std::sort(sorted_desc.begin(), sorted_desc.end(), std::greater<>());
  auto picked = pooled.value();
  auto picked_sorted = picked;
  std::sort(picked_sorted.begin(), picked_sorted.end(), std::greater<>());
  for (int i = 0; i < 4; ++i) CHECK(picked_sorted[i] == sorted_desc[i]);
  // subsequence check
  size_t cursor = 0;
  for (double v : picked) {
    while (cursor < r.value().size() && r.value()[cursor] != v) ++cursor;
    CHECK(cursor < r.value().size());
    ++cursor;
  }

  const double err = grad_check([&] { return sum(k_max_pool(r, 4)); }, {r});
  CHECK(err < 1e-8);

  // rank-2 pools each row
  Tensor m = Tensor::of({1, 2, 3, 6, 5, 4}, {2, 3});
  CHECK(k_max_pool(m, 2).value() == std::vector<double>{2, 3, 6, 5});
}

TEST_CASE("dropout contracts") {
  SeededRng rng(17);
  Tensor x = Tensor::uniform({100}, -1, 1, rng);

  SeededRng drng(1);
  CHECK(dropout(x, 0.0, drng, true).value() == x.value());
  CHECK(dropout(x, 0.7, drng, false).value() == x.value());
  CHECK_THROWS_AS(dropout(x, 1.0, drng, true), ConfigError);

  // Monte-Carlo survivor fraction at rate 0.5
  Tensor big = Tensor::constant({100000}, 1.0);
  SeededRng mrng(23);
  Tensor dropped = dropout(big, 0.5, mrng, true);
  int survivors = 0;
  for (double v : dropped.value()) {
    if (v != 0.0) {
      CHECK(v == doctest::Approx(2.0));
      ++survivors;
    }
  }
  const double frac = survivors / 100000.0;
  CHECK(frac > 0.49);
  CHECK(frac < 0.51);
}

TEST_CASE("backward basics and accumulation") {
  SeededRng rng(29);
  Tensor x = Tensor::uniform({6}, -2, 2, rng, true);

  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  backward(sum(mul(x, x)));
  for (size_t i = 0; i < 6; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2 * x.value()[i]).epsilon(1e-12));
  }

  // repeated sweeps accumulate into leaves
  x.zero_grad();
  Tensor loss = sum(x);
  backward(loss);
  backward(loss);
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));

  CHECK_THROWS_AS(backward(x), ContractError);  // non-scalar loss
}

TEST_CASE("structural ops gradients") {
  SeededRng rng(31);
  Tensor a = Tensor::uniform({4}, -1, 1, rng, true);
  Tensor b = Tensor::uniform({3}, -1, 1, rng, true);
  Tensor m = Tensor::uniform({3, 4}, -1, 1, rng, true);
  Tensor bias = Tensor::uniform({4}, -1, 1, rng, true);

  CHECK(grad_check([&] { return sum(ctxseq::tanh(concat({a, b, a}))); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return sum(sigmoid(slice(concat({a, b}), 2, 4))); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(transpose(m), transpose(m))); }, {m}) < 1e-6);
  CHECK(grad_check([&] { return sum(add_bias_rows(m, bias)); }, {m, bias}) < 1e-8);
  CHECK(grad_check([&] { return dot(a, slice(flatten(m), 0, 4)); }, {a, m}) < 1e-6);
  CHECK(grad_check([&] { return sum(ctxseq::tanh(stack_rows({a, a, bias}))); }, {a, bias}) < 1e-6);
  CHECK(grad_check([&] { return sum(row(pad_rows(m, 1, 2), 1)); }, {m}) < 1e-8);
  CHECK(grad_check([&] { return sum(vcat({m, scale(m, 2.0)})); }, {m}) < 1e-8);

  Tensor table = Tensor::uniform({5, 3}, -1, 1, rng, true);
  CHECK(grad_check([&] { return sum(ctxseq::tanh(lookup(table, {1, 4, 1, 0}))); }, {table}) < 1e-6);
  // pad id stays zero and takes no gradient
  Tensor looked = lookup(table, {0, 2});
  for (int j = 0; j < 3; ++j) CHECK(looked.at(0, j) == 0.0);
  CHECK_THROWS_AS(lookup(table, {5}), IndexError);
}

TEST_CASE("debug checks catch non-finite values") {
  set_debug_checks(true);
  Tensor big = Tensor::constant({2}, 1e308);
  CHECK_THROWS_AS(add(big, big), NumericError);
  set_debug_checks(false);
}

TEST_CASE("no-grad mode skips graph construction") {
  SeededRng rng(37);
  Tensor x = Tensor::uniform({4}, -1, 1, rng, true);
  {
    NoGradGuard ng;
    Tensor y = sigmoid(x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = sigmoid(x);
  CHECK(y.requires_grad());
}

TEST_CASE("adam steps") {
  // first step with m = v = 0: delta = -alpha * g / (|g| + eps) ~= -alpha
  Tensor p = Tensor::of({1.0}, {1}, true);
  AdamState st;
  st.alpha = 0.01;
  adam_step(p, {0.5}, st);
  CHECK(p.item() == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(st.t == 1);

  // zero gradient from a fresh state: parameters unchanged, t increments
  Tensor q = Tensor::of({2.5, -1.0}, {2}, true);
  AdamState st2;
  adam_step(q, {0.0, 0.0}, st2);
  CHECK(q.value() == std::vector<double>{2.5, -1.0});
  CHECK(st2.t == 1);

  // identical replay - bit-identical parameters
  SeededRng rng(41);
  Tensor a1 = Tensor::uniform({8}, -1, 1, rng, true);
  Tensor a2 = Tensor::of(a1.value(), {8}, true);
  AdamState s1, s2;
  for (int step = 0; step < 5; ++step) {
    std::vector<double> g(8);
    for (size_t i = 0; i < 8; ++i) g[i] = std::sin(step + static_cast<double>(i));
    adam_step(a1, g, s1);
    adam_step(a2, g, s2);
  }
  CHECK(a1.value() == a2.value());

  CHECK_THROWS_AS(adam_step(a1, {1.0}, s1), ShapeError);
}

TEST_CASE("global norm clipping") {
  std::vector<double> g1{3.0, 0.0}, g2{0.0, 4.0};
  const double norm = clip_global_norm({&g1, &g2}, 2.5);
  CHECK(norm == doctest::Approx(5.0));
  double sq = 0;
  for (double v : g1) sq += v * v;
  for (double v : g2) sq += v * v;
  CHECK(std::sqrt(sq) == doctest::Approx(2.5));

  // clip = inf is the identity
  std::vector<double> h{1.0, 2.0};
  clip_global_norm({&h}, std::numeric_limits<double>::infinity());
  CHECK(h == std::vector<double>{1.0, 2.0});
}

TEST_CASE("grad_check rejects non-deterministic objectives") {
  SeededRng rng(43);
  Tensor x = Tensor::uniform({2}, -1, 1, rng, true);
  int calls = 0;
  CHECK_THROWS_AS(grad_check([&] {
                    ++calls;
                    return scale(sum(x), 1.0 + calls * 1e-9);
                  }, {x}),
                  OracleError);
}

TEST_CASE("linear objective is exact") {
  SeededRng rng(47);
  Tensor x = Tensor::uniform({5}, -1, 1, rng, true);
  Tensor w = Tensor::uniform({5}, -1, 1, rng, true);
  CHECK(grad_check([&] { return dot(w, x); }, {x, w}) < 1e-10);
}

TEST_CASE("rng reproducibility and sub-streams") {
  SeededRng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  SeededRng root(9);
  SeededRng c1 = root.child("x");
  SeededRng c2 = root.child("y");
  CHECK(c1.next_u64() != c2.next_u64());
  // children do not disturb the parent
  SeededRng root2(9);
  root2.child("anything");
  SeededRng r1 = root;
  CHECK(root2.next_u64() == r1.next_u64());
}
