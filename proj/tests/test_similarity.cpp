#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fewsound/similarity.hpp"
#include "testutil.hpp"

using namespace fewsound;
using testutil::random_tensor;

namespace {

// Explicit rank-1 bilinear form: Tr(X_q^T X_j * W) with W = A_j A_q^T
// materialized, computed with plain loops in double.
double rank1_bilinear_oracle(const Tensor<double>& xq, const Tensor<double>& xj,
                             const Tensor<double>& aq, const Tensor<double>& aj) {
  const std::size_t M = xq.shape[0], Tq = xq.shape[1], Tj = xj.shape[1];
  // G = X_q^T X_j
  std::vector<double> G(Tq * Tj, 0.0);
  for (std::size_t s = 0; s < Tq; ++s)
    for (std::size_t t = 0; t < Tj; ++t)
      for (std::size_t m = 0; m < M; ++m) G[s * Tj + t] += xq.at(m, s) * xj.at(m, t);
  // W = A_j A_q^T in [Tj, Tq]; trace of G W picks paired entries
  double trace = 0.0;
  for (std::size_t s = 0; s < Tq; ++s)
    for (std::size_t t = 0; t < Tj; ++t)
      trace += G[s * Tj + t] * aj.at(t) * aq.at(s);
  return trace;
}

}  // namespace

TEST_CASE("pool: hand cases and row-mean oracle") {
  Tape<float> t;
  auto x = t.constant(Tensor<float>({2, 2}, {1, 3, 2, 2}));
  CHECK(pool(x, Pooling::avg).val().data == std::vector<float>{2, 2});
  CHECK(pool(x, Pooling::max).val().data == std::vector<float>{3, 2});

  Rng rng(1);
  auto r = random_tensor<float>({8, 5}, rng);
  auto pooled = pool(t.constant(r), Pooling::avg);
  for (std::size_t m = 0; m < 8; ++m) {
    float mean = 0;
    for (std::size_t i = 0; i < 5; ++i) mean += r.at(m, i);
    CHECK(pooled.val().data[m] == doctest::Approx(mean / 5.0f));
  }
}

TEST_CASE("sim_pooled: identical inputs give cosine 1 and euclidean 0") {
  Rng rng(2);
  Tape<float> t;
  auto x = random_tensor<float>({6, 4}, rng);
  auto a = t.constant(x);
  auto b = t.constant(x);
  CHECK(sim_pooled(a, b, Pooling::avg, Distance::cosine).val().data[0] ==
        doctest::Approx(1.0f));
  CHECK(sim_pooled(a, b, Pooling::avg, Distance::euclidean).val().data[0] ==
        doctest::Approx(0.0f));
}

TEST_CASE("sim_pooled: inner product matches a direct dot oracle") {
  Rng rng(3);
  Tape<float> t;
  auto xq = random_tensor<float>({5, 3}, rng);
  auto xj = random_tensor<float>({5, 7}, rng);
  auto s = sim_pooled(t.constant(xq), t.constant(xj), Pooling::avg, Distance::inner);
  double expect = 0.0;
  for (std::size_t m = 0; m < 5; ++m) {
    double pq = 0, pj = 0;
    for (std::size_t i = 0; i < 3; ++i) pq += xq.at(m, i);
    for (std::size_t i = 0; i < 7; ++i) pj += xj.at(m, i);
    expect += (pq / 3.0) * (pj / 7.0);
  }
  CHECK(s.val().data[0] == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("sim_pooled: cosine with a zero pooled vector is an error") {
  Tape<float> t;
  auto zero = t.constant(Tensor<float>({3, 2}));
  auto other = t.constant(Tensor<float>({3, 2}, 1.0f));
  CHECK_THROWS_AS(sim_pooled(zero, other, Pooling::avg, Distance::cosine), NumericError);
}

TEST_CASE("sim_second_order: hand case, orthogonal case, loop oracle") {
  Tape<float> t;
  auto eye = t.constant(Tensor<float>({2, 2}, {1, 0, 0, 1}));
  auto d = t.constant(Tensor<float>({2, 2}, {2, 0, 0, 5}));
  auto m = sim_second_order(eye, d);
  CHECK(m.val().data == std::vector<float>{2, 0, 0, 5});
  CHECK(reduce_second_order(m, Reduce::mean).val().data[0] == doctest::Approx(1.75f));
  CHECK(reduce_second_order(m, Reduce::sum).val().data[0] == doctest::Approx(7.0f));

  // Columns orthogonal across inputs: G is all zeros.
  auto xq = t.constant(Tensor<float>({2, 1}, {1, 0}));
  auto xj = t.constant(Tensor<float>({2, 2}, {0, 0, 3, -2}));
  for (float v : sim_second_order(xq, xj).val().data) CHECK(v == 0.0f);

  Rng rng(4);
  auto a = random_tensor<float>({4, 3}, rng);
  auto b = random_tensor<float>({4, 5}, rng);
  auto g = sim_second_order(t.constant(a), t.constant(b));
  REQUIRE(g.shape() == std::vector<std::size_t>{3, 5});
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t u = 0; u < 5; ++u) {
      double expect = 0;
      for (std::size_t k = 0; k < 4; ++k) expect += a.at(k, s) * b.at(k, u);
      CHECK(g.val().at(s, u) == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("sim_second_order: channel mismatch raises shape error") {
  Tape<float> t;
  auto a = t.constant(Tensor<float>({4, 3}));
  auto b = t.constant(Tensor<float>({5, 3}));
  CHECK_THROWS_AS(sim_second_order(a, b), ShapeError);
}

TEST_CASE("sim_attentional: hand-computed example") {
  Tape<float> t;
  auto xq = t.constant(Tensor<float>({2, 2}, {1, 0, 0, 1}));
  auto aq = t.constant(Tensor<float>({2}, {1, 0}));
  auto xj = t.constant(Tensor<float>({2, 2}, {2, 0, 0, 5}));
  auto aj = t.constant(Tensor<float>({2}, {1, 0}));
  CHECK(sim_attentional(xq, xj, aq, aj, Distance::inner).val().data[0] ==
        doctest::Approx(2.0f));
  CHECK(sim_attentional_trace(xq, xj, aq, aj).val().data[0] == doctest::Approx(2.0f));
}

TEST_CASE("sim_attentional: uniform attention equals average-pooled inner product") {
  Rng rng(5);
  Tape<float> t;
  auto xq = random_tensor<float>({6, 4}, rng);
  auto xj = random_tensor<float>({6, 9}, rng);
  auto vq = t.constant(xq);
  auto vj = t.constant(xj);
  auto aq = t.constant(Tensor<float>({4}, 1.0f / 4.0f));
  auto aj = t.constant(Tensor<float>({9}, 1.0f / 9.0f));
  const float att = sim_attentional(vq, vj, aq, aj, Distance::inner).val().data[0];
  const float pooled = sim_pooled(vq, vj, Pooling::avg, Distance::inner).val().data[0];
  CHECK(att == doctest::Approx(pooled).epsilon(1e-5));
}

TEST_CASE("factorized form equals trace form and explicit rank-1 bilinear form") {
  Rng rng(6);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t M = 1 + rng.below(16);
    const std::size_t Tq = 1 + rng.below(16);
    const std::size_t Tj = 1 + rng.below(16);
    auto xq = random_tensor<double>({M, Tq}, rng, -2.0, 2.0);
    auto xj = random_tensor<double>({M, Tj}, rng, -2.0, 2.0);
    auto aq = random_tensor<double>({Tq}, rng, -1.0, 1.0);
    auto aj = random_tensor<double>({Tj}, rng, -1.0, 1.0);

    Tape<double> t;
    const double fact =
        sim_attentional(t.constant(xq), t.constant(xj), t.constant(aq), t.constant(aj),
                        Distance::inner)
            .val()
            .data[0];
    const double trace =
        sim_attentional_trace(t.constant(xq), t.constant(xj), t.constant(aq),
                              t.constant(aj))
            .val()
            .data[0];
    const double rank1 = rank1_bilinear_oracle(xq, xj, aq, aj);
    CHECK(testutil::rel_err(fact, trace) <= 1e-9);
    CHECK(testutil::rel_err(fact, rank1) <= 1e-9);
    CHECK(testutil::rel_err(trace, rank1) <= 1e-9);
  }
}

TEST_CASE("one-hot attentions select a single second-order entry") {
  Rng rng(7);
  const std::size_t M = 5, Tq = 4, Tj = 6;
  auto xq = random_tensor<double>({M, Tq}, rng);
  auto xj = random_tensor<double>({M, Tj}, rng);
  for (std::size_t s = 0; s < Tq; ++s)
    for (std::size_t u = 0; u < Tj; ++u) {
      Tensor<double> aq({Tq});
      aq.data[s] = 1.0;
      Tensor<double> aj({Tj});
      aj.data[u] = 1.0;
      Tape<double> t;
      auto g = sim_second_order(t.constant(xq), t.constant(xj));
      const double picked =
          sim_attentional_trace(t.constant(xq), t.constant(xj), t.constant(aq),
                                t.constant(aj))
              .val()
              .data[0];
      CHECK(picked == doctest::Approx(g.val().at(s, u)).epsilon(1e-12));
    }
}

TEST_CASE("attentional similarity is symmetric for symmetric distance kinds") {
  Rng rng(8);
  for (Distance d : {Distance::inner, Distance::cosine, Distance::euclidean}) {
    Tape<double> t;
    auto xq = t.constant(random_tensor<double>({5, 3}, rng, 0.1, 1.0));
    auto xj = t.constant(random_tensor<double>({5, 8}, rng, 0.1, 1.0));
    auto aq = t.constant(random_tensor<double>({3}, rng, 0.0, 1.0));
    auto aj = t.constant(random_tensor<double>({8}, rng, 0.0, 1.0));
    const double ab = sim_attentional(xq, xj, aq, aj, d).val().data[0];
    const double ba = sim_attentional(xj, xq, aj, aq, d).val().data[0];
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  }
}

TEST_CASE("attention length mismatch raises shape error") {
  Tape<float> t;
  auto xq = t.constant(Tensor<float>({3, 4}));
  auto xj = t.constant(Tensor<float>({3, 5}));
  auto aq = t.constant(Tensor<float>({5}));  // wrong: T_q is 4
  auto aj = t.constant(Tensor<float>({5}));
  CHECK_THROWS_AS(sim_attentional(xq, xj, aq, aj, Distance::inner), ShapeError);
}

TEST_CASE("similarity gradients match finite differences") {
  Rng rng(9);
  auto xq = random_tensor<double>({4, 3}, rng, 0.2, 1.0);
  auto xj = random_tensor<double>({4, 5}, rng, 0.2, 1.0);
  auto aq = random_tensor<double>({3}, rng, 0.1, 1.0);
  auto aj = random_tensor<double>({5}, rng, 0.1, 1.0);
  xq.requires_grad = xj.requires_grad = aq.requires_grad = aj.requires_grad = true;

  struct Case {
    const char* name;
    std::function<Value<double>(Tape<double>&, Value<double>, Value<double>,
                                Value<double>, Value<double>)> f;
  };
  const std::vector<Case> cases = {
      {"pooled avg inner",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double>, Value<double>) {
         return sim_pooled(q, j, Pooling::avg, Distance::inner);
       }},
      {"pooled avg cosine",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double>, Value<double>) {
         return sim_pooled(q, j, Pooling::avg, Distance::cosine);
       }},
      {"pooled max euclidean",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double>, Value<double>) {
         return sim_pooled(q, j, Pooling::max, Distance::euclidean);
       }},
      {"second order mean",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double>, Value<double>) {
         return reduce_second_order(sim_second_order(q, j), Reduce::mean);
       }},
      {"attentional inner",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double> a, Value<double> b) {
         return sim_attentional(q, j, a, b, Distance::inner);
       }},
      {"attentional cosine",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double> a, Value<double> b) {
         return sim_attentional(q, j, a, b, Distance::cosine);
       }},
      {"attentional euclidean",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double> a, Value<double> b) {
         return sim_attentional(q, j, a, b, Distance::euclidean);
       }},
      {"attentional trace",
       [](Tape<double>&, Value<double> q, Value<double> j, Value<double> a, Value<double> b) {
         return sim_attentional_trace(q, j, a, b);
       }},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    auto forward = [&]() {
      Tape<double> t;
      return c.f(t, t.leaf_ref(&xq, true), t.leaf_ref(&xj, true), t.leaf_ref(&aq, true),
                 t.leaf_ref(&aj, true))
          .val()
          .data[0];
    };
    Tape<double> t;
    auto vq = t.leaf_ref(&xq, true);
    auto vj = t.leaf_ref(&xj, true);
    auto va = t.leaf_ref(&aq, true);
    auto vb = t.leaf_ref(&aj, true);
    t.backward(c.f(t, vq, vj, va, vb));
    std::vector<Tensor<double>*> params{&xq, &xj};
    std::vector<Tensor<double>> grads{t.grad(vq), t.grad(vj)};
    if (t.has_grad(va)) {
      params.push_back(&aq);
      grads.push_back(t.grad(va));
      params.push_back(&aj);
      grads.push_back(t.grad(vb));
    }
    auto r = testutil::fd_check(params, grads, forward, 1e-4);
    CHECK(r.max_rel <= 1e-3);
  }
}

TEST_CASE("cost: factorized path uses O(M(Tq+Tj)) multiplies, trace O(M Tq Tj)") {
  Rng rng(10);
  const std::size_t M = 8, Tq = 5, Tj = 7;
  Tape<double> t;
  auto xq = t.constant(random_tensor<double>({M, Tq}, rng));
  auto xj = t.constant(random_tensor<double>({M, Tj}, rng));
  auto aq = t.constant(random_tensor<double>({Tq}, rng));
  auto aj = t.constant(random_tensor<double>({Tj}, rng));

  reset_mul_ops();
  sim_attentional(xq, xj, aq, aj, Distance::inner);
  const auto fact_ops = mul_ops();
  CHECK(fact_ops == M * Tq + M * Tj + M);  // two mat-vecs plus one dot

  reset_mul_ops();
  sim_attentional_trace(xq, xj, aq, aj);
  const auto trace_ops = mul_ops();
  CHECK(trace_ops == M * Tq * Tj + Tq * Tj + Tq);  // gemm dominates

  CHECK(fact_ops < trace_ops);
}

TEST_CASE("variable-length inputs: T_q != T_j supported across heads") {
  Rng rng(11);
  Tape<float> t;
  auto xq = t.constant(random_tensor<float>({6, 2}, rng));
  auto xj = t.constant(random_tensor<float>({6, 11}, rng));
  auto aq = t.constant(random_tensor<float>({2}, rng, 0.0, 1.0));
  auto aj = t.constant(random_tensor<float>({11}, rng, 0.0, 1.0));
  CHECK_NOTHROW(sim_pooled(xq, xj, Pooling::max, Distance::inner));
  CHECK(sim_second_order(xq, xj).shape() == std::vector<std::size_t>{2, 11});
  CHECK_NOTHROW(sim_attentional(xq, xj, aq, aj, Distance::euclidean));
}
