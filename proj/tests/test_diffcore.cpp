#include <cmath>
#include <limits>
#include <numbers>

#include "asymloc/errors.hpp"
#include "asymloc/kernels.hpp"
#include "asymloc/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace asymloc;
using testutil::grad_error;
using testutil::random_tensor;

TEST_SUITE("rng") {
  TEST_CASE("splitmix64 and xoshiro256** reference outputs") {
    std::uint64_t st = 0;
    CHECK(splitmix64(st) == 0xe220a8397b1dcdafULL);
    Rng r0(0);
    CHECK(r0.next_u64() == 0x99ec5f36cb75f2b4ULL);
    CHECK(r0.next_u64() == 0xbf6e1f784956452aULL);
    CHECK(r0.next_u64() == 0x1a5f849d4933e6e0ULL);
    Rng r42(42);
    CHECK(r42.next_u64() == 0x15780b2e0c2ec716ULL);
    CHECK(r42.next_u64() == 0x6104d9866d113a7eULL);
    CHECK(r42.next_u64() == 0xae17533239e499a1ULL);
  }

  TEST_CASE("uniform range and below bounds") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
      const double u = r.uniform();
      CHECK((u >= 0.0 && u < 1.0));
      CHECK(r.below(13) < 13u);
    }
    CHECK(r.below(1) == 0u);
  }

  TEST_CASE("derive_seed separates tags and indices") {
    CHECK(derive_seed(1, "train", 0) != derive_seed(1, "eval", 0));
    CHECK(derive_seed(1, "train", 0) != derive_seed(1, "train", 1));
    CHECK(derive_seed(1, "train", 0, 0) != derive_seed(1, "train", 0, 1));
    CHECK(derive_seed(1, "train", 3) == derive_seed(1, "train", 3));
    CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
  }

  TEST_CASE("normal draws have unit moments") {
    Rng r(3);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double x = r.normal();
      s += x;
      s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
  }
}

TEST_SUITE("kernels") {
  void naive_gemm(int m, int n, int k, const std::vector<float>& a, const std::vector<float>& b, bool bt,
                  std::vector<double>& c) {
    c.assign(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0;
        for (int p = 0; p < k; ++p) s += double(a[i * k + p]) * (bt ? b[j * k + p] : b[p * n + j]);
        c[i * n + j] = s;
      }
  }

  TEST_CASE("scalar and AVX2 tables agree with a double-precision oracle") {
    const kernels::KernelTable* avx = kernels::avx2_table();
    std::vector<const kernels::KernelTable*> tables{&kernels::scalar_table()};
    if (avx && kernels::cpu_supports_avx2()) tables.push_back(avx);
    Rng rng(11);
    for (auto [m, n, k] : std::vector<std::tuple<int, int, int>>{{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 40, 72}, {5, 130, 257}}) {
      std::vector<float> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n), bt(b.size());
      for (float& v : a) v = static_cast<float>(rng.uniform(-1, 1));
      for (float& v : b) v = static_cast<float>(rng.uniform(-1, 1));
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
      std::vector<double> ref;
      naive_gemm(m, n, k, a, b, false, ref);
      for (const auto* t : tables) {
        CAPTURE(t->name);
        std::vector<float> c(static_cast<std::size_t>(m) * n, 0.5f), c2 = c;
        t->gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
        t->gemm_nt(m, n, k, a.data(), k, bt.data(), k, c2.data(), n, true);
        for (std::size_t i = 0; i < c.size(); ++i) {
          CHECK(std::abs(c[i] - ref[i]) <= 1e-5 * (1 + std::abs(ref[i])) * k);
          CHECK(std::abs(c2[i] - 0.5 - ref[i]) <= 1e-5 * (1 + std::abs(ref[i])) * k);
        }
      }
    }
  }

  TEST_CASE("AVX2 and scalar dot_acc64 agree to double rounding") {
    const kernels::KernelTable* avx = kernels::avx2_table();
    if (!avx || !kernels::cpu_supports_avx2()) return;
    Rng rng(5);
    for (int n : {1, 3, 8, 15, 64, 100, 1023}) {
      std::vector<float> a(n), b(n);
      for (float& v : a) v = static_cast<float>(rng.uniform(-1, 1));
      for (float& v : b) v = static_cast<float>(rng.uniform(-1, 1));
      const double s = kernels::scalar_table().dot_acc64(a.data(), b.data(), n);
      const double v = avx->dot_acc64(a.data(), b.data(), n);
      CHECK(std::abs(s - v) <= 1e-13 * n);
    }
  }

  TEST_CASE("f64 gemm front door is exact on small integers") {
    const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{7, 8, 9, 10, 11, 12};
    std::vector<double> c(4);
    kernels::gemm_nn(2, 2, 3, a.data(), 3, b.data(), 2, c.data(), 2, false);
    CHECK(c == std::vector<double>{58, 64, 139, 154});
  }
}

TEST_SUITE("diffcore") {
  TEST_CASE("conv2d examples") {
    Graph<double> g;
    const Var zero = g.constant(Tensor<double>({1, 3, 3}, 0.0));
    const Var k = g.constant(Tensor<double>({1, 1, 3, 3}, 0.25));
    const Var b = g.constant(Tensor<double>({1}, std::vector<double>{1.5}));
    for (double v : g.value(ops::conv2d(g, zero, k, b, 1, 1)).data()) CHECK(v == 1.5);

    const Var img = g.constant(Tensor<double>({1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
    const Var id = g.constant(Tensor<double>({1, 1, 1, 1}, 1.0));
    const Var b0 = g.constant(Tensor<double>({1}, 0.0));
    CHECK(g.value(ops::conv2d(g, img, id, b0, 1, 0)) == g.value(img));
    const Var avg = g.constant(Tensor<double>({1, 1, 3, 3}, 1.0 / 9.0));
    const Tensor<double> out = g.value(ops::conv2d(g, img, avg, b0, 1, 0));
    REQUIRE(out.size() == 1);
    CHECK(out[0] == doctest::Approx(5.0).epsilon(1e-14));
  }

  TEST_CASE("conv2d rejects a channel mismatch") {
    Graph<double> g;
    const Var x = g.constant(Tensor<double>({2, 4, 4}, 1.0));
    const Var k = g.constant(Tensor<double>({1, 3, 3, 3}, 1.0));
    const Var b = g.constant(Tensor<double>({1}, 0.0));
    CHECK_THROWS_AS(ops::conv2d(g, x, k, b, 1, 1), ShapeError);
  }

  TEST_CASE("activation examples") {
    Graph<double> g;
    const Var x = g.constant(Tensor<double>({3}, std::vector<double>{-1, 0, 2}));
    CHECK(g.value(ops::relu(g, x)) == Tensor<double>({3}, std::vector<double>{0, 0, 2}));
    const Var s = g.constant(Tensor<double>({2}, std::vector<double>{0, std::log(3.0)}));
    const Tensor<double> sv = g.value(ops::sigmoid(g, s));
    CHECK(sv[0] == 0.5);
    CHECK(sv[1] == doctest::Approx(0.75).epsilon(1e-15));
  }

  TEST_CASE("l2_normalize_rows examples") {
    Graph<double> g;
    const Var x = g.constant(Tensor<double>({3, 2}, std::vector<double>{3, 4, 1, 0, 0, 0}));
    const Tensor<double> y = g.value(ops::l2_normalize_rows(g, x, 1e-8));
    CHECK(y.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(y.at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(y.at(1, 0) == 1.0);
    CHECK(y.at(1, 1) == 0.0);
    CHECK(y.at(2, 0) == 0.0);
    CHECK(y.at(2, 1) == 0.0);
  }

  TEST_CASE("l2_normalize_rows norms are zero or one") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor<double> t = random_tensor(rng, {6, 5}, -3, 3);
      if (trial % 5 == 0)
        for (int j = 0; j < 5; ++j) t.at(2, j) = 0;
      Graph<double> g;
      const Tensor<double> y = g.value(ops::l2_normalize_rows(g, g.constant(t), 1e-8));
      for (int i = 0; i < 6; ++i) {
        double s = 0;
        for (int j = 0; j < 5; ++j) s += y.at(i, j) * y.at(i, j);
        const double n = std::sqrt(s);
        CHECK((n == 0.0 || std::abs(n - 1.0) <= 1e-6));
      }
    }
  }

  TEST_CASE("matmul examples and shape errors") {
    Graph<double> g;
    const Var a = g.constant(Tensor<double>({1, 2}, std::vector<double>{1, 2}));
    const Var b = g.constant(Tensor<double>({2, 1}, std::vector<double>{3, 4}));
    CHECK(g.value(ops::matmul(g, a, b))[0] == 11.0);
    const Var eye = g.constant(Tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1}));
    const Var m = g.constant(Tensor<double>({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
    CHECK(g.value(ops::matmul(g, eye, m)) == g.value(m));
    const Var z = g.constant(Tensor<double>({2, 2}, 0.0));
    for (double v : g.value(ops::matmul(g, z, m)).data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(ops::matmul(g, a, a), ShapeError);
  }

  TEST_CASE("softmax examples") {
    Graph<double> g;
    const Var u = g.constant(Tensor<double>({1, 2}, std::vector<double>{0, 0}));
    const Tensor<double> su = g.value(ops::softmax_rows(g, u));
    CHECK(su[0] == 0.5);
    CHECK(su[1] == 0.5);
    for (double base : {0.0, 999.0}) {
      const Var x = g.constant(Tensor<double>({1, 2}, std::vector<double>{base + 1, base}));
      const Tensor<double> s = g.value(ops::softmax_rows(g, x));
      CHECK(s[0] == doctest::Approx(0.7310586).epsilon(1e-7));
      CHECK(s[1] == doctest::Approx(0.2689414).epsilon(1e-7));
    }
    const Var c = g.constant(Tensor<double>({2, 1}, std::vector<double>{1, 0}));
    CHECK(g.value(ops::softmax_cols(g, c))[0] == doctest::Approx(0.7310586).epsilon(1e-7));
  }

  TEST_CASE("softmax sums and shift invariance on random inputs") {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 1 + static_cast<int>(rng.below(9)), m = 1 + static_cast<int>(rng.below(9));
      const Tensor<double> x = random_tensor(rng, {n, m}, -30, 30);
      Graph<double> g;
      const Tensor<double> r = g.value(ops::softmax_rows(g, g.constant(x)));
      const Tensor<double> c = g.value(ops::softmax_cols(g, g.constant(x)));
      for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < m; ++j) s += r.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
      for (int j = 0; j < m; ++j) {
        double s = 0;
        for (int i = 0; i < n; ++i) s += c.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
      Tensor<double> shifted = x;
      for (int i = 0; i < n; ++i) {
        const double k = rng.uniform(-100, 100);
        for (int j = 0; j < m; ++j) shifted.at(i, j) += k;
      }
      const Tensor<double> r2 = g.value(ops::softmax_rows(g, g.constant(shifted)));
      for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(r[i] - r2[i]) <= 1e-12);
    }
  }

  TEST_CASE("float softmax rows sum to one within 1e-5") {
    Rng rng(10);
    const TensorF x = testutil::random_tensor_f(rng, {7, 11}, -20, 20);
    Graph<float> g;
    const TensorF r = g.value(ops::softmax_rows(g, g.constant(x)));
    for (int i = 0; i < 7; ++i) {
      double s = 0;
      for (int j = 0; j < 11; ++j) s += r.at(i, j);
      CHECK(std::abs(s - 1.0) <= 1e-5);
    }
  }

  TEST_CASE("backward examples") {
    Graph<double> g;
    const Var x = g.parameter(Tensor<double>({1}, std::vector<double>{3}));
    const Var l = ops::sum(g, ops::mul(g, x, x));
    CHECK(g.backward(l).at(x.id)[0] == 6.0);

    Graph<double> g2;
    const Var p = g2.parameter(Tensor<double>({2}, 1.0));
    const Var c = g2.constant(Tensor<double>({1}, 4.0));
    for (const auto& [id, grad] : g2.backward(c))
      for (double v : grad.data()) CHECK(v == 0.0);
    (void)p;

    Graph<double> g3;
    const Tensor<double> logits({1, 3}, std::vector<double>{0.3, -1.2, 2.0});
    const Var a = g3.constant(logits);
    const Var b = g3.parameter(logits);
    const Var kl = ops::kl_divergence(g3, ops::softmax_rows(g3, a), ops::softmax_rows(g3, b), 1e-12);
    for (double v : g3.backward(kl).at(b.id).data()) CHECK(std::abs(v) <= 1e-15);
  }

  TEST_CASE("backward contract errors") {
    Graph<double> g;
    const Var x = g.parameter(Tensor<double>({2}, 1.0));
    CHECK_THROWS_AS(g.backward(x), ContractError);
    const Var l = ops::sum(g, x);
    g.backward(l);
    CHECK_THROWS_AS(g.backward(l), ContractError);
    CHECK_THROWS_AS(g.constant(Tensor<double>({1}, 1.0)), ContractError);
    g.reset();
    CHECK_NOTHROW(g.constant(Tensor<double>({1}, 1.0)));
  }

  TEST_CASE("non-finite values are rejected at the graph boundary") {
    Graph<double> g;
    CHECK_THROWS_AS(g.constant(Tensor<double>({1}, std::numeric_limits<double>::quiet_NaN())), NumericFault);
    CHECK_THROWS_AS(g.parameter(Tensor<double>({1}, std::numeric_limits<double>::infinity())), NumericFault);
  }

  TEST_CASE("backward visits each reachable node once") {
    Graph<double> g;
    const Var x = g.parameter(Tensor<double>({2, 2}, 0.5));
    const Var y = ops::mul(g, x, x);
    const Var z = ops::add(g, y, x);
    const Var l = ops::sum(g, z);
    g.backward(l);
    CHECK(g.last_backward_visits() == 4);
  }

  TEST_CASE("finite_difference_check examples") {
    const std::vector<double> p{3.0}, a{6.0};
    const GradCheckReport r =
        finite_difference_check([](std::span<const double> v) { return v[0] * v[0]; }, p, a, 1e-4);
    CHECK(r.max_rel_error < 1e-7);
    const std::vector<double> z{0.0};
    CHECK(finite_difference_check([](std::span<const double>) { return 2.0; }, p, z, 1e-4).max_rel_error == 0.0);
  }

  TEST_CASE("every op matches central differences") {
    Rng rng(21);
    const double tol = 1e-6;
    using V = std::vector<Var>;
    auto weights = [&](int n) { return random_tensor(rng, {n}, -1, 1); };

    SUBCASE("conv2d with stride and padding") {
      for (int stride : {1, 2}) {
        const int out = stride == 1 ? 5 : 3;
        const Tensor<double> w = random_tensor(rng, {2, out, out});
        CHECK(grad_error(
                  [&](Graph<double>& g, const V& v) {
                    const Var y = ops::conv2d(g, v[0], v[1], v[2], stride, 1);
                    return ops::sum(g, ops::mul(g, y, g.constant(w)));
                  },
                  {random_tensor(rng, {3, 5, 5}), random_tensor(rng, {2, 3, 3, 3}), weights(2)}) < tol);
      }
    }
    SUBCASE("sigmoid and relu away from the kink") {
      Tensor<double> x = random_tensor(rng, {4, 3});
      for (double& v : x.data())
        if (std::abs(v) < 0.05) v = 0.3;
      CHECK(grad_error([](Graph<double>& g, const V& v) { return ops::sum(g, ops::mul(g, ops::relu(g, v[0]), v[0])); },
                       {x}) < tol);
      CHECK(grad_error([](Graph<double>& g, const V& v) { return ops::sum(g, ops::mul(g, ops::sigmoid(g, v[0]), v[0])); },
                       {x}) < tol);
    }
    SUBCASE("l2_normalize_rows, matmul, transpose, softmaxes") {
      const Tensor<double> c = random_tensor(rng, {3, 4});
      CHECK(grad_error(
                [&](Graph<double>& g, const V& v) {
                  return ops::sum(g, ops::mul(g, ops::l2_normalize_rows(g, v[0], 1e-8), g.constant(c)));
                },
                {random_tensor(rng, {3, 4})}) < tol);
      CHECK(grad_error(
                [&](Graph<double>& g, const V& v) {
                  const Var m = ops::matmul(g, v[0], ops::transpose(g, v[1]));
                  return ops::sum(g, ops::mul(g, ops::softmax_rows(g, m), ops::softmax_cols(g, m)));
                },
                {random_tensor(rng, {3, 4}), random_tensor(rng, {5, 4})}) < tol);
    }
    SUBCASE("elementwise, scaling and reductions") {
      CHECK(grad_error(
                [&](Graph<double>& g, const V& v) {
                  const Var a = ops::scale_rows(g, v[0], v[1]);
                  const Var b = ops::scale_cols(g, a, v[2]);
                  const Var c = ops::divide(g, ops::scale(g, b, 3.0), 7.0);
                  return ops::add(g, ops::mean(g, ops::mul(g, c, c)), ops::sum(g, ops::reshape(g, c, {12})));
                },
                {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 1}), random_tensor(rng, {4, 1})}) < tol);
    }
    SUBCASE("cell gathering and row dots") {
      const std::vector<ops::Cell> cells{{0, 0}, {2, 1}, {1, 3}};
      CHECK(grad_error(
                [&](Graph<double>& g, const V& v) {
                  const Var r = ops::gather_cells(g, v[0], cells);
                  const Var rows = ops::chw_to_rows(g, v[0]);
                  return ops::add(g, ops::sum(g, ops::rowwise_dot(g, r, r)), ops::sum(g, ops::mul(g, rows, rows)));
                },
                {random_tensor(rng, {2, 3, 4})}) < tol);
    }
    SUBCASE("log, KL and soft BCE terms") {
      const std::vector<std::pair<int, int>> entries{{0, 1}, {2, 2}};
      CHECK(grad_error(
                [&](Graph<double>& g, const V& v) {
                  return ops::neg_log_sum_at(g, ops::softmax_rows(g, v[0]), entries, 1e-12);
                },
                {random_tensor(rng, {3, 3})}) < tol);
      const Tensor<double> p_logits = random_tensor(rng, {3, 4});
      CHECK(grad_error(
                [&](Graph<double>& g, const V& v) {
                  return ops::kl_divergence(g, ops::softmax_rows(g, g.constant(p_logits)), ops::softmax_rows(g, v[0]),
                                            1e-12);
                },
                {random_tensor(rng, {3, 4})}) < tol);
      Tensor<double> target({6});
      for (double& t : target.data()) t = rng.uniform();
      CHECK(grad_error(
                [&](Graph<double>& g, const V& v) { return ops::soft_bce_mean(g, ops::sigmoid(g, v[0]), target, 1e-12); },
                {random_tensor(rng, {6})}) < tol);
    }
  }

  TEST_CASE("detach and kl_divergence block gradients into their reference") {
    Graph<double> g;
    const Var p = g.parameter(Tensor<double>({1, 2}, std::vector<double>{0.2, 0.8}));
    const Var q = g.parameter(Tensor<double>({1, 2}, std::vector<double>{0.5, 0.5}));
    const Var l = ops::add(g, ops::kl_divergence(g, p, q, 1e-12), ops::sum(g, ops::detach(g, p)));
    const auto grads = g.backward(l);
    for (double v : grads.at(p.id).data()) CHECK(v == 0.0);
    CHECK(grads.at(q.id)[0] != 0.0);
  }

  TEST_CASE("soft_bce_mean closed form") {
    Graph<double> g;
    const Var p = g.constant(Tensor<double>({1}, 0.5));
    CHECK(g.value(ops::soft_bce_mean(g, p, Tensor<double>({1}, 1.0), 1e-12))[0] ==
          doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  }
}
