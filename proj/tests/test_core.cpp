#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fss/core/image_ops.hpp"
#include "fss/nn/checkpoint.hpp"
#include "fss/nn/layers.hpp"
#include "fss/nn/optim.hpp"
#include "support/gradcheck.hpp"

#include <nlohmann/json.hpp>

using namespace fss;

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  TensorD t{std::move(shape)};
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sd);
  return t;
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match finite differences") {
  Rng rng(7);
  auto a = make_leaf(random_tensor({3, 4}, rng));
  auto b = make_leaf(random_tensor({3, 4}, rng));
  auto s = make_leaf(TensorD::scalar(0.7));

  auto builder = [&]() {
    auto x = mul(add(a, b), sigmoid(mul(s, a)));
    auto y = add(exp(mul_scalar(x, 0.1)), square(b));
    return mean(div(y, add_scalar(square(s), 1.0)));
  };
  for (const auto& leaf : {a, b, s}) {
    auto res = test::gradcheck_leaf(builder, leaf);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("matmul/transpose/broadcast gradients") {
  Rng rng(11);
  auto a = make_leaf(random_tensor({4, 3}, rng));
  auto b = make_leaf(random_tensor({3, 5}, rng));
  auto v = make_leaf(random_tensor({5}, rng));
  auto c = make_leaf(random_tensor({4}, rng));

  auto builder = [&]() {
    auto m = matmul(a, b);
    m = add_rowvec(m, v);
    m = add_colvec(m, c);
    return sum(mul(m, transpose(transpose(m))));
  };
  for (const auto& leaf : {a, b, v, c}) {
    auto res = test::gradcheck_leaf(builder, leaf);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("rowwise_sqnorm and add_scaled_identity gradients") {
  Rng rng(13);
  auto a = make_leaf(random_tensor({4, 4}, rng));
  auto s = make_leaf(TensorD::scalar(0.3));
  auto builder = [&]() {
    auto m = add_scaled_identity(a, s);
    return sum(mul(rowwise_sqnorm(m), rowwise_sqnorm(transpose(m))));
  };
  CHECK(test::gradcheck_leaf(builder, a).max_rel_err < 1e-6);
  CHECK(test::gradcheck_leaf(builder, s).max_rel_err < 1e-6);
}

TEST_CASE("conv2d forward matches direct convolution and gradients check") {
  Rng rng(17);
  auto x = make_leaf(random_tensor({2, 3, 5, 6}, rng));
  auto w = make_leaf(random_tensor({4, 3, 3, 3}, rng, 0.5));
  auto b = make_leaf(random_tensor({4}, rng, 0.1));

  auto y = conv2d(x, w, b, 2, 1);
  REQUIRE(y->value.shape() == Shape{2, 4, 3, 3});

  // direct loop oracle for one arbitrary output element
  const Index n = 1, co = 2, oh = 1, ow = 2;
  double acc = b->value[co];
  for (Index ci = 0; ci < 3; ++ci)
    for (Index ki = 0; ki < 3; ++ki)
      for (Index kj = 0; kj < 3; ++kj) {
        const Index ih = oh * 2 + ki - 1, iw = ow * 2 + kj - 1;
        if (ih < 0 || ih >= 5 || iw < 0 || iw >= 6) continue;
        acc += x->value.at(n, ci, ih, iw) * w->value.at(co, ci, ki, kj);
      }
  CHECK(y->value.at(n, co, oh, ow) == doctest::Approx(acc).epsilon(1e-12));

  auto builder = [&]() { return mean(square(conv2d(x, w, b, 2, 1))); };
  CHECK(test::gradcheck_leaf(builder, x, 1e-6, 7).max_rel_err < 1e-5);
  CHECK(test::gradcheck_leaf(builder, w, 1e-6, 5).max_rel_err < 1e-5);
  CHECK(test::gradcheck_leaf(builder, b).max_rel_err < 1e-5);
}

TEST_CASE("conv_transpose2d doubles spatial dims and gradients check") {
  Rng rng(19);
  auto x = make_leaf(random_tensor({1, 3, 4, 5}, rng));
  auto w = make_leaf(random_tensor({3, 2, 2, 2}, rng, 0.5));
  auto b = make_leaf(random_tensor({2}, rng, 0.1));
  auto y = conv_transpose2d(x, w, b, 2);
  REQUIRE(y->value.shape() == Shape{1, 2, 8, 10});

  auto builder = [&]() { return mean(square(conv_transpose2d(x, w, b, 2))); };
  CHECK(test::gradcheck_leaf(builder, x, 1e-6, 5).max_rel_err < 1e-5);
  CHECK(test::gradcheck_leaf(builder, w).max_rel_err < 1e-5);
  CHECK(test::gradcheck_leaf(builder, b).max_rel_err < 1e-5);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, convT(y)> for matching kernels, zero bias
  Rng rng(23);
  auto x = make_const(random_tensor({1, 2, 6, 6}, rng));
  auto w = make_const(random_tensor({3, 2, 2, 2}, rng));  // conv weight [Cout,Cin,k,k]
  auto y = make_const(random_tensor({1, 3, 3, 3}, rng));

  auto cx = conv2d(x, w, Var{}, 2, 0);                   // [1,3,3,3]
  // convT weight layout is [Cin=3, Cout=2, k, k] for the adjoint map
  TensorD wt(Shape{3, 2, 2, 2});
  for (Index a = 0; a < 3; ++a)
    for (Index bq = 0; bq < 2; ++bq)
      for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 2; ++j) wt.at(a, bq, i, j) = w->value.at(a, bq, i, j);
  auto ty = conv_transpose2d(y, make_const(wt), Var{}, 2);  // [1,2,6,6]

  const double lhs = (cx->value.array() * y->value.array()).sum();
  const double rhs = (x->value.array() * ty->value.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("maxpool2d forward/backward") {
  Rng rng(29);
  auto x = make_leaf(random_tensor({1, 2, 6, 6}, rng));
  auto y = maxpool2d(x, 3, 2, 1);
  REQUIRE(y->value.shape() == Shape{1, 2, 3, 3});
  auto builder = [&]() { return sum(square(maxpool2d(x, 3, 2, 1))); };
  CHECK(test::gradcheck_leaf(builder, x, 1e-7, 3).max_rel_err < 1e-4);
}

TEST_CASE("batch_norm2d train mode normalizes and gradients check") {
  Rng rng(31);
  auto x = make_leaf(random_tensor({2, 3, 4, 4}, rng, 2.0));
  auto gamma = make_leaf(TensorD::full({3}, 1.3));
  auto beta = make_leaf(TensorD::full({3}, -0.2));
  TensorD rm({3}), rv = TensorD::full({3}, 1.0);

  auto y = batch_norm2d(x, gamma, beta, &rm, &rv, true, 0.1, 1e-5);
  // per-channel mean ~ beta, sd ~ gamma after the affine
  for (Index c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (Index n = 0; n < 2; ++n)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 4; ++w) {
          const double v = y->value.at(n, c, h, w);
          s += v;
          s2 += v * v;
        }
    const double m = s / 32.0;
    CHECK(m == doctest::Approx(-0.2).epsilon(1e-6));
    CHECK(std::sqrt(s2 / 32.0 - m * m) == doctest::Approx(1.3).epsilon(1e-3));
  }

  // probe breaks BN's normalization invariance so d/dx is well conditioned
  auto probe = make_const(random_tensor({2, 3, 4, 4}, rng));
  auto builder = [&]() {
    TensorD rm2({3}), rv2 = TensorD::full({3}, 1.0);
    auto yb = batch_norm2d(x, gamma, beta, &rm2, &rv2, true, 0.1, 1e-5);
    return mean(square(mul(yb, probe)));
  };
  CHECK(test::gradcheck_leaf(builder, x, 1e-6, 5).max_rel_err < 1e-4);
  CHECK(test::gradcheck_leaf(builder, gamma).max_rel_err < 1e-5);
  CHECK(test::gradcheck_leaf(builder, beta).max_rel_err < 1e-5);

  // eval mode: running stats untouched, output affine in x
  TensorD rm_before = rm, rv_before = rv;
  auto ye = batch_norm2d(x, gamma, beta, &rm, &rv, false, 0.1, 1e-5);
  CHECK((rm.array() == rm_before.array()).all());
  CHECK((rv.array() == rv_before.array()).all());
}

TEST_CASE("concat, spatial_mean, channels_to_rows gradients") {
  Rng rng(37);
  auto a = make_leaf(random_tensor({1, 2, 3, 3}, rng));
  auto b = make_leaf(random_tensor({1, 3, 3, 3}, rng));
  auto builder = [&]() {
    auto c = concat_channels<double>({a, b});
    auto m = spatial_mean(c);
    auto r = channels_to_rows(c);
    return add(mean(square(m)), mean(square(r)));
  };
  CHECK(test::gradcheck_leaf(builder, a).max_rel_err < 1e-5);
  CHECK(test::gradcheck_leaf(builder, b).max_rel_err < 1e-5);
}

TEST_CASE("losses: bce_mean and row_softmax_nll") {
  Rng rng(41);
  // bce at the truth is ~0; at p=0.5 it is log 2
  TensorD target({2, 2});
  target.array() << 1, 0, 0, 1;
  auto perfect = make_const([&] {
    TensorD t({2, 2});
    t.array() << 1 - 1e-9, 1e-9, 1e-9, 1 - 1e-9;
    return t;
  }());
  CHECK(bce_mean(perfect, target, 1e-7)->value.value() < 1e-5);
  auto half = make_const(TensorD::full({2, 2}, 0.5));
  CHECK(bce_mean(half, target, 1e-7)->value.value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto p = make_leaf([&] {
    TensorD t({2, 2});
    t.array() << 0.3, 0.6, 0.2, 0.9;
    return t;
  }());
  auto builder = [&]() { return bce_mean(p, target, 1e-7); };
  CHECK(test::gradcheck_leaf(builder, p).max_rel_err < 1e-6);

  auto logits = make_leaf(random_tensor({5, 3}, rng));
  std::vector<int> targets{0, 2, 1, 1, 0};
  auto builder2 = [&]() { return row_softmax_nll(logits, targets); };
  CHECK(test::gradcheck_leaf(builder2, logits).max_rel_err < 1e-6);

  auto l2 = make_leaf(random_tensor({6, 4}, rng));
  auto probe = make_const(random_tensor({6, 4}, rng));
  auto builder3 = [&]() { return mean(square(add(l2_normalize_rows(l2), probe))); };
  CHECK(test::gradcheck_leaf(builder3, l2).max_rel_err < 1e-5);
}

TEST_CASE("reflect pad and crop round trip") {
  Rng rng(43);
  TensorD x = random_tensor({1, 1, 5, 7}, rng);
  TensorD padded = reflect_pad_to_multiple(x, 4);
  CHECK(padded.shape() == Shape{1, 1, 8, 8});
  TensorD back = crop_hw(padded, 5, 7);
  CHECK((back.array() == x.array()).all());
  // interior values reflect without repeating the edge
  CHECK(padded.at(0, 0, 5, 0) == x.at(0, 0, 3, 0));
  CHECK(padded.at(0, 0, 0, 6) == x.at(0, 0, 0, 6));
}

TEST_CASE("adam step reduces a quadratic and checkpoint round-trips") {
  Rng rng(47);
  auto w = make_leaf(random_tensor({4}, rng));
  AdamOptimizer opt({{"w", w}}, 0.05, 0.0, true);
  auto loss0 = sum(square(w));
  backward(loss0);
  for (int i = 0; i < 50; ++i) {
    auto loss = sum(square(w));
    backward(loss);
    opt.step();
  }
  CHECK(sum(square(w))->value.value() < loss0->value.value());

  std::map<std::string, TensorD> st{{"w", w->value}};
  nlohmann::json manifest{{"version", 1}, {"origin", "test"}};
  save_checkpoint("/tmp/fss_ckpt_test.bin", manifest, st);
  auto ck = load_checkpoint("/tmp/fss_ckpt_test.bin");
  CHECK(nlohmann::json::parse(ck.manifest_json)["origin"] == "test");
  CHECK((ck.tensors.at("w").array() == w->value.array()).all());
}

TEST_CASE("plateau scheduler reduces after patience epochs without improvement") {
  Rng rng(53);
  auto w = make_leaf(random_tensor({2}, rng));
  AdamOptimizer opt({{"w", w}}, 1.0, 0.0, true);
  PlateauScheduler sched(opt, 0.25, 5);
  CHECK(!sched.observe(1.0));
  for (int i = 0; i < 4; ++i) CHECK(!sched.observe(2.0));
  CHECK(sched.observe(2.0));  // 5th bad epoch triggers
  CHECK(opt.learning_rate() == doctest::Approx(0.25));
  for (int i = 0; i < 4; ++i) CHECK(!sched.observe(2.0));
  CHECK(sched.observe(2.0));
  CHECK(opt.learning_rate() == doctest::Approx(0.0625));
}
