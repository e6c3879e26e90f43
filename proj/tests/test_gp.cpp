#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "fss/gp.hpp"
#include "support/gp_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace fss;

namespace {

Eigen::MatrixXd random_mat(Index r, Index c, Rng& rng, double sd = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, sd);
  return m;
}

gp::KernelParams random_params(Rng& rng) {
  return {rng.uniform(0.3, 2.5), rng.uniform(0.5, 3.0), rng.uniform(0.05, 1.0)};
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace

TEST_CASE("se_kernel closed-form values") {
  Eigen::VectorXd z(3);
  z << 0.3, -1.2, 2.0;
  gp::KernelParams p{2.0, 0.7, 0.0};
  CHECK(gp::se_kernel<double>(z, z, p) == doctest::Approx(4.0).epsilon(1e-15));

  Eigen::VectorXd a(2), b(2);
  a << 0.0, 0.0;
  b << 1.0, 1.0;  // squared distance 2
  gp::KernelParams unit{1.0, 1.0, 0.0};
  CHECK(gp::se_kernel<double>(a, b, unit) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd u = random_mat(4, 1, rng), v = random_mat(4, 1, rng);
    auto pr = random_params(rng);
    CHECK(gp::se_kernel<double>(u, v, pr) == gp::se_kernel<double>(v, u, pr));
    CHECK(gp::se_kernel<double>(u, v, pr) <= pr.sigma * pr.sigma);
  }

  Eigen::VectorXd short_vec(2);
  short_vec << 1, 2;
  CHECK_THROWS_AS(gp::se_kernel<double>(z, short_vec, p), InvalidInputError);
  CHECK_THROWS_AS(gp::se_kernel<double>(z, z, gp::KernelParams{-1.0, 1.0, 0.1}),
                  InvalidInputError);
}

TEST_CASE("gram_matrix: single point, PSD, transpose symmetry") {
  Rng rng(5);
  gp::KernelParams p{1.7, 1.1, 0.0};
  Eigen::MatrixXd one = random_mat(1, 3, rng);
  Eigen::MatrixXd g1 = gp::gram_matrix<double>(one, one, p);
  REQUIRE(g1.rows() == 1);
  CHECK(g1(0, 0) == doctest::Approx(1.7 * 1.7).epsilon(1e-15));

  Eigen::MatrixXd a = random_mat(8, 4, rng);
  Eigen::MatrixXd gaa = gp::gram_matrix<double>(a, a, p);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gaa);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-8);

  Eigen::MatrixXd b = random_mat(5, 4, rng);
  Eigen::MatrixXd gab = gp::gram_matrix<double>(a, b, p);
  Eigen::MatrixXd gba = gp::gram_matrix<double>(b, a, p);
  CHECK((gab - gba.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gp_posterior: noiseless interpolation at a support point") {
  Rng rng(7);
  Eigen::MatrixXd s = random_mat(1, 3, rng);
  Eigen::MatrixXd e = random_mat(1, 2, rng);
  gp::KernelParams p{1.4, 0.9, 0.0};
  auto post = gp::gp_posterior(s, e, s, p);
  CHECK((post.mean - e).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(post.variance(0) == 0.0);  // clamped exactly to zero
}

TEST_CASE("gp_posterior: huge noise collapses to the prior") {
  Rng rng(9);
  Eigen::MatrixXd s = random_mat(6, 3, rng);
  Eigen::MatrixXd e = random_mat(6, 2, rng);
  Eigen::MatrixXd q = random_mat(4, 3, rng);
  gp::KernelParams p{1.2, 1.0, 1e6};
  auto post = gp::gp_posterior(s, e, q, p);
  CHECK(post.mean.cwiseAbs().maxCoeff() < 1e-6);
  for (Index i = 0; i < 4; ++i)
    CHECK(rel_err(post.variance(i), 1.2 * 1.2) < 1e-9);
}

TEST_CASE("gp_posterior matches the dense explicit-inverse oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.uniform_int(0, 10));
    const Index m = 1 + static_cast<Index>(rng.uniform_int(0, 4));
    const Index f = 1 + static_cast<Index>(rng.uniform_int(0, 2));
    const Index fp = 1 + static_cast<Index>(rng.uniform_int(0, 1));
    Eigen::MatrixXd s = random_mat(n, f, rng);
    Eigen::MatrixXd e = random_mat(n, fp, rng);
    Eigen::MatrixXd q = random_mat(m, f, rng);
    auto p = random_params(rng);
    auto got = gp::gp_posterior(s, e, q, p);
    auto want = test::dense_gp_oracle(s, e, q, p);
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < fp; ++j) CHECK(rel_err(got.mean(i, j), want.mean(i, j)) < 1e-6);
      CHECK(std::abs(got.variance(i) - want.variance(i)) /
                std::max(std::abs(want.variance(i)), 1e-9) <
            1e-6);
    }
  }
}

TEST_CASE("class_wise_posteriors: shared variance, per-class means, linearity") {
  Rng rng(13);
  const Index n = 12, m = 5, f = 3, fp = 2;
  Eigen::MatrixXd s = random_mat(n, f, rng);
  Eigen::MatrixXd q = random_mat(m, f, rng);
  Eigen::MatrixXd e = random_mat(n, fp, rng);
  gp::KernelParams p{1.1, 1.3, 0.2};

  auto sv = make_const(TensorD::from_matrix(s));
  auto qv = make_const(TensorD::from_matrix(q));
  auto ev = make_const(TensorD::from_matrix(e));
  auto ev_neg = make_const(TensorD::from_matrix(Eigen::MatrixXd(-e)));
  auto kv = gp::KernelVars::constants(p);

  auto posts = gp::class_wise_posteriors(sv, {ev, ev_neg}, qv, kv);
  REQUIRE(posts.size() == 2);
  // means are exact negatives (linearity of the solve in the encodings)
  CHECK((posts[0].mean->value.mat() + posts[1].mean->value.mat()).cwiseAbs().maxCoeff() <
        1e-12);
  // variance fields bitwise identical (same node, same buffer)
  CHECK(posts[0].variance.get() == posts[1].variance.get());
  for (Index i = 0; i < m; ++i)
    CHECK(posts[0].variance->value[i] == posts[1].variance->value[i]);

  // per-class recomputation oracle: each mean equals an independent call
  std::vector<Eigen::MatrixXd> encs;
  for (int c = 0; c < 6; ++c) encs.push_back(random_mat(n, fp, rng));
  std::vector<Var> enc_vars;
  for (auto& ec : encs) enc_vars.push_back(make_const(TensorD::from_matrix(ec)));
  auto many = gp::class_wise_posteriors(sv, enc_vars, qv, kv);
  for (int c = 0; c < 6; ++c) {
    auto solo = gp::gp_posterior(s, encs[static_cast<size_t>(c)], q, p);
    CHECK((many[static_cast<size_t>(c)].mean->value.mat() - solo.mean)
              .cwiseAbs()
              .maxCoeff() < 1e-10);
  }

  // alpha*E1 + beta*E2 linearity to 1e-6 relative
  Eigen::MatrixXd e2 = random_mat(n, fp, rng);
  const double alpha = 0.7, beta = -1.9;
  auto lhs = gp::gp_posterior(s, Eigen::MatrixXd(alpha * e + beta * e2), q, p);
  auto m1 = gp::gp_posterior(s, e, q, p);
  auto m2 = gp::gp_posterior(s, e2, q, p);
  Eigen::MatrixXd combo = alpha * m1.mean + beta * m2.mean;
  CHECK((lhs.mean - combo).cwiseAbs().maxCoeff() /
            std::max(combo.cwiseAbs().maxCoeff(), 1e-12) <
        1e-6);
}

TEST_CASE("variance properties: prior bound, noise monotonicity, permutation") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 10, m = 6, f = 3;
    Eigen::MatrixXd s = random_mat(n, f, rng);
    Eigen::MatrixXd e = random_mat(n, 2, rng);
    Eigen::MatrixXd q = random_mat(m, f, rng);
    auto p = random_params(rng);
    auto post = gp::gp_posterior(s, e, q, p);
    for (Index i = 0; i < m; ++i)
      CHECK(post.variance(i) <= p.sigma * p.sigma + 1e-9);

    gp::KernelParams noisier = p;
    noisier.noise = p.noise + 0.5;
    auto post2 = gp::gp_posterior(s, e, q, noisier);
    for (Index i = 0; i < m; ++i) CHECK(post2.variance(i) >= post.variance(i) - 1e-9);

    // permute support rows together with encodings
    std::vector<Index> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), Index(0));
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Eigen::MatrixXd sp(n, f), ep(n, 2);
    for (Index i = 0; i < n; ++i) {
      sp.row(i) = s.row(perm[static_cast<size_t>(i)]);
      ep.row(i) = e.row(perm[static_cast<size_t>(i)]);
    }
    auto post3 = gp::gp_posterior(sp, ep, q, p);
    CHECK((post3.mean - post.mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((post3.variance - post.variance).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("gradients through the posterior match finite differences") {
  Rng rng(19);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 7, m = 4, f = 3, fp = 2;
    auto s = make_leaf(TensorD::from_matrix(random_mat(n, f, rng)));
    auto e = make_leaf(TensorD::from_matrix(random_mat(n, fp, rng)));
    auto q = make_leaf(TensorD::from_matrix(random_mat(m, f, rng)));
    auto params = random_params(rng);
    gp::KernelVars kv = gp::KernelVars::leaves(params);
    auto probe_m = make_const(TensorD::from_matrix(random_mat(m, fp, rng)));
    auto probe_v = make_const(TensorD::from_matrix(random_mat(m, 1, rng)));

    auto builder = [&]() {
      auto post = gp::gp_posterior(s, e, q, kv);
      auto lm = mean(square(mul(post.mean, probe_m)));
      auto lv = mean(mul(post.variance, reshape(probe_v, Shape{m})));
      return add(lm, lv);
    };
    for (const auto& leaf : {kv.sigma, kv.length, kv.noise}) {
      auto res = test::gradcheck_leaf(builder, leaf, 1e-6);
      CHECK(res.max_rel_err < 1e-4);
    }
    for (const auto& leaf : {s, e, q}) {
      auto res = test::gradcheck_leaf(builder, leaf, 1e-6, 3);
      CHECK(res.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("jitter escalation handles duplicate support rows at zero noise") {
  Rng rng(23);
  Eigen::MatrixXd s(4, 2);
  s << 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, -0.5, 0.3;  // three identical rows
  Eigen::MatrixXd e = random_mat(4, 1, rng);
  Eigen::MatrixXd q = random_mat(2, 2, rng);
  gp::KernelParams p{1.0, 1.0, 0.0};
  auto post = gp::gp_posterior(s, e, q, p);
  CHECK(post.mean.allFinite());
  CHECK(post.variance.allFinite());
}

TEST_CASE("errors: non-finite inputs and misaligned rows") {
  Rng rng(29);
  Eigen::MatrixXd s = random_mat(3, 2, rng);
  Eigen::MatrixXd e = random_mat(3, 1, rng);
  Eigen::MatrixXd q = random_mat(2, 2, rng);
  gp::KernelParams p{1.0, 1.0, 0.1};

  Eigen::MatrixXd bad = s;
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gp::gp_posterior(bad, e, q, p), NumericError);

  Eigen::MatrixXd e_short = random_mat(2, 1, rng);
  CHECK_THROWS_AS(gp::gp_posterior(s, e_short, q, p), InvalidInputError);
}

TEST_CASE("support row subsampling caps the row count deterministically") {
  Rng rng1(31), rng2(31);
  auto idx1 = gp::subsample_rows(100, 16, rng1);
  auto idx2 = gp::subsample_rows(100, 16, rng2);
  REQUIRE(idx1.size() == 16);
  CHECK(idx1 == idx2);
  CHECK(std::is_sorted(idx1.begin(), idx1.end()));
  CHECK(std::adjacent_find(idx1.begin(), idx1.end()) == idx1.end());
  auto all = gp::subsample_rows(8, 16, rng1);
  CHECK(all.size() == 8);
}
