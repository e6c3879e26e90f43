#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <memory>
#include <numeric>
#include <vector>

#include "fss/core/autodiff.hpp"
#include "fss/core/rng.hpp"

namespace fss::gp {

// Squared-exponential kernel hyperparameters: scale sigma, bandwidth length,
// observation noise.
struct KernelParams {
  double sigma = 1.0;
  double length = 1.0;
  double noise = 0.1;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw InvalidInputError("kernel: sigma must be positive and finite");
    if (!(length > 0.0) || !std::isfinite(length))
      throw InvalidInputError("kernel: length must be positive and finite");
    if (!(noise >= 0.0) || !std::isfinite(noise))
      throw InvalidInputError("kernel: noise must be non-negative and finite");
  }
};

// k(z1, z2) = sigma^2 * exp(-||z2 - z1||^2 / (2 l^2))
template <typename Scalar>
Scalar se_kernel(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& z1,
                 const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& z2,
                 const KernelParams& params) {
  if (z1.size() != z2.size()) throw InvalidInputError("se_kernel: dimension mismatch");
  if (!z1.allFinite() || !z2.allFinite()) throw NumericError("se_kernel: non-finite input");
  params.validate();
  const Scalar d2 = (z2 - z1).squaredNorm();
  const Scalar s = static_cast<Scalar>(params.sigma);
  const Scalar l = static_cast<Scalar>(params.length);
  return s * s * std::exp(-d2 / (Scalar(2) * l * l));
}

// Pairwise kernel matrix between row-feature sets A (n x F) and B (m x F).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gram_matrix(
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>& a,
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>& b,
    const KernelParams& params) {
  if (a.cols() != b.cols()) throw InvalidInputError("gram_matrix: feature dim mismatch");
  params.validate();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> k(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j)
      k(i, j) = se_kernel<Scalar>(a.row(i).transpose(), b.row(j).transpose(), params);
  return k;
}

// Kernel hyperparameters as graph nodes so they can be learned per stride.
struct KernelVars {
  Var sigma;
  Var length;
  Var noise;

  static KernelVars constants(const KernelParams& p) {
    p.validate();
    return {make_const(TensorD::scalar(p.sigma)), make_const(TensorD::scalar(p.length)),
            make_const(TensorD::scalar(p.noise))};
  }
  static KernelVars leaves(const KernelParams& p) {
    p.validate();
    return {make_leaf(TensorD::scalar(p.sigma)), make_leaf(TensorD::scalar(p.length)),
            make_leaf(TensorD::scalar(p.noise))};
  }
  KernelParams values() const {
    return {sigma->value.value(), length->value.value(), noise->value.value()};
  }
};

// Gram matrix as a graph op: rows from `a`, columns from `b`.
inline Var se_gram(const Var& a, const Var& b, const Var& sigma, const Var& length) {
  auto cross = matmul(a, transpose(b));
  auto d = add_colvec(add_rowvec(mul_scalar(cross, -2.0), rowwise_sqnorm(b)),
                      rowwise_sqnorm(a));
  auto inv_bw = mul_scalar(square(length), 2.0);
  return mul(square(sigma), exp(neg(div(d, inv_bw))));
}

// Posterior statistics for one class head: mean field (m x F') and the
// per-location predictive variance (m), which is class independent.
struct GPosterior {
  Var mean;
  Var variance;
};

// One factorization of (K_SS + sigma_z^2 I + jitter I), shared by every
// right-hand side (all class means and the variance term). Jitter starts at
// 1e-8 * trace(K_SS)/n and escalates by decades to 1e-4 before giving up.
class CholContext {
 public:
  CholContext(Var k_ss, Var noise_sq) : k_ss_(std::move(k_ss)), noise_sq_(std::move(noise_sq)) {
    const Index n = k_ss_->value.dim(0);
    if (!k_ss_->value.all_finite() || !noise_sq_->value.all_finite())
      throw NumericError("gp: non-finite kernel matrix");
    Eigen::MatrixXd a = k_ss_->value.mat();
    a.diagonal().array() += noise_sq_->value.value();
    const double scale = k_ss_->value.mat().trace() / static_cast<double>(n);
    llt_ = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>();
    // plain solve first; jitter only enters when the factorization fails
    for (double eps : {0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
      Eigen::MatrixXd jittered = a;
      jittered.diagonal().array() += eps * scale;
      llt_->compute(jittered);
      if (llt_->info() == Eigen::Success) {
        jitter_ = eps * scale;
        return;
      }
    }
    throw ConditioningError("gp: factorization failed after jitter escalation");
  }

  // Y = (K_SS + sigma_z^2 I + jitter I)^{-1} B, differentiable in K_SS,
  // sigma_z^2 and B (jitter held constant).
  Var solve(const Var& b) const {
    if (b->value.dim(0) != k_ss_->value.dim(0))
      throw InvalidInputError("gp solve: row mismatch");
    TensorD out(b->value.shape());
    out.mat() = llt_->solve(Eigen::MatrixXd(b->value.mat()));
    auto k_ss = k_ss_;
    auto noise_sq = noise_sq_;
    auto llt = llt_;
    return make_op<double>(
        std::move(out), {k_ss, noise_sq, b}, [k_ss, noise_sq, b, llt](NodeT<double>& n) {
          Eigen::MatrixXd gb = llt->solve(Eigen::MatrixXd(n.grad.mat()));
          if (b->requires_grad) {
            if (!b->has_grad()) b->grad = TensorD(b->value.shape());
            b->grad.mat() += gb;
          }
          if (k_ss->requires_grad || noise_sq->requires_grad) {
            Eigen::MatrixXd ga = -gb * Eigen::MatrixXd(n.value.mat()).transpose();
            if (k_ss->requires_grad) {
              if (!k_ss->has_grad()) k_ss->grad = TensorD(k_ss->value.shape());
              k_ss->grad.mat() += ga;
            }
            accumulate_grad(noise_sq, ga.trace());
          }
        });
  }

  double jitter() const { return jitter_; }

 private:
  Var k_ss_;
  Var noise_sq_;
  std::shared_ptr<Eigen::LLT<Eigen::MatrixXd>> llt_;
  double jitter_ = 0.0;
};

namespace detail {

// Column-wise dot products of equal-shaped matrices -> rank-1 of length cols.
inline Var colwise_dot(const Var& a, const Var& b) {
  auto prod = mul(a, b);
  const Index rows = prod->value.dim(0), cols = prod->value.dim(1);
  TensorD out(Shape{cols});
  for (Index c = 0; c < cols; ++c) out[c] = prod->value.mat().col(c).sum();
  return make_op<double>(std::move(out), {prod}, [prod, rows, cols](NodeT<double>& n) {
    if (!prod->has_grad()) prod->grad = TensorD(prod->value.shape());
    for (Index c = 0; c < cols; ++c)
      prod->grad.mat().col(c).array() += n.grad[c];
    (void)rows;
  });
}

// Values below `threshold` are snapped to zero (variance floor).
inline Var zero_below(const Var& v, double threshold) {
  TensorD out(v->value.shape());
  out.array() = (v->value.array() >= threshold).select(v->value.array(), 0.0);
  return make_op<double>(std::move(out), {v}, [v, threshold](NodeT<double>& n) {
    accumulate_grad(v, n.grad.array() *
                           (v->value.array() >= threshold).cast<double>());
  });
}

inline void check_posterior_inputs(const Var& support, const Var& mask_enc,
                                   const Var& query) {
  if (support->value.rank() != 2 || query->value.rank() != 2 || mask_enc->value.rank() != 2)
    throw InvalidInputError("gp_posterior: rank-2 inputs required");
  if (support->value.dim(0) < 1) throw InvalidInputError("gp_posterior: empty support");
  if (support->value.dim(1) != query->value.dim(1))
    throw InvalidInputError("gp_posterior: feature dim mismatch");
  if (mask_enc->value.dim(0) != support->value.dim(0))
    throw InvalidInputError("gp_posterior: mask encodings not row-aligned with support");
  if (!support->value.all_finite() || !mask_enc->value.all_finite() ||
      !query->value.all_finite())
    throw NumericError("gp_posterior: non-finite input");
}

}  // namespace detail

// Shared machinery behind gp_posterior / class_wise_posteriors: factorize
// once, then produce one mean per right-hand side plus the common variance.
inline std::vector<GPosterior> class_wise_posteriors(const Var& support_feats,
                                                     const std::vector<Var>& mask_encs,
                                                     const Var& query_feats,
                                                     const KernelVars& kv) {
  if (mask_encs.empty()) throw InvalidInputError("class_wise_posteriors: no classes");
  for (const auto& e : mask_encs)
    detail::check_posterior_inputs(support_feats, e, query_feats);
  kv.values().validate();

  auto k_ss = se_gram(support_feats, support_feats, kv.sigma, kv.length);
  auto k_sq = se_gram(support_feats, query_feats, kv.sigma, kv.length);
  auto noise_sq = square(kv.noise);
  CholContext chol(k_ss, noise_sq);

  // variance = diag(K_qq) - diag(K_Sq^T A^{-1} K_Sq); identical for every class
  const Index m = query_feats->value.dim(0);
  auto prior_diag = mul(square(kv.sigma), make_const(TensorD::full(Shape{m}, 1.0)));
  auto v_sq = chol.solve(k_sq);
  auto raw_var = sub(prior_diag, detail::colwise_dot(k_sq, v_sq));
  const double sigma_val = kv.sigma->value.value();
  auto variance = detail::zero_below(raw_var, 1e-6 * sigma_val * sigma_val);

  auto k_qs = transpose(k_sq);
  std::vector<GPosterior> out;
  out.reserve(mask_encs.size());
  for (const auto& e : mask_encs) {
    auto mean = matmul(k_qs, chol.solve(e));
    out.push_back({mean, variance});
  }
  return out;
}

// Posterior for a single binary class head (Eq. style: mean in the encoded
// mask space, per-location predictive variance).
inline GPosterior gp_posterior(const Var& support_feats, const Var& support_mask_enc,
                               const Var& query_feats, const KernelVars& kv) {
  return class_wise_posteriors(support_feats, {support_mask_enc}, query_feats, kv)[0];
}

// Plain-value convenience overload (no graph kept).
struct GPosteriorValues {
  Eigen::MatrixXd mean;
  Eigen::VectorXd variance;
};

inline GPosteriorValues gp_posterior(const Eigen::MatrixXd& support_feats,
                                     const Eigen::MatrixXd& support_mask_enc,
                                     const Eigen::MatrixXd& query_feats,
                                     const KernelParams& params) {
  auto s = make_const(TensorD::from_matrix(support_feats));
  auto e = make_const(TensorD::from_matrix(support_mask_enc));
  auto q = make_const(TensorD::from_matrix(query_feats));
  auto post = gp_posterior(s, e, q, KernelVars::constants(params));
  GPosteriorValues out;
  out.mean = post.mean->value.mat();
  out.variance = Eigen::Map<const Eigen::VectorXd>(post.variance->value.data(),
                                                   post.variance->value.size());
  return out;
}

// Uniform row subsampling used to cap the cubic solve cost when K*H'*W'
// exceeds the configured limit. Row order is preserved.
inline std::vector<Index> subsample_rows(Index n, Index cap, Rng& rng) {
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index(0));
  if (n <= cap) return idx;
  for (Index i = 0; i < cap; ++i) {
    const Index j = i + static_cast<Index>(rng.uniform_int(0, n - 1 - i));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace fss::gp
