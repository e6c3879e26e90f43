#include "fss/nn/layers.hpp"

namespace fss {

Conv2d::Conv2d(Index in_ch, Index out_ch, Index kernel, Index stride_, Index pad_, Rng& rng,
               bool with_bias)
    : stride(stride_), pad(pad_) {
  weight = make_leaf(he_normal(Shape{out_ch, in_ch, kernel, kernel},
                               in_ch * kernel * kernel, rng));
  register_parameter("weight", weight);
  if (with_bias) {
    bias = make_leaf(TensorD(Shape{out_ch}));
    register_parameter("bias", bias);
  }
}

Var Conv2d::forward(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }

ConvTranspose2d::ConvTranspose2d(Index in_ch, Index out_ch, Index kernel, Index stride_,
                                 Rng& rng)
    : stride(stride_) {
  weight = make_leaf(he_normal(Shape{in_ch, out_ch, kernel, kernel},
                               in_ch * kernel * kernel, rng));
  bias = make_leaf(TensorD(Shape{out_ch}));
  register_parameter("weight", weight);
  register_parameter("bias", bias);
}

Var ConvTranspose2d::forward(const Var& x) const {
  return conv_transpose2d(x, weight, bias, stride);
}

BatchNorm2d::BatchNorm2d(Index channels, double momentum_, double eps_)
    : momentum(momentum_), eps(eps_) {
  gamma = make_leaf(TensorD::full(Shape{channels}, 1.0));
  beta = make_leaf(TensorD(Shape{channels}));
  running_mean = TensorD(Shape{channels});
  running_var = TensorD::full(Shape{channels}, 1.0);
  register_parameter("gamma", gamma);
  register_parameter("beta", beta);
  register_buffer("running_mean", &running_mean);
  register_buffer("running_var", &running_var);
}

Var BatchNorm2d::forward(const Var& x) {
  return batch_norm2d(x, gamma, beta, &running_mean, &running_var, training(), momentum,
                      eps);
}

Linear::Linear(Index in_features, Index out_features, Rng& rng) {
  weight = make_leaf(he_normal(Shape{out_features, in_features}, in_features, rng));
  bias = make_leaf(TensorD(Shape{out_features}));
  register_parameter("weight", weight);
  register_parameter("bias", bias);
}

Var Linear::forward(const Var& x) const {
  return add_rowvec(matmul(x, transpose(weight)), bias);
}

}  // namespace fss
